import json

import pytest

from v2g_mpc.scenario import bundled_scenario


def fast_scenario_dict(**sections):
    """Default scenario stepped at the control period: cheap but still closed loop."""
    data = json.loads(bundled_scenario().read_text())
    data["sim"].update(step=1e-5, duration=0.3)
    data["spwm"].update(dead_time=0.0)
    for name, values in sections.items():
        data[name].update(values)
    return data


@pytest.fixture
def fast_scenario_file(tmp_path):
    def make(name="fast.scenario", data=None, **sections):
        path = tmp_path / name
        path.write_text(json.dumps(data if data is not None else fast_scenario_dict(**sections)))
        return path
    return make
