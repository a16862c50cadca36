"""Scenario files: strict JSON with field-path diagnostics.

Layout (every key required unless marked optional)::

    {
      "grid":       {"amplitude": V, "frequency": Hz},
      "battery":    {"v_rated": V, "capacity_ah": Ah, "soc0": 0..1, "r_int": ohm,
                     "charge_current": A},
      "plant":      {"l1": H, "c": F, "l2": H, "r_damp": ohm}
                    or {"matrices": {"A": [[...]], "B": [[...]], "C": [[...]]}},
      "spwm":       {"carrier_hz": Hz, "dead_time": s},
      "profiles":   {"p_load": [[t, W], ...], "p_source": [[t, W], ...]},
      "mpc":        {"N_p": int, "N_c": int, "r_w": float, "T_s": s, "enabled": bool},
      "sim":        {"step": s, "duration": s, "seed": int},
      "supervisor": {"hysteresis": V}
    }

``battery.charge_current`` and ``supervisor`` are optional (10 A and 0 V).
"""

import json
import math
from pathlib import Path

from .lti import ContinuousStateSpace
from .mpc import MpcConfig
from .powertrain import Battery, GridSource, LclFilter, Profile, Scenario, SpwmConfig

__all__ = ["ScenarioError", "parse_scenario", "parse_scenario_text", "scenario_from_dict",
           "scenario_to_dict", "serialize_scenario", "bundled_scenario"]

_OPTIONAL = {"battery.charge_current": 10.0, "supervisor": {"hysteresis": 0.0}}
_SECTIONS = ("grid", "battery", "plant", "spwm", "profiles", "mpc", "sim", "supervisor")


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field (``mpc.N_c``)."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _table(data, path, keys, optional=()):
    if not isinstance(data, dict):
        raise ScenarioError(path, "expected a table")
    for key in data:
        if key not in keys:
            raise ScenarioError(_join(path, key), "unknown key")
    for key in keys:
        if key not in data and key not in optional:
            raise ScenarioError(_join(path, key), "missing")
    return data


def _join(path, key):
    return f"{path}.{key}" if path else key


def _number(data, path, key):
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(_join(path, key), f"expected a finite number, got {value!r}")
    return float(value)


def _integer(data, path, key):
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(_join(path, key), f"expected an integer, got {value!r}")
    return value


def _build(path, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None


def _matrix(data, path):
    if (not isinstance(data, list) or not data
            or not all(isinstance(row, list) and row for row in data)
            or len({len(row) for row in data}) != 1):
        raise ScenarioError(path, "expected a non-empty rectangular list of rows")
    for i, row in enumerate(data):
        for j, value in enumerate(row):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ScenarioError(f"{path}[{i}][{j}]", f"expected a finite number, got {value!r}")
    return [[float(v) for v in row] for row in data]


def _profile(data, path):
    if not isinstance(data, list) or not data:
        raise ScenarioError(path, "expected a non-empty list of [t, watts] pairs")
    for i, point in enumerate(data):
        if (not isinstance(point, list) or len(point) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in point)):
            raise ScenarioError(f"{path}[{i}]", "expected [t, watts]")
    return _build(path, Profile, breakpoints=tuple(tuple(p) for p in data))


def scenario_from_dict(data):
    """Validate a decoded scenario document and build the :class:`Scenario`."""
    _table(data, "", _SECTIONS, optional=("supervisor",))

    g = _table(data["grid"], "grid", ("amplitude", "frequency"))
    grid = _build("grid", GridSource, amplitude=_number(g, "grid", "amplitude"),
                  frequency=_number(g, "grid", "frequency"))

    b = _table(data["battery"], "battery",
               ("v_rated", "capacity_ah", "soc0", "r_int", "charge_current"),
               optional=("charge_current",))
    battery = _build("battery", Battery, v_rated=_number(b, "battery", "v_rated"),
                     capacity_ah=_number(b, "battery", "capacity_ah"),
                     soc=_number(b, "battery", "soc0"), r_int=_number(b, "battery", "r_int"))
    charge_current = (_number(b, "battery", "charge_current") if "charge_current" in b
                      else _OPTIONAL["battery.charge_current"])
    if charge_current < 0:
        raise ScenarioError("battery.charge_current", "must be >= 0")

    p = data["plant"]
    plant, matrices = None, None
    if isinstance(p, dict) and "matrices" in p:
        _table(p, "plant", ("matrices",))
        m = _table(p["matrices"], "plant.matrices", ("A", "B", "C"))
        matrices = tuple(_matrix(m[k], f"plant.matrices.{k}") for k in "ABC")
        sys = _build("plant.matrices", ContinuousStateSpace, A=matrices[0], B=matrices[1], C=matrices[2])
        if sys.n_inputs != 3 or sys.n_outputs != 3:
            raise ScenarioError("plant.matrices", "need three inputs (B columns) and three outputs (C rows)")
    else:
        _table(p, "plant", ("l1", "c", "l2", "r_damp"))
        plant = _build("plant", LclFilter, **{k: _number(p, "plant", k) for k in ("l1", "c", "l2", "r_damp")})

    s = _table(data["spwm"], "spwm", ("carrier_hz", "dead_time"))
    spwm = _build("spwm", SpwmConfig, carrier_hz=_number(s, "spwm", "carrier_hz"),
                  dead_time=_number(s, "spwm", "dead_time"))

    pr = _table(data["profiles"], "profiles", ("p_load", "p_source"))
    p_load = _profile(pr["p_load"], "profiles.p_load")
    p_source = _profile(pr["p_source"], "profiles.p_source")

    mp = _table(data["mpc"], "mpc", ("N_p", "N_c", "r_w", "T_s", "enabled"))
    n_p, n_c = _integer(mp, "mpc", "N_p"), _integer(mp, "mpc", "N_c")
    if n_p < 1:
        raise ScenarioError("mpc.N_p", "must be >= 1")
    if n_c < 1:
        raise ScenarioError("mpc.N_c", "must be >= 1")
    if n_c > n_p:
        raise ScenarioError("mpc.N_c", f"control horizon {n_c} exceeds prediction horizon {n_p}")
    if not isinstance(mp["enabled"], bool):
        raise ScenarioError("mpc.enabled", "expected true or false")
    r_w = _number(mp, "mpc", "r_w")
    if r_w < 0:
        raise ScenarioError("mpc.r_w", "must be >= 0")
    mpc = _build("mpc.T_s", MpcConfig, N_p=n_p, N_c=n_c, r_w=r_w, Ts=_number(mp, "mpc", "T_s"))

    sm = _table(data["sim"], "sim", ("step", "duration", "seed"))
    step, duration = _number(sm, "sim", "step"), _number(sm, "sim", "duration")
    seed = _integer(sm, "sim", "seed")
    if step <= 0:
        raise ScenarioError("sim.step", "must be positive")
    if duration <= 0:
        raise ScenarioError("sim.duration", "must be positive")
    if step > mpc.Ts * (1 + 1e-12):
        raise ScenarioError("sim.step", "must not exceed mpc.T_s")
    ratio = mpc.Ts / step
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ScenarioError("mpc.T_s", "must be an integer multiple of sim.step")
    dead = spwm.dead_time / step
    if abs(dead - round(dead)) > 1e-9 * max(1.0, dead):
        raise ScenarioError("spwm.dead_time", "must be an integer multiple of sim.step")
    if spwm.carrier_hz < 10.0 * grid.frequency:
        raise ScenarioError("spwm.carrier_hz", "must be at least 10x grid.frequency")

    sup = data.get("supervisor", _OPTIONAL["supervisor"])
    _table(sup, "supervisor", ("hysteresis",))
    hysteresis = _number(sup, "supervisor", "hysteresis")
    if hysteresis < 0:
        raise ScenarioError("supervisor.hysteresis", "must be >= 0")

    return _build("", Scenario, grid=grid, battery=battery, plant=plant, spwm=spwm,
                  p_load=p_load, p_source=p_source, sim_step=step, duration=duration,
                  mpc=mpc, mpc_enabled=mp["enabled"], seed=seed, hysteresis=hysteresis,
                  charge_current=charge_current, plant_matrices=matrices)


def parse_scenario_text(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    return scenario_from_dict(data)


def parse_scenario(path):
    """Read and validate a scenario file.

    Raises
    ------
    FileNotFoundError
        The file does not exist.
    ScenarioError
        Any schema or invariant violation.
    """
    return parse_scenario_text(Path(path).read_text(encoding="utf-8"))


def scenario_to_dict(sc):
    if sc.plant_matrices is not None:
        plant = {"matrices": {k: [list(row) for row in M] for k, M in zip("ABC", sc.plant_matrices)}}
    else:
        plant = {"l1": sc.plant.l1, "c": sc.plant.c, "l2": sc.plant.l2, "r_damp": sc.plant.r_damp}
    return {
        "grid": {"amplitude": sc.grid.amplitude, "frequency": sc.grid.frequency},
        "battery": {"v_rated": sc.battery.v_rated, "capacity_ah": sc.battery.capacity_ah,
                    "soc0": sc.battery.soc, "r_int": sc.battery.r_int,
                    "charge_current": sc.charge_current},
        "plant": plant,
        "spwm": {"carrier_hz": sc.spwm.carrier_hz, "dead_time": sc.spwm.dead_time},
        "profiles": {"p_load": [list(p) for p in sc.p_load.breakpoints],
                     "p_source": [list(p) for p in sc.p_source.breakpoints]},
        "mpc": {"N_p": sc.mpc.N_p, "N_c": sc.mpc.N_c, "r_w": sc.mpc.r_w, "T_s": sc.mpc.Ts,
                "enabled": sc.mpc_enabled},
        "sim": {"step": sc.sim_step, "duration": sc.duration, "seed": int(sc.seed)},
        "supervisor": {"hysteresis": sc.hysteresis},
    }


def serialize_scenario(sc):
    """JSON text that :func:`parse_scenario_text` maps back to an equal scenario."""
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"


def bundled_scenario(name="default"):
    """Path of a scenario shipped with the package (``default`` or ``accelerated``)."""
    path = Path(__file__).parent / "scenarios" / f"{name}.scenario"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path
