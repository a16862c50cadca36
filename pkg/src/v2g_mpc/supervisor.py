"""G2V/V2G mode selection from the load-source power gap and the battery voltage."""

from dataclasses import dataclass

import numpy as np

__all__ = ["ModeDecision", "UPPER_FRACTION", "LOWER_FRACTION", "compute_x", "decide_mode", "Supervisor"]

V2G = 1
G2V = 0
UPPER_FRACTION = 0.75
LOWER_FRACTION = 0.2


@dataclass(frozen=True)
class ModeDecision:
    c: int
    x: float
    v_dc: float
    thresholds: tuple
    band: str  # "upper", "middle" or "lower" voltage band

    @property
    def is_v2g(self):
        return self.c == V2G


def compute_x(p_load, p_source):
    p_load, p_source = float(p_load), float(p_source)
    if not (np.isfinite(p_load) and np.isfinite(p_source)):
        raise ValueError("powers must be finite")
    return p_load - p_source


def _band(v_dc, upper, lower):
    if v_dc >= upper:
        return "upper"
    if v_dc >= lower:
        return "middle"
    return "lower"


def decide_mode(x, v_dc, v_rated, hysteresis=0.0, prev_c=None):
    """Control logic ``c`` (1 = V2G, 0 = G2V).

    Without hysteresis the rule is the logic table as printed: V2G exactly when
    ``v_dc >= 0.75 * v_rated``, for either sign of ``x``. The 0.2 bound splits
    the G2V rows only. With ``hysteresis > 0`` and ``prev_c == 1`` the
    controller stays in V2G until ``v_dc`` drops below ``0.75 * v_rated - hysteresis``.
    """
    v_rated = float(v_rated)
    if not np.isfinite(v_rated) or v_rated <= 0:
        raise ValueError(f"v_rated must be positive, got {v_rated!r}")
    if hysteresis < 0:
        raise ValueError("hysteresis must be >= 0")
    x, v_dc = float(x), float(v_dc)
    upper = UPPER_FRACTION * v_rated
    lower = LOWER_FRACTION * v_rated

    # Both branches of the table give the same outcome; x is kept for logging.
    if x >= 0:
        c = V2G if v_dc >= upper else G2V
    else:
        c = V2G if v_dc >= upper else G2V
    if hysteresis > 0 and prev_c == V2G and c == G2V and v_dc >= upper - hysteresis:
        c = V2G
    return ModeDecision(c=c, x=x, v_dc=v_dc, thresholds=(upper, lower), band=_band(v_dc, upper, lower))


class Supervisor:
    """Stateful wrapper that remembers the previous mode for the hysteresis band."""

    def __init__(self, v_rated, hysteresis=0.0):
        self.v_rated = v_rated
        self.hysteresis = hysteresis
        self.c = None
        self.transitions = []

    def evaluate(self, t, p_load, p_source, v_dc):
        decision = decide_mode(compute_x(p_load, p_source), v_dc, self.v_rated,
                               self.hysteresis, self.c)
        if decision.c != self.c:
            self.transitions.append((float(t), decision.c))
        self.c = decision.c
        return decision
