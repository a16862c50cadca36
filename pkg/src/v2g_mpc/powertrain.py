"""Fixed-step simulation of the bidirectional charger.

In V2G the battery feeds a three-phase bridge whose pole voltages are set by
sinusoidal PWM; an LCL filter smooths them and energizes the local load bus.
In G2V an averaged constant-current rectifier charges the battery from the
grid. A supervisor picks the mode every control period.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import mpc as _mpc
from ._validation import check_matrix, check_positive, check_vector
from .lti import ContinuousStateSpace, augment, discretize
from .supervisor import V2G, Supervisor

__all__ = [
    "GridSource",
    "Battery",
    "SpwmConfig",
    "LclFilter",
    "Profile",
    "Scenario",
    "TimeSeries",
    "ShootThroughError",
    "SimulationError",
    "COLUMNS",
    "PHASE_OFFSETS",
    "grid_voltages",
    "carrier_value",
    "spwm_switch_states",
    "inverter_bridge_voltage",
    "battery_step",
    "lcl_plant",
    "simulate_scenario",
]

logger = logging.getLogger(__name__)

PHASE_OFFSETS = np.array([0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0])
COLUMNS = (
    "t",
    "v_ga", "v_gb", "v_gc",
    "v_ia", "v_ib", "v_ic",
    "i_ia", "i_ib", "i_ic",
    "v_bridge_a", "v_bridge_b", "v_bridge_c",
    "v_dc", "soc", "mode_c",
    "mv_a", "mv_b", "mv_c",
)
# Loads below this are treated as this (keeps the load branch finite).
MIN_LOAD_W = 1.0


class ShootThroughError(RuntimeError):
    """Both switches of one bridge leg were commanded on."""


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSource:
    amplitude: float
    frequency: float = 50.0

    def __post_init__(self):
        check_positive(self.amplitude, "amplitude")
        check_positive(self.frequency, "frequency")


@dataclass(frozen=True)
class Battery:
    """Linear open-circuit-voltage battery: ``V_oc = soc * v_rated``.

    ``current`` is the last current drawn (discharge positive) and sets the
    terminal voltage through ``r_int``.
    """

    v_rated: float
    capacity_ah: float
    soc: float
    r_int: float = 0.0
    current: float = 0.0

    def __post_init__(self):
        check_positive(self.v_rated, "v_rated")
        check_positive(self.capacity_ah, "capacity_ah")
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"soc must lie in [0, 1], got {self.soc!r}")
        if self.r_int < 0:
            raise ValueError("r_int must be >= 0")

    @property
    def v_oc(self):
        return self.soc * self.v_rated

    @property
    def v_dc(self):
        return self.v_oc - self.current * self.r_int


@dataclass(frozen=True)
class SpwmConfig:
    carrier_hz: float
    dead_time: float = 0.0

    def __post_init__(self):
        check_positive(self.carrier_hz, "carrier_hz")
        if not self.dead_time >= 0:
            raise ValueError("dead_time must be >= 0")


@dataclass(frozen=True)
class LclFilter:
    """Per-phase LCL filter with a damping resistor in series with the capacitor."""

    l1: float
    c: float
    l2: float
    r_damp: float = 0.0

    def __post_init__(self):
        for name in ("l1", "c", "l2"):
            check_positive(getattr(self, name), name)
        if self.r_damp < 0:
            raise ValueError("r_damp must be >= 0")

    @property
    def resonance_hz(self):
        """Bridge-side L1-C resonance, the one the switching ripple excites."""
        return 1.0 / (2.0 * math.pi * math.sqrt(self.l1 * self.c))


@dataclass(frozen=True)
class Profile:
    """Piecewise-constant power profile from ``(t, watts)`` breakpoints.

    Each value holds from its breakpoint until the next one; before the first
    breakpoint the first value applies.
    """

    breakpoints: tuple

    def __post_init__(self):
        points = tuple((float(t), float(w)) for t, w in self.breakpoints)
        if not points:
            raise ValueError("profile needs at least one breakpoint")
        times = np.array([p[0] for p in points])
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite([p[1] for p in points])):
            raise ValueError("profile breakpoints must be finite")
        if times[0] < 0:
            raise ValueError("breakpoint times must be >= 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "breakpoints", points)
        object.__setattr__(self, "_times", times)

    def __call__(self, t):
        i = int(np.searchsorted(self._times, t, side="right")) - 1
        return self.breakpoints[max(i, 0)][1]


def _is_multiple(value, unit):
    ratio = value / unit
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


@dataclass(frozen=True)
class Scenario:
    """Everything one simulation needs.

    ``plant`` is an :class:`LclFilter` whose load branch follows ``p_load``;
    alternatively ``plant_matrices`` gives a fixed ``(A, B, C)`` (stored as
    nested tuples) with three
    bridge-voltage inputs and three filtered-voltage outputs, in which case
    ``plant`` is ``None``.
    """

    grid: GridSource
    battery: Battery
    plant: LclFilter
    spwm: SpwmConfig
    p_load: Profile
    p_source: Profile
    sim_step: float
    duration: float
    mpc: _mpc.MpcConfig
    mpc_enabled: bool = True
    seed: int = 0
    hysteresis: float = 0.0
    charge_current: float = 10.0
    plant_matrices: tuple = None

    def __post_init__(self):
        check_positive(self.sim_step, "sim_step")
        check_positive(self.duration, "duration")
        if (self.plant is None) == (self.plant_matrices is None):
            raise ValueError("give exactly one of plant and plant_matrices")
        if self.plant_matrices is not None:
            if len(self.plant_matrices) != 3:
                raise ValueError("plant_matrices must be (A, B, C)")
            mats = [check_matrix(M, name) for M, name in zip(self.plant_matrices, "ABC")]
            sys = ContinuousStateSpace(*mats)
            if sys.n_inputs != 3 or sys.n_outputs != 3:
                raise ValueError("plant matrices must describe three inputs and three outputs")
            # nested tuples keep the scenario hashable and comparable
            object.__setattr__(self, "plant_matrices",
                               tuple(tuple(map(tuple, M.tolist())) for M in mats))
        if self.sim_step > self.mpc.Ts * (1 + 1e-12):
            raise ValueError(f"sim_step ({self.sim_step:g}) must not exceed T_s ({self.mpc.Ts:g})")
        if not _is_multiple(self.mpc.Ts, self.sim_step):
            raise ValueError("T_s must be an integer multiple of sim_step")
        if not _is_multiple(self.spwm.dead_time, self.sim_step):
            raise ValueError("dead_time must be an integer multiple of sim_step")
        if self.spwm.carrier_hz < 10.0 * self.grid.frequency:
            raise ValueError("carrier frequency must be at least 10x the grid frequency")
        if self.duration < self.sim_step:
            raise ValueError("duration is shorter than one simulation step")
        if not self.charge_current >= 0:
            raise ValueError("charge_current must be >= 0")
        if not self.hysteresis >= 0:
            raise ValueError("hysteresis must be >= 0")
        if int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")


@dataclass(frozen=True)
class TimeSeries:
    """Logged waveforms, one row per simulation step.

    Three-phase quantities are ``(n, 3)`` arrays. ``i_dc`` (battery current)
    and ``i_grid`` (current delivered past the filter) are kept for analysis
    but are not part of the CSV schema.
    """

    t: np.ndarray
    v_g: np.ndarray
    v_i: np.ndarray
    i_i: np.ndarray
    v_bridge: np.ndarray
    v_dc: np.ndarray
    soc: np.ndarray
    mode_c: np.ndarray
    mv: np.ndarray
    i_dc: np.ndarray = None
    i_grid: np.ndarray = None
    mpc_log: np.ndarray = None
    transitions: tuple = field(default=())

    def __post_init__(self):
        for name in ("t", "v_g", "v_i", "i_i", "v_bridge", "v_dc", "soc", "mode_c", "mv",
                     "i_dc", "i_grid", "mpc_log"):
            value = getattr(self, name)
            if value is not None:
                value.setflags(write=False)

    def __len__(self):
        return self.t.shape[0]

    @property
    def sample_rate(self):
        return 1.0 / (self.t[1] - self.t[0])

    def as_array(self):
        """Rows in :data:`COLUMNS` order."""
        return np.column_stack([
            self.t, self.v_g, self.v_i, self.i_i, self.v_bridge,
            self.v_dc, self.soc, self.mode_c, self.mv,
        ])

    @classmethod
    def from_array(cls, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(COLUMNS):
            raise ValueError(f"expected {len(COLUMNS)} columns")
        return cls(
            t=data[:, 0].copy(), v_g=data[:, 1:4].copy(), v_i=data[:, 4:7].copy(),
            i_i=data[:, 7:10].copy(), v_bridge=data[:, 10:13].copy(),
            v_dc=data[:, 13].copy(), soc=data[:, 14].copy(),
            mode_c=data[:, 15].copy(), mv=data[:, 16:19].copy(),
        )


def grid_voltages(src, t):
    """Balanced EMFs ``A sin(2 pi f t + phi)`` with phases 0, -120, +120 degrees.

    ``t`` may be a scalar (returns shape ``(3,)``) or an array (adds a trailing
    phase axis).
    """
    t = np.asarray(t, dtype=float)
    angle = 2.0 * np.pi * src.frequency * t[..., None] + PHASE_OFFSETS
    return src.amplitude * np.sin(angle)


def carrier_value(spwm, t):
    """Symmetric triangle in [-1, 1], starting at -1 at ``t = 0``."""
    phase = np.mod(np.asarray(t, dtype=float) * spwm.carrier_hz, 1.0)
    return 1.0 - 4.0 * np.abs(phase - 0.5)


def spwm_switch_states(mv, carrier_value):
    """Gate signals ``[A+, A-, B+, B-, C+, C-]``.

    Upper switch on when the clamped modulation exceeds the carrier, lower
    switch complementary.
    """
    mv = np.clip(check_vector(mv, 3, "mv"), -1.0, 1.0)
    upper = mv > float(carrier_value)
    gates = np.empty(6, dtype=bool)
    gates[0::2] = upper
    gates[1::2] = ~upper
    return gates


def inverter_bridge_voltage(gates, v_dc, currents=None):
    """Pole voltages referred to the DC-link midpoint.

    ``+v_dc/2`` when the upper switch conducts, ``-v_dc/2`` otherwise. When
    both switches of a leg are off (dead time) the freewheeling diode sets the
    pole: positive leg current flows through the lower diode, negative through
    the upper one. Without ``currents`` an open leg counts as lower.
    """
    gates = np.asarray(gates, dtype=bool)
    if gates.shape != (6,):
        raise ValueError("expected six gate signals")
    upper, lower = gates[0::2], gates[1::2]
    if np.any(upper & lower):
        legs = "".join("abc"[i] for i in np.flatnonzero(upper & lower))
        raise ShootThroughError(f"shoot-through on leg(s) {legs}")
    half = 0.5 * float(v_dc)
    pole = np.where(upper, half, -half)
    if currents is not None:
        currents = check_vector(currents, 3, "currents")
        open_leg = ~upper & ~lower
        pole = np.where(open_leg & (currents < 0), half, pole)
    return pole


def battery_step(batt, current, dt):
    """Coulomb counting over ``dt`` seconds (discharge positive), soc clamped to [0, 1]."""
    dt = check_positive(dt, "dt")
    current = float(current)
    soc = batt.soc - current * dt / (3600.0 * batt.capacity_ah)
    return replace(batt, soc=min(1.0, max(0.0, soc)), current=current)


def lcl_plant(filt, load_resistance=None):
    """Three-phase LCL state-space model, bridge phase voltage in, filter node voltage out.

    Per phase the states are ``[i1, v_cap, i2]`` (inverter-side current,
    capacitor voltage, load-side current). The output is the filter node
    voltage ``v_cap + r_damp (i1 - i2)``. ``i2`` flows into a resistive load
    of ``load_resistance`` ohms; ``None`` means a short to the neutral.

    Returns
    -------
    sys : ContinuousStateSpace
        9 states, 3 inputs, 3 outputs, phases stacked ``a, b, c``.
    """
    rd = filt.r_damp
    rl = 0.0 if load_resistance is None else float(load_resistance)
    node = np.array([rd, 1.0, -rd])  # filter node voltage in terms of the states
    a = np.vstack([
        -node / filt.l1,
        [1.0 / filt.c, 0.0, -1.0 / filt.c],
        node / filt.l2 - np.array([0.0, 0.0, rl / filt.l2]),
    ])
    b = np.array([[1.0 / filt.l1], [0.0], [0.0]])
    eye = np.eye(3)
    return ContinuousStateSpace(A=np.kron(eye, a), B=np.kron(eye, b), C=np.kron(eye, node[None, :]))


def _load_resistance(amplitude, p_load):
    return 1.5 * amplitude**2 / max(p_load, MIN_LOAD_W)


class _PlantCache:
    """Discretized plant and controller per load level (loads are piecewise constant)."""

    def __init__(self, sc):
        self.sc = sc
        self._cache = {}

    def get(self, p_load):
        explicit = self.sc.plant_matrices is not None
        key = None if explicit else max(float(p_load), MIN_LOAD_W)
        if key not in self._cache:
            if explicit:
                sys = ContinuousStateSpace(*(np.array(M) for M in self.sc.plant_matrices))
                rl = None
            else:
                rl = _load_resistance(self.sc.grid.amplitude, key)
                sys = lcl_plant(self.sc.plant, rl)
            if sys.n_inputs != 3 or sys.n_outputs != 3:
                raise SimulationError("plant must have three inputs and three outputs")
            fine = discretize(sys, self.sc.sim_step)
            coarse = discretize(sys, self.sc.mpc.Ts)
            aug = augment(coarse)
            pm = _mpc.build_prediction_matrices(aug, self.sc.mpc)
            factor, regularized = _mpc.factorize_normal_matrix(pm, self.sc.mpc.r_w)
            self._cache[key] = dict(sys=sys, G=fine.G, H=fine.H, C=sys.C, rl=rl,
                                    aug=aug, pm=pm, factor=factor, regularized=regularized)
        return self._cache[key]


def simulate_scenario(sc, mpc_enabled=None, log_mpc=False):
    """Run one scenario and return its :class:`TimeSeries`.

    Every control period ``Ts`` the supervisor re-evaluates the mode from the
    load/source gap and the battery open-circuit voltage. In V2G the MPC (or,
    when disabled, a DC-link compensated open-loop sinusoid) sets the
    modulation; in G2V the battery is charged at ``charge_current``.

    Parameters
    ----------
    sc : Scenario
    mpc_enabled : bool, optional
        Overrides ``sc.mpc_enabled``.
    log_mpc : bool
        Keep a per-update controller log ``(k, r, y, du, mv, J)``.
    """
    use_mpc = sc.mpc_enabled if mpc_enabled is None else bool(mpc_enabled)
    dt = sc.sim_step
    n_steps = int(round(sc.duration / dt))
    if n_steps < 2:
        raise SimulationError("duration must cover at least two simulation steps")
    ratio = int(round(sc.mpc.Ts / dt))
    n_dead = int(round(sc.spwm.dead_time / dt))
    cfg = sc.mpc

    t = np.arange(n_steps) * dt
    e_grid = grid_voltages(sc.grid, t)
    carrier = carrier_value(sc.spwm, t)
    plants = _PlantCache(sc)
    supervisor = Supervisor(sc.battery.v_rated, sc.hysteresis)
    batt = sc.battery

    n = plants.get(sc.p_load(0.0))["G"].shape[0]
    has_currents = sc.plant_matrices is None
    x_log = np.zeros((n_steps, n))
    pole_log = np.zeros((n_steps, 3))
    mv_log = np.zeros((n_steps, 3))
    vdc_log = np.zeros(n_steps)
    soc_log = np.zeros(n_steps)
    mode_log = np.zeros(n_steps, dtype=np.int8)
    idc_log = np.zeros(n_steps)
    segments = []  # (start, stop, plant) for V2G windows
    mpc_rows = []

    x = np.zeros(n)
    c = None
    state = None
    prev = [False, False, False]
    age = [0, 0, 0]
    car = carrier.tolist()

    for k0 in range(0, n_steps, ratio):
        k1 = min(k0 + ratio, n_steps)
        tk = t[k0]
        p_load = sc.p_load(tk)
        decision = supervisor.evaluate(tk, p_load, sc.p_source(tk), batt.v_oc)
        entering = decision.c == V2G and c != V2G
        if decision.c != c:
            logger.info("t=%.6f s: mode c=%d (V_oc=%.3f V)", tk, decision.c, batt.v_oc)
        c = decision.c
        v_dc = batt.v_dc
        vdc_log[k0:k1] = v_dc
        soc_log[k0:k1] = batt.soc
        mode_log[k0:k1] = c

        if c != V2G:
            mv = np.zeros(3)
            idc_log[k0:k1] = -sc.charge_current
            batt = battery_step(batt, -sc.charge_current, (k1 - k0) * dt)
            continue

        plant = plants.get(p_load)
        if v_dc <= 0:
            raise SimulationError(f"battery terminal voltage {v_dc:g} V at t={tk:g} s")
        half = 0.5 * v_dc
        if entering:
            x = np.zeros(n)
            state = _mpc.initial_state(n, 3, 3, x0=x)
            prev, age = [False, False, False], [0, 0, 0]
        if use_mpc:
            y = plant["C"] @ x
            r = e_grid[k0]
            if log_mpc:
                x_aug = np.concatenate([x - state.x_prev, y])
                R_s = _mpc.build_setpoint_vector(r, cfg)
                dU = _mpc.solve_optimal_du(plant["pm"], cfg.r_w, x_aug, R_s, factor=plant["factor"])
                J = _mpc.evaluate_cost(plant["pm"], cfg.r_w, x_aug, R_s, dU)
            u, state, du = _mpc.controller_update(
                state, cfg, plant["aug"], plant["pm"], y, x, r,
                factor=plant["factor"], u_min=-half, u_max=half, return_du=True,
            )
            mv = u / half
            if log_mpc:
                mpc_rows.append(np.concatenate([[k0], r, y, du, mv, [J]]))
        else:
            mv = e_grid[k0] / half
        mv_log[k0:k1] = mv
        if segments and segments[-1][1] == k0 and segments[-1][2] is plant:
            segments[-1] = (segments[-1][0], k1, plant)
        else:
            segments.append((k0, k1, plant))

        # Switching within the window. The legs are complementary by
        # construction; during dead time the freewheeling diode sets the pole.
        m = np.clip(mv, -1.0, 1.0).tolist()
        G, H = plant["G"], plant["H"]
        for k in range(k0, k1):
            ck = car[k]
            if n_dead:
                pole = [0.0, 0.0, 0.0]
                for j in range(3):
                    cmd = m[j] > ck
                    if cmd == prev[j]:
                        age[j] += 1
                    else:
                        prev[j], age[j] = cmd, 1
                    if age[j] > n_dead:
                        pole[j] = half if cmd else -half
                    else:
                        pole[j] = half if has_currents and x[3 * j] < 0 else -half
                pa, pb, pc = pole
            else:
                pa = half if m[0] > ck else -half
                pb = half if m[1] > ck else -half
                pc = half if m[2] > ck else -half
            mean = (pa + pb + pc) / 3.0
            x_log[k] = x
            pole_log[k] = (pa, pb, pc)
            x = G @ x + H @ np.array((pa - mean, pb - mean, pc - mean))

        if has_currents:
            poles = pole_log[k0:k1]
            v_phase = poles - poles.mean(axis=1, keepdims=True)
            idc_log[k0:k1] = np.einsum("ij,ij->i", v_phase, x_log[k0:k1, 0::3]) / v_dc
        batt = battery_step(batt, idc_log[k0:k1].mean(), (k1 - k0) * dt)

    return _assemble(sc, t, e_grid, x_log, pole_log, mv_log, vdc_log, soc_log, mode_log,
                     idc_log, segments, mpc_rows, supervisor.transitions)


def _assemble(sc, t, e_grid, x_log, pole_log, mv_log, vdc_log, soc_log, mode_log,
              idc_log, segments, mpc_rows, transitions):
    n_steps = t.shape[0]
    v_g = np.empty((n_steps, 3))
    v_i = np.empty((n_steps, 3))
    i_i = np.empty((n_steps, 3))
    i_grid = np.empty((n_steps, 3))
    v_bridge = pole_log.copy()

    # G2V rows: averaged unity-power-factor rectifier on the grid
    g2v = mode_log != V2G
    if np.any(g2v):
        e = e_grid[g2v]
        p_charge = vdc_log[g2v] * sc.charge_current
        g = 2.0 * p_charge / (3.0 * sc.grid.amplitude**2)
        v_g[g2v] = e
        v_i[g2v] = e
        v_bridge[g2v] = e
        i_i[g2v] = -g[:, None] * e
        i_grid[g2v] = -g[:, None] * e

    # V2G rows, window by window with the plant that was active
    for k0, k1, plant in segments:
        X = x_log[k0:k1]
        v_i[k0:k1] = X @ plant["C"].T
        if plant["rl"] is None:
            i_i[k0:k1] = np.nan
            i_grid[k0:k1] = np.nan
            v_g[k0:k1] = np.nan
        else:
            i_i[k0:k1] = X[:, 0::3]
            i_grid[k0:k1] = X[:, 2::3]
            v_g[k0:k1] = plant["rl"] * X[:, 2::3]

    mpc_log = np.asarray(mpc_rows) if mpc_rows else None
    return TimeSeries(
        t=t, v_g=v_g, v_i=v_i, i_i=i_i, v_bridge=v_bridge,
        v_dc=vdc_log, soc=soc_log, mode_c=mode_log.astype(float), mv=mv_log,
        i_dc=idc_log, i_grid=i_grid, mpc_log=mpc_log, transitions=tuple(transitions),
    )
