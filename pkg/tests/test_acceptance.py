"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` to see the verdict lines inline.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import linalg

from v2g_mpc import cli
from v2g_mpc.lti import ContinuousStateSpace, DiscreteStateSpace, augment, discretize
from v2g_mpc.mpc import (
    MpcConfig,
    PredictionMatrices,
    build_prediction_matrices,
    evaluate_cost,
    solve_optimal_du,
)
from v2g_mpc.power_quality import estimate_frequency, improvement_percent, thd_percent
from v2g_mpc.powertrain import grid_voltages, simulate_scenario
from v2g_mpc.runner import STEADY_STATE_FRACTION, read_timeseries_csv
from v2g_mpc.scenario import bundled_scenario, parse_scenario
from v2g_mpc.supervisor import decide_mode


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, visible even when output is captured."""
    def emit(label, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {label:<4} {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, f"criterion {label}: {detail}"
    return emit


def simpson_zoh_input(A, B, Ts, n=200):
    taus = np.linspace(0.0, Ts, n + 1)
    weights = np.ones(n + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    total = sum(w * linalg.expm(A * tau) for w, tau in zip(weights, taus))
    return total * (Ts / (3.0 * n)) @ B


def random_systems(seed=1):
    rng = np.random.default_rng(seed)
    systems = []
    for _ in range(100):
        n, m = int(rng.integers(1, 19)), int(rng.integers(1, 4))
        q = int(rng.integers(1, m + 1))
        A = rng.standard_normal((n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 1.0)) * np.eye(n)
        systems.append(ContinuousStateSpace(A=A, B=rng.standard_normal((n, m)),
                                            C=rng.standard_normal((q, n))))
    for i in range(10):
        n = int(rng.integers(2, 19))
        if i == 0:
            A = np.diag(np.ones(n - 1), 1)  # chain of integrators
        else:
            A = rng.standard_normal((n, n))
            k = int(rng.integers(1, n))
            A[:, :k] = 0.0  # rank deficient, so A is singular
        systems.append(ContinuousStateSpace(A=A, B=rng.standard_normal((n, 2)),
                                            C=rng.standard_normal((1, n))))
    return systems


def mpc_instances(seed=2, count=200):
    """Demo-sized problems: nine plant states, q = m = 3, N_p = 10, N_c = 3."""
    rng = np.random.default_rng(seed)
    cfg = MpcConfig(N_p=10, N_c=3, r_w=0.0, Ts=10e-6)
    out = []
    for i in range(count):
        n = 9
        G = rng.standard_normal((n, n))
        G *= rng.uniform(0.3, 0.98) / max(abs(np.linalg.eigvals(G)))
        plant = DiscreteStateSpace(G=G, H=rng.standard_normal((n, 3)), C=rng.standard_normal((3, n)), Ts=cfg.Ts)
        aug = augment(plant)
        pm = build_prediction_matrices(aug, cfg)
        r_w = 0.0 if i % 2 == 0 else float(rng.uniform(0.0, 1.0))
        x_aug = rng.standard_normal(aug.n_states)
        R_s = np.tile(rng.standard_normal(3), cfg.N_p)
        out.append((aug, pm, r_w, x_aug, R_s))
    return out


@pytest.fixture(scope="module")
def instances():
    return mpc_instances()


# ---------------------------------------------------------------- 1

def test_criterion_1_discretization_matches_quadrature(verdict):
    start = time.perf_counter()
    worst = 0.0
    for sys in random_systems():
        Ts = 0.3
        ref = simpson_zoh_input(sys.A, sys.B, Ts)
        H = discretize(sys, Ts).H
        worst = max(worst, np.linalg.norm(H - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - start
    verdict("1", worst <= 1e-9 and elapsed < 10.0,
            f"110 systems, worst relative error {worst:.2e} (<= 1e-9), {elapsed:.1f} s (< 10 s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_closed_form_move_is_optimal(verdict, instances):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_grad, violations = 0.0, 0
    h = 1e-4
    for aug, pm, r_w, x_aug, R_s in instances:
        dU = solve_optimal_du(pm, r_w, x_aug, R_s)
        J = evaluate_cost(pm, r_w, x_aug, R_s, dU)
        grad = np.empty_like(dU)
        for i in range(dU.size):
            e = np.zeros_like(dU)
            e[i] = h
            grad[i] = (evaluate_cost(pm, r_w, x_aug, R_s, dU + e)
                       - evaluate_cost(pm, r_w, x_aug, R_s, dU - e)) / (2 * h)
        worst_grad = max(worst_grad, np.max(np.abs(grad)) / (1 + abs(J)))
        # 1000 perturbations at once; J is quadratic so each cost is a residual norm
        delta = rng.standard_normal((1000, dU.size)) * 10.0 ** rng.uniform(-3, 1, (1000, 1))
        resid = (R_s - pm.F @ x_aug)[None, :] - (dU + delta) @ pm.Phi.T
        J_pert = np.einsum("ij,ij->i", resid, resid) + r_w * np.einsum("ij,ij->i", dU + delta, dU + delta)
        violations += int(np.sum(J_pert < J))
    elapsed = time.perf_counter() - start
    verdict("2", worst_grad < 1e-6 and violations == 0 and elapsed < 30.0,
            f"200 instances, max |grad J|/(1+|J|) {worst_grad:.2e} (< 1e-6), "
            f"{violations} of 200000 perturbations lowered J, {elapsed:.1f} s (< 30 s)")


# ---------------------------------------------------------------- 3

def test_criterion_3_prediction_equals_iteration(verdict, instances):
    rng = np.random.default_rng(4)
    worst = 0.0
    for aug, pm, r_w, x_aug, R_s in instances:
        dU = rng.standard_normal(pm.Phi.shape[1])
        Y = pm.F @ x_aug + pm.Phi @ dU
        x = x_aug.copy()
        Y_iter = []
        for k in range(pm.N_p):
            du = dU[3 * k:3 * k + 3] if k < pm.N_c else np.zeros(3)
            x = aug.Gm @ x + aug.Hm @ du
            Y_iter.append(aug.Cm @ x)
        worst = max(worst, np.max(np.abs(Y - np.concatenate(Y_iter))))
    verdict("3", worst <= 1e-10, f"200 instances, max |Y - iterated| {worst:.2e} (<= 1e-10)")


# ---------------------------------------------------------------- 4

def test_criterion_4_worked_scalar_example(verdict):
    pm = PredictionMatrices(F=np.array([[0.9, 1.0], [1.71, 1.0]]), Phi=np.array([[0.1], [0.19]]),
                            n_outputs=1, n_inputs=1)
    du = solve_optimal_du(pm, 0.0, np.zeros(2), np.ones(2))[0]
    verdict("4", abs(du - 6.2907) <= 1e-4, f"dU = {du:.6f} (6.2907 +/- 1e-4)")


# ---------------------------------------------------------------- 5

def test_criterion_5_logic_table(verdict):
    v_rated = 400.0
    table = [  # (x, v_dc fraction, expected c, band)
        (1.0, 0.8, 1, "upper"), (1.0, 0.5, 0, "middle"), (1.0, 0.1, 0, "lower"),
        (-1.0, 0.8, 1, "upper"), (-1.0, 0.5, 0, "middle"), (-1.0, 0.1, 0, "lower"),
    ]
    got = [(decide_mode(x, f * v_rated, v_rated).c, decide_mode(x, f * v_rated, v_rated).band)
           for x, f, _, _ in table]
    ok = got == [(c, band) for _, _, c, band in table]
    verdict("5", ok, f"six rows, outcomes {[c for c, _ in got]}")


# ---------------------------------------------------------------- 6

FS, F0 = 1e6, 50.0
T5 = np.arange(int(5 * FS / F0)) / FS


def test_criterion_6a_pure_sine(verdict):
    thd = thd_percent(325.0 * np.sin(2 * np.pi * F0 * T5), FS, F0)
    verdict("6a", thd < 1e-8, f"pure sine THD {thd:.2e}% (< 1e-8%)")


def test_criterion_6b_third_harmonic(verdict):
    s = np.sin(2 * np.pi * F0 * T5) + 0.1 * np.sin(2 * np.pi * 3 * F0 * T5)
    thd = thd_percent(s, FS, F0)
    verdict("6b", abs(thd - 10.0) <= 1e-6, f"fundamental + 10% third: {thd:.9f}% (10 +/- 1e-6)")


def test_criterion_6c_square_wave(verdict):
    # The Fourier series up to n_max = 50 gives 100 sqrt(sum_{odd h=3..49} 1/h^2) = 47.30%;
    # 48.34% is the full-band limit. The target is checked as stated.
    thd = thd_percent(np.sign(np.sin(2 * np.pi * F0 * T5)), FS, F0, n_max=50)
    series = 100.0 * math.sqrt(sum(1.0 / h**2 for h in range(3, 50, 2)))
    verdict("6c", abs(thd - 48.3) <= 0.1,
            f"square wave n_max=50 THD {thd:.3f}% (target 48.3 +/- 0.1; truncated series {series:.3f}%)")


# ---------------------------------------------------------------- 7

def test_criterion_7_improvement_arithmetic(verdict):
    a, b = improvement_percent(97, 0.45), improvement_percent(65, 0.45)
    verdict("7", abs(a - 99.54) <= 0.02 and abs(b - 99.31) <= 0.02,
            f"(97, 0.45) -> {a:.3f}, (65, 0.45) -> {b:.3f}")


# ---------------------------------------------------------------- 8 and 9

@pytest.fixture(scope="module")
def default_compares(tmp_path_factory):
    path = bundled_scenario()
    dirs, times, codes = [], [], []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"compare{i}")
        start = time.perf_counter()
        codes.append(cli.main(["compare", str(path), "-o", str(out)]))
        times.append(time.perf_counter() - start)
        dirs.append(out)
    return parse_scenario(path), dirs, times, codes


@pytest.fixture(scope="module")
def with_mpc(default_compares):
    sc, dirs, _, _ = default_compares
    ts = read_timeseries_csv(dirs[0] / "with_mpc.csv")
    start = int(round(len(ts) * (1 - STEADY_STATE_FRACTION)))
    return sc, ts, start


@pytest.mark.slow
def test_criterion_8a_filtered_inverter_voltage_thd(verdict, default_compares):
    _, dirs, times, codes = default_compares
    report = json.loads((dirs[0] / "report.json").read_text())
    row = next(r for r in report["rows"] if r["signal_name"] == "inverter_output_voltage")
    thd = row["thd_with_mpc"]
    verdict("8a", codes[0] == 0 and thd <= 1.0 and times[0] < 300,
            f"inverter output voltage THD with MPC {thd:.4f}% (<= 1%), compare took {times[0]:.0f} s")


@pytest.mark.slow
def test_criterion_8b_ratio_to_raw_bridge(verdict, default_compares):
    _, dirs, _, _ = default_compares
    report = json.loads((dirs[0] / "report.json").read_text())
    row = next(r for r in report["rows"] if r["signal_name"] == "inverter_output_voltage")
    ratio = row["thd_without_mpc"] / row["thd_with_mpc"]
    verdict("8b", ratio >= 10.0,
            f"raw bridge {row['thd_without_mpc']:.3f}% vs with MPC {row['thd_with_mpc']:.4f}%: {ratio:.1f}x (>= 10x)")


@pytest.mark.slow
def test_criterion_8c_frequency_hold(verdict, with_mpc):
    _, ts, start = with_mpc
    freqs = [estimate_frequency(ts.v_i[start:, j], ts.sample_rate) for j in range(3)]
    worst = max(abs(f - 50.0) for f in freqs)
    verdict("8c", worst <= 0.1, f"inverter voltage frequency {', '.join(f'{f:.4f}' for f in freqs)} Hz (50 +/- 0.1)")


@pytest.mark.slow
def test_criterion_8d_tracking_error(verdict, with_mpc):
    sc, ts, start = with_mpc
    ref = grid_voltages(sc.grid, ts.t[start:])
    err = ts.v_i[start:] - ref
    rel = 100 * np.sqrt(np.mean(err**2, axis=0)) / np.sqrt(np.mean(ref**2, axis=0))
    verdict("8d", np.all(rel < 1.0), f"per-phase RMS tracking error {', '.join(f'{v:.3f}' for v in rel)}% (< 1%)")


@pytest.mark.slow
def test_criterion_9_determinism(verdict, default_compares):
    _, dirs, _, codes = default_compares
    names = ("without_mpc.csv", "with_mpc.csv", "report.json", "thd_table.csv")
    same = [(dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names]
    verdict("9", codes == [0, 0] and all(same), f"two compares, identical files: {sum(same)}/{len(names)}")


# ---------------------------------------------------------------- 10

@pytest.mark.slow
def test_criterion_10_closed_loop_supervision(verdict):
    sc = parse_scenario(bundled_scenario("accelerated"))
    assert sc.p_load(0.0) >= sc.p_source(0.0)
    ts = simulate_scenario(sc)
    v_oc = ts.soc * sc.battery.v_rated
    threshold = 0.75 * sc.battery.v_rated
    first_g2v = int(np.argmax(ts.mode_c == 0)) if np.any(ts.mode_c == 0) else None
    rule = np.array_equal(ts.mode_c == 1, v_oc >= threshold)
    crossing_ok = (first_g2v is not None and v_oc[first_g2v] < threshold <= v_oc[first_g2v - 1])
    in_range = bool(np.all((ts.soc >= 0) & (ts.soc <= 1)))
    ok = ts.mode_c[0] == 1 and crossing_ok and rule and in_range
    detail = (f"starts c={int(ts.mode_c[0])}, first c=0 at t={ts.t[first_g2v]:.4f} s with V_oc={v_oc[first_g2v]:.3f} V "
              f"(threshold {threshold:.0f} V), c follows V_oc >= threshold on every sample: {rule}, "
              f"soc in [{ts.soc.min():.5f}, {ts.soc.max():.5f}]" if first_g2v is not None
              else "no transition to c=0")
    verdict("10", ok, detail)
