"""End-to-end acceptance battery.

Each test exercises one headline guarantee of the laboratory at its stated
tolerance and prints a single verdict line (run with -s to see them all on
success).  These are deliberately redundant with the per-module tests: they
run the full pipeline the way a study would, not isolated units.
"""
import math
import os
import pathlib

import numpy as np
import pytest

import oracles
from ricci_lab import cli, flow, geometry, invariants, potentials, spectral

CONFIG_DIR = pathlib.Path(__file__).resolve().parents[1] / "configs"


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num:02d}: {detail}"


def test_criterion_01_reference_metric_is_fixed():
    cfg = flow.FlowConfig(
        backend="cp1_conformal",
        n_nodes=129,
        t_end=5.0,
        stepper=flow.Stepper.SEMI_IMPLICIT,
        sample_stride=10,
    )
    trace = flow.run_flow(cfg)
    worst = max(r.sup_norms["u"] for r in trace.diagnostics_records())
    ok = trace.status == "completed" and worst <= 1e-8
    _verdict(1, ok, f"sup|u| stays {worst:.3e} over t in [0,5] at 129 nodes")


def _pooled_spectrum(n_nodes: int):
    grid = geometry.make_grid("cp1_conformal", n_nodes)
    state = geometry.initial_metric(grid)
    pots = potentials.compute_potentials(state, method="closed")
    rep = spectral.full_spectrum(state, pots.u, m_max=3)
    vals = []
    for arr in rep.modes.values():
        vals.extend(float(v) for v in arr)
    return rep, sorted(v for v in vals if v > 0.5)[:15]


def test_criterion_02_reference_spectrum_ladder():
    reps, pooled = {}, {}
    for n in (65, 129, 257):
        reps[n], pooled[n] = _pooled_spectrum(n)
    targets = [1.0] * 3 + [3.0] * 5 + [6.0] * 7
    extrapolated = [
        spectral.aitken_extrapolate([pooled[65][i], pooled[129][i], pooled[257][i]])
        for i in range(15)
    ]
    err = max(abs(e - t) for e, t in zip(extrapolated, targets))
    band_mult = len(reps[129].band)
    lam_err = abs(reps[129].lambda_value - 3.0)
    ok = err <= 1e-7 and band_mult == 3 and lam_err <= 1e-7
    _verdict(
        2,
        ok,
        f"ladder err {err:.3e} after extrapolation, band multiplicity {band_mult}, "
        f"|lambda-3| = {lam_err:.3e}",
    )


def test_criterion_03_dissipation_nonnegative(perturbed_trace):
    vol = oracles.VOLUME_CP1
    worst = min(r.z for r in perturbed_trace.diagnostics_records())
    ok = worst * vol >= -1e-10 * vol
    _verdict(3, ok, f"min Z = {worst:.3e} over {len(perturbed_trace.samples)} states")


def test_criterion_04_averages_monotone(perturbed_trace, modified_trace):
    a = np.array([r.a for r in perturbed_trace.diagnostics_records()])
    ax = np.array([r.a_x for r in modified_trace.diagnostics_records()])
    ok_a = (
        np.all(np.diff(a) >= -1e-10)
        and np.all(a >= a[0] - 1e-14)
        and np.all(a <= 1e-12)
    )
    ok_ax = (
        np.all(np.diff(ax) >= -1e-10)
        and np.all(ax >= ax[0] - 1e-14)
        and np.all(ax <= 1e-12)
    )
    _verdict(
        4,
        bool(ok_a and ok_ax),
        f"a: {a[0]:.6f} -> {a[-1]:.2e}, worst step {np.diff(a).min():+.2e}; "
        f"a_X: {ax[0]:.6f} -> {ax[-1]:.6f}, worst step {np.diff(ax).min():+.2e}",
    )


def test_criterion_05_exponential_convergence(perturbed_trace):
    recs = perturbed_trace.diagnostics_records()
    final_sup = recs[-1].sup_norms["u_minus_a"]
    fit = flow.fit_decay_rate(perturbed_trace, flow.DecayQuantity.SUP_U_MINUS_A)
    half = len(recs) // 2
    with_y = [r for r in recs if r.y > 0.0]
    amp = max(r.sup_norms["u_minus_a"] / r.y**0.25 for r in with_y[:half])
    bound_ok = all(
        r.sup_norms["u_minus_a"] <= amp * r.y**0.25 * (1.0 + 1e-9) for r in with_y[half:]
    )
    ok = final_sup <= 1e-6 and fit.gamma > 0.0 and fit.r_squared >= 0.99 and bound_ok
    _verdict(
        5,
        ok,
        f"final sup|u-a| = {final_sup:.3e}, rate {fit.gamma:.4f} (r^2 {fit.r_squared:.6f}), "
        f"quartic-root envelope A = {amp:.3f} holds on the trailing half",
    )


def test_criterion_06_strict_poincare_along_flow(perturbed_trace):
    checked = 0
    worst = math.inf
    for sample in perturbed_trace.samples:
        r = sample.diagnostics
        if sample.spectrum is None or not math.isfinite(r.poincare_ratio):
            continue
        dp = invariants.delta_prime(sample.spectrum.lambda_value - 1.0, r.osc_u)
        worst = min(worst, r.poincare_ratio - (1.0 + dp))
        checked += 1
    spots_ok = all(
        abs(invariants.delta_prime(d, o) - expect) < 1e-12
        for d, o, expect in oracles.DELTA_PRIME_SPOTS
    )
    ok = checked >= 10 and worst >= -1e-6 and spots_ok
    _verdict(
        6,
        ok,
        f"ratio - (1 + delta') >= {worst:+.3e} at {checked} states; spot values hold",
    )


def test_criterion_07_gap_bounds_and_hessian_identity(perturbed_trace):
    worst_sandwich = worst_gap = worst_boch = -math.inf
    n_spec = 0
    for sample, state in zip(perturbed_trace.samples, perturbed_trace.snapshots):
        spec = sample.spectrum
        if spec is None:
            continue
        n_spec += 1
        osc = sample.diagnostics.osc_u
        lo = math.exp(-osc) * spec.mu
        hi = math.exp(osc) * spec.mu
        worst_sandwich = max(
            worst_sandwich,
            (lo - spec.mu_tilde) / spec.mu,
            (spec.mu_tilde - hi) / spec.mu,
        )
        worst_gap = max(worst_gap, (1.0 + lo - spec.lambda_value) / spec.lambda_value)
        pots = potentials.compute_potentials(state, method="closed")
        boch = spectral.bochner_residual(state, pots.u)
        worst_boch = max(worst_boch, boch.rel_residual)
    ok = (
        n_spec >= 10
        and worst_sandwich <= 1e-6
        and worst_gap <= 1e-6
        and worst_boch <= 1e-6
    )
    _verdict(
        7,
        ok,
        f"{n_spec} states: sandwich slack {worst_sandwich:+.2e}, gap slack {worst_gap:+.2e}, "
        f"Hessian identity residual {worst_boch:.2e}",
    )


def test_criterion_08_classical_obstruction_vanishes():
    grid = geometry.make_grid("cp1_conformal", 65)
    vol = oracles.VOLUME_CP1
    futs, projs = [], []
    for amp, mode in ((0.3, 2), (0.12, 3)):
        state = geometry.perturb_metric(geometry.initial_metric(grid), amp, mode)
        pots = potentials.compute_potentials(state, method="closed")
        futs.append(invariants.futaki(state, pots.u))
        grad_u = geometry.gradient_field(pots.u, state)
        proj, _ = spectral.project_h0(grad_u, state)
        p_sq = spectral.vector_inner(proj, proj, state, spectral.Weight.DV)
        projs.append(math.sqrt(max(float(np.real(p_sq)), 0.0)))
    ok = (
        all(abs(f) <= 1e-8 * vol for f in futs)
        and abs(futs[0] - futs[1]) <= 1e-8 * vol
        and all(p <= 1e-8 for p in projs)
    )
    _verdict(
        8,
        ok,
        f"obstruction {futs[0]:+.2e} / {futs[1]:+.2e} (vol {vol:.3f}), "
        f"holomorphic part of grad u <= {max(projs):.2e}",
    )


def _paired_deviation(n_nodes: int, dt: float, stride: int) -> float:
    base = dict(
        backend="cp1_conformal",
        n_nodes=n_nodes,
        perturbation=(0.1, 2),
        t_end=1.0,
        dt=dt,
        stepper=flow.Stepper.SEMI_IMPLICIT,
        sample_stride=stride,
    )
    krf = flow.run_flow(flow.FlowConfig(c=0.0, **base))
    mkrf = flow.run_flow(flow.FlowConfig(c=0.4, **base))
    assert krf.status == "completed" and mkrf.status == "completed"
    return flow.reparametrize_compare(krf, mkrf, 0.4)


def test_criterion_09_modified_flow_is_reparametrized_flow(tmp_path, monkeypatch):
    dev_coarse = _paired_deviation(33, 2e-3, 50)
    dev_fine = _paired_deviation(65, 1e-3, 100)
    order = math.log2(dev_coarse / dev_fine)
    monkeypatch.setenv("RICCI_LAB_OUT", str(tmp_path))
    exit_code = cli.main(["check", str(CONFIG_DIR / "cp1-negative.ini")])
    ok = dev_fine <= 1e-6 and order >= 1.995 and exit_code == 1
    _verdict(
        9,
        ok,
        f"orbit deviation {dev_fine:.3e} (order {order:.3f} under refinement); "
        f"obstructed configuration exits {exit_code}",
    )


def test_criterion_10_blowup_soliton():
    res = {
        n: invariants.soliton_coefficient(
            geometry.initial_metric(geometry.make_grid("f1_momentum", n))
        )
        for n in (65, 129)
    }
    drift = abs(res[65].value - res[129].value)
    cfg = flow.FlowConfig(
        backend="f1_momentum",
        n_nodes=129,
        c=res[129].value,
        t_end=30.0,
        dt=0.02,
        stepper=flow.Stepper.SEMI_IMPLICIT,
        sample_stride=25,
    )
    trace = flow.run_flow(cfg)
    final = trace.diagnostics_records()[-1].sup_norms["w_minus_ax"]
    ok = (
        all(r.residual <= 1e-8 for r in res.values())
        and drift <= 1e-6
        and abs(res[129].value - oracles.CSTAR_F1) <= 1e-6
        and trace.status == "completed"
        and final <= 1e-4
    )
    _verdict(
        10,
        ok,
        f"c* = {res[129].value:.10f} (grid drift {drift:.2e}, residual "
        f"{max(r.residual for r in res.values()):.2e}); sup|w - a_X| = {final:.3e} at t=30",
    )
