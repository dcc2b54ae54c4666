"""Time integration of the potential-form flows.

The metric stays inside the anticanonical class by construction: only the
relative potential phi evolves, via phi-dot = u - a for the plain flow and
phi-dot = w - a_X for the field-modified flow.  The potentials are re-derived
from phi at every stage, so the normalization holds at all times instead of
drifting; the averages are frozen at step start, which only affects the
irrelevant constant mode of phi.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import math

import numpy as np

from . import geometry, potentials
from .errors import ConfigError, FitError, PositivityError, TraceError
from .geometry import MetricState

RK4_REAL_AXIS = 2.785  # classic RK4 stability interval on the negative real axis
SEMI_IMPLICIT_DT = 0.02


class Stepper(enum.Enum):
    EXPLICIT_RK4_CFL = "explicit_rk4_cfl"
    SEMI_IMPLICIT = "semi_implicit"


class DecayQuantity(enum.Enum):
    Y = "Y"
    SUP_U_MINUS_A = "sup_u_minus_a"
    Z = "Z"


@dataclasses.dataclass(frozen=True)
class Tolerances:
    """Runtime consistency gates applied at sampled states."""

    cross_check: float = 1e-8  # elliptic vs closed-form potential agreement
    positivity_margin: float = 1e-12  # dense lower bound on the metric density


@dataclasses.dataclass(frozen=True)
class FlowConfig:
    backend: str = "cp1_conformal"
    n_nodes: int = 65
    perturbation: tuple[float, int] | None = None
    c: float = 0.0
    t_end: float = 5.0
    stepper: Stepper = Stepper.EXPLICIT_RK4_CFL
    cfl_safety: float = 0.8
    dt: float | None = None
    sample_stride: int = 10
    spectrum_stride: int = 0
    m_max: int = 3
    tolerances: Tolerances = dataclasses.field(default_factory=Tolerances)

    def __post_init__(self):
        if not self.t_end > 0.0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if not 0.0 < self.cfl_safety < 1.0:
            raise ConfigError(f"cfl_safety must lie in (0, 1), got {self.cfl_safety}")
        if self.dt is not None and not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.sample_stride < 1:
            raise ConfigError(f"sample_stride must be >= 1, got {self.sample_stride}")
        if self.spectrum_stride < 0:
            raise ConfigError(f"spectrum_stride must be >= 0, got {self.spectrum_stride}")


@dataclasses.dataclass(frozen=True)
class FlowSample:
    t: float
    phi_hash: str
    diagnostics: potentials.DiagnosticsRecord
    spectrum: object | None = None


@dataclasses.dataclass
class FlowTrace:
    config: FlowConfig
    dt: float
    samples: list[FlowSample] = dataclasses.field(default_factory=list)
    snapshots: list[MetricState] = dataclasses.field(default_factory=list)
    status: str = "running"
    n_steps: int = 0

    def append(self, sample: FlowSample, state: MetricState) -> None:
        if self.samples and not sample.t > self.samples[-1].t:
            raise TraceError(
                f"sample times must increase: {sample.t} after {self.samples[-1].t}"
            )
        self.samples.append(sample)
        self.snapshots.append(state)

    def diagnostics_records(self) -> list[potentials.DiagnosticsRecord]:
        return [s.diagnostics for s in self.samples]

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)


def state_hash(state: MetricState) -> str:
    return hashlib.sha256(np.ascontiguousarray(state.phi).tobytes()).hexdigest()


def _round_block_matrix(grid) -> np.ndarray:
    # derivative of the density with respect to phi; the fiber profile is
    # (1 - s^2)/2 times the reference second-order operator on both backends
    return 0.5 * grid.coll.sl


def flow_jacobian(state: MetricState, c: float = 0.0) -> np.ndarray:
    """Exact derivative of the step right-hand side with respect to phi.

    Matches the frozen-average stage right-hand side: the rank-one rows come
    from the normalizations of u (and of the field potential when c is
    nonzero), while the frozen averages themselves contribute nothing.  The
    constant mode is exactly neutral.
    """
    g = state.grid
    n = g.n_nodes
    wq = g.weights
    dx = g.coll.diff
    fib = geometry.fiber_profile(g)
    prof = geometry.metric_profiles(state)
    block = _round_block_matrix(g)
    if g.backend is geometry.CP1_CONFORMAL:
        dln_ratio = block / prof.positive[:, None]
        dmm = 0.5 * fib[:, None] * dx
    else:
        dtau = fib[:, None] * dx
        dln_ratio = dtau / prof.tau[:, None] + block / prof.jac[:, None]
        dmm = fib[:, None] * dx
    jac = np.eye(n) + dln_ratio
    # normalization row of u: e^{-u_raw} dv reduces to a fixed multiple of
    # e^{-phi} d(coordinate), so the row is the same closed form on both backends
    q_u = wq * np.exp(-state.phi)
    jac -= np.outer(np.ones(n), q_u / q_u.sum())
    if c != 0.0:
        mm = geometry.moment_map(state)
        jac += c * dmm
        q_t = g.dv0 * prof.ratio * np.exp(c * mm)  # dv0 already carries quadrature weights
        dn = q_t @ (c * dmm + dln_ratio) / q_t.sum()
        jac -= np.outer(np.ones(n), dn)
    return jac


def stable_dt(state: MetricState, cfl_safety: float) -> float:
    """Largest explicit step from the stability interval of the linearization.

    Uses the plain-flow Jacobian regardless of c so that paired runs with
    and without the field share an identical step sequence; the field terms
    are bounded and covered by the safety factor.
    """
    eigs = np.linalg.eigvals(flow_jacobian(state, 0.0))
    rho = float(np.max(-eigs.real))
    if not (math.isfinite(rho) and rho > 0.0):
        raise ConfigError("linearization has no decaying part; cannot set a step")
    return cfl_safety * RK4_REAL_AXIS / rho


def _require_nodal_positive(state: MetricState) -> None:
    vals = geometry.metric_profiles(state).positive
    i = int(np.argmin(vals))
    if not vals[i] > 0.0:
        raise PositivityError(
            f"metric density reached {vals[i]:.3e} at node {state.grid.nodes[i]:.6f}",
            coordinate=float(state.grid.nodes[i]),
            value=float(vals[i]),
        )


def _rhs(state: MetricState, c: float, a_frozen: float, ax_frozen: float) -> np.ndarray:
    _require_nodal_positive(state)
    pots = potentials.compute_potentials(state, c, method="closed")
    if c != 0.0:
        return pots.w.values - ax_frozen
    return pots.u.values - a_frozen


def step(
    state: MetricState,
    pots: potentials.PotentialSet,
    c: float,
    dt: float,
    stepper: Stepper = Stepper.EXPLICIT_RK4_CFL,
) -> MetricState:
    """Advance phi by one step of the chosen scheme.

    pots must be the potentials of ``state``; their averages stay frozen
    across the stages.  Positivity loss at any stage raises PositivityError
    with the offending node, leaving the caller its last good state.
    """
    a0, ax0 = pots.a, pots.a_x
    phi = state.phi
    if stepper is Stepper.EXPLICIT_RK4_CFL:
        k1 = _rhs(state, c, a0, ax0)
        k2 = _rhs(state.replace(phi=phi + 0.5 * dt * k1), c, a0, ax0)
        k3 = _rhs(state.replace(phi=phi + 0.5 * dt * k2), c, a0, ax0)
        k4 = _rhs(state.replace(phi=phi + dt * k3), c, a0, ax0)
        phi_new = phi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        # one-stage linearly implicit midpoint: second order with the exact Jacobian
        f0 = _rhs(state, c, a0, ax0)
        jac = flow_jacobian(state, c)
        lhs = np.eye(state.grid.n_nodes) - 0.5 * dt * jac
        delta = np.linalg.solve(lhs, dt * f0)
        phi_new = phi + delta
    new_state = state.replace(phi=phi_new, t=state.t + dt)
    geometry.assert_positive(new_state)
    return new_state


def _sample(state: MetricState, config: FlowConfig, want_spectrum: bool) -> FlowSample:
    margin, node = geometry.positivity_margin(state)
    if margin <= config.tolerances.positivity_margin:
        raise PositivityError(
            f"metric density margin {margin:.3e} at coordinate {node:.6f}",
            coordinate=node,
            value=margin,
        )
    pots = potentials.compute_potentials(state, config.c, method="solve")
    closed = potentials.ricci_potential_closed_form(state)
    gap = float(np.abs(pots.u.values - closed.values).max())
    if gap > config.tolerances.cross_check:
        raise TraceError(
            f"elliptic and closed-form potentials disagree by {gap:.3e} at t={state.t:.6f}"
        )
    diag = potentials.diagnostics(state, pots, modified=config.c != 0.0)
    spectrum = None
    if want_spectrum:
        from . import spectral

        spectrum = spectral.full_spectrum(state, pots.u, m_max=config.m_max)
    return FlowSample(
        t=float(state.t), phi_hash=state_hash(state), diagnostics=diag, spectrum=spectrum
    )


def _finite(diag: potentials.DiagnosticsRecord) -> bool:
    vals = [diag.y, diag.z, diag.a, diag.a_x, diag.osc_u, diag.osc_w]
    vals.extend(diag.sup_norms.values())
    return all(math.isfinite(v) for v in vals if not isinstance(v, bool))


def run_flow(config: FlowConfig) -> FlowTrace:
    """Integrate the configured flow and sample diagnostics along the way.

    Samples are taken at t = 0, every sample_stride steps, and at the final
    time.  Each sampled potential is recomputed by the elliptic solver and
    cross-checked against the closed form, so a silently corrupted state
    cannot produce a plausible-looking trace.
    """
    grid = geometry.make_grid(config.backend, config.n_nodes)
    state = geometry.initial_metric(grid)
    if config.perturbation is not None:
        amp, mode = config.perturbation
        state = geometry.perturb_metric(state, float(amp), int(mode))

    if config.dt is not None:
        dt = float(config.dt)
    elif config.stepper is Stepper.EXPLICIT_RK4_CFL:
        dt = stable_dt(state, config.cfl_safety)
    else:
        dt = SEMI_IMPLICIT_DT
    n_steps = max(1, math.ceil(config.t_end / dt - 1e-12))
    dt = config.t_end / n_steps

    trace = FlowTrace(config=config, dt=dt, n_steps=n_steps)
    spectrum_counter = 0

    def take(state: MetricState) -> None:
        nonlocal spectrum_counter
        want = config.spectrum_stride > 0 and spectrum_counter % config.spectrum_stride == 0
        trace.append(_sample(state, config, want), state)
        spectrum_counter += 1

    try:
        take(state)
        for k in range(1, n_steps + 1):
            pots = potentials.compute_potentials(state, config.c, method="closed")
            state = step(state, pots, config.c, dt, config.stepper)
            if k % config.sample_stride == 0 or k == n_steps:
                take(state)
                if not _finite(trace.samples[-1].diagnostics):
                    trace.status = "nonfinite-diagnostic"
                    return trace
    except PositivityError as exc:
        if not trace.samples or trace.samples[-1].t < state.t - 1e-15:
            pass  # the failed state itself is not sampled; the last good one already is
        trace.status = f"positivity-lost ({exc})"
        return trace
    trace.status = "completed"
    return trace


@dataclasses.dataclass(frozen=True)
class DecayFit:
    gamma: float
    prefactor: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    def __iter__(self):
        return iter((self.gamma, self.prefactor, self.r_squared))


FLOOR_BAND = 100.0


def _strip_floor_plateau(series: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Drop the trailing samples that sit on the roundoff floor.

    The suffix of samples within FLOOR_BAND of the series minimum is a
    plateau only if it has stopped decreasing; clean exponential decay is
    strictly monotone there and is kept in full.
    """
    vals = np.array([v for _, v in series])
    if vals.size < 3:
        return series
    cut = vals <= FLOOR_BAND * vals.min()
    j = int(np.nonzero(~cut)[0][-1]) + 1 if not cut.all() else 0
    if j < vals.size and np.any(np.diff(vals[j:]) >= 0.0):
        return series[:j] if j > 0 else series
    return series


def fit_decay_rate(
    trace, quantity: DecayQuantity = DecayQuantity.Y, window_fraction: float = 0.5
) -> DecayFit:
    """Least-squares exponential rate on the trailing window of a trace.

    Fits log(q) = log(B) - gamma t over the last window_fraction of samples;
    nonpositive values are dropped before fitting (they carry no decay
    information at this precision).  A run that converges well before its end
    leaves a trailing roundoff plateau where the quantity dithers around its
    floor instead of decaying; those samples are detected (non-monotone
    suffix within a fixed band of the minimum) and excluded, so the window
    trails the decaying segment.  Fewer than 10 usable points is an error.
    """
    records = getattr(trace, "diagnostics_records", None)
    records = records() if callable(records) else list(trace)
    if quantity is DecayQuantity.Y:
        series = [(r.t, r.y) for r in records]
    elif quantity is DecayQuantity.Z:
        series = [(r.t, r.z) for r in records]
    else:
        key = "w_minus_ax" if getattr(trace, "config", None) and trace.config.c != 0.0 else "u_minus_a"
        series = [(r.t, r.sup_norms[key]) for r in records]
    if not series:
        raise FitError("empty trace")
    series = [(t, v) for t, v in series if v > 0.0]
    if not series:
        raise FitError("no positive samples to fit")
    series = _strip_floor_plateau(series)
    t_end = series[-1][0]
    t_start = series[0][0] + (1.0 - window_fraction) * (t_end - series[0][0])
    window = [(t, v) for t, v in series if t >= t_start and v > 0.0]
    if len(window) < 10:
        raise FitError(
            f"need at least 10 positive samples in the fitting window, got {len(window)}"
        )
    ts = np.array([t for t, _ in window])
    logs = np.log([v for _, v in window])
    # ptp rather than an exact variance-zero check: summing identical floats
    # can leave the mean one ulp off, which would sneak past ss_tot == 0
    if float(np.ptp(logs)) < 1e-12 * (1.0 + abs(float(logs.mean()))):
        raise FitError("constant series carries no decay rate")
    slope, intercept = np.polyfit(ts, logs, 1)
    fitted = slope * ts + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    return DecayFit(
        gamma=float(-slope),
        prefactor=float(np.exp(intercept)),
        r_squared=float(r2),
        window=(float(ts[0]), float(ts[-1])),
        n_points=len(ts),
    )


def _coordinate_shift(grid, points: np.ndarray, shift: float) -> np.ndarray:
    """Image of chart points under the symmetry-generator flow for time ``shift``.

    Both backends reduce to a translation in the logarithmic coordinate of
    the symmetry orbit; the closed forms below are that translation mapped
    back to the chart.
    """
    if grid.backend is geometry.CP1_CONFORMAL:
        tanh_half = math.tanh(0.5 * shift)
        return (points + tanh_half) / (1.0 + tanh_half * points)
    lo, hi = grid.backend.interval
    s = (points - lo) / (hi - points)  # e^{log-coordinate}
    scaled = s * math.exp(shift)
    return (lo + hi * scaled) / (1.0 + scaled)


def reparametrize_compare(krf_trace: FlowTrace, mkrf_trace: FlowTrace, c: float) -> float:
    """Largest moment-profile gap between the modified flow and the plain
    flow pulled back by the symmetry group.

    At sample time t the plain-flow snapshot is composed with the time-(c t)
    coordinate flow of the full real one-parameter group of the symmetry
    field (the orientation that empirically matches; see the round-start
    test), and compared with the modified-flow snapshot on a dense chart
    grid.
    """
    ck, cm = krf_trace.config, mkrf_trace.config
    if ck.backend != cm.backend or ck.n_nodes != cm.n_nodes:
        raise TraceError("traces use different grids")
    if ck.perturbation != cm.perturbation:
        raise TraceError("traces start from different initial data")
    tk, tm = krf_trace.times(), mkrf_trace.times()
    if len(tk) != len(tm) or not np.allclose(tk, tm, rtol=0.0, atol=1e-9):
        raise TraceError("traces are sampled at different times")
    grid = geometry.make_grid(ck.backend, ck.n_nodes)
    dense = grid.coll.dense_points(4)
    worst = 0.0
    for t, sk, sm in zip(tk, krf_trace.snapshots, mkrf_trace.snapshots):
        mom_k = geometry.moment_map(sk)
        mom_m = geometry.moment_map(sm)
        mapped = _coordinate_shift(grid, dense, c * float(t))
        pulled = grid.coll.evaluate(mom_k, mapped)
        direct = grid.coll.evaluate(mom_m, dense)
        worst = max(worst, float(np.abs(direct - pulled).max()))
    return worst
