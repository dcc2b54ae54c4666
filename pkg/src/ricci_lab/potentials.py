"""Ricci and holomorphy potentials, averages, and flow diagnostics.

The Ricci potential u of a state is normalized so that the weighted
volume identity (1/V) integral e^{-u} dv = 1 holds; the holomorphy
potential theta of strength c is normalized by (1/V) integral e^{theta}
dv = 1.  The combined potential is w = u + theta.

Two quantities drive the convergence bookkeeping: the variance-type
energy Y and its dissipation Z,

    Y = (1/V) integral (f - avg)^2 e^{-u} dv,
    Z = (1/V) integral (|grad f|^2 - (f - avg)^2) e^{-u} dv,

with f = u for the plain flow and f = w for the modified one.  Z >= 0 is
the weighted Poincare inequality; it is reported via ``poincare_ratio``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry
from .errors import EllipticSolveError, NormalizationError, SolvabilityError
from .geometry import Field, MetricState, Weight

SOLVE_RESIDUAL_TOL = 1e-9
MEAN_DEFECT_TOL = 1e-6
NORMALIZATION_TOL = 1e-8


def normalization_defect(state: MetricState, u_values: np.ndarray) -> float:
    """|(1/V) integral e^{-u} dv - 1| for a candidate Ricci potential."""
    vol = geometry.volume(state)
    return abs(geometry.integrate(np.exp(-u_values), state) / vol - 1.0)


def normalize_ricci_potential(state: MetricState, u_raw: np.ndarray) -> np.ndarray:
    """Additive shift enforcing (1/V) integral e^{-u} dv = 1 (closed form)."""
    vol = geometry.volume(state)
    return u_raw + math.log(geometry.integrate(np.exp(-u_raw), state) / vol)


def ricci_potential_closed_form(state: MetricState) -> Field:
    """Normalized Ricci potential from the closed-form transport identity.

    Fast path used inside flow stepping; agrees with the elliptic solve to
    solver tolerance and is cross-checked against it in the test suite.
    """
    u = normalize_ricci_potential(state, geometry.ricci_potential_raw(state))
    return Field(grid=state.grid, m=0, values=u)


def solve_ricci_potential(state: MetricState) -> Field:
    """Ricci potential via the constrained elliptic solve lap_g u = n - s.

    The Laplacian kernel (constants) is pinned by a mean constraint in the
    state volume form.  Raises SolvabilityError when the source fails the
    mean-value identity, EllipticSolveError (with a condition estimate)
    when the solve is singular or leaves a residual above tolerance.
    """
    g = state.grid
    n = g.n_nodes
    vol = geometry.volume(state)
    s = geometry.scalar_curvature(state)
    rhs = g.backend.n - s.values

    dv_w = g.dv0 * geometry.metric_profiles(state).ratio
    defect = abs(dv_w @ rhs)
    if defect > MEAN_DEFECT_TOL * vol:
        raise SolvabilityError(
            f"source mean defect {defect:.3e} exceeds {MEAN_DEFECT_TOL:.1e} * V; "
            "scalar curvature is not in the range of the Laplacian"
        )
    # The continuum source has exact mean zero; remove the (defect-sized)
    # quadrature residue so the discrete system is compatible.
    rhs = rhs - (dv_w @ rhs) / vol

    lap = geometry.laplacian_matrix(state)
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = lap
    bordered[:n, n] = 1.0
    bordered[n, :n] = dv_w
    full_rhs = np.concatenate([rhs, [0.0]])
    try:
        sol = np.linalg.solve(bordered, full_rhs)
    except np.linalg.LinAlgError as exc:
        raise EllipticSolveError(
            f"constrained Laplacian solve failed: {exc}",
            condition=float(np.linalg.cond(bordered)),
        ) from exc
    u_raw = sol[:n]

    residual = float(np.abs(lap @ u_raw - rhs).max())
    if residual > SOLVE_RESIDUAL_TOL * max(1.0, float(np.abs(rhs).max())):
        raise EllipticSolveError(
            f"elliptic residual {residual:.3e} exceeds tolerance",
            condition=float(np.linalg.cond(bordered)),
        )

    return Field(grid=g, m=0, values=normalize_ricci_potential(state, u_raw))


def solve_holomorphy_potential(state: MetricState, c: float) -> Field:
    """Holomorphy potential of c times the symmetry generator.

    The defining gradient equation reduces along the symmetric coordinate
    to a first-order ODE solved by c times the moment map; the additive
    constant enforces (1/V) integral e^theta dv = 1.
    """
    vol = geometry.volume(state)
    raw = float(c) * geometry.moment_map(state)
    shift = math.log(geometry.integrate(np.exp(raw), state) / vol)
    return Field(grid=state.grid, m=0, values=raw - shift)


def compute_averages(state: MetricState, u: Field, theta: Field | None = None):
    """Weighted averages a = (1/V) int u e^{-u} dv and its w-counterpart.

    Rejects unnormalized potentials.  Returns a, or (a, a_X) when theta is
    supplied.
    """
    vol = geometry.volume(state)
    if normalization_defect(state, u.values) > NORMALIZATION_TOL:
        raise NormalizationError("Ricci potential is not normalized")
    weight = np.exp(-u.values)
    a = geometry.integrate(u.values * weight, state) / vol
    if theta is None:
        return a
    theta_defect = abs(geometry.integrate(np.exp(theta.values), state) / vol - 1.0)
    if theta_defect > NORMALIZATION_TOL:
        raise NormalizationError("holomorphy potential is not normalized")
    w = u.values + theta.values
    a_x = geometry.integrate(w * weight, state) / vol
    return a, a_x


@dataclass(frozen=True, eq=False)
class PotentialSet:
    """Ricci potential, holomorphy potential, their sum, and averages."""

    u: Field
    theta: Field
    w: Field
    a: float
    a_x: float
    c: float

    def verify(self, state: MetricState, tol: float = 1e-10) -> None:
        """Re-check the normalization and average identities."""
        if normalization_defect(state, self.u.values) > tol:
            raise NormalizationError("stored u lost normalization")
        vol = geometry.volume(state)
        if abs(geometry.integrate(np.exp(self.theta.values), state) / vol - 1.0) > tol:
            raise NormalizationError("stored theta lost normalization")
        if np.abs(self.w.values - self.u.values - self.theta.values).max() > tol:
            raise NormalizationError("w != u + theta")
        a, a_x = compute_averages(state, self.u, self.theta)
        if abs(a - self.a) > 1e-12 * max(1.0, abs(self.a)) or abs(a_x - self.a_x) > 1e-12 * max(
            1.0, abs(self.a_x)
        ):
            raise NormalizationError("stored averages drifted from recomputation")


def compute_potentials(state: MetricState, c: float = 0.0, method: str = "solve") -> PotentialSet:
    """Assemble the potential set for a state and symmetry strength c.

    method "solve" uses the elliptic route, "closed" the transport identity.
    With c = 0 the holomorphy potential vanishes identically and w = u.
    """
    if method == "solve":
        u = solve_ricci_potential(state)
    elif method == "closed":
        u = ricci_potential_closed_form(state)
    else:
        raise ValueError(f"unknown method {method!r}")
    theta = solve_holomorphy_potential(state, c)
    w = Field(grid=state.grid, m=0, values=u.values + theta.values)
    a, a_x = compute_averages(state, u, theta)
    return PotentialSet(u=u, theta=theta, w=w, a=a, a_x=a_x, c=float(c))


@dataclass(frozen=True, eq=False)
class DiagnosticsRecord:
    """Scalar diagnostics of one sampled flow state.

    Y, Z and poincare_ratio refer to the potential driving the flow (u for
    the plain flow, w for the modified one); the u- and w-based values are
    both kept.  ``degenerate`` flags a Poincare denominator too small to
    divide by (the ratio is then NaN).
    """

    t: float
    y: float
    z: float
    a: float
    a_x: float
    osc_u: float
    osc_w: float
    sup_norms: dict
    poincare_ratio: float
    degenerate: bool
    y_u: float
    z_u: float
    y_w: float
    z_w: float


def diagnostics(state: MetricState, pots: PotentialSet, modified: bool = False) -> DiagnosticsRecord:
    g = state.grid
    vol = geometry.volume(state)
    weight = np.exp(-pots.u.values)

    def pair(f_vals: np.ndarray, avg: float, f_field: Field) -> tuple[float, float, float, float]:
        dev_sq = (f_vals - avg) ** 2
        var = geometry.integrate(dev_sq * weight, state) / vol
        grad = geometry.grad_norm_sq(f_field, state).values
        dirichlet = geometry.integrate(grad * weight, state) / vol
        return var, dirichlet - var, dirichlet, geometry.sup_norm(grad, g)

    y_u, z_u, dir_u, grad_sup_sq_u = pair(pots.u.values, pots.a, pots.u)
    y_w, z_w, dir_w, grad_sup_sq_w = pair(pots.w.values, pots.a_x, pots.w)

    y, z = (y_w, z_w) if modified else (y_u, z_u)
    den = y
    degenerate = den < 1e-14
    ratio = float("nan") if degenerate else (dir_w if modified else dir_u) / den

    lap = geometry.laplacian_matrix(state)
    sup_norms = {
        "u": geometry.sup_norm(pots.u.values, g),
        "grad_u": math.sqrt(max(grad_sup_sq_u, 0.0)),
        "lap_u": geometry.sup_norm(lap @ pots.u.values, g),
        "w": geometry.sup_norm(pots.w.values, g),
        "grad_w": math.sqrt(max(grad_sup_sq_w, 0.0)),
        "lap_w": geometry.sup_norm(lap @ pots.w.values, g),
        "theta": geometry.sup_norm(pots.theta.values, g),
        "u_minus_a": geometry.sup_norm(pots.u.values - pots.a, g),
        "w_minus_ax": geometry.sup_norm(pots.w.values - pots.a_x, g),
    }

    return DiagnosticsRecord(
        t=float(state.t),
        y=y,
        z=z,
        a=pots.a,
        a_x=pots.a_x,
        osc_u=geometry.oscillation(pots.u.values, g),
        osc_w=geometry.oscillation(pots.w.values, g),
        sup_norms=sup_norms,
        poincare_ratio=ratio,
        degenerate=degenerate,
        y_u=y_u,
        z_u=z_u,
        y_w=y_w,
        z_w=z_w,
    )


@dataclass(frozen=True, eq=False)
class MonitorReport:
    """Uniform-boundedness monitor over a sequence of diagnostics records."""

    times: np.ndarray
    running_max: dict
    overall_max: dict
    nonfinite_steps: list
    bounded: bool


MONITORED = ("u", "grad_u", "lap_u", "w", "grad_w", "lap_w")


def perelman_monitor(trace, bound: float | None = None) -> MonitorReport:
    """Track running maxima of the sup norms of u, grad u, lap u (and w).

    ``trace`` may be a FlowTrace or any iterable of DiagnosticsRecord.
    Non-finite entries are flagged with their step index rather than
    silently propagated.
    """
    records = getattr(trace, "diagnostics_records", None)
    if callable(records):
        records = records()
    if records is None:
        records = list(trace)
    times = np.array([r.t for r in records], dtype=float)
    running: dict[str, np.ndarray] = {}
    nonfinite = []
    for name in MONITORED:
        series = np.array([r.sup_norms[name] for r in records], dtype=float)
        bad = np.nonzero(~np.isfinite(series))[0]
        for i in bad:
            nonfinite.append((int(i), float(times[i]), name))
        clean = np.where(np.isfinite(series), series, -np.inf)
        running[name] = np.maximum.accumulate(clean)
    overall = {k: float(v[-1]) if len(v) else float("nan") for k, v in running.items()}
    bounded = not nonfinite
    if bound is not None:
        bounded = bounded and all(v <= bound for v in overall.values())
    return MonitorReport(
        times=times,
        running_max=running,
        overall_max=overall,
        nonfinite_steps=nonfinite,
        bounded=bounded,
    )
