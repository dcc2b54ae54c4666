"""Model geometries with a holomorphic circle symmetry.

Two backends, both reduced to one spatial coordinate by symmetry:

* ``cp1_conformal``: metrics on the Riemann sphere conformal to the round
  one, parametrized by the axis coordinate x in (-1, 1).  A metric state
  is a potential phi with area density D = 1 + lap0(phi) > 0, where lap0
  is the round Laplacian.  The anticanonical volume is 4*pi.

* ``f1_momentum``: circle-invariant metrics on the one-point blow-up of
  the projective plane in momentum coordinates, moment interval (1, 3),
  with canonical fiber profile theta0 = (tau-1)(3-tau)/2.  A state is a
  potential phi on the reference momentum grid; positivity of the metric
  is positivity of the transported Jacobian J = d(tau_phi)/d(tau0).
  The anticanonical volume is 16*pi^2.

Conventions: the Laplacian is the complex one (half the Riemannian one),
so the reference metrics have scalar curvature identically equal to the
complex dimension n.  Angular Fourier modes are tracked explicitly; an
integral over the manifold of a mode-m field vanishes for m != 0.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .collocation import Collocation, gauss_legendre
from .errors import GridError, PositivityError

TWO_PI = 2.0 * math.pi
FOUR_PI_SQ = 4.0 * math.pi**2


class Weight(enum.Enum):
    """Weight attached to the volume form in integrals and pairings."""

    DV = "dv"
    E_MINUS_U = "e_minus_u"
    E_THETA = "e_theta"


@dataclass(frozen=True)
class Backend:
    """Static description of a model geometry.

    ``h0_modes`` lists the angular modes of a basis of symmetric holomorphic
    vector fields; ``frame`` names the invariant frame field the components
    refer to.
    """

    name: str
    n: int
    interval: tuple[float, float]
    volume: float
    h0_modes: tuple[int, ...]
    frame: str

    @property
    def h0_dim(self) -> int:
        return len(self.h0_modes)


CP1_CONFORMAL = Backend(
    name="cp1_conformal",
    n=1,
    interval=(-1.0, 1.0),
    volume=2.0 * TWO_PI,
    h0_modes=(-1, 0, 1),
    frame="z d/dz",
)

F1_MOMENTUM = Backend(
    name="f1_momentum",
    n=2,
    interval=(1.0, 3.0),
    volume=16.0 * math.pi**2,
    h0_modes=(0,),
    frame="fiber Euler field",
)

_BACKENDS = {
    "cp1": CP1_CONFORMAL,
    "cp1_conformal": CP1_CONFORMAL,
    "f1": F1_MOMENTUM,
    "f1_momentum": F1_MOMENTUM,
}


def get_backend(backend: Backend | str) -> Backend:
    if isinstance(backend, Backend):
        return backend
    try:
        return _BACKENDS[str(backend).lower()]
    except KeyError:
        raise GridError(f"unknown backend {backend!r}; known: {sorted(_BACKENDS)}")


@dataclass(frozen=True, eq=False)
class Grid:
    """Gauss-Legendre grid on the backend's coordinate interval.

    ``dv0`` are quadrature weights of the reference volume form (they sum
    to the class volume up to roundoff), ``u0`` is the reference Ricci
    potential, already normalized.
    """

    backend: Backend
    n_nodes: int
    coll: Collocation = dc_field(repr=False)
    nodes: np.ndarray = dc_field(repr=False)
    weights: np.ndarray = dc_field(repr=False)
    dv0: np.ndarray = dc_field(repr=False)
    u0: np.ndarray = dc_field(repr=False)
    arc_spacing: float = 0.0


def make_grid(backend: Backend | str, n_nodes: int) -> Grid:
    """Interior Gauss-Legendre grid with n_nodes >= 16 nodes."""
    bk = get_backend(backend)
    n_nodes = int(n_nodes)
    if n_nodes < 16:
        raise GridError(f"need at least 16 nodes, got {n_nodes}")
    lo, hi = bk.interval
    coll = gauss_legendre(n_nodes, lo, hi)
    x = coll.nodes
    if bk is CP1_CONFORMAL:
        dv0 = TWO_PI * coll.weights
        u0 = np.zeros(n_nodes)
        arc = np.arcsin(x) / math.sqrt(2.0)
    else:
        dv0 = FOUR_PI_SQ * x * coll.weights
        u0 = np.log(x / 2.0)
        arc = math.sqrt(2.0) * np.arcsin(x - 2.0)
    return Grid(
        backend=bk,
        n_nodes=n_nodes,
        coll=coll,
        nodes=x,
        weights=coll.weights,
        dv0=dv0,
        u0=u0,
        arc_spacing=float(np.diff(arc).min()),
    )


@dataclass(frozen=True, eq=False)
class MetricState:
    """A metric in the anticanonical class: potential phi at time t."""

    grid: Grid
    phi: np.ndarray
    t: float = 0.0

    def replace(self, phi: np.ndarray | None = None, t: float | None = None) -> "MetricState":
        return MetricState(
            grid=self.grid,
            phi=self.phi if phi is None else np.asarray(phi, dtype=float),
            t=self.t if t is None else float(t),
        )


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar field profile with a definite angular Fourier mode.

    Mode 0 fields are real; charged modes may be complex.
    """

    grid: Grid
    m: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if self.m == 0:
            if np.iscomplexobj(vals) and np.abs(vals.imag).max() > 1e-13 * max(
                1.0, np.abs(vals.real).max()
            ):
                raise ValueError("mode-0 fields must be real")
            vals = vals.real.astype(float)
        else:
            vals = vals.astype(complex)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Symmetric vector field, expanded in angular modes over the invariant frame."""

    grid: Grid
    modes: dict[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class Profiles:
    """Derived metric profiles at the nodes.

    ``ratio`` is dv_state/dv_reference, ``positive`` is the profile whose
    positivity is equivalent to positivity of the metric, ``moment`` is the
    moment map of the circle action.  F1 also carries the transported
    moment profile ``tau`` and its Jacobian ``jac``.
    """

    ratio: np.ndarray
    positive: np.ndarray
    moment: np.ndarray
    tau: np.ndarray | None = None
    jac: np.ndarray | None = None


def metric_profiles(state: MetricState) -> Profiles:
    g = state.grid
    dx = g.coll.diff
    if g.backend is CP1_CONFORMAL:
        dens = 1.0 + round_laplacian_values(state.phi, g)
        moment = g.nodes + (1.0 - g.nodes**2) * (dx @ state.phi) / 2.0
        return Profiles(ratio=dens, positive=dens, moment=moment)
    theta0 = fiber_profile(g)
    legs = theta0 * (dx @ state.phi)
    tau = g.nodes + legs
    # d tau/d tau0 of the true degree-n moment polynomial, not of its nodal
    # alias (theta0 * phi' has degree n); theta0 is (1 - s^2)/2 in s = tau0 - 2
    jac = 1.0 + 0.5 * (g.coll.sl @ state.phi)
    ratio = tau * jac / g.nodes
    return Profiles(ratio=ratio, positive=jac, moment=tau, tau=tau, jac=jac)


def fiber_profile(grid: Grid) -> np.ndarray:
    """Reference fiber profile: 1 - x^2 on the sphere, theta0 on F1."""
    x = grid.nodes
    if grid.backend is CP1_CONFORMAL:
        return 1.0 - x**2
    return 0.5 * (x - 1.0) * (3.0 - x)


def round_laplacian_values(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Reference-metric Laplacian of a mode-0 profile (CP1 only).

    Applied in coefficient space, where the operator is diagonal; exact on
    the interpolating polynomial, with constants as its only kernel.
    """
    return 0.5 * (grid.coll.sl @ f)


def stiffness_and_measure(state: MetricState) -> tuple[np.ndarray, np.ndarray]:
    """Exact Dirichlet-form matrix K and state measure weights dv_w.

    K[i, j] is the quadrature of grad-pairing of the i-th and j-th nodal
    cardinal functions against dv (no extra weight); it is symmetric
    positive semidefinite with exact constant kernel, and
    integral (lap f) g dv = -g^T K f holds exactly on the polynomial space.
    """
    g = state.grid
    dx = g.coll.diff
    prof = metric_profiles(state)
    fib = fiber_profile(g)
    if g.backend is CP1_CONFORMAL:
        q = math.pi * g.weights * fib
    else:
        q = FOUR_PI_SQ * g.weights * prof.tau * fib
    k_mat = dx.T @ (q[:, None] * dx)
    dv_w = g.dv0 * prof.ratio
    return k_mat, dv_w


def laplacian_matrix(state: MetricState) -> np.ndarray:
    """Matrix of the state metric's Laplacian on invariant profiles.

    Galerkin assembly: aliasing-free, self-adjoint with respect to the
    state volume form by construction.
    """
    k_mat, dv_w = stiffness_and_measure(state)
    return -(k_mat / dv_w[:, None])


def moment_map(state: MetricState) -> np.ndarray:
    return metric_profiles(state).moment


def initial_metric(grid: Grid, descriptor=None) -> MetricState:
    """Canonical metric, optionally perturbed.

    ``descriptor`` may be None or "canonical" for the reference metric, or
    an (amplitude, mode_index) pair.
    """
    state = MetricState(grid=grid, phi=np.zeros(grid.n_nodes), t=0.0)
    if descriptor is None or descriptor == "canonical":
        return state
    amp, mode = descriptor
    if amp == 0.0:
        return state
    return perturb_metric(state, float(amp), int(mode))


def perturbation_shape(grid: Grid, mode_index: int) -> np.ndarray:
    """Legendre bump of the given index in the backend coordinate."""
    x = grid.nodes if grid.backend is CP1_CONFORMAL else grid.nodes - 2.0
    coef = np.zeros(mode_index + 1)
    coef[mode_index] = 1.0
    return np.polynomial.legendre.legval(x, coef)


def perturb_metric(state: MetricState, amplitude: float, mode_index: int) -> MetricState:
    """Add a deterministic Legendre perturbation to the potential.

    mode_index must be >= 2: the first two Legendre modes only shift the
    potential by a constant or move along the automorphism direction.
    Raises PositivityError when the perturbed metric degenerates, reporting
    the worst node.
    """
    if mode_index < 2:
        raise GridError(f"perturbation mode_index must be >= 2, got {mode_index}")
    phi = state.phi + amplitude * perturbation_shape(state.grid, mode_index)
    new = state.replace(phi=phi)
    assert_positive(new)
    return new


def positivity_margin(state: MetricState) -> tuple[float, float]:
    """(min value, arg min) of the positivity profile on a dense grid."""
    g = state.grid
    xs = g.coll.dense_points(4)
    vals = g.coll.evaluate(metric_profiles(state).positive, xs)
    i = int(np.argmin(vals))
    return float(vals[i]), float(xs[i])


def assert_positive(state: MetricState) -> None:
    worst, where = positivity_margin(state)
    if not (worst > 0.0) or not np.isfinite(worst):
        raise PositivityError(
            f"metric positivity lost: profile reaches {worst:.3e} at coordinate {where:.6f}",
            coordinate=where,
            value=worst,
        )


def _weight_values(state: MetricState, weight: Weight, u, theta) -> np.ndarray:
    if weight is Weight.DV:
        return np.ones(state.grid.n_nodes)
    if weight is Weight.E_MINUS_U:
        if u is None:
            raise ValueError("weight E_MINUS_U requires the Ricci potential u")
        return np.exp(-np.asarray(u.values if isinstance(u, Field) else u, dtype=float))
    if weight is Weight.E_THETA:
        if theta is None:
            raise ValueError("weight E_THETA requires the holomorphy potential theta")
        return np.exp(np.asarray(theta.values if isinstance(theta, Field) else theta, dtype=float))
    raise ValueError(f"unknown weight {weight!r}")


def integrate(f, state: MetricState, weight: Weight = Weight.DV, u=None, theta=None):
    """Integral of a field over the manifold against a weighted volume form.

    Charged modes integrate to zero exactly by angular orthogonality.
    Plain arrays and scalars are treated as mode-0 profiles.
    """
    if isinstance(f, Field):
        if f.m != 0:
            return 0.0
        vals = f.values
    else:
        vals = np.asarray(f, dtype=float)
        if vals.ndim == 0:
            vals = np.full(state.grid.n_nodes, float(vals))
    wt = _weight_values(state, weight, u, theta)
    ratio = metric_profiles(state).ratio
    return float(state.grid.dv0 @ (vals * wt * ratio))


def volume(state: MetricState) -> float:
    """Total volume; constant in the anticanonical class."""
    return integrate(1.0, state)


def scalar_curvature(state: MetricState) -> Field:
    """Scalar curvature (complex convention: reference metrics have s = n).

    Computed as n - lap_g(u_raw) from the closed-form unnormalized Ricci
    potential, which keeps the mean-value identity integral(s - n) dv = 0
    at spectral accuracy.
    """
    g = state.grid
    prof = metric_profiles(state)
    u_raw = state.phi + g.u0 + np.log(prof.ratio)
    lap_u = laplacian_matrix(state) @ u_raw
    return Field(grid=g, m=0, values=g.backend.n - lap_u)


def ricci_potential_raw(state: MetricState) -> np.ndarray:
    """Closed-form Ricci potential before normalization."""
    return state.phi + state.grid.u0 + np.log(metric_profiles(state).ratio)


def grad_norm_sq(f: Field, state: MetricState) -> Field:
    """Pointwise squared gradient |grad f|^2 (complex convention).

    For a charged mode the angular term m^2 |f|^2 / fiber enters; the
    result is always a real mode-0 field.
    """
    g = state.grid
    dx = g.coll.diff
    prof = metric_profiles(state)
    fib = fiber_profile(g)
    fp = dx @ f.values
    if g.backend is CP1_CONFORMAL:
        vals = (fib**2 * np.abs(fp) ** 2 + f.m**2 * np.abs(f.values) ** 2) / (
            2.0 * fib * prof.positive
        )
    else:
        if f.m != 0:
            raise GridError("f1_momentum backend carries only invariant (mode-0) fields")
        vals = fib * fp**2 / prof.jac
    return Field(grid=g, m=0, values=vals.real)


def gradient_field(f: Field, state: MetricState) -> VectorField:
    """Gradient of a mode-m field as a vector field over the invariant frame."""
    g = state.grid
    dx = g.coll.diff
    prof = metric_profiles(state)
    fib = fiber_profile(g)
    if g.backend is CP1_CONFORMAL:
        # component over d/dzeta, zeta = log z; d/drho = fiber * d/dx
        big_g = fib * prof.positive
        h = (fib * (dx @ f.values) - f.m * f.values) / big_g
    else:
        if f.m != 0:
            raise GridError("f1_momentum backend carries only invariant (mode-0) fields")
        h = (dx @ f.values) / prof.jac
    return VectorField(grid=g, modes={f.m: np.asarray(h, dtype=complex)})


def symmetry_action(f: Field, state: MetricState) -> Field:
    """Derivative of f along the backend's holomorphic symmetry generator."""
    g = state.grid
    dx = g.coll.diff
    fib = fiber_profile(g)
    if g.backend is CP1_CONFORMAL:
        vals = 0.5 * (fib * (dx @ f.values) + f.m * f.values)
    else:
        vals = fib * (dx @ f.values)
    return Field(grid=g, m=f.m, values=vals)


def h0_basis(grid: Grid) -> list[VectorField]:
    """Basis of symmetric holomorphic vector fields, one per angular mode."""
    x = grid.nodes
    if grid.backend is CP1_CONFORMAL:
        profiles = {
            -1: np.sqrt((1.0 - x) / (1.0 + x)),
            0: np.ones_like(x),
            1: np.sqrt((1.0 + x) / (1.0 - x)),
        }
        return [
            VectorField(grid=grid, modes={m: profiles[m].astype(complex)})
            for m in grid.backend.h0_modes
        ]
    return [VectorField(grid=grid, modes={0: np.ones_like(x).astype(complex)})]


def vector_pointwise_pairing(v: VectorField, w: VectorField, state: MetricState) -> Field:
    """Hermitian pointwise pairing g(V, W-bar), reduced over the angle.

    Only equal modes survive angular integration; the returned mode-0
    profile is the sum over modes of g_frame |.|^2 cross terms, real when
    V = W.
    """
    g = state.grid
    prof = metric_profiles(state)
    fib = fiber_profile(g)
    if g.backend is CP1_CONFORMAL:
        frame_sq = 0.5 * fib * prof.positive
    else:
        frame_sq = fib * prof.jac
    common = set(v.modes) & set(w.modes)
    vals = np.zeros(g.n_nodes, dtype=complex)
    for m in common:
        vals += frame_sq * v.modes[m] * np.conj(w.modes[m])
    return Field(grid=g, m=0, values=vals.real if np.abs(vals.imag).max() < 1e-12 * max(1.0, np.abs(vals.real).max()) else vals)


def dense_eval(values: np.ndarray, grid: Grid, factor: int = 4) -> tuple[np.ndarray, np.ndarray]:
    xs = grid.coll.dense_points(factor)
    return xs, grid.coll.evaluate(values, xs)


def sup_norm(values: np.ndarray, grid: Grid) -> float:
    """Sup norm over a dense evaluation grid including the poles."""
    _, vals = dense_eval(values, grid)
    return float(np.abs(vals).max())


def oscillation(values: np.ndarray, grid: Grid) -> float:
    _, vals = dense_eval(values, grid)
    return float(vals.max() - vals.min())
