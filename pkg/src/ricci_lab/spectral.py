"""Weighted spectra along the flow.

Three spectral objects are computed per state:

* the drift Laplacian L = -lap + grad(u) . dbar on functions, mode by
  angular mode, through the Dirichlet/mass pencil

      E_m(f, f) = integral |dbar f|^2 e^{-u} dv,
      M_m(f, f) = integral |f|^2    e^{-u} dv;

  its spectrum contains 0 (constants), an eigenvalue-one band of dimension
  equal to the number of symmetric holomorphic fields (holomorphy
  potentials), and the first band-exceeding eigenvalue lambda;

* the dbar energy on symmetric vector fields against either dv or
  e^{-u} dv, whose kernel is the holomorphic fields and whose smallest
  positive eigenvalue is the spectral gap mu (resp. mu~);

* the Hessian (Bochner) identity residual for the lambda-eigenfunction.

Each angular mode is expanded in a Jacobi polynomial basis matched to the
mode's edge weights, which keeps the mass matrices well conditioned; the
half-integer pole factors of the true eigenfunctions are carried by an
explicit gauge so every assembled integrand is polynomial times smooth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg
from scipy.special import eval_jacobi

from . import geometry
from .errors import BandError, GramError, KernelError
from .geometry import Field, MetricState, VectorField, Weight

BAND_TOL_FLOOR = 1e-6
BAND_TOL_CAP = 0.2


def _u_values(u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def jacobi_basis(coll, a: int, b: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Values and x-derivatives of Jacobi(a, b) polynomials at the nodes.

    Columns k = 0 .. size-1; derivative uses
    d/ds J_k^{(a,b)} = (k+a+b+1)/2 J_{k-1}^{(a+1,b+1)}.
    """
    s = coll.reference(coll.nodes)
    ks = np.arange(size)
    v = eval_jacobi(ks[None, :], a, b, s[:, None])
    vx = np.zeros_like(v)
    if size > 1:
        fac = (ks[1:] + a + b + 1) / 2.0
        vx[:, 1:] = fac[None, :] * eval_jacobi(ks[None, :-1], a + 1, b + 1, s[:, None])
    vx /= coll.half_span
    return v, vx


def band_tolerance(state: MetricState, u) -> float:
    """Eigenvalue tolerance for locating the eigenvalue-one band.

    Scales with the spectral resolution defect of the state and potential
    profiles, floored at 1e-6.
    """
    coll = state.grid.coll
    uv = _u_values(u)
    est = max(
        coll.tail_fraction(uv),
        coll.tail_fraction(geometry.metric_profiles(state).ratio),
        coll.tail_fraction(np.exp(-uv)),
    )
    return float(min(BAND_TOL_CAP, max(BAND_TOL_FLOOR, 50.0 * est)))


def _cp1_function_pencil(state, uv, m, size):
    g = state.grid
    x = g.nodes
    wq = g.weights
    eu = np.exp(-uv)
    dens = geometry.metric_profiles(state).positive
    mu_abs = abs(m)
    v, vx = jacobi_basis(g.coll, mu_abs, mu_abs, size)
    if m == 0:
        e_wt = math.pi * wq * (1.0 - x**2) * eu
        q = vx
    elif m > 0:
        e_wt = math.pi * wq * (1.0 + x) ** (m + 1) * (1.0 - x) ** (m - 1) * eu
        q = (1.0 - x)[:, None] * vx - m * v
    else:
        e_wt = math.pi * wq * (1.0 - x) ** (mu_abs + 1) * (1.0 + x) ** (mu_abs - 1) * eu
        q = (1.0 + x)[:, None] * vx + mu_abs * v
    e_mat = q.T @ (e_wt[:, None] * q)
    m_wt = 2.0 * math.pi * wq * (1.0 - x**2) ** mu_abs * dens * eu
    m_mat = v.T @ (m_wt[:, None] * v)
    return e_mat, m_mat, (v, vx)


def _f1_function_pencil(state, uv, size):
    g = state.grid
    wq = g.weights
    eu = np.exp(-uv)
    prof = geometry.metric_profiles(state)
    fib = geometry.fiber_profile(g)
    v, vx = jacobi_basis(g.coll, 0, 0, size)
    e_wt = geometry.FOUR_PI_SQ * wq * fib * prof.tau * eu
    m_wt = geometry.FOUR_PI_SQ * wq * prof.tau * prof.jac * eu
    e_mat = vx.T @ (e_wt[:, None] * vx)
    m_mat = v.T @ (m_wt[:, None] * v)
    return e_mat, m_mat, (v, vx)


def _default_size(n_nodes: int, m: int) -> int:
    # keep the energy integrand inside quadrature exactness: degree
    # 2(size-1) + 2|m| must stay below 2 n_nodes; otherwise top-degree
    # directions can hide in the edge weight and fake tiny eigenvalues
    return max(8, n_nodes - abs(m) - 2)


def function_pencil(state: MetricState, u, m: int, size: int | None = None):
    """Dirichlet and mass matrices of the drift Laplacian on angular mode m.

    Returns (E, M, basis) with basis = (values, x-derivatives) of the
    gauge-reduced polynomial basis.  Both matrices are exactly symmetric.
    """
    uv = _u_values(u)
    size = _default_size(state.grid.n_nodes, m) if size is None else int(size)
    if state.grid.backend is geometry.CP1_CONFORMAL:
        return _cp1_function_pencil(state, uv, m, size)
    if m != 0:
        raise KernelError("f1_momentum spectra are restricted to the invariant mode")
    return _f1_function_pencil(state, uv, size)


def assemble_weighted_laplacian(state: MetricState, u, m: int) -> np.ndarray:
    """Symmetric matrix representing the drift Laplacian on mode m.

    Mass-Cholesky reduction of the (E, M) pencil: the returned matrix is
    similar to the operator and symmetric by construction; its eigenvalues
    are the mode-m spectrum.
    """
    e_mat, m_mat, _ = function_pencil(state, u, m)
    chol = scipy.linalg.cholesky(m_mat, lower=True)
    tmp = scipy.linalg.solve_triangular(chol, e_mat, lower=True)
    sym = scipy.linalg.solve_triangular(chol, tmp.T, lower=True).T
    return 0.5 * (sym + sym.T)


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Merged function spectrum of one state, plus vector-field gaps."""

    backend: str
    n_nodes: int
    t: float
    m_max: int
    k_per_mode: int
    band_tol: float
    modes: dict
    band: list
    lambda_value: float
    lambda_mode: int
    kernel_dim: int
    mu: float | None = None
    mu_kernel_dim: int | None = None
    mu_tilde: float | None = None
    mu_tilde_kernel_dim: int | None = None


def _mode_range(state: MetricState, m_max: int):
    if state.grid.backend is geometry.CP1_CONFORMAL:
        return range(-m_max, m_max + 1)
    return (0,)


def function_spectrum(
    state: MetricState,
    u,
    m_max: int = 3,
    k_per_mode: int = 8,
    band_tol: float | None = None,
) -> SpectrumReport:
    """Low function spectrum of the drift Laplacian, merged over modes.

    The eigenvalue-one band must have multiplicity equal to the number of
    symmetric holomorphic fields; a mismatch raises BandError carrying the
    band that was found.
    """
    tol = band_tolerance(state, u) if band_tol is None else float(band_tol)
    modes = {}
    for m in _mode_range(state, m_max):
        e_mat, m_mat, _ = function_pencil(state, u, m)
        vals = scipy.linalg.eigh(e_mat, m_mat, eigvals_only=True)
        modes[m] = np.sort(vals)[:k_per_mode]

    band = [(m, float(v)) for m, vals in modes.items() for v in vals if abs(v - 1.0) <= tol]
    kernel_dim = sum(1 for vals in modes.values() for v in vals if abs(v) <= tol)
    expected = state.grid.backend.h0_dim
    if len(band) != expected:
        raise BandError(
            f"eigenvalue-one band has multiplicity {len(band)}, expected {expected} "
            f"(tolerance {tol:.2e})",
            found_band=band,
        )
    above = [(float(v), m) for m, vals in modes.items() for v in vals if v > 1.0 + tol]
    if not above:
        raise BandError("no eigenvalue found above the band", found_band=band)
    lam, lam_mode = min(above)
    return SpectrumReport(
        backend=state.grid.backend.name,
        n_nodes=state.grid.n_nodes,
        t=float(state.t),
        m_max=m_max,
        k_per_mode=k_per_mode,
        band_tol=tol,
        modes=modes,
        band=band,
        lambda_value=lam,
        lambda_mode=lam_mode,
        kernel_dim=kernel_dim,
    )


def principal_eigenpair(state: MetricState, u, m_max: int = 3, band_tol: float | None = None):
    """(lambda, mode, coefficient vector) of the first band-exceeding eigenfunction."""
    tol = band_tolerance(state, u) if band_tol is None else float(band_tol)
    best = None
    for m in _mode_range(state, m_max):
        e_mat, m_mat, _ = function_pencil(state, u, m)
        vals, vecs = scipy.linalg.eigh(e_mat, m_mat)
        idx = np.nonzero(vals > 1.0 + tol)[0]
        if len(idx) == 0:
            continue
        lam = float(vals[idx[0]])
        if best is None or lam < best[0]:
            best = (lam, m, vecs[:, idx[0]])
    if best is None:
        raise BandError("no eigenvalue found above the band")
    return best


# --- vector fields ---------------------------------------------------------


def _cp1_vector_pencil(state, m, wt, size):
    g = state.grid
    x = g.nodes
    wq = g.weights
    dens = geometry.metric_profiles(state).positive
    a, b = abs(m - 1), abs(m + 1)
    v, vx = jacobi_basis(g.coll, a, b, size)
    if m == 0:
        e_wt = (1.0 - x**2) ** 2
        e_mat = vx.T @ ((0.5 * math.pi * wq * e_wt * dens * wt)[:, None] * vx)
    elif m > 0:
        if m == 1:
            e_wt = (1.0 + x) ** 3 * (1.0 - x)
            q = vx
        else:
            e_wt = (1.0 + x) ** (m + 2) * (1.0 - x) ** (m - 2)
            q = (1.0 - x)[:, None] * vx - (m - 1) * v
        e_mat = q.T @ ((0.5 * math.pi * wq * e_wt * dens * wt)[:, None] * q)
    else:
        mu_abs = -m
        q = (1.0 + x)[:, None] * vx + (mu_abs - 1) * v
        if mu_abs == 1:
            e_wt = (1.0 - x) ** 3 * (1.0 + x)
            q = vx
        else:
            e_wt = (1.0 - x) ** (mu_abs + 2) * (1.0 + x) ** (mu_abs - 2)
        e_mat = q.T @ ((0.5 * math.pi * wq * e_wt * dens * wt)[:, None] * q)
    m_wt = math.pi * wq * (1.0 + x) ** abs(m + 1) * (1.0 - x) ** abs(m - 1) * dens**2 * wt
    m_mat = v.T @ (m_wt[:, None] * v)
    return e_mat, m_mat, (v, vx)


def _f1_vector_pencil(state, wt, size):
    g = state.grid
    wq = g.weights
    prof = geometry.metric_profiles(state)
    fib = geometry.fiber_profile(g)
    v, vx = jacobi_basis(g.coll, 1, 1, size)
    e_wt = geometry.FOUR_PI_SQ * wq * fib**2 * prof.tau * prof.jac * wt
    m_wt = geometry.FOUR_PI_SQ * wq * fib * prof.tau * prof.jac**2 * wt
    e_mat = vx.T @ (e_wt[:, None] * vx)
    m_mat = v.T @ (m_wt[:, None] * v)
    return e_mat, m_mat, (v, vx)


def vector_pencil(state: MetricState, m: int, weight: Weight, u=None, size: int | None = None):
    """dbar-energy and mass matrices for mode-m symmetric vector fields."""
    if weight is Weight.DV:
        wt = np.ones(state.grid.n_nodes)
    elif weight is Weight.E_MINUS_U:
        if u is None:
            raise ValueError("weight E_MINUS_U requires the Ricci potential u")
        wt = np.exp(-_u_values(u))
    else:
        raise ValueError("vector spectra support DV and E_MINUS_U weights")
    size = _default_size(state.grid.n_nodes, m) if size is None else int(size)
    if state.grid.backend is geometry.CP1_CONFORMAL:
        return _cp1_vector_pencil(state, m, wt, size)
    if m != 0:
        raise KernelError("f1_momentum spectra are restricted to the invariant mode")
    return _f1_vector_pencil(state, wt, size)


@dataclass(frozen=True, eq=False)
class VectorSpectrumReport:
    """Kernel dimension and spectral gap of the dbar energy on vector fields."""

    kernel_dim: int
    smallest_positive: float
    weight: str
    kernel_tol: float
    modes: dict = dc_field(repr=False, default_factory=dict)

    def __iter__(self):
        return iter((self.kernel_dim, self.smallest_positive))


def vector_field_spectrum(
    state: MetricState,
    u,
    weight: Weight = Weight.DV,
    m_max: int = 3,
    kernel_tol: float | None = None,
) -> VectorSpectrumReport:
    """Spectral gap of the dbar energy over symmetric vector fields.

    The kernel (holomorphic fields) must have the backend's dimension;
    a mismatch raises KernelError with the per-mode kernel counts.
    """
    if kernel_tol is None:
        uv = _u_values(u) if u is not None else state.grid.u0 * 0.0
        kernel_tol = max(1e-8, 0.1 * band_tolerance(state, uv))
    modes = {}
    kernels = {}
    smallest = math.inf
    for m in _mode_range(state, m_max):
        e_mat, m_mat, _ = vector_pencil(state, m, weight, u)
        vals = np.sort(scipy.linalg.eigh(e_mat, m_mat, eigvals_only=True))
        modes[m] = vals[: min(8, len(vals))]
        kernels[m] = int(np.sum(np.abs(vals) <= kernel_tol))
        pos = vals[vals > kernel_tol]
        if len(pos):
            smallest = min(smallest, float(pos[0]))
    kernel_dim = sum(kernels.values())
    if kernel_dim != state.grid.backend.h0_dim:
        raise KernelError(
            f"holomorphic kernel dimension {kernel_dim}, expected "
            f"{state.grid.backend.h0_dim} (tolerance {kernel_tol:.2e})",
            kernel_dims=kernels,
        )
    return VectorSpectrumReport(
        kernel_dim=kernel_dim,
        smallest_positive=smallest,
        weight=weight.value,
        kernel_tol=float(kernel_tol),
        modes=modes,
    )


def full_spectrum(state: MetricState, u, m_max: int = 3, k_per_mode: int = 8) -> SpectrumReport:
    """Function spectrum with the vector-field gaps mu and mu~ attached."""
    rep = function_spectrum(state, u, m_max=m_max, k_per_mode=k_per_mode)
    vec_dv = vector_field_spectrum(state, u, Weight.DV, m_max=m_max)
    vec_eu = vector_field_spectrum(state, u, Weight.E_MINUS_U, m_max=m_max)
    return SpectrumReport(
        backend=rep.backend,
        n_nodes=rep.n_nodes,
        t=rep.t,
        m_max=rep.m_max,
        k_per_mode=rep.k_per_mode,
        band_tol=rep.band_tol,
        modes=rep.modes,
        band=rep.band,
        lambda_value=rep.lambda_value,
        lambda_mode=rep.lambda_mode,
        kernel_dim=rep.kernel_dim,
        mu=vec_dv.smallest_positive,
        mu_kernel_dim=vec_dv.kernel_dim,
        mu_tilde=vec_eu.smallest_positive,
        mu_tilde_kernel_dim=vec_eu.kernel_dim,
    )


# --- projections and decompositions ---------------------------------------


def vector_inner(
    v: VectorField, w: VectorField, state: MetricState, weight: Weight = Weight.DV, u=None, theta=None
) -> complex:
    """Hermitian pairing integral g(V, W-bar) wt dv (not volume-normalized)."""
    pairing = geometry.vector_pointwise_pairing(v, w, state)
    vals = np.asarray(pairing.values)
    wt = np.ones(state.grid.n_nodes)
    if weight is Weight.E_MINUS_U:
        if u is None:
            raise ValueError("weight E_MINUS_U requires u")
        wt = np.exp(-_u_values(u))
    elif weight is Weight.E_THETA:
        if theta is None:
            raise ValueError("weight E_THETA requires theta")
        wt = np.exp(_u_values(theta))
    ratio = geometry.metric_profiles(state).ratio
    out = state.grid.dv0 @ (vals * wt * ratio)
    return complex(out) if np.iscomplexobj(vals) else float(out)


def project_h0(
    v: VectorField, state: MetricState, weight: Weight = Weight.DV, u=None, theta=None
) -> tuple[VectorField, float]:
    """Orthogonal projection of V onto the symmetric holomorphic fields.

    Returns (projection, residual norm).  The Gram matrix is block diagonal
    in the angular mode; a numerically singular Gram raises GramError.
    """
    basis = geometry.h0_basis(state.grid)
    gram = np.zeros((len(basis), len(basis)), dtype=complex)
    rhs = np.zeros(len(basis), dtype=complex)
    for i, bi in enumerate(basis):
        for j, bj in enumerate(basis):
            gram[i, j] = vector_inner(bj, bi, state, weight, u, theta)
        rhs[i] = vector_inner(v, bi, state, weight, u, theta)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise GramError(f"holomorphic Gram matrix is numerically singular (cond {cond:.2e})")
    coef = np.linalg.solve(gram, rhs)
    proj_modes: dict[int, np.ndarray] = {}
    for c, b in zip(coef, basis):
        (m, hb), = b.modes.items()
        proj_modes[m] = proj_modes.get(m, 0.0) + c * hb
    proj = VectorField(grid=state.grid, modes=proj_modes)
    res_modes = {m: np.array(hv, dtype=complex) for m, hv in v.modes.items()}
    for m, hv in proj_modes.items():
        res_modes[m] = res_modes.get(m, np.zeros(state.grid.n_nodes, dtype=complex)) - hv
    residual = VectorField(grid=state.grid, modes=res_modes)
    res_sq = vector_inner(residual, residual, state, weight, u, theta)
    return proj, math.sqrt(max(float(np.real(res_sq)), 0.0))


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Band / above-band splitting of an invariant function against L."""

    f0: Field
    fplus: Field
    mean: float
    energy_f0: float
    energy_fplus: float
    band_values: list
    band_tol: float
    reconstruction_error: float

    def __iter__(self):
        return iter((self.f0, self.fplus))


def decompose_against_eigenbasis(f: Field, state: MetricState, u) -> Decomposition:
    """Split f - mean into its eigenvalue-one band part and the rest.

    Mean and orthogonality are with respect to the weighted measure
    e^{-u} dv.  The pieces carry their Dirichlet energies, so band-versus-
    rest gradient comparisons need no further solves.
    """
    if f.m != 0:
        raise ValueError("decomposition is defined for invariant fields")
    uv = _u_values(u)
    tol = band_tolerance(state, u)
    e_mat, m_mat, (v, _) = function_pencil(state, u, 0)
    vals, vecs = scipy.linalg.eigh(e_mat, m_mat)

    size = e_mat.shape[0]
    coef = (state.grid.coll.analysis @ f.values)[:size]  # mode-0 basis is Legendre
    vol = geometry.volume(state)
    mean = geometry.integrate(f.values * np.exp(-uv), state) / vol
    coef0 = np.array(coef)
    coef0[0] -= mean  # subtract the constant in the same basis

    band_idx = np.nonzero(np.abs(vals - 1.0) <= tol)[0]
    proj = np.zeros_like(coef0)
    for k in band_idx:
        psi = vecs[:, k]
        proj += psi * (psi @ (m_mat @ coef0))
    rest = coef0 - proj
    f0_vals = v @ proj
    fplus_vals = v @ rest
    recon = float(np.abs(f.values - mean - f0_vals - fplus_vals).max())
    return Decomposition(
        f0=Field(grid=state.grid, m=0, values=f0_vals),
        fplus=Field(grid=state.grid, m=0, values=fplus_vals),
        mean=float(mean),
        energy_f0=float(proj @ (e_mat @ proj)),
        energy_fplus=float(rest @ (e_mat @ rest)),
        band_values=[float(vals[k]) for k in band_idx],
        band_tol=tol,
        reconstruction_error=recon,
    )


# --- Bochner / Hessian identity --------------------------------------------


@dataclass(frozen=True)
class BochnerReport:
    lhs: float
    rhs: float
    rel_residual: float
    lam: float
    mode: int


def _cp1_hessian_sides(state, uv, m, vcoef, lam):
    # single-mode identity: (lam - 1) |dbar psi|_u^2 = |conj-Hessian psi|_u^2,
    # with conj-Hessian reduced by B_{-m}(F) over the e^{im alpha} frame
    g = state.grid
    x = g.nodes
    wq = g.weights
    dx = g.coll.diff
    g0 = 1.0 - x**2
    dens = geometry.metric_profiles(state).positive
    eu = np.exp(-uv)
    mu_abs = abs(m)
    vbasis, vxbasis = jacobi_basis(g.coll, mu_abs, mu_abs, len(vcoef))
    v = vbasis @ vcoef
    v_x = vxbasis @ vcoef
    # gauge recursion: F = g0^(mu/2) v, F_rho = g0^(mu/2) q, q = g0 v_x - mu x v
    q = g0 * v_x - mu_abs * x * v
    q_x = dx @ q
    f_rr_red = g0 * q_x - mu_abs * x * q  # F_rhorho = g0^(mu/2) * this
    lngx = -2.0 * x + g0 * (dx @ np.log(dens))  # (log G)_rho

    def bracket(sign_m: int) -> np.ndarray:
        return f_rr_red + 2.0 * sign_m * q + sign_m**2 * v - lngx * (q + sign_m * v)

    if m == 0:
        dirichlet = math.pi * wq @ (g0 * v_x**2 * eu)
        # B0 vanishes like g0 at the poles, so the integrand stays bounded
        b_conj = bracket(0)
        rhs = 0.5 * math.pi * wq @ (b_conj**2 * eu / (g0**2 * dens))
        return (lam - 1.0) * dirichlet, rhs
    # dbar energy of F e^{im alpha}: bracket (F_rho - m F) in the gauge
    dbar = q - float(m) * v
    dirichlet = math.pi * wq @ (g0 ** (mu_abs - 1) * dbar**2 * eu)
    b_conj = bracket(-m)
    rhs = 0.5 * math.pi * wq @ (g0 ** (mu_abs - 2) * b_conj**2 * eu / dens)
    return (lam - 1.0) * dirichlet, rhs


def _f1_hessian_sides(state, uv, vcoef, lam):
    g = state.grid
    wq = g.weights
    dx = g.coll.diff
    prof = geometry.metric_profiles(state)
    fib = geometry.fiber_profile(g)
    eu = np.exp(-uv)
    vbasis, vxbasis = jacobi_basis(g.coll, 0, 0, len(vcoef))
    psi_x = vxbasis @ vcoef
    dirichlet = geometry.FOUR_PI_SQ * wq @ (fib * prof.tau * psi_x**2 * eu)
    lhs = (lam - 1.0) * dirichlet
    inner = dx @ (psi_x / prof.jac)
    hess_sq = fib**2 * inner**2  # |hess psi|^2 reduced to the fiber block
    rhs = geometry.FOUR_PI_SQ * wq @ (hess_sq * eu * prof.tau * prof.jac)
    return lhs, rhs


def bochner_residual(state: MetricState, u, m_max: int = 3, eigenpair=None) -> BochnerReport:
    """Relative defect of the weighted Bochner identity

        (lambda - 1) integral |dbar psi|^2 e^{-u} dv
            = integral |hess psi|^2 e^{-u} dv

    where hess is the second antiholomorphic covariant derivative.  The
    identity holds for every eigenfunction of the drift Laplacian because the
    normalized Ricci potential ties the curvature term to the metric.  By
    default the first band-exceeding eigenpair is tested; pass
    eigenpair=(lam, mode, coefficients) to check a specific one.
    """
    uv = _u_values(u)
    if eigenpair is None:
        lam, mode, vcoef = principal_eigenpair(state, u, m_max=m_max)
    else:
        lam, mode, vcoef = eigenpair
        lam = float(lam)
        mode = int(mode)
        vcoef = np.asarray(vcoef, dtype=float)
    if state.grid.backend is geometry.CP1_CONFORMAL:
        lhs, rhs = _cp1_hessian_sides(state, uv, mode, vcoef, lam)
    else:
        lhs, rhs = _f1_hessian_sides(state, uv, vcoef, lam)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return BochnerReport(
        lhs=float(lhs), rhs=float(rhs), rel_residual=float(abs(lhs - rhs) / scale), lam=lam, mode=mode
    )


def aitken_extrapolate(seq) -> float:
    """Aitken delta-squared limit of a three-term refinement sequence."""
    e1, e2, e3 = (float(v) for v in seq)
    denom = e1 - 2.0 * e2 + e3
    if abs(denom) < 1e-14 * max(1.0, abs(e3)):
        return e3
    return e1 - (e2 - e1) ** 2 / denom
