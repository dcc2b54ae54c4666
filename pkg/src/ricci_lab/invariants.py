"""Obstruction integrals, the soliton coefficient, and inequality checkers.

The obstruction pairings are class invariants: they take the same value at
every metric in the anticanonical class, which the tests exploit by
evaluating them at unrelated perturbed states.  The condition checker turns
each closed-form inequality of the verification suite into a signed margin
(nonnegative means satisfied) so that flow reports can track how much slack
every bound keeps along a run.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import geometry, potentials, spectral
from .errors import BracketError, GridError
from .geometry import Field, MetricState, VectorField, Weight

# slack for inequalities evaluated at spectral accuracy
INEQ_SLACK = 1e-6
# class-invariance scale, relative to the volume
CLASS_TOL = 1e-8
JENSEN_SLACK = 1e-12
SOLITON_RESIDUAL_TOL = 1e-10


def _values(f) -> np.ndarray:
    if isinstance(f, Field):
        return np.asarray(f.values, dtype=float)
    return np.asarray(f, dtype=float)


def field_action(x: VectorField, f, state: MetricState) -> Field:
    """Derivative of an invariant function along a symmetric vector field.

    The output carries the field's angular mode: acting with a charged
    basis field on an invariant function produces a charged function, whose
    integral against any invariant measure vanishes identically.
    """
    g = state.grid
    fv = _values(f)
    if len(x.modes) != 1:
        raise GridError("field_action expects a single-mode basis field")
    (mode,) = x.modes
    profile = x.modes[mode]
    fib = geometry.fiber_profile(g)
    fp = g.coll.diff @ fv
    if g.backend is geometry.CP1_CONFORMAL:
        vals = profile * 0.5 * fib * fp
    else:
        vals = profile * fib * fp
    return Field(grid=g, m=mode, values=vals if mode != 0 else vals.real)


def _basis_field(grid, mode: int) -> VectorField:
    for b in geometry.h0_basis(grid):
        if tuple(b.modes) == (mode,):
            return b
    raise GridError(f"no symmetric holomorphic basis field of mode {mode}")


def futaki(state: MetricState, u, mode: int = 0):
    """Obstruction pairing integral X(u) dv against a basis symmetry field.

    Real for the invariant field; the charged fields pair to exact zero by
    angular orthogonality.
    """
    xu = field_action(_basis_field(state.grid, mode), _values(u), state)
    return geometry.integrate(xu, state, Weight.DV)


def modified_futaki(state: MetricState, u, theta, mode: int = 0, strength: float = 1.0):
    """Soliton obstruction integral Y(w) e^theta dv with w = u + theta.

    Y is strength times the basis field of the given mode; theta must be the
    normalized flow-field potential so that e^theta dv has total mass V.
    """
    w = _values(u) + _values(theta)
    yw = field_action(_basis_field(state.grid, mode), w, state)
    scaled = Field(grid=yw.grid, m=yw.m, values=strength * yw.values)
    return geometry.integrate(scaled, state, Weight.E_THETA, theta=_values(theta))


@dataclasses.dataclass(frozen=True)
class SolitonResult:
    """Root of the soliton-coefficient equation with solver provenance."""

    value: float
    residual: float
    bracket: tuple[float, float]
    iterations: int
    monotone: bool
    scan: tuple[tuple[float, float], ...]


def soliton_coefficient(
    state: MetricState,
    bracket: tuple[float, float] = (-2.0, 1.0),
    tol: float = SOLITON_RESIDUAL_TOL,
    max_iter: int = 200,
    scan_points: int = 9,
) -> SolitonResult:
    """Field strength c at which the soliton obstruction of c X vanishes.

    Bisection on the scalar map c -> integral X(u + theta_c) e^{theta_c} dv
    (unit-strength test field).  Bisection rather than Newton: safety needs
    only a sign change, while the map's derivative is merely empirical.  The
    scan across the bracket is returned so callers can confirm the map was
    monotone and the root simple.
    """
    lo, hi = (float(bracket[0]), float(bracket[1]))
    if not lo < hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    u = potentials.solve_ricci_potential(state)

    def scalar(c: float) -> float:
        theta = potentials.solve_holomorphy_potential(state, c)
        return float(modified_futaki(state, u, theta))

    grid_c = np.linspace(lo, hi, scan_points)
    scan = tuple((float(c), scalar(float(c))) for c in grid_c)
    diffs = np.diff([s[1] for s in scan])
    monotone = bool(np.all(diffs > 0.0) or np.all(diffs < 0.0))
    f_lo, f_hi = scan[0][1], scan[-1][1]
    if f_lo == 0.0:
        return SolitonResult(lo, 0.0, (lo, hi), 0, monotone, scan)
    if f_hi == 0.0:
        return SolitonResult(hi, 0.0, (lo, hi), 0, monotone, scan)
    if f_lo * f_hi > 0.0:
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: endpoints {f_lo:.3e}, {f_hi:.3e}"
        )
    a, b, fa = lo, hi, f_lo
    mid, f_mid = a, fa
    for k in range(1, max_iter + 1):
        mid = 0.5 * (a + b)
        f_mid = scalar(mid)
        if abs(f_mid) <= tol:
            return SolitonResult(mid, abs(f_mid), (lo, hi), k, monotone, scan)
        if fa * f_mid < 0.0:
            b = mid
        else:
            a, fa = mid, f_mid
    raise BracketError(
        f"bisection stalled after {max_iter} steps, residual {abs(f_mid):.3e}"
    )


def delta_prime(delta: float, osc: float) -> float:
    """Effective strict-Poincare excess delta / (1 + e^osc + delta e^osc)."""
    if delta < 0.0:
        raise ValueError(f"negative spectral excess {delta}")
    if osc < 0.0:
        raise ValueError(f"negative oscillation {osc}")
    e = math.exp(osc)
    return delta / (1.0 + e + delta * e)


@dataclasses.dataclass(frozen=True)
class CheckResult:
    """One inequality check: value against bound, signed margin, verdict.

    margin >= 0 means the inequality holds exactly as stated; passed allows
    the stated tolerance.  Checks whose hypothesis fails at this state (for
    instance a nonvanishing obstruction) are marked not applicable and do
    not count as failures.
    """

    name: str
    value: float
    bound: float
    margin: float
    tolerance: float
    applicable: bool
    passed: bool
    note: str = ""


def _check(name, value, bound, tolerance, applicable=True, note="", flip=False) -> CheckResult:
    # flip=False checks value >= bound, flip=True checks value <= bound
    margin = (bound - value) if flip else (value - bound)
    if not applicable:
        safe = float(margin) if math.isfinite(margin) else 0.0
        return CheckResult(name, float(value), float(bound), safe, tolerance, False, True, note)
    if not math.isfinite(margin):
        return CheckResult(name, float(value), float(bound), 0.0, tolerance, True, False, "non-finite margin")
    return CheckResult(
        name, float(value), float(bound), float(margin), tolerance, True, bool(margin >= -tolerance), note
    )


@dataclasses.dataclass(frozen=True)
class ConditionReport:
    """All closed-form inequality margins evaluated at a single state."""

    t: float
    ratio_u: float
    ratio_w: float
    delta_measured_u: float
    delta_measured_w: float
    lam: float
    mu: float
    mu_tilde: float
    osc_u: float
    osc_w: float
    delta_prime_u: float
    delta_prime_w: float
    futaki_value: float
    modified_futaki_value: float
    degenerate_u: bool
    degenerate_w: bool
    checks: tuple[CheckResult, ...]

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.checks if c.applicable and not c.passed)

    def all_passed(self) -> bool:
        return not self.failures()


def check_conditions(
    state: MetricState,
    pots: potentials.PotentialSet,
    spectrum: spectral.SpectrumReport,
    a0: float | None = None,
    ax0: float | None = None,
    slack: float = INEQ_SLACK,
    futaki_tol: float = CLASS_TOL,
) -> ConditionReport:
    """Evaluate every inequality of the verification suite at one state.

    a0 / ax0 are the initial averages of the run (enables the two-sided
    average checks); checks conditioned on a vanishing obstruction are
    automatically skipped when the obstruction is measurably nonzero.
    """
    if spectrum.mu is None or spectrum.mu_tilde is None:
        raise ValueError("spectrum lacks the vector-field gaps; use full_spectrum")
    g = state.grid
    vol = geometry.volume(state)
    diag = potentials.diagnostics(state, pots)

    lam = float(spectrum.lambda_value)
    mu = float(spectrum.mu)
    mu_tilde = float(spectrum.mu_tilde)
    osc_u, osc_w = diag.osc_u, diag.osc_w
    deg_u = diag.y_u < 1e-14
    deg_w = diag.y_w < 1e-14
    ratio_u = math.nan if deg_u else (diag.y_u + diag.z_u) / diag.y_u
    ratio_w = math.nan if deg_w else (diag.y_w + diag.z_w) / diag.y_w
    dprime_u = delta_prime(max(lam - 1.0, 0.0), osc_u)
    dprime_w = delta_prime(max(lam - 1.0, 0.0), osc_w)

    fut = float(futaki(state, pots.u))
    mfut = float(modified_futaki(state, pots.u, pots.theta))
    fut_ok = abs(fut) <= futaki_tol * vol
    mfut_ok = abs(mfut) <= futaki_tol * vol

    scale = max(1.0, lam)
    checks = [
        _check(
            "strict-poincare-u",
            ratio_u,
            1.0 + dprime_u,
            slack,
            applicable=fut_ok and not deg_u,
            note="degenerate ratio" if deg_u else ("" if fut_ok else "obstruction nonzero"),
        ),
        _check(
            "strict-poincare-w",
            ratio_w,
            1.0 + dprime_w,
            slack,
            applicable=mfut_ok and not deg_w,
            note="degenerate ratio" if deg_w else ("" if mfut_ok else "modified obstruction nonzero"),
        ),
        _check("gap-lower-bound", lam, 1.0 + math.exp(-osc_u) * mu, slack * scale),
        _check(
            "gap-sandwich-lower", mu_tilde, math.exp(-osc_u) * mu, slack * max(1.0, mu)
        ),
        _check(
            "gap-sandwich-upper", mu_tilde, math.exp(osc_u) * mu, slack * max(1.0, mu), flip=True
        ),
        _check("jensen-average-u", pots.a, 0.0, JENSEN_SLACK, flip=True),
        _check("jensen-average-w", pots.a_x, 0.0, JENSEN_SLACK, flip=True),
        _check(
            "two-sided-average-u",
            pots.a,
            a0 if a0 is not None else math.nan,
            1e-10,
            applicable=a0 is not None,
            note="" if a0 is not None else "initial average not supplied",
        ),
        _check(
            "two-sided-average-w",
            pots.a_x,
            ax0 if ax0 is not None else math.nan,
            1e-10,
            applicable=ax0 is not None,
            note="" if ax0 is not None else "initial average not supplied",
        ),
        _check(
            "modified-futaki-vanishing",
            abs(mfut),
            futaki_tol * vol,
            0.0,
            flip=True,
        ),
    ]

    # band-versus-rest gradient energy, hypothesis: vanishing obstruction
    dec_u = spectral.decompose_against_eigenbasis(pots.u, state, pots.u)
    checks.append(
        _check(
            "band-energy-u",
            dec_u.energy_f0,
            math.exp(osc_u) * dec_u.energy_fplus,
            slack * max(1.0, dec_u.energy_fplus),
            applicable=fut_ok,
            flip=True,
            note="" if fut_ok else "obstruction nonzero",
        )
    )
    dec_w = spectral.decompose_against_eigenbasis(pots.w, state, pots.u)
    checks.append(
        _check(
            "band-energy-w",
            dec_w.energy_f0,
            math.exp(osc_w) * dec_w.energy_fplus,
            slack * max(1.0, dec_w.energy_fplus),
            applicable=mfut_ok,
            flip=True,
            note="" if mfut_ok else "modified obstruction nonzero",
        )
    )

    # vanishing obstruction forces the drift gradient off the holomorphic block
    grad_u = geometry.gradient_field(pots.u, state)
    proj, _resid = spectral.project_h0(grad_u, state, Weight.DV)
    proj_norm = math.sqrt(max(spectral.vector_inner(proj, proj, state, Weight.DV).real, 0.0))
    checks.append(
        _check(
            "holomorphic-projection",
            proj_norm,
            CLASS_TOL * math.sqrt(vol),
            0.0,
            applicable=fut_ok,
            flip=True,
            note="" if fut_ok else "obstruction nonzero",
        )
    )

    boch = spectral.bochner_residual(state, pots.u)
    checks.append(_check("bochner-identity", boch.rel_residual, slack, 0.0, flip=True))

    return ConditionReport(
        t=float(state.t),
        ratio_u=ratio_u,
        ratio_w=ratio_w,
        delta_measured_u=ratio_u - 1.0,
        delta_measured_w=ratio_w - 1.0,
        lam=lam,
        mu=mu,
        mu_tilde=mu_tilde,
        osc_u=osc_u,
        osc_w=osc_w,
        delta_prime_u=dprime_u,
        delta_prime_w=dprime_w,
        futaki_value=fut,
        modified_futaki_value=mfut,
        degenerate_u=deg_u,
        degenerate_w=deg_w,
        checks=tuple(checks),
    )
