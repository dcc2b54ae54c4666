"""Gauss-Legendre collocation on an interval.

All fields in this package live as nodal values on a Gauss-Legendre grid
and are manipulated through their Legendre series.  This module provides
the node/weight data and the dense matrices (analysis, synthesis,
differentiation, evaluation) that the geometry and spectral layers build on.

Quadrature with N nodes is exact through polynomial degree 2N-1, which is
what makes several of the volume and solvability identities hold to machine
precision rather than to discretization accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg


@dataclass(frozen=True, eq=False)
class Collocation:
    """Gauss-Legendre nodes, weights and spectral matrices on [lo, hi].

    Attributes
    ----------
    n : number of nodes.
    lo, hi : interval endpoints (nodes are strictly interior).
    nodes : physical nodes, increasing.
    weights : quadrature weights for integration in the physical coordinate.
    synthesis : (n, n) matrix, Legendre coefficients -> nodal values.
    analysis : (n, n) matrix, nodal values -> Legendre coefficients.
    diff : (n, n) nodal differentiation matrix d/dx (exact on the
        interpolating polynomial).
    sl : (n, n) nodal matrix of f -> ((1 - s^2) f_s)_s in the reference
        variable s, applied on Legendre coefficients where it is diagonal.
    """

    n: int
    lo: float
    hi: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    synthesis: np.ndarray = field(repr=False)
    analysis: np.ndarray = field(repr=False)
    diff: np.ndarray = field(repr=False)
    sl: np.ndarray = field(repr=False)

    @property
    def half_span(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def reference(self, x: np.ndarray) -> np.ndarray:
        """Map physical points to the reference interval (-1, 1)."""
        return (np.asarray(x, dtype=float) - 0.5 * (self.lo + self.hi)) / self.half_span

    def integrate(self, values: np.ndarray) -> float | complex:
        """Quadrature of nodal values in the physical coordinate."""
        return self.weights @ values

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Legendre coefficients of the degree-(n-1) interpolant."""
        return self.analysis @ values

    def evaluate(self, values: np.ndarray, x_out: np.ndarray) -> np.ndarray:
        """Evaluate the interpolant of nodal values at arbitrary points."""
        coef = self.analysis @ values
        return npleg.legval(self.reference(x_out), coef)

    def evaluation_matrix(self, x_out: np.ndarray) -> np.ndarray:
        """Matrix mapping nodal values to values at x_out."""
        v_out = npleg.legvander(self.reference(x_out), self.n - 1)
        return v_out @ self.analysis

    def dense_points(self, factor: int = 4) -> np.ndarray:
        """Uniform evaluation grid including both endpoints."""
        return np.linspace(self.lo, self.hi, factor * self.n + 1)

    def antiderivative(self, values: np.ndarray) -> np.ndarray:
        """Nodal antiderivative, zero at lo.

        The degree-n antiderivative is truncated back to degree n-1, so the
        caller is responsible for feeding spectrally resolved data.
        """
        coef = npleg.legint(self.analysis @ values, lbnd=-1.0) * self.half_span
        vals = npleg.legval(self.reference(self.nodes), coef[: self.n])
        return vals

    def tail_fraction(self, values: np.ndarray, tail: float = 0.25) -> float:
        """Relative magnitude of the trailing Legendre coefficients.

        Cheap resolution monitor: near zero for spectrally resolved data,
        order one for marginally resolved data.
        """
        coef = np.abs(self.analysis @ values)
        peak = coef.max()
        if peak == 0.0:
            return 0.0
        k0 = max(1, int((1.0 - tail) * self.n))
        return float(coef[k0:].max() / peak)


_CACHE: dict[tuple[int, float, float], Collocation] = {}


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0) -> Collocation:
    """Build (or fetch from cache) the collocation data for n nodes on [lo, hi]."""
    key = (n, float(lo), float(hi))
    got = _CACHE.get(key)
    if got is not None:
        return got

    s, w = npleg.leggauss(n)
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi) + half * s
    weights = w * half

    synthesis = npleg.legvander(s, n - 1)
    # c_k = (2k+1)/2 * sum_i w_i P_k(s_i) f_i ; exact inverse of synthesis
    # because quadrature is exact through degree 2n-2.
    analysis = ((2.0 * np.arange(n) + 1.0) / 2.0)[:, None] * (synthesis.T * w[None, :])

    dcoef = np.zeros((n, n))
    dcoef[: n - 1, :] = npleg.legder(np.eye(n), axis=0)
    diff = synthesis @ dcoef @ analysis / half

    # ((1 - s^2) f_s)_s is diagonal on Legendre coefficients, -k(k+1).  It must
    # NOT be formed as diff @ ((1 - s^2) * diff): the intermediate product has
    # degree n, whose top component P_n vanishes identically at the Gauss
    # nodes, so the nodal composition drops the diagonal of the top mode and
    # leaves a spurious kernel vector.
    sl = synthesis @ ((-np.arange(n) * (np.arange(n) + 1.0))[:, None] * analysis)

    coll = Collocation(
        n=n,
        lo=float(lo),
        hi=float(hi),
        nodes=nodes,
        weights=weights,
        synthesis=synthesis,
        analysis=analysis,
        diff=diff,
        sl=sl,
    )
    _CACHE[key] = coll
    return coll
