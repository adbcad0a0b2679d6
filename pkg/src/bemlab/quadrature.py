"""Quadrature rules on the reference interval [0, 1].

Three families cover everything the assembly and trace evaluation need:

* plain Gauss-Legendre rules,
* Gauss rules for the weight log(1/t), used to integrate the logarithmic
  kernel after a Duffy-type change of variables,
* geometrically graded composite rules for nearly singular integrands.

The log-weighted rules are generated once per order via the Chebyshev
moment algorithm in high-precision arithmetic (the raw-moment map is
exponentially ill-conditioned in double precision) and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np

__all__ = [
    "QuadratureRule",
    "gauss_rule",
    "log_gauss_rule",
    "graded_rule",
    "composite_rule",
    "endpoint_graded_rule",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights on the reference interval [0, 1]."""

    kind: str
    points: np.ndarray
    weights: np.ndarray
    order: int
    grading: float | None = None

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError(f"{self.kind} rule of order {self.order} has non-positive weights")

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))

    def mapped(self, a: float, b: float) -> "QuadratureRule":
        """Affinely map the rule to the interval [a, b] (plain weight only)."""
        return QuadratureRule(
            kind=self.kind,
            points=a + (b - a) * self.points,
            weights=(b - a) * self.weights,
            order=self.order,
            grading=self.grading,
        )


@lru_cache(maxsize=None)
def _gauss01(m: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if m < 1:
        raise ValueError("Gauss order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(m)
    return tuple(0.5 * (x + 1.0)), tuple(0.5 * w)


def gauss_rule(m: int) -> QuadratureRule:
    """m-point Gauss-Legendre rule on [0, 1]; exact for degree 2m - 1."""
    pts, wts = _gauss01(m)
    return QuadratureRule("gauss", np.array(pts), np.array(wts), m)


def _chebyshev_recurrence(moments: list) -> tuple[list, list]:
    """Recurrence coefficients (alpha, beta) from raw moments (Chebyshev algorithm)."""
    n = len(moments) // 2
    sigma_prev = [mp.mpf(0)] * (2 * n)
    sigma = list(moments)
    alpha = [moments[1] / moments[0]]
    beta = [moments[0]]
    for k in range(1, n):
        sigma_new = [mp.mpf(0)] * (2 * n)
        for l in range(k, 2 * n - k):
            sigma_new[l] = sigma[l + 1] - alpha[k - 1] * sigma[l] - beta[k - 1] * sigma_prev[l]
        alpha.append(sigma_new[k + 1] / sigma_new[k] - sigma[k] / sigma[k - 1])
        beta.append(sigma_new[k] / sigma[k - 1])
        sigma_prev, sigma = sigma, sigma_new
    return alpha, beta


@lru_cache(maxsize=None)
def _log_gauss01(m: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if m < 1:
        raise ValueError("log-Gauss order must be >= 1")
    # Raw moments of the weight log(1/t) on [0,1] are 1/(k+1)^2.  The
    # Chebyshev algorithm needs ~4^m headroom, hence the working precision.
    with mp.workdps(60 + 10 * m):
        moments = [mp.mpf(1) / mp.mpf((k + 1) ** 2) for k in range(2 * m)]
        alpha, beta = _chebyshev_recurrence(moments)
        jac = mp.zeros(m, m)
        for i in range(m):
            jac[i, i] = alpha[i]
        for i in range(m - 1):
            off = mp.sqrt(beta[i + 1])
            jac[i, i + 1] = off
            jac[i + 1, i] = off
        eigvals, eigvecs = mp.eigsy(jac)
        nodes = [float(eigvals[i]) for i in range(m)]
        weights = [float(beta[0] * eigvecs[0, i] ** 2) for i in range(m)]
    order = np.argsort(nodes)
    return tuple(np.array(nodes)[order]), tuple(np.array(weights)[order])


def log_gauss_rule(m: int) -> QuadratureRule:
    """m-point rule integrating f(t)*log(1/t) on [0,1] exactly for deg(f) <= 2m - 1."""
    pts, wts = _log_gauss01(m)
    return QuadratureRule("log-weighted-gauss", np.array(pts), np.array(wts), m)


def graded_rule(
    m: int,
    t_star: float,
    ratio: float = 0.15,
    depth: int = 20,
    min_panel: float = 1e-15,
) -> QuadratureRule:
    """Composite Gauss rule on [0,1], geometrically graded toward ``t_star``.

    Panels shrink by ``ratio`` toward the grading point on both sides, which
    resolves integrands that are singular at (or arbitrarily close to)
    ``t_star`` while remaining smooth elsewhere.
    """
    if not 0.0 <= t_star <= 1.0:
        raise ValueError("grading point must lie in [0, 1]")
    base = gauss_rule(m)
    pts_parts = []
    wts_parts = []
    for side_len, orient in ((t_star, -1.0), (1.0 - t_star, +1.0)):
        if side_len <= 0.0:
            continue
        breaks = [side_len]
        while breaks[-1] * ratio > min_panel and len(breaks) <= depth:
            breaks.append(breaks[-1] * ratio)
        breaks.append(0.0)
        for hi, lo in zip(breaks[:-1], breaks[1:]):
            a = t_star + orient * lo
            b = t_star + orient * hi
            r = base.mapped(min(a, b), max(a, b))
            pts_parts.append(r.points)
            wts_parts.append(r.weights)
    return QuadratureRule(
        kind="composite-graded",
        points=np.concatenate(pts_parts),
        weights=np.concatenate(wts_parts),
        order=m,
        grading=ratio,
    )


def endpoint_graded_rule(m: int, ratio: float = 0.15, depth: int = 12) -> QuadratureRule:
    """Composite Gauss rule graded toward both endpoints of [0, 1].

    Resolves integrands with endpoint singularities of log or algebraic
    type, e.g. outer integrals of operator traces across element nodes.
    """
    breaks = [0.5 * ratio**k for k in range(depth + 1)]
    pts = np.array(breaks[::-1] + [1.0 - b for b in breaks[1:]])
    pts[0] = 0.0
    pts[-1] = 1.0
    return composite_rule(m, pts)


def composite_rule(m: int, breakpoints: np.ndarray) -> QuadratureRule:
    """Plain composite Gauss rule over consecutive panels of ``breakpoints``."""
    base = gauss_rule(m)
    pts = []
    wts = []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        r = base.mapped(a, b)
        pts.append(r.points)
        wts.append(r.weights)
    return QuadratureRule("gauss", np.concatenate(pts), np.concatenate(wts), m)
