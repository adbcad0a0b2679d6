"""Laplace kernels and off-boundary evaluation of the layer potentials.

The 2D Green's function is G(x,y) = -log|x-y| / (2 pi); its 3D counterpart
(1/(4 pi)) / |x-y| is exposed for value checks only, no 3D assembly exists.
Potential evaluation upgrades to a geometrically graded rule whenever the
target comes closer to an element than that element's own diameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .quadrature import gauss_rule, graded_rule
from .spaces import DiscreteSpace

__all__ = [
    "Kernel",
    "greens_kernel",
    "kernel_eval",
    "eval_single_layer",
    "eval_double_layer",
]

INV_2PI = 1.0 / (2.0 * np.pi)
INV_4PI = 1.0 / (4.0 * np.pi)


@dataclass(frozen=True)
class Kernel:
    dimension: int
    evaluate: Callable
    gradient: Callable  # gradient in the first argument


def _check_separation(r2: np.ndarray):
    if np.any(r2 <= 1e-28):
        raise ValueError("kernel evaluated at (nearly) coincident points")


def kernel_eval(d: int, x, y):
    """Green's function value; ``x`` and ``y`` broadcastable arrays of points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = np.sum((x - y) ** 2, axis=-1)
    _check_separation(np.atleast_1d(r2))
    if d == 2:
        return -INV_2PI * 0.5 * np.log(r2)
    if d == 3:
        return INV_4PI / np.sqrt(r2)
    raise ValueError("dimension must be 2 or 3")


def _kernel_gradient(d: int, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    r2 = np.sum(diff**2, axis=-1)
    _check_separation(np.atleast_1d(r2))
    if d == 2:
        return -INV_2PI * diff / r2[..., None]
    if d == 3:
        return -INV_4PI * diff / (r2[..., None] ** 1.5)
    raise ValueError("dimension must be 2 or 3")


def greens_kernel(d: int) -> Kernel:
    return Kernel(d, lambda x, y: kernel_eval(d, x, y), lambda x, y: _kernel_gradient(d, x, y))


# -- vectorized pairwise kernels used by assembly and traces -----------------
# X: (m, 2) targets, Y: (p, 2) sources; results (m, p).


def pair_diff(X: np.ndarray, Y: np.ndarray):
    diff = X[:, None, :] - Y[None, :, :]
    r2 = np.einsum("mpk,mpk->mp", diff, diff)
    return diff, r2


def slp_kernel_matrix(X, Y) -> np.ndarray:
    _, r2 = pair_diff(X, Y)
    return -INV_2PI * 0.5 * np.log(r2)


def dlp_kernel_matrix(X, Y, nu_y) -> np.ndarray:
    """Kernel of the double-layer boundary operator: d/d nu(y) of G."""
    diff, r2 = pair_diff(X, Y)
    num = np.einsum("mpk,pk->mp", diff, nu_y)
    return INV_2PI * num / r2


def adl_kernel_matrix(X, Y, nu_x) -> np.ndarray:
    """Kernel of the adjoint double-layer operator: d/d nu(x) of G."""
    diff, r2 = pair_diff(X, Y)
    num = np.einsum("mpk,mk->mp", diff, nu_x)
    return -INV_2PI * num / r2


def slp_grad_kernel_matrix(X, Y, tau_x) -> np.ndarray:
    """Tangential x-derivative of G: integrand of the single-layer gradient trace."""
    diff, r2 = pair_diff(X, Y)
    num = np.einsum("mpk,mk->mp", diff, tau_x)
    return -INV_2PI * num / r2


def dlp_grad_kernel_matrix(X, Y, nu_y, tau_x) -> np.ndarray:
    """Tangential x-derivative of the double-layer kernel.

    The two 1/r poles cancel on smooth curves, leaving a bounded kernel;
    on a straight line the kernel vanishes identically.
    """
    diff, r2 = pair_diff(X, Y)
    tn = np.einsum("mk,pk->mp", tau_x, nu_y)
    dn = np.einsum("mpk,pk->mp", diff, nu_y)
    dt = np.einsum("mpk,mk->mp", diff, tau_x)
    return INV_2PI * (tn / r2 - 2.0 * dn * dt / r2**2)


def _nearest_param(element, x: np.ndarray) -> float:
    t = np.linspace(0.0, 1.0, 33)
    for _ in range(3):
        pts = element.point(t)
        i = int(np.argmin(np.sum((pts - x) ** 2, axis=1)))
        lo, hi = t[max(i - 1, 0)], t[min(i + 1, len(t) - 1)]
        t = np.linspace(lo, hi, 9)
    return float(t[4])


def _potential_at_point(space, coeffs, x, kernel_rows, far_order, settings=None):
    from .settings import Settings

    st = settings or Settings()
    mesh = space.mesh
    rule = gauss_rule(far_order)
    total = 0.0
    for e in mesh.elements:
        pts = e.point(rule.points)
        dist = np.sqrt(np.min(np.sum((pts - x) ** 2, axis=1)))
        if dist <= 1e-14:
            raise ValueError("potential evaluation point lies on the boundary")
        if dist < e.h:
            tstar = _nearest_param(e, x)
            local = graded_rule(st.graded_order, tstar, st.graded_ratio, st.graded_depth)
        else:
            local = rule
        y = e.point(local.points)
        nu = e.normal(local.points)
        jac = e.jacobian(local.points)
        dens = space.evaluate(coeffs, e.eid, local.points)
        krow = kernel_rows(x[None, :], y, nu)[0]
        total += float(np.dot(local.weights * jac, krow * dens))
    return total


def eval_single_layer(space: DiscreteSpace, coeffs, points, far_order: int = 16) -> np.ndarray:
    """Single-layer potential of the discrete density at points off the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kernel = lambda X, Y, nu: slp_kernel_matrix(X, Y)
    out = np.array(
        [_potential_at_point(space, np.asarray(coeffs, dtype=float), x, kernel, far_order) for x in pts]
    )
    return out if out.size > 1 else float(out[0])


def eval_double_layer(space: DiscreteSpace, coeffs, points, far_order: int = 16) -> np.ndarray:
    """Double-layer potential of the discrete density at points off the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kernel = lambda X, Y, nu: dlp_kernel_matrix(X, Y, nu)
    out = np.array(
        [_potential_at_point(space, np.asarray(coeffs, dtype=float), x, kernel, far_order) for x in pts]
    )
    return out if out.size > 1 else float(out[0])
