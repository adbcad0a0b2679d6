"""Discrete spaces on boundary meshes with variable polynomial degree.

Three kinds are provided, all with per-element degree q(T):

* ``Pq``          discontinuous piecewise polynomials of degree q(T),
* ``Sq1``         continuous piecewise polynomials of degree q(T) + 1,
* ``Sq1_tilde``   like ``Sq1`` but vanishing on the relative boundary of an
                  open arc (identical to ``Sq1`` on closed curves).

Bases: orthonormal shifted Legendre polynomials for ``Pq`` (the reference
mass matrix is the identity), nodal hats plus integrated-Legendre bubbles
for the continuous kinds.  Continuity is enforced through shared node
degrees of freedom only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .mesh import BoundaryMesh
from .quadrature import gauss_rule

__all__ = [
    "DiscreteSpace",
    "WeightFunction",
    "legendre_table",
    "shape_table",
    "make_space",
    "check_sigma_admissible",
    "interpolate",
    "canonical_weight",
]

_ADMISSIBILITY_SAMPLES = 33


def _legendre_rows(x: np.ndarray, kmax: int) -> np.ndarray:
    """Legendre P_0..P_kmax at x in [-1, 1], shape (kmax+1, len(x))."""
    out = np.empty((kmax + 1, len(x)))
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for k in range(1, kmax):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _legendre_deriv_rows(x: np.ndarray, kmax: int) -> np.ndarray:
    vals = _legendre_rows(x, kmax)
    out = np.zeros_like(vals)
    if kmax >= 1:
        out[1] = 1.0
    for k in range(1, kmax):
        out[k + 1] = out[k - 1] + (2 * k + 1) * vals[k]
    return out


def legendre_table(t, qmax: int, deriv: int = 0) -> np.ndarray:
    """Orthonormal Legendre basis on [0,1]: sqrt(2k+1) P_k(2t-1), rows k=0..qmax."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = 2.0 * t - 1.0
    scale = np.sqrt(2.0 * np.arange(qmax + 1) + 1.0)[:, None]
    if deriv == 0:
        return scale * _legendre_rows(x, qmax)
    if deriv == 1:
        return 2.0 * scale * _legendre_deriv_rows(x, qmax)
    raise ValueError("derivative order must be 0 or 1")


def shape_table(t, q: int, deriv: int = 0) -> np.ndarray:
    """Hat + bubble shape functions of degree q+1 on [0,1].

    Row order: [left hat 1-t, right hat t, bubbles j=2..q+1].  Bubbles are
    scaled antiderivatives of Legendre polynomials and vanish at both ends.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = q + 1
    out = np.empty((p + 1, len(t)))
    x = 2.0 * t - 1.0
    if deriv == 0:
        out[0] = 1.0 - t
        out[1] = t
        if p >= 2:
            vals = _legendre_rows(x, p)
            for j in range(2, p + 1):
                out[j] = (vals[j] - vals[j - 2]) / np.sqrt(2.0 * (2 * j - 1))
    elif deriv == 1:
        out[0] = -1.0
        out[1] = 1.0
        if p >= 2:
            vals = _legendre_rows(x, p - 1)
            for j in range(2, p + 1):
                out[j] = np.sqrt(2.0 * (2 * j - 1)) * vals[j - 1]
    else:
        raise ValueError("derivative order must be 0 or 1")
    return out


@dataclass(frozen=True)
class WeightFunction:
    """A nonnegative weight, either elementwise constant or a point callable."""

    values: np.ndarray | None = None  # per element
    func: Callable[[np.ndarray], np.ndarray] | None = None

    def on_element(self, element, t: np.ndarray) -> np.ndarray:
        if self.values is not None:
            return np.full(len(t), self.values[element.eid])
        return np.asarray(self.func(element.point(t)), dtype=float)

    @staticmethod
    def constant(mesh: BoundaryMesh, value: float = 1.0) -> "WeightFunction":
        return WeightFunction(values=np.full(mesh.n_elements, value))


def canonical_weight(mesh: BoundaryMesh, degrees) -> WeightFunction:
    """The degree-aware mesh-width weight sqrt(h) / (q + 1), elementwise."""
    q = np.asarray(degrees, dtype=float)
    return WeightFunction(values=np.sqrt(mesh.h_vector) / (q + 1.0))


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    kind: str  # "Pq" | "Sq1" | "Sq1_tilde"
    mesh: BoundaryMesh
    degrees: np.ndarray  # q(T) >= 0 per element
    dim: int
    _elem_dofs: tuple  # eid -> int array of global dofs, -1 where constrained

    def local_dim(self, eid: int) -> int:
        q = int(self.degrees[eid])
        return q + 1 if self.kind == "Pq" else q + 2

    def global_dofs(self, eid: int) -> np.ndarray:
        return self._elem_dofs[eid]

    def basis_table(self, eid: int, t, deriv: int = 0) -> np.ndarray:
        q = int(self.degrees[eid])
        if self.kind == "Pq":
            return legendre_table(t, q, deriv)
        return shape_table(t, q, deriv)

    def eval_basis(self, eid: int, local: int, t, deriv: int = 0):
        """Basis value or reference derivative on element ``eid`` at local t."""
        if not 0 <= local < self.local_dim(eid):
            raise IndexError(f"local basis index {local} out of range on element {eid}")
        return self.basis_table(eid, t, deriv)[local]

    def element_coeffs(self, coeffs: np.ndarray, eid: int) -> np.ndarray:
        dofs = self._elem_dofs[eid]
        local = np.zeros(len(dofs))
        mask = dofs >= 0
        local[mask] = coeffs[dofs[mask]]
        return local

    def evaluate(self, coeffs: np.ndarray, eid: int, t, deriv: int = 0) -> np.ndarray:
        return self.element_coeffs(coeffs, eid) @ self.basis_table(eid, t, deriv)

    def surface_gradient(self, coeffs: np.ndarray, eid: int, t) -> np.ndarray:
        """Tangential derivative (d/dt of the pullback divided by the Jacobian)."""
        e = self.mesh.elements[eid]
        return self.evaluate(coeffs, eid, t, deriv=1) / e.jacobian(np.asarray(t, dtype=float))

    @cached_property
    def is_continuous(self) -> bool:
        return self.kind in ("Sq1", "Sq1_tilde")

    def descriptor(self) -> dict:
        return {"kind": self.kind, "degrees": [int(q) for q in self.degrees], "dim": self.dim}

    def derivative_space(self) -> "DiscreteSpace":
        if self.kind == "Pq":
            raise ValueError("derivative space is defined for the continuous kinds")
        return make_space(self.mesh, "Pq", self.degrees)

    @cached_property
    def derivative_map(self) -> np.ndarray:
        """Matrix D mapping coefficients to arclength-derivative coefficients in Pq.

        Exact whenever element maps have constant speed (all factory
        geometries); otherwise an elementwise L^2 fit.
        """
        pspace = self.derivative_space()
        rule = gauss_rule(int(np.max(self.degrees)) + 4)
        D = np.zeros((pspace.dim, self.dim))
        for e in self.mesh.elements:
            jac = e.jacobian(rule.points)
            dshape = self.basis_table(e.eid, rule.points, deriv=1) / jac
            leg = pspace.basis_table(e.eid, rule.points)
            block = (leg * rule.weights) @ dshape.T  # reference-orthonormal projection
            rows = pspace.global_dofs(e.eid)
            cols = self.global_dofs(e.eid)
            for a, ga in enumerate(rows):
                for b, gb in enumerate(cols):
                    if gb >= 0:
                        D[ga, gb] += block[a, b]
        return D

    def legendre_embedding(self) -> tuple["DiscreteSpace", np.ndarray]:
        """Represent this space inside P^{q+1} (continuous kinds) or itself."""
        if self.kind == "Pq":
            return self, np.eye(self.dim)
        target = make_space(self.mesh, "Pq", self.degrees + 1)
        rule = gauss_rule(int(np.max(self.degrees)) + 4)
        T = np.zeros((target.dim, self.dim))
        for e in self.mesh.elements:
            shp = self.basis_table(e.eid, rule.points)
            leg = target.basis_table(e.eid, rule.points)
            block = (leg * rule.weights) @ shp.T
            rows = target.global_dofs(e.eid)
            cols = self.global_dofs(e.eid)
            for a, ga in enumerate(rows):
                for b, gb in enumerate(cols):
                    if gb >= 0:
                        T[ga, gb] += block[a, b]
        return target, T


def make_space(mesh: BoundaryMesh, kind: str, degrees) -> DiscreteSpace:
    """Build a discrete space; ``degrees`` is a scalar or per-element array."""
    if kind not in ("Pq", "Sq1", "Sq1_tilde"):
        raise ValueError(f"unknown space kind {kind!r}")
    q = np.asarray(degrees, dtype=int)
    if q.ndim == 0:
        q = np.full(mesh.n_elements, int(q))
    if len(q) != mesh.n_elements or np.any(q < 0):
        raise ValueError("degree distribution must give one q >= 0 per element")

    if kind == "Pq":
        offsets = np.concatenate([[0], np.cumsum(q + 1)])
        elem_dofs = tuple(
            np.arange(offsets[i], offsets[i + 1]) for i in range(mesh.n_elements)
        )
        return DiscreteSpace(kind, mesh, q, int(offsets[-1]), elem_dofs)

    # Continuous kinds: one dof per unconstrained node, then bubbles per element.
    constrained = set()
    if kind == "Sq1_tilde" and not mesh.curve.closed:
        first, last = mesh.elements[0], mesh.elements[-1]
        constrained = {first.node_left, last.node_right}
    node_dof = np.full(mesh.n_nodes, -1, dtype=int)
    nxt = 0
    for node in range(mesh.n_nodes):
        if node not in constrained:
            node_dof[node] = nxt
            nxt += 1
    elem_dofs = []
    for e in mesh.elements:
        dofs = np.empty(int(q[e.eid]) + 2, dtype=int)
        dofs[0] = node_dof[e.node_left]
        dofs[1] = node_dof[e.node_right]
        dofs[2:] = nxt + np.arange(int(q[e.eid]))
        nxt += int(q[e.eid])
        elem_dofs.append(dofs)
    return DiscreteSpace(kind, mesh, q, nxt, tuple(elem_dofs))


def check_sigma_admissible(mesh: BoundaryMesh, obj) -> float:
    """Smallest admissibility constant valid on the verification grid.

    For a degree distribution the patchwise sup/inf ratio of (q+1) is
    returned; for a weight the patchwise ratio of the element sup against
    the pointwise infimum.  Returns ``inf`` for inadmissible weights.
    """
    if isinstance(obj, WeightFunction):
        t = np.linspace(0.0, 1.0, _ADMISSIBILITY_SAMPLES)
        sup = np.empty(mesh.n_elements)
        inf = np.empty(mesh.n_elements)
        for e in mesh.elements:
            w = obj.on_element(e, t)
            sup[e.eid] = np.max(w)
            inf[e.eid] = np.min(w)
        sigma = 1.0
        for e in mesh.elements:
            patch_inf = min(inf[j] for j in mesh.patch(e.eid))
            if sup[e.eid] <= 0.0:
                continue
            if patch_inf <= 0.0:
                return float("inf")
            sigma = max(sigma, sup[e.eid] / patch_inf)
        return float(sigma)
    q = np.asarray(obj, dtype=float) + 1.0
    sigma = 1.0
    for e in mesh.elements:
        vals = [q[j] for j in mesh.patch(e.eid)]
        sigma = max(sigma, max(vals) / min(vals))
    return float(sigma)


def interpolate(space: DiscreteSpace, f) -> np.ndarray:
    """Coefficients approximating the callable ``f`` (points (m,2) -> values).

    ``Pq`` uses the elementwise L^2 best fit; the continuous kinds use nodal
    values plus an elementwise bubble fit.  Members of the space are
    reproduced exactly.
    """
    mesh = space.mesh
    qmax = int(np.max(space.degrees))
    rule = gauss_rule(max(qmax + 3, 8))
    coeffs = np.zeros(space.dim)
    if space.kind == "Pq":
        for e in mesh.elements:
            jac = e.jacobian(rule.points)
            fb = np.asarray(f(e.point(rule.points)), dtype=float)
            basis = space.basis_table(e.eid, rule.points)
            gram = (basis * (rule.weights * jac)) @ basis.T
            rhs = (basis * (rule.weights * jac)) @ fb
            coeffs[space.global_dofs(e.eid)] = np.linalg.solve(gram, rhs)
        return coeffs
    # nodal part
    node_vals = np.asarray(f(mesh.nodes), dtype=float)
    for e in mesh.elements:
        dofs = space.global_dofs(e.eid)
        if dofs[0] >= 0:
            coeffs[dofs[0]] = node_vals[e.node_left]
        if dofs[1] >= 0:
            coeffs[dofs[1]] = node_vals[e.node_right]
    for e in mesh.elements:
        q = int(space.degrees[e.eid])
        if q == 0:
            continue
        dofs = space.global_dofs(e.eid)
        jac = e.jacobian(rule.points)
        basis = space.basis_table(e.eid, rule.points)
        nodal = np.zeros(len(rule.points))
        for loc in (0, 1):
            if dofs[loc] >= 0:
                nodal += coeffs[dofs[loc]] * basis[loc]
        resid = np.asarray(f(e.point(rule.points)), dtype=float) - nodal
        bub = basis[2:]
        gram = (bub * (rule.weights * jac)) @ bub.T
        rhs = (bub * (rule.weights * jac)) @ resid
        coeffs[dofs[2:]] = np.linalg.solve(gram, rhs)
    return coeffs
