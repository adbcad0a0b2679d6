"""Computable norms, projections, and the symmetric pencil eigensolver.

The fractional-order norms are realized by computable surrogates: the
single-layer energy for the minus-one-half side (geometries are scaled to
diameter below one so this is a true norm) and the stabilized hypersingular
energy for the plus-one-half side.  Measured constants are therefore
surrogate-relative; the lab asserts their stability, not absolute values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import BoundaryMesh, refine
from .operators import GalerkinMatrix, Workspace, assemble_V, assemble_W, mass_matrix
from .quadrature import gauss_rule
from .settings import DEFAULT
from .spaces import DiscreteSpace, WeightFunction, make_space

__all__ = [
    "PencilResult",
    "solve_pencil",
    "weighted_l2_norm",
    "energy_matrix",
    "energy_norm",
    "l2_project",
    "duality_ratio",
    "slobodeckii_seminorm",
    "uniform_refine",
    "p_embedding",
]


@dataclass(frozen=True)
class PencilResult:
    lambda_max: float
    eigenvector: np.ndarray
    residual: float
    constant: float  # sqrt(lambda_max)
    dims: int
    tags: tuple = ()

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambda_max": self.lambda_max,
                "residual": self.residual,
                "dims": self.dims,
                "tags": list(self.tags),
            }
        )


def solve_pencil(B: np.ndarray, A: np.ndarray, tags=()) -> PencilResult:
    """Largest generalized eigenvalue of B x = lambda A x.

    A must be symmetric positive definite and B symmetric positive
    semidefinite; the solve reduces to a symmetric eigenproblem through the
    Cholesky factor of A.
    """
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    if B.shape != A.shape or B.shape[0] != B.shape[1]:
        raise ValueError("pencil matrices must be square and of equal size")
    B = 0.5 * (B + B.T)
    A = 0.5 * (A + A.T)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise ValueError("pencil matrix A is not positive definite") from exc
    vals, vecs = scipy.linalg.eigh(B, A)
    lam = float(vals[-1])
    x = vecs[:, -1]
    x = x / np.linalg.norm(x)
    residual = float(np.linalg.norm(B @ x - lam * (A @ x)))
    return PencilResult(lam, x, residual, float(np.sqrt(max(lam, 0.0))), B.shape[0], tuple(tags))


def weighted_l2_norm(mesh_or_space, weight: WeightFunction, f, order: int | None = None) -> float:
    """Weighted L2 norm over the boundary: sqrt of the integral of w^2 f^2.

    ``f`` is either a point callable or a pair (space, coeffs); the
    quadrature order defaults to twice the polynomial degree plus four.
    """
    if isinstance(f, tuple):
        space, coeffs = f
        mesh = space.mesh
        qmax = int(np.max(space.degrees))
    else:
        space, coeffs = None, None
        mesh = mesh_or_space.mesh if isinstance(mesh_or_space, DiscreteSpace) else mesh_or_space
        qmax = 0
    g = gauss_rule(order or max(2 * (qmax + 2), 8))
    total = 0.0
    for e in mesh.elements:
        w = weight.on_element(e, g.points)
        if space is not None:
            vals = space.evaluate(coeffs, e.eid, g.points)
        else:
            vals = np.asarray(f(e.point(g.points)), dtype=float)
        total += float(np.dot(g.weights * e.jacobian(g.points), (w * vals) ** 2))
    return float(np.sqrt(total))


def energy_matrix(ws_or_mesh, space: DiscreteSpace, kind: str) -> np.ndarray:
    """Matrix of the energy inner product: 'V' or 'W-stab'.

    The stabilized hypersingular form adds the rank-one term <u,1><1,v> on
    closed curves, where the plain form annihilates constants.
    """
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    if kind == "V":
        A = assemble_V(ws, space).matrix
        try:
            np.linalg.cholesky(0.5 * (A + A.T))
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "single-layer energy matrix is indefinite; scale the geometry to diameter < 1"
            ) from exc
        return A
    if kind == "W-stab":
        W = assemble_W(ws, space).matrix
        if ws.mesh.curve.closed:
            s = _pairing_with_one(space)
            W = W + np.outer(s, s)
        return W
    raise ValueError(f"unknown energy kind {kind!r}")


def _pairing_with_one(space: DiscreteSpace) -> np.ndarray:
    g = gauss_rule(int(np.max(space.degrees)) + 3)
    s = np.zeros(space.dim)
    for e in space.mesh.elements:
        vals = space.basis_table(e.eid, g.points) @ (g.weights * e.jacobian(g.points))
        for loc, gd in enumerate(space.global_dofs(e.eid)):
            if gd >= 0:
                s[gd] += vals[loc]
    return s


def energy_norm(matrix, coeffs) -> float:
    A = matrix.matrix if isinstance(matrix, GalerkinMatrix) else matrix
    x = np.asarray(coeffs, dtype=float)
    val = float(x @ (A @ x))
    if val < -1e-10 * max(1.0, float(np.linalg.norm(A))):
        raise ValueError("energy form is indefinite on this vector")
    return float(np.sqrt(max(val, 0.0)))


def l2_project(space: DiscreteSpace, f, order: int | None = None) -> np.ndarray:
    """L2-orthogonal projection onto a discontinuous space (elementwise solve)."""
    if space.kind != "Pq":
        raise ValueError("the L2 projection target must be a Pq space")
    mesh = space.mesh
    qmax = int(np.max(space.degrees))
    g = gauss_rule(order or max(qmax + 3, 8))
    coeffs = np.zeros(space.dim)
    for e in mesh.elements:
        wj = g.weights * e.jacobian(g.points)
        basis = space.basis_table(e.eid, g.points)
        vals = np.asarray(f(e.point(g.points)), dtype=float)
        gram = (basis * wj) @ basis.T
        coeffs[space.global_dofs(e.eid)] = np.linalg.solve(gram, (basis * wj) @ vals)
    return coeffs


def uniform_refine(mesh: BoundaryMesh) -> BoundaryMesh:
    return refine(mesh, range(mesh.n_elements))


def p_embedding(coarse: DiscreteSpace, fine: DiscreteSpace) -> np.ndarray:
    """Exact embedding of a Pq space into the once-uniformly-refined Pq space.

    Child elements 2i and 2i+1 cover the two parameter halves of parent i.
    """
    if coarse.kind != "Pq" or fine.kind != "Pq":
        raise ValueError("embedding is implemented for Pq spaces")
    if fine.mesh.n_elements != 2 * coarse.mesh.n_elements:
        raise ValueError("fine mesh must be one uniform bisection of the coarse mesh")
    E = np.zeros((fine.dim, coarse.dim))
    g = gauss_rule(int(np.max(coarse.degrees)) + 2)
    for parent in range(coarse.mesh.n_elements):
        for half in (0, 1):
            child = 2 * parent + half
            tpar = 0.5 * (g.points + half)
            bp = coarse.basis_table(parent, tpar)
            bc = fine.basis_table(child, g.points)
            block = (bc * g.weights) @ bp.T
            E[np.ix_(fine.global_dofs(child), coarse.global_dofs(parent))] = block
    return E


def duality_ratio(ws_or_mesh, space: DiscreteSpace, f) -> float:
    """Ratio of the minus-one-half norm of the projection residual against
    its mesh-weighted L2 norm.

    The residual is represented exactly by projecting ``f`` onto the
    once-refined space first; the numerator is the single-layer energy of
    that representation, the denominator the weighted L2 norm with the
    coarse mesh width.  Returns 0 when ``f`` lies in the space.
    """
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    mesh = space.mesh
    fine_mesh = uniform_refine(mesh)
    fine = make_space(fine_mesh, "Pq", np.repeat(space.degrees, 2))
    c_f = l2_project(fine, f)
    E = p_embedding(space, fine)
    Mf = mass_matrix(fine).matrix
    Mc = E.T @ Mf @ E
    c_pi = np.linalg.solve(Mc, E.T @ (Mf @ c_f))
    r = c_f - E @ c_pi
    wf = WeightFunction(values=np.sqrt(np.repeat(mesh.h_vector, 2)))
    denom = weighted_l2_norm(fine_mesh, wf, (fine, r))
    if denom < 1e-14:
        return 0.0
    Vf = assemble_V(Workspace(fine_mesh, ws.settings), fine).matrix
    num = energy_norm(Vf, r)
    return float(num / denom)


def _slob_integrand(space, coeffs, i, ti, j, tj):
    mesh = space.mesh
    ei, ej = mesh.elements[i], mesh.elements[j]
    X, Y = ei.point(ti), ej.point(tj)
    vi = space.evaluate(coeffs, i, ti)
    vj = space.evaluate(coeffs, j, tj)
    r2 = np.sum((X - Y) ** 2, axis=-1)
    return (vi - vj) ** 2 / r2 * ei.jacobian(ti) * ej.jacobian(tj)


def slobodeckii_seminorm(space: DiscreteSpace, coeffs, order: int = 16) -> float:
    """Aronstein-Slobodeckii half-order seminorm (squared exponent d = 2).

    Double integral of |v(x)-v(y)|^2 / |x-y|^2; the diagonal and corner
    singularities are removable for continuous piecewise polynomials and
    handled by Duffy splits.
    """
    if not space.is_continuous:
        raise ValueError("the half-order seminorm needs a continuous input")
    coeffs = np.asarray(coeffs, dtype=float)
    mesh = space.mesh
    n = mesh.n_elements
    gu = gauss_rule(order)
    gv = gauss_rule(order + 1)
    U = np.repeat(gu.points, order + 1)
    V = np.tile(gv.points, order)
    Wt = np.repeat(gu.weights, order + 1) * np.tile(gv.weights, order)
    ws = Workspace(mesh)
    corrected = ws.corrected_pairs()
    total = 0.0
    for i in range(n):
        for j in range(n):
            if not corrected[i, j]:
                total += float(np.dot(Wt, _slob_integrand(space, coeffs, i, U, j, V)))
                continue
            if i == j:
                # Duffy on both triangles; the diagonal limit is the squared gradient
                total += float(np.dot(Wt * U, _slob_integrand(space, coeffs, i, U, i, U * (1 - V))))
                total += float(np.dot(Wt * U, _slob_integrand(space, coeffs, i, U * (1 - V), i, U)))
                continue
            total += _slob_pair(space, coeffs, i, j, U, V, Wt, mesh)
    return float(np.sqrt(total))


def _slob_pair(space, coeffs, i, j, U, V, Wt, mesh, ri=(0.0, 1.0), rj=(0.0, 1.0), depth=0):
    """Touching or close pair; Duffy toward a shared corner, else bisection."""
    ei, ej = mesh.elements[i], mesh.elements[j]
    tol = 1e-12 * max(mesh.curve.diameter, 1e-30)
    pi_ = ei.point(np.array(ri))
    pj_ = ej.point(np.array(rj))
    shared = [
        (si, sj) for si in range(2) for sj in range(2) if np.linalg.norm(pi_[si] - pj_[sj]) <= tol
    ]
    span_i, span_j = ri[1] - ri[0], rj[1] - rj[0]
    if len(shared) == 1:
        (si, sj) = shared[0]
        iA, iB = (ri[si], ri[1 - si])
        jA, jB = (rj[sj], rj[1 - sj])
        out = 0.0
        for u_i, u_j in ((U, U * V), (U * V, U)):
            ti = iA + (iB - iA) * u_i
            tj = jA + (jB - jA) * u_j
            out += float(
                np.dot(Wt * U * abs(span_i) * abs(span_j), _slob_integrand(space, coeffs, i, ti, j, tj))
            )
        return out
    pts_i = ei.point(ri[0] + span_i * np.linspace(0, 1, 9))
    pts_j = ej.point(rj[0] + span_j * np.linspace(0, 1, 9))
    dmin = np.sqrt(np.min(np.sum((pts_i[:, None] - pts_j[None, :]) ** 2, axis=-1)))
    di = np.sqrt(np.max(np.sum((pts_i[:, None] - pts_i[None, :]) ** 2, axis=-1)))
    dj = np.sqrt(np.max(np.sum((pts_j[:, None] - pts_j[None, :]) ** 2, axis=-1)))
    if not shared and dmin >= 0.5 * (di + dj):
        ti = ri[0] + span_i * U
        tj = rj[0] + span_j * V
        return float(np.dot(Wt * span_i * span_j, _slob_integrand(space, coeffs, i, ti, j, tj)))
    if depth > 40:
        raise RuntimeError(f"seminorm quadrature did not converge on pair ({i}, {j})")
    if di >= dj:
        mid = 0.5 * (ri[0] + ri[1])
        return _slob_pair(space, coeffs, i, j, U, V, Wt, mesh, (ri[0], mid), rj, depth + 1) + _slob_pair(
            space, coeffs, i, j, U, V, Wt, mesh, (mid, ri[1]), rj, depth + 1
        )
    mid = 0.5 * (rj[0] + rj[1])
    return _slob_pair(space, coeffs, i, j, U, V, Wt, mesh, ri, (rj[0], mid), depth + 1) + _slob_pair(
        space, coeffs, i, j, U, V, Wt, mesh, ri, (mid, rj[1]), depth + 1
    )
