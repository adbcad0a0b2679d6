"""Galerkin solvers, weighted residual estimators, marking, adaptive loop.

The weakly singular equation is solved on discontinuous spaces, the
hypersingular one on continuous spaces (zero-trace on open arcs, mean-zero
via a rank-one stabilization on closed curves).  The estimators are the
mesh-weighted residual quantities

    eta_V = || h^(1/2) grad(f - V Phi) ||_L2,
    eta_W = || h^(1/2) (f - W U) ||_L2,

evaluated elementwise with the pointwise trace machinery; right-hand-side
gradients are supplied analytically by the experiment definitions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mesh import BoundaryMesh, refine
from .norms import _pairing_with_one
from .operators import Workspace, assemble_V, assemble_W
from .quadrature import gauss_rule
from .settings import DEFAULT, Settings
from .spaces import DiscreteSpace, make_space
from .traces import trace_apply

__all__ = [
    "EstimatorReport",
    "solve_symm",
    "solve_hypersingular",
    "estimate_etaV",
    "estimate_etaW",
    "doerfler_mark",
    "adaptive_loop",
    "AdaptiveStep",
    "history_csv",
    "HISTORY_COLUMNS",
]

HISTORY_COLUMNS = [
    "level",
    "dofs",
    "eta",
    "error_L2_weighted",
    "error_energy",
    "eff_ratio",
    "rel_ratio",
    "eoc",
]


@dataclass(frozen=True)
class EstimatorReport:
    indicators: np.ndarray  # per-element eta_T >= 0
    tag: str  # etaV | etaW
    error_l2_weighted: float | None = None
    error_energy: float | None = None

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.indicators**2)))

    @property
    def eff_ratio(self) -> float | None:
        if not self.error_l2_weighted:
            return None
        return self.eta / self.error_l2_weighted

    @property
    def rel_ratio(self) -> float | None:
        if not self.error_energy:
            return None
        return self.error_energy / self.eta


def _load_vector(space: DiscreteSpace, f, order: int) -> np.ndarray:
    g = gauss_rule(order)
    F = np.zeros(space.dim)
    for e in space.mesh.elements:
        wj = g.weights * e.jacobian(g.points)
        vals = np.asarray(f(e.point(g.points)), dtype=float)
        contrib = space.basis_table(e.eid, g.points) @ (wj * vals)
        for loc, gd in enumerate(space.global_dofs(e.eid)):
            if gd >= 0:
                F[gd] += contrib[loc]
    return F


def _orthogonality_check(A, c, F, what):
    resid = np.linalg.norm(A @ c - F) / max(np.linalg.norm(F), 1e-300)
    if resid > 1e-9:
        raise RuntimeError(f"{what} solve left a relative residual of {resid:.2e}")


def solve_symm(ws_or_mesh, space: DiscreteSpace, f, V: np.ndarray | None = None) -> np.ndarray:
    """Galerkin solution of the weakly singular equation V phi = f."""
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    A = V if V is not None else assemble_V(ws, space).matrix
    qmax = int(np.max(space.degrees))
    F = _load_vector(space, f, 2 * qmax + 8)
    c = np.linalg.solve(0.5 * (A + A.T), F)
    _orthogonality_check(A, c, F, "weakly singular")
    return c


def solve_hypersingular(ws_or_mesh, space: DiscreteSpace, f, W: np.ndarray | None = None) -> np.ndarray:
    """Galerkin solution of W u = f; stabilized mean-zero solve on closed curves."""
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    if not space.is_continuous:
        raise ValueError("the hypersingular equation needs a continuous trial space")
    A = W if W is not None else assemble_W(ws, space).matrix
    qmax = int(np.max(space.degrees))
    F = _load_vector(space, f, 2 * qmax + 8)
    if ws.mesh.curve.closed:
        s = _pairing_with_one(space)
        mean_f = abs(_coeffs_of_one(space) @ F)  # <f, 1> through the load vector
        if mean_f > 1e-8 * max(np.linalg.norm(F), 1e-300):
            raise ValueError("right-hand side must have zero mean on a closed curve")
        A = A + np.outer(s, s)
    c = np.linalg.solve(0.5 * (A + A.T), F)
    _orthogonality_check(A, c, F, "hypersingular")
    return c


def _coeffs_of_one(space: DiscreteSpace) -> np.ndarray:
    c = np.zeros(space.dim)
    for e in space.mesh.elements:
        dofs = space.global_dofs(e.eid)
        for loc in (0, 1):
            if dofs[loc] >= 0:
                c[dofs[loc]] = 1.0
    return c


def estimate_etaV(
    ws_or_mesh,
    space: DiscreteSpace,
    coeffs,
    grad_f,
    exact=None,
    settings: Settings | None = None,
) -> EstimatorReport:
    """Weighted residual estimator for the weakly singular equation.

    ``grad_f`` is the analytic tangential derivative of the data.  When the
    exact density is known (``exact`` callable), the weighted L2 error is
    recorded alongside.
    """
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    st = settings or ws.settings
    mesh = ws.mesh
    qmax = int(np.max(space.degrees))
    g = gauss_rule(2 * qmax + st.norm_quad_extra)
    grads = trace_apply(ws, space, "gradV", coeffs, g.points)
    p = len(g.points)
    ind = np.empty(mesh.n_elements)
    err = 0.0
    for e in mesh.elements:
        x = e.point(g.points)
        resid = np.asarray(grad_f(x), dtype=float) - grads[e.eid * p : (e.eid + 1) * p]
        ind[e.eid] = np.sqrt(e.h * np.dot(g.weights * e.jacobian(g.points), resid**2))
        if exact is not None:
            diff = np.asarray(exact(x), dtype=float) - space.evaluate(coeffs, e.eid, g.points)
            err += e.h * np.dot(g.weights * e.jacobian(g.points), diff**2)
    return EstimatorReport(ind, "etaV", error_l2_weighted=np.sqrt(err) if exact else None)


def estimate_etaW(
    ws_or_mesh,
    space: DiscreteSpace,
    coeffs,
    f,
    exact_grad=None,
    settings: Settings | None = None,
) -> EstimatorReport:
    """Weighted residual estimator for the hypersingular equation."""
    ws = ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)
    st = settings or ws.settings
    mesh = ws.mesh
    qmax = int(np.max(space.degrees))
    g = gauss_rule(2 * qmax + st.norm_quad_extra)
    wvals = trace_apply(ws, space, "W", coeffs, g.points)
    p = len(g.points)
    ind = np.empty(mesh.n_elements)
    err = 0.0
    for e in mesh.elements:
        x = e.point(g.points)
        resid = np.asarray(f(x), dtype=float) - wvals[e.eid * p : (e.eid + 1) * p]
        ind[e.eid] = np.sqrt(e.h * np.dot(g.weights * e.jacobian(g.points), resid**2))
        if exact_grad is not None:
            diff = np.asarray(exact_grad(x), dtype=float) - space.surface_gradient(coeffs, e.eid, g.points)
            err += e.h * np.dot(g.weights * e.jacobian(g.points), diff**2)
    return EstimatorReport(ind, "etaW", error_l2_weighted=np.sqrt(err) if exact_grad else None)


def doerfler_mark(report: EstimatorReport, theta: float):
    """Minimal-cardinality set carrying a theta fraction of the squared estimator.

    Sorting by indicator (ties toward smaller id) and taking the shortest
    prefix reaching the threshold is minimal, since any set of cardinality k
    has squared sum at most that of the k largest indicators.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("marking parameter must lie in (0, 1]")
    ind2 = report.indicators**2
    total = float(np.sum(ind2))
    if total == 0.0:
        raise ValueError("cannot mark from an all-zero estimator report")
    if theta == 1.0:
        return tuple(int(i) for i in np.where(ind2 > 0.0)[0])
    order = sorted(range(len(ind2)), key=lambda i: (-ind2[i], i))
    acc = 0.0
    out = []
    for i in order:
        out.append(i)
        acc += float(ind2[i])
        if acc >= theta * total - 1e-14 * total:
            break
    return tuple(sorted(out))


@dataclass(frozen=True)
class AdaptiveStep:
    level: int
    mesh: BoundaryMesh
    space: DiscreteSpace
    coeffs: np.ndarray
    report: EstimatorReport
    eoc: float | None = None

    @property
    def dofs(self) -> int:
        return self.space.dim


@dataclass
class ProblemRun:
    """Everything the loop needs: equation, data, and optional exact info."""

    equation: str  # "symm" | "hypersingular"
    curve_factory: object
    f: object
    grad_f: object = None  # tangential derivative of f (symm estimator)
    exact: object = None  # exact density phi (symm) / gradient of u (hyp)
    energy_pairing: float | None = None  # <f, solution>, for energy errors
    space_kind: str = "Pq"
    degree: int = 0
    label: str = ""


def _one_step(ws, space, problem: ProblemRun):
    if problem.equation == "symm":
        A = assemble_V(ws, space).matrix
        coeffs = solve_symm(ws, space, problem.f, V=A)
        rep = estimate_etaV(ws, space, coeffs, problem.grad_f, exact=problem.exact)
    else:
        A = assemble_W(ws, space).matrix
        coeffs = solve_hypersingular(ws, space, problem.f, W=A)
        rep = estimate_etaW(ws, space, coeffs, problem.f, exact_grad=problem.exact)
    if problem.energy_pairing is not None:
        gal = float(coeffs @ (A @ coeffs))
        err2 = problem.energy_pairing - gal
        rep = EstimatorReport(
            rep.indicators,
            rep.tag,
            error_l2_weighted=rep.error_l2_weighted,
            error_energy=float(np.sqrt(max(err2, 0.0))),
        )
    return coeffs, rep


def adaptive_loop(
    problem: ProblemRun,
    theta: float,
    initial_n: int = 8,
    dof_cap: int | None = None,
    eta_tol: float | None = None,
    settings: Settings = DEFAULT,
) -> list[AdaptiveStep]:
    """Solve-estimate-mark-refine until the estimator or dof budget is hit."""
    dof_cap = dof_cap if dof_cap is not None else settings.dof_cap
    eta_tol = eta_tol if eta_tol is not None else settings.eta_tol
    curve = problem.curve_factory()
    mesh = build_mesh_cached(curve, initial_n)
    history: list[AdaptiveStep] = []
    level = 0
    while True:
        ws = Workspace(mesh, settings)
        space = make_space(mesh, problem.space_kind, problem.degree)
        coeffs, rep = _one_step(ws, space, problem)
        eoc = None
        if history:
            prev = history[-1]
            eoc = float(
                np.log(prev.report.eta / rep.eta) / np.log(space.dim / prev.space.dim)
            )
        history.append(AdaptiveStep(level, mesh, space, coeffs, rep, eoc))
        if space.dim >= dof_cap or rep.eta <= eta_tol:
            break
        marked = doerfler_mark(rep, theta)
        mesh = refine(mesh, marked, neighbor_cap=settings.neighbor_cap)
        level += 1
    return history


def build_mesh_cached(curve, n):
    from .mesh import build_mesh

    return build_mesh(curve, n)


def history_csv(history: list[AdaptiveStep]) -> str:
    """Serialize a run history with the standard column set."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for step in history:
        rep = step.report
        writer.writerow(
            [
                step.level,
                step.dofs,
                f"{rep.eta:.12e}",
                "" if rep.error_l2_weighted is None else f"{rep.error_l2_weighted:.12e}",
                "" if rep.error_energy is None else f"{rep.error_energy:.12e}",
                "" if rep.eff_ratio is None else f"{rep.eff_ratio:.12e}",
                "" if rep.rel_ratio is None else f"{rep.rel_ratio:.12e}",
                "" if step.eoc is None else f"{step.eoc:.6f}",
            ]
        )
    return buf.getvalue()
