"""Verification lab: sharpest constants of the weighted inverse estimates.

Each inequality of the form  ||w L u||_L2 <= C ||u||_X  over a discrete
space is realized as a symmetric-definite matrix pencil (B, A):

    B = integral of w^2 (L phi_j)(L phi_k),      A = Gram matrix of ||.||_X,

so the sharpest discrete constant is the square root of the largest
generalized eigenvalue.  Supported left-hand operators L: the identity, the
surface gradient of the function itself, and the traces gradV, K', gradK, W.
Right-hand norms: the single-layer energy (minus-one-half side) and the
stabilized hypersingular energy (plus-one-half side); for the two-term
weighted estimates A combines the energy with a weighted L2 (or weighted
gradient) form scaled by the sup of w / sqrt(h).

Constants are tracked across mesh refinement and degree sweeps; the trace
quadrature uses a fixed order of twice the degree plus a constant, so
traces are comparable across levels of a sweep.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import Curve
from .mesh import BoundaryMesh, build_mesh
from .norms import PencilResult, solve_pencil
from .operators import (
    Workspace,
    assemble_V,
    weighted_gradient_matrix,
    weighted_mass_matrix,
)
from .quadrature import gauss_rule
from .settings import DEFAULT, Settings
from .spaces import DiscreteSpace, WeightFunction, canonical_weight, make_space
from .traces import trace_matrix

__all__ = [
    "InequalitySpec",
    "ConstantTrace",
    "PENCIL_TAGS",
    "build_pencil",
    "constant_sweep",
    "sweep_tags",
    "projection_stability_ratios",
    "CONSTANT_COLUMNS",
]

# tag -> (space kind, left-hand operation, right-hand side)
# sides: "minus" = single-layer energy, "plus" = stabilized hypersingular energy
PENCIL_TAGS = {
    "inv_l2": ("Pq", "identity", "minus", False),
    "inv_slp_grad": ("Pq", "gradV", "minus", False),
    "inv_adlp": ("Pq", "Kprime", "minus", False),
    "inv_dlp_grad": ("Sq1_tilde", "gradK", "plus", False),
    "inv_hyp": ("Sq1_tilde", "W", "plus", False),
    "inv_grad": ("Sq1_tilde", "grad", "plus", False),
    "weighted_slp_grad": ("Pq", "gradV", "minus", True),
    "weighted_dlp_grad": ("Sq1_tilde", "gradK", "plus", True),
}

INVERSE_TAGS = ("inv_slp_grad", "inv_adlp", "inv_dlp_grad", "inv_hyp")

CONSTANT_COLUMNS = ["geometry", "tag", "level", "dofs", "q_min", "q_max", "C", "residual"]


@dataclass(frozen=True)
class InequalitySpec:
    """Which inequality to verify, on which space, with which weight.

    ``weight``: "canonical" is sqrt(h)/(q+1); "mesh-width" drops the degree
    factor (the discriminator showing the factor is needed); or a
    WeightFunction for the general weighted estimates.
    """

    tag: str
    degree: int = 0
    weight: object = "canonical"
    geometry: str = ""

    def __post_init__(self):
        if self.tag not in PENCIL_TAGS:
            raise ValueError(f"unknown pencil tag {self.tag!r}; known: {sorted(PENCIL_TAGS)}")


@dataclass
class ConstantTrace:
    geometry: str
    tag: str
    records: list = field(default_factory=list)  # dicts with level/dofs/q/C/residual

    def constants(self) -> np.ndarray:
        return np.array([r["C"] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CONSTANT_COLUMNS)
        for r in self.records:
            w.writerow(
                [
                    self.geometry,
                    self.tag,
                    r["level"],
                    r["dofs"],
                    r["q_min"],
                    r["q_max"],
                    f"{r['C']:.12e}",
                    f"{r['residual']:.3e}",
                ]
            )
        return buf.getvalue()


class LabCell:
    """Shared matrices for one (mesh, degree) cell of a sweep.

    All pencils of a cell reuse the single-layer matrix on the derivative
    space, the trace matrices, and the quadrature tables.
    """

    def __init__(self, mesh: BoundaryMesh, degree: int, settings: Settings = DEFAULT):
        self.ws = Workspace(mesh, settings)
        self.mesh = mesh
        self.degree = int(degree)
        self.settings = settings
        self._cache: dict = {}

    def space(self, kind: str) -> DiscreteSpace:
        key = ("space", kind)
        if key not in self._cache:
            self._cache[key] = make_space(self.mesh, kind, self.degree)
        return self._cache[key]

    def quad_points(self) -> np.ndarray:
        return gauss_rule(2 * self.degree + self.settings.trace_quad_extra).points

    def quad_weights_jac(self) -> np.ndarray:
        g = gauss_rule(2 * self.degree + self.settings.trace_quad_extra)
        out = np.empty((self.mesh.n_elements, len(g.points)))
        for e in self.mesh.elements:
            out[e.eid] = g.weights * e.jacobian(g.points)
        return out

    def v_matrix(self, space: DiscreteSpace) -> np.ndarray:
        key = ("V", id(space))
        if key not in self._cache:
            self._cache[key] = assemble_V(self.ws, space).matrix
        return self._cache[key]

    def trace(self, space: DiscreteSpace, op: str) -> np.ndarray:
        key = ("trace", op, id(space))
        if key not in self._cache:
            if op == "W":
                dspace = space.derivative_space()
                self._cache[key] = -self.trace(dspace, "gradV") @ space.derivative_map
            else:
                self._cache[key] = trace_matrix(self.ws, space, op, self.quad_points())
        return self._cache[key]

    def value_matrix(self, space: DiscreteSpace, deriv: bool) -> np.ndarray:
        """Plain basis (or surface-gradient) values at the trace quadrature points."""
        t = self.quad_points()
        p = len(t)
        E = np.zeros((self.mesh.n_elements * p, space.dim))
        for e in self.mesh.elements:
            tab = space.basis_table(e.eid, t, deriv=1 if deriv else 0)
            if deriv:
                tab = tab / e.jacobian(t)
            dofs = space.global_dofs(e.eid)
            for loc, g in enumerate(dofs):
                if g >= 0:
                    E[e.eid * p : (e.eid + 1) * p, g] += tab[loc]
        return E

    def weight_values(self, weight: WeightFunction) -> np.ndarray:
        t = self.quad_points()
        out = np.empty((self.mesh.n_elements, len(t)))
        for e in self.mesh.elements:
            out[e.eid] = weight.on_element(e, t)
        return out

    def resolve_weight(self, spec: InequalitySpec) -> WeightFunction:
        if isinstance(spec.weight, WeightFunction):
            return spec.weight
        degrees = np.full(self.mesh.n_elements, self.degree)
        if spec.weight == "canonical":
            return canonical_weight(self.mesh, degrees)
        if spec.weight == "mesh-width":
            return WeightFunction(values=np.sqrt(self.mesh.h_vector))
        raise ValueError(f"unknown weight choice {spec.weight!r}")

    def build_pencil(self, spec: InequalitySpec) -> tuple[np.ndarray, np.ndarray]:
        kind, lhs_op, side, two_term = PENCIL_TAGS[spec.tag]
        space = self.space(kind)
        if space.dim > self.settings.dim_cap:
            raise ValueError(f"pencil dimension {space.dim} exceeds cap {self.settings.dim_cap}")
        weight = self.resolve_weight(spec)
        if lhs_op == "identity":
            E = self.value_matrix(space, deriv=False)
        elif lhs_op == "grad":
            E = self.value_matrix(space, deriv=True)
        else:
            E = self.trace(space, lhs_op)
        w2q = (self.weight_values(weight) ** 2 * self.quad_weights_jac()).ravel()
        B = E.T @ (E * w2q[:, None])
        B = 0.5 * (B + B.T)
        if side == "minus":
            A = self.v_matrix(space)
        else:
            D = space.derivative_map
            A = D.T @ self.v_matrix(space.derivative_space()) @ D
            if self.mesh.curve.closed:
                from .norms import _pairing_with_one

                s = _pairing_with_one(space)
                A = A + np.outer(s, s)
        if two_term:
            # combined right side: sup(w/h^(1/2))^2 times the energy plus the
            # weighted zero-order (minus side) or gradient (plus side) form
            wv = self.weight_values(weight)
            alpha = float(np.max(wv**2 / self.mesh.h_vector[:, None]))
            if side == "minus":
                second = weighted_mass_matrix(space, weight, 2 * self.degree + self.settings.trace_quad_extra).matrix
            else:
                second = weighted_gradient_matrix(space, weight, 2 * self.degree + self.settings.trace_quad_extra).matrix
            A = alpha * A + second
        return B, 0.5 * (A + A.T)


def build_pencil(spec: InequalitySpec, mesh: BoundaryMesh, degree: int | None = None, settings: Settings = DEFAULT):
    cell = LabCell(mesh, spec.degree if degree is None else degree, settings)
    return cell.build_pencil(spec)


def sweep_tags(
    tags,
    curve: Curve,
    geometry_label: str,
    levels,
    degrees,
    weight="canonical",
    settings: Settings = DEFAULT,
) -> dict[tuple[str, int], ConstantTrace]:
    """Constant traces for several pencils sharing per-cell matrices.

    Returns a trace per (tag, degree); levels are element counts of
    quasi-uniform meshes.
    """
    out = {
        (tag, int(q)): ConstantTrace(geometry_label, tag) for tag in tags for q in np.atleast_1d(degrees)
    }
    for level, n in enumerate(levels):
        mesh = build_mesh(curve, int(n))
        for q in np.atleast_1d(degrees):
            cell = LabCell(mesh, int(q), settings)
            for tag in tags:
                spec = InequalitySpec(tag, int(q), weight, geometry_label)
                B, A = cell.build_pencil(spec)
                res = solve_pencil(B, A, tags=(tag, geometry_label))
                out[(tag, int(q))].records.append(
                    {
                        "level": level,
                        "dofs": B.shape[0],
                        "q_min": int(q),
                        "q_max": int(q),
                        "C": res.constant,
                        "residual": res.residual,
                    }
                )
    return out


def constant_sweep(
    spec: InequalitySpec,
    curve: Curve,
    levels,
    degrees=None,
    settings: Settings = DEFAULT,
    meshes=None,
) -> ConstantTrace:
    """Constant trace of one pencil across levels (and optionally degrees).

    ``meshes`` may supply an explicit mesh family (e.g. adaptively graded
    ones); otherwise quasi-uniform meshes with the given element counts are
    built.
    """
    degrees = [spec.degree] if degrees is None else list(np.atleast_1d(degrees))
    trace = ConstantTrace(spec.geometry, spec.tag)
    mesh_list = list(meshes) if meshes is not None else [build_mesh(curve, int(n)) for n in levels]
    for level, mesh in enumerate(mesh_list):
        for q in degrees:
            cell = LabCell(mesh, int(q), settings)
            B, A = cell.build_pencil(InequalitySpec(spec.tag, int(q), spec.weight, spec.geometry))
            res = solve_pencil(B, A, tags=(spec.tag, spec.geometry))
            trace.records.append(
                {
                    "level": level,
                    "dofs": B.shape[0],
                    "q_min": int(q),
                    "q_max": int(q),
                    "C": res.constant,
                    "residual": res.residual,
                }
            )
    return trace


def projection_stability_ratios(
    curve: Curve,
    levels,
    degree: int,
    probes: dict,
    settings: Settings = DEFAULT,
) -> list[dict]:
    """Stability ratios of the layer traces under L2 and Galerkin projections.

    For each probe f and projection P the ratio

        ( ||h^(1/2) grad V (1-P) f||, ||h^(1/2) K' (1-P) f|| ) / ||h^(1/2) (1-P) f||

    is recorded.  Probes are replaced by their projection onto the
    once-refined space first, which makes every quantity exactly computable
    while staying inside L2.
    """
    from .norms import l2_project, p_embedding, uniform_refine
    from .operators import mass_matrix

    rows = []
    for level, n in enumerate(levels):
        mesh = build_mesh(curve, int(n))
        fine_mesh = uniform_refine(mesh)
        coarse = make_space(mesh, "Pq", degree)
        fine = make_space(fine_mesh, "Pq", degree)
        E = p_embedding(coarse, fine)
        ws_f = Workspace(fine_mesh, settings)
        Vf = assemble_V(ws_f, fine).matrix
        Mf = mass_matrix(fine).matrix
        Mc = E.T @ Mf @ E
        Vc = E.T @ Vf @ E
        parent_h = np.repeat(mesh.h_vector, 2)
        wfun = WeightFunction(values=np.sqrt(parent_h))
        g = gauss_rule(2 * degree + settings.trace_quad_extra)
        wq = np.empty((fine_mesh.n_elements, len(g.points)))
        for e in fine_mesh.elements:
            wq[e.eid] = g.weights * e.jacobian(g.points) * parent_h[e.eid]
        wq = wq.ravel()
        Egrad = trace_matrix(ws_f, fine, "gradV", g.points)
        Eadl = trace_matrix(ws_f, fine, "Kprime", g.points)
        Eval = LabCell(fine_mesh, degree, settings).value_matrix(fine, deriv=False)
        for name, f in probes.items():
            c_f = l2_project(fine, f)
            for proj in ("l2", "galerkin"):
                if proj == "l2":
                    c_p = np.linalg.solve(Mc, E.T @ (Mf @ c_f))
                else:
                    c_p = np.linalg.solve(0.5 * (Vc + Vc.T), E.T @ (Vf @ c_f))
                r = c_f - E @ c_p
                denom = float(np.sqrt(np.dot(wq, (Eval @ r) ** 2)))
                row = {
                    "probe": name,
                    "projection": proj,
                    "level": level,
                    "dofs": coarse.dim,
                    "skipped": denom < 1e-12,
                }
                if not row["skipped"]:
                    row["ratio_grad"] = float(np.sqrt(np.dot(wq, (Egrad @ r) ** 2))) / denom
                    row["ratio_adlp"] = float(np.sqrt(np.dot(wq, (Eadl @ r) ** 2))) / denom
                rows.append(row)
    return rows
