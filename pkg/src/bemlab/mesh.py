"""Boundary meshes: elements with C^1 maps, patches, bisection refinement.

Elements are parameter subintervals of the curve chart; the element map is
the restriction of the chart reparametrized to [0, 1].  Bisection happens at
the parameter midpoint so children remain nested restrictions, and a closure
pass keeps neighboring element sizes within a configurable cap.  Meshes are
immutable; refinement returns a new mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import Curve, curve_from_descriptor
from .quadrature import gauss_rule

__all__ = ["Element", "BoundaryMesh", "ShapeReport", "build_mesh", "refine", "MeshError"]

_DIAMETER_SAMPLES = 33
_GRAMIAN_SAMPLES = 33


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Element:
    """One mesh element: the chart restricted to [t0, t1], scaled to [0, 1]."""

    eid: int
    t0: float
    t1: float
    h: float
    node_left: int
    node_right: int
    curve: Curve

    def point(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.curve.point(self.t0 + (self.t1 - self.t0) * t)

    def velocity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (self.t1 - self.t0) * self.curve.velocity(self.t0 + (self.t1 - self.t0) * t)

    def jacobian(self, t) -> np.ndarray:
        return np.linalg.norm(self.velocity(t), axis=-1)

    def tangent(self, t) -> np.ndarray:
        v = self.velocity(t)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def normal(self, t) -> np.ndarray:
        """Outward unit normal (tangent rotated by -90 degrees)."""
        tau = self.tangent(t)
        return np.stack([tau[..., 1], -tau[..., 0]], axis=-1)

    @cached_property
    def is_straight(self) -> bool:
        v = self.velocity(np.linspace(0.0, 1.0, 9))
        return bool(np.max(np.abs(v - v[0])) <= 1e-13 * np.max(np.abs(v)))

    def arclength(self, order: int = 12) -> float:
        g = gauss_rule(order)
        return float(np.dot(g.weights, self.jacobian(g.points)))


def _interval_diameter(curve: Curve, a: float, b: float) -> float:
    t = a + (b - a) * np.linspace(0.0, 1.0, _DIAMETER_SAMPLES)
    pts = curve.point(t)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))


@dataclass(frozen=True)
class ShapeReport:
    kappa: float
    gramian_ratios: np.ndarray  # per element: sup(h^2/G + G/h^2)
    max_neighbor_ratio: float


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Regular triangulation of the curve.  Immutable; queries are read-only."""

    curve: Curve
    elements: tuple
    nodes: np.ndarray  # (n_nodes, 2) coordinates
    node_elements: tuple  # node id -> tuple of incident element ids

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def h_vector(self) -> np.ndarray:
        return np.array([e.h for e in self.elements])

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.array([e.t0 for e in self.elements] + [self.elements[-1].t1])

    def neighbors(self, eid: int) -> tuple:
        """Element ids touching element ``eid`` (sharing at least a node), without ``eid``."""
        e = self.elements[eid]
        out = set()
        for node in (e.node_left, e.node_right):
            out.update(self.node_elements[node])
        out.discard(eid)
        return tuple(sorted(out))

    def patch(self, eid: int) -> tuple:
        """All elements whose closure meets the closure of ``eid``, itself included."""
        if not 0 <= eid < self.n_elements:
            raise MeshError(f"invalid element id {eid}")
        return tuple(sorted(set(self.neighbors(eid)) | {eid}))

    def element_distance_table(self) -> np.ndarray:
        """Approximate pairwise element distances from a 5-point sample per element."""
        t = np.linspace(0.0, 1.0, 5)
        pts = np.stack([e.point(t) for e in self.elements])  # (n, 5, 2)
        d = pts[:, None, :, None, :] - pts[None, :, None, :, :]
        return np.sqrt(np.min(np.sum(d * d, axis=-1), axis=(2, 3)))

    def arclength(self) -> float:
        return float(sum(e.arclength() for e in self.elements))

    def shape_report(self) -> ShapeReport:
        tgrid = np.linspace(0.0, 1.0, _GRAMIAN_SAMPLES)
        ratios = np.empty(self.n_elements)
        for e in self.elements:
            gram = e.jacobian(tgrid) ** 2
            ratios[e.eid] = float(np.max(e.h**2 / gram + gram / e.h**2))
        nb_ratio = 1.0
        h = self.h_vector
        for e in self.elements:
            for j in self.neighbors(e.eid):
                nb_ratio = max(nb_ratio, h[e.eid] / h[j], h[j] / h[e.eid])
        return ShapeReport(
            kappa=max(float(np.max(ratios)), nb_ratio),
            gramian_ratios=ratios,
            max_neighbor_ratio=nb_ratio,
        )

    def to_json(self) -> str:
        doc = {
            "curve": self.curve.descriptor,
            "elements": [
                {"id": e.eid, "param_range": [e.t0, e.t1], "h": e.h} for e in self.elements
            ],
            "nodes": self.nodes.tolist(),
            "adjacency": {str(i): list(elems) for i, elems in enumerate(self.node_elements)},
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "BoundaryMesh":
        doc = json.loads(text)
        curve = curve_from_descriptor(doc["curve"])
        breaks = [e["param_range"][0] for e in doc["elements"]]
        breaks.append(doc["elements"][-1]["param_range"][1])
        return _mesh_from_breakpoints(curve, np.array(breaks))

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _mesh_from_breakpoints(curve: Curve, breaks: np.ndarray) -> BoundaryMesh:
    breaks = np.asarray(breaks, dtype=float)
    if breaks[0] != 0.0 or breaks[-1] != 1.0:
        raise MeshError("breakpoints must start at 0 and end at 1")
    if np.any(np.diff(breaks) <= 0):
        raise MeshError("breakpoints must be strictly increasing")
    for c in curve.corner_params:
        if 0.0 < c < 1.0 and not np.any(np.abs(breaks - c) <= 1e-15):
            raise MeshError(f"corner at parameter {c} must be a mesh node")
    n = len(breaks) - 1
    if curve.closed and n < 2:
        raise MeshError("closed curves need at least two elements")
    # Node ids follow breakpoints; on closed curves the last breakpoint is node 0.
    n_nodes = n if curve.closed else n + 1
    node_of_break = list(range(n_nodes)) + ([0] if curve.closed else [])
    elements = []
    node_elements = [[] for _ in range(n_nodes)]
    for i, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        h = _interval_diameter(curve, a, b)
        if h <= 0:
            raise MeshError(f"degenerate element on [{a}, {b}]")
        nl, nr = node_of_break[i], node_of_break[i + 1]
        elements.append(Element(i, float(a), float(b), h, nl, nr, curve))
        node_elements[nl].append(i)
        node_elements[nr].append(i)
    node_coords = curve.point(breaks[:n_nodes])
    return BoundaryMesh(
        curve=curve,
        elements=tuple(elements),
        nodes=node_coords,
        node_elements=tuple(tuple(sorted(set(v))) for v in node_elements),
    )


def build_mesh(curve: Curve, n_or_breakpoints) -> BoundaryMesh:
    """Mesh the curve with ``n`` quasi-uniform elements or explicit breakpoints."""
    if np.isscalar(n_or_breakpoints):
        breaks = curve.uniform_breakpoints(int(n_or_breakpoints))
    else:
        breaks = np.asarray(n_or_breakpoints, dtype=float)
    return _mesh_from_breakpoints(curve, breaks)


def refine(mesh: BoundaryMesh, marked, neighbor_cap: float = 2.0) -> BoundaryMesh:
    """Bisect ``marked`` elements at the parameter midpoint, plus closure.

    Closure bisections repeat until all touching elements satisfy
    ``h(T)/h(T') <= neighbor_cap``.  Every new element is contained in
    exactly one old element, so refinement is monotone.
    """
    marked = set(int(m) for m in marked)
    for m in marked:
        if not 0 <= m < mesh.n_elements:
            raise MeshError(f"invalid element id {m}")
    breaks = list(mesh.breakpoints)
    mids = [0.5 * (mesh.elements[m].t0 + mesh.elements[m].t1) for m in marked]
    breaks = sorted(set(breaks) | set(mids))
    curve = mesh.curve

    def interval_hs(bk):
        return [_interval_diameter(curve, a, b) for a, b in zip(bk[:-1], bk[1:])]

    hs = interval_hs(breaks)
    guard = 0
    while True:
        n = len(hs)
        pairs = [(i, i + 1) for i in range(n - 1)]
        if curve.closed:
            pairs.append((n - 1, 0))
        worst, ratio = None, neighbor_cap * (1.0 + 1e-12)
        for i, j in pairs:
            r = max(hs[i] / hs[j], hs[j] / hs[i])
            if r > ratio:
                ratio, worst = r, (i if hs[i] > hs[j] else j)
        if worst is None:
            break
        mid = 0.5 * (breaks[worst] + breaks[worst + 1])
        breaks.insert(worst + 1, mid)
        hs[worst : worst + 1] = [
            _interval_diameter(curve, breaks[worst], mid),
            _interval_diameter(curve, mid, breaks[worst + 2]),
        ]
        guard += 1
        if guard > 100 * (mesh.n_elements + len(marked) + 1):
            raise MeshError("closure refinement did not terminate")
    return _mesh_from_breakpoints(curve, np.array(breaks))
