"""Curve geometry: closed curves and open arcs with a single global chart.

A curve is parametrized over [0, 1] by a point map and its derivative.
Polygons use the arclength-proportional parametrization, so the velocity
magnitude is globally constant and element maps restricted to one side are
affine.  Factories cover the geometries used throughout: circles, squares,
axis-aligned slits, and general polygons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["Curve", "circle", "polygon", "square", "slit", "curve_from_descriptor"]


@dataclass(frozen=True)
class Curve:
    """A closed curve or open arc given by one C^1-per-piece chart over [0, 1].

    Attributes
    ----------
    kind : str
        One of ``closed-polygon``, ``open-polygon``, ``parametrized-closed``,
        ``parametrized-open``.
    point, velocity : callables
        Map arrays of parameters in [0, 1] to points / derivatives, shape (m, 2).
    corner_params : tuple of float
        Parameters where the chart is not C^1 (polygon vertices).  Mesh nodes
        must include these so element maps stay C^1.
    diameter : float
        Diameter of the curve (Euclidean).
    descriptor : dict or None
        Factory data for serialization; None for ad-hoc callables.
    """

    kind: str
    point: Callable[[np.ndarray], np.ndarray]
    velocity: Callable[[np.ndarray], np.ndarray]
    corner_params: tuple = ()
    diameter: float = 0.0
    descriptor: dict | None = field(default=None)

    @property
    def closed(self) -> bool:
        return self.kind in ("closed-polygon", "parametrized-closed")

    @property
    def boundary_points(self) -> np.ndarray:
        """The relative boundary: the two endpoints of an open arc (empty if closed)."""
        if self.closed:
            return np.zeros((0, 2))
        return self.point(np.array([0.0, 1.0]))

    def arclength(self, n_panels: int = 256, order: int = 8) -> float:
        from .quadrature import gauss_rule

        g = gauss_rule(order)
        t = (np.arange(n_panels)[:, None] + g.points[None, :]) / n_panels
        speed = np.linalg.norm(self.velocity(t.ravel()), axis=1)
        return float(np.sum(speed * np.tile(g.weights, n_panels)) / n_panels)

    def uniform_breakpoints(self, n: int) -> np.ndarray:
        """n-element breakpoints honoring corners (polygons split per side)."""
        if n < (2 if self.closed else 1):
            raise ValueError("need at least two elements on a closed curve")
        if not self.corner_params:
            return np.linspace(0.0, 1.0, n + 1)
        corners = list(self.corner_params)
        if self.closed:
            spans = list(zip(corners, corners[1:] + [1.0 + corners[0]]))
        else:
            spans = list(zip(corners[:-1], corners[1:]))
        lengths = np.array([b - a for a, b in spans])
        if n < len(spans):
            raise ValueError(f"need at least {len(spans)} elements to honor all corners")
        counts = _largest_remainder(lengths / lengths.sum() * n)
        pts: list[float] = []
        for (a, b), c in zip(spans, counts):
            pts.extend(a + (b - a) * np.arange(c) / c)
        pts.append(spans[-1][1])
        out = np.array(pts)
        if self.closed:
            out = out - out[0]
        return out


def _largest_remainder(targets: np.ndarray) -> np.ndarray:
    base = np.floor(targets).astype(int)
    base = np.maximum(base, 1)
    short = int(round(targets.sum())) - base.sum()
    if short > 0:
        order = np.argsort(-(targets - base))
        for i in order[:short]:
            base[i] += 1
    elif short < 0:
        order = np.argsort(targets - base)
        take = 0
        for i in order:
            if take == -short:
                break
            if base[i] > 1:
                base[i] -= 1
                take += 1
    return base


def circle(radius: float, center: tuple[float, float] = (0.0, 0.0)) -> Curve:
    """Positively oriented circle; parametrized by angle fraction."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    cx, cy = center

    def point(t):
        t = np.asarray(t, dtype=float)
        ang = 2.0 * np.pi * t
        return np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=-1)

    def velocity(t):
        t = np.asarray(t, dtype=float)
        ang = 2.0 * np.pi * t
        return 2.0 * np.pi * radius * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)

    return Curve(
        kind="parametrized-closed",
        point=point,
        velocity=velocity,
        diameter=2.0 * radius,
        descriptor={"type": "circle", "radius": radius, "center": [cx, cy]},
    )


def polygon(vertices, closed: bool = True) -> Curve:
    """Polygonal curve through ``vertices`` with arclength-proportional chart.

    Closed polygons must be simple and positively oriented (checked via the
    shoelace sign).  Open polygons represent arcs; the endpoints form the
    relative boundary.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 2:
        raise ValueError("vertices must be an (m, 2) array with m >= 2")
    pts = np.vstack([verts, verts[:1]]) if closed else verts
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= 0):
        raise ValueError("degenerate polygon side of zero length")
    total = seg_len.sum()
    if closed:
        area2 = float(np.sum(pts[:-1, 0] * pts[1:, 1] - pts[1:, 0] * pts[:-1, 1]))
        if area2 <= 0:
            raise ValueError("closed polygon must be simple and positively oriented")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)]) / total
    directions = seg / seg_len[:, None]

    def locate(t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seg_len) - 1)
        return t, idx

    def point(t):
        t, idx = locate(t)
        local = (t - cum[idx]) * total
        return pts[idx] + local[..., None] * directions[idx]

    def velocity(t):
        _, idx = locate(t)
        return total * directions[idx]

    interior_corners = tuple(cum[1:-1])
    corners = (0.0,) + interior_corners if closed else (0.0,) + interior_corners + (1.0,)
    dia = float(np.max(np.linalg.norm(verts[:, None, :] - verts[None, :, :], axis=-1)))
    return Curve(
        kind="closed-polygon" if closed else "open-polygon",
        point=point,
        velocity=velocity,
        corner_params=corners,
        diameter=dia,
        descriptor={"type": "polygon", "vertices": verts.tolist(), "closed": closed},
    )


def square(side: float, corner: tuple[float, float] = (0.0, 0.0)) -> Curve:
    x0, y0 = corner
    s = side
    return polygon([(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)], closed=True)


def slit(length: float = 0.5) -> Curve:
    """Open straight arc [0, length] x {0}."""
    return polygon([(0.0, 0.0), (length, 0.0)], closed=False)


def curve_from_descriptor(desc: dict) -> Curve:
    if desc is None:
        raise ValueError("curve has no serializable descriptor")
    kind = desc.get("type")
    if kind == "circle":
        return circle(desc["radius"], tuple(desc["center"]))
    if kind == "polygon":
        return polygon(desc["vertices"], closed=desc["closed"])
    raise ValueError(f"unknown curve descriptor type: {kind!r}")
