"""Pointwise on-boundary traces of the layer operators.

Evaluates, at reference points strictly inside an element, the traces

* ``V``       single-layer value,
* ``gradV``   arclength derivative of the single-layer trace,
* ``K``       double-layer boundary integral,
* ``gradK``   arclength derivative of the double-layer trace,
* ``Kprime``  adjoint double layer (kernel quadrature minus one half),
* ``W``       hypersingular trace via  W u = -(d/ds) V(du/ds).

Far elements are handled by one vectorized kernel product, close elements by
graded composite rules, and the singular self element by explicit splits:
the logarithmic kernel is split into log|t - t0| plus a smooth remainder,
and the Cauchy-type gradient kernel is regularized by subtracting the
density value at the target, which removes the principal value in favor of
a one-dimensional pole with a closed-form integral.
"""

from __future__ import annotations

import logging

import numpy as np

from .operators import Workspace, _kernel_block
from .quadrature import gauss_rule, graded_rule, log_gauss_rule
from .settings import DEFAULT, Settings
from .spaces import DiscreteSpace

__all__ = ["trace_matrix", "trace_apply", "eval_trace", "TRACE_OPS"]

logger = logging.getLogger(__name__)

INV_2PI = 1.0 / (2.0 * np.pi)

TRACE_OPS = ("V", "gradV", "K", "gradK", "Kprime", "W")

_KERNEL_OPS = ("V", "gradV", "K", "gradK", "Kprime")


def _get_ws(ws_or_mesh) -> Workspace:
    return ws_or_mesh if isinstance(ws_or_mesh, Workspace) else Workspace(ws_or_mesh)


def _basis_weights_cached(ws: Workspace, space: DiscreteSpace, order: int) -> np.ndarray:
    cache = getattr(ws, "_bw_cache", None)
    if cache is None:
        cache = {}
        ws._bw_cache = cache
    key = (id(space), order)
    if key not in cache:
        cache[key] = ws.basis_weight_matrix(space, order)
    return cache[key]


def _corrected_cached(ws: Workspace) -> np.ndarray:
    if getattr(ws, "_corrected", None) is None:
        ws._corrected = ws.corrected_pairs()
    return ws._corrected


def _shared_node_param(mesh, eid: int, jid: int) -> float | None:
    """Local parameter in element j of a node shared with element i, if any."""
    ei, ej = mesh.elements[eid], mesh.elements[jid]
    if ej.node_left in (ei.node_left, ei.node_right):
        return 0.0
    if ej.node_right in (ei.node_left, ei.node_right):
        return 1.0
    return None


def _nearest_params(elem, X: np.ndarray) -> np.ndarray:
    t = np.linspace(0.0, 1.0, 33)
    pts = elem.point(t)
    d = np.sum((X[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    return t[np.argmin(d, axis=1)]


def _rows_from_rule(op, elem, rule_pts, rule_wts, X, tauX, nuX, space, jid):
    y = elem.point(rule_pts)
    nuY = elem.normal(rule_pts)
    jac = elem.jacobian(rule_pts)
    kern = _kernel_block(op, X, tauX, nuX, y, nuY)
    basis = space.basis_table(jid, rule_pts)
    return kern @ (basis * (rule_wts * jac)).T  # (npts, local_dim)


def _self_rows(op, ws, space, eid, tloc):
    """Singular self-element contribution at reference points tloc."""
    st = ws.settings
    elem = ws.mesh.elements[eid]
    p = len(tloc)
    ld = space.local_dim(eid)
    rows = np.zeros((p, ld))
    if op in ("K", "gradK", "Kprime") and elem.is_straight:
        return rows
    g = gauss_rule(st.self_order)
    lg = log_gauss_rule(st.log_order)
    X = elem.point(tloc)
    tauX = elem.tangent(tloc)
    nuX = elem.normal(tloc)
    for k, t0 in enumerate(tloc):
        panels = ((0.0, t0, t0 * (1.0 - g.points)), (t0, 1.0 - t0, t0 + (1.0 - t0) * g.points))
        if op == "V":
            for start, span, tpts in panels:
                if span <= 0.0:
                    continue
                f = space.basis_table(eid, tpts) * elem.jacobian(tpts)  # (ld, m)
                # integral of f * log|t - t0| over the panel
                rows[k] += -INV_2PI * span * (np.log(span) * (f @ g.weights))
                tlog = t0 * (1.0 - lg.points) if start == 0.0 else t0 + (1.0 - t0) * lg.points
                flog = space.basis_table(eid, tlog) * elem.jacobian(tlog)
                rows[k] += INV_2PI * span * (flog @ lg.weights)  # minus the log(1/u) weight
                # smooth remainder log(r / |t - t0|)
                r = np.linalg.norm(elem.point(tpts) - X[k], axis=1)
                smooth = np.log(r / np.abs(tpts - t0))
                rows[k] += -INV_2PI * span * (f @ (g.weights * smooth))
        elif op == "gradV":
            b0 = space.basis_table(eid, np.array([t0]))[:, 0]
            for start, span, tpts in panels:
                if span <= 0.0:
                    continue
                kern = _kernel_block("gradV", X[k : k + 1], tauX[k : k + 1], None, elem.point(tpts), None)[0]
                f = space.basis_table(eid, tpts) * (kern * elem.jacobian(tpts))
                pole = np.outer(b0, INV_2PI / (tpts - t0))
                rows[k] += span * ((f - pole) @ g.weights)
            rows[k] += b0 * (INV_2PI * np.log((1.0 - t0) / t0))
        else:
            for start, span, tpts in panels:
                if span <= 0.0:
                    continue
                kern = _kernel_block(
                    op, X[k : k + 1], tauX[k : k + 1], nuX[k : k + 1], elem.point(tpts), elem.normal(tpts)
                )[0]
                f = space.basis_table(eid, tpts) * (kern * elem.jacobian(tpts))
                rows[k] += span * (f @ g.weights)
    return rows


def _near_rows(op, ws, space, jid, X, tauX, nuX, tstars):
    """Close but non-self source element; graded quadrature toward tstars."""
    st = ws.settings
    elem = ws.mesh.elements[jid]
    rows = np.zeros((len(X), space.local_dim(jid)))
    groups: dict[float, list[int]] = {}
    for k, t in enumerate(tstars):
        groups.setdefault(round(float(t), 6), []).append(k)
    for tstar, idx in groups.items():
        rule = graded_rule(st.graded_order, tstar, st.graded_ratio, st.graded_depth)
        idx = np.array(idx)
        rows[idx] = _rows_from_rule(
            op, elem, rule.points, rule.weights, X[idx], tauX[idx], nuX[idx], space, jid
        )
    return rows


def _element_rows(ws: Workspace, space: DiscreteSpace, op: str, eid: int, tloc: np.ndarray) -> np.ndarray:
    """Rows of the trace matrix for points on one element: (len(tloc), space.dim)."""
    st = ws.settings
    mesh = ws.mesh
    order = st.far_order
    tab = ws.tables(order)
    n = mesh.n_elements
    elem = mesh.elements[eid]
    X = elem.point(tloc)
    tauX = elem.tangent(tloc)
    nuX = elem.normal(tloc)
    corrected = _corrected_cached(ws)[eid]

    nodes = tab["pts"].reshape(n * order, 2)
    nuY = tab["nu"].reshape(n * order, 2)
    kern = _kernel_block(op, X, tauX, nuX, nodes, nuY)
    for j in np.where(corrected)[0]:
        kern[:, j * order : (j + 1) * order] = 0.0
    E = kern @ _basis_weights_cached(ws, space, order)

    for j in np.where(corrected)[0]:
        j = int(j)
        dofs = space.global_dofs(j)
        if j == eid:
            block = _self_rows(op, ws, space, eid, tloc)
        else:
            shared = _shared_node_param(mesh, eid, j)
            if shared is not None:
                tstars = np.full(len(tloc), shared)
            else:
                tstars = _nearest_params(mesh.elements[j], X)
            block = _near_rows(op, ws, space, j, X, tauX, nuX, tstars)
        for loc, g in enumerate(dofs):
            if g >= 0:
                E[:, g] += block[:, loc]
    if op == "Kprime":
        basis = space.basis_table(eid, tloc)
        dofs = space.global_dofs(eid)
        for loc, g in enumerate(dofs):
            if g >= 0:
                E[:, g] += -0.5 * basis[loc]
    return E


def trace_matrix(ws_or_mesh, space: DiscreteSpace, op: str, tloc) -> np.ndarray:
    """Matrix of trace values (point, dof): row p holds (L phi_j)(x_p).

    Points are the reference locations ``tloc`` replicated on every element,
    ordered element by element.
    """
    ws = _get_ws(ws_or_mesh)
    tloc = np.asarray(tloc, dtype=float)
    if op == "W":
        dspace = space.derivative_space()
        return -trace_matrix(ws, dspace, "gradV", tloc) @ space.derivative_map
    if op not in _KERNEL_OPS:
        raise ValueError(f"unknown trace operator {op!r}")
    p = len(tloc)
    E = np.empty((ws.mesh.n_elements * p, space.dim))
    for eid in range(ws.mesh.n_elements):
        E[eid * p : (eid + 1) * p] = _element_rows(ws, space, op, eid, tloc)
    return E


def trace_apply(ws_or_mesh, space: DiscreteSpace, op: str, coeffs, tloc) -> np.ndarray:
    """Trace values of a discrete density at ``tloc`` on every element.

    Streams element by element, so memory stays linear in the mesh size.
    """
    ws = _get_ws(ws_or_mesh)
    tloc = np.asarray(tloc, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if op == "W":
        dspace = space.derivative_space()
        return trace_apply(ws, dspace, "gradV", -(space.derivative_map @ coeffs), tloc)
    p = len(tloc)
    out = np.empty(ws.mesh.n_elements * p)
    for eid in range(ws.mesh.n_elements):
        out[eid * p : (eid + 1) * p] = _element_rows(ws, space, op, eid, tloc) @ coeffs
    return out


def eval_trace(ws_or_mesh, op: str, space: DiscreteSpace, coeffs, eid: int, ref_points) -> np.ndarray:
    """Trace values on one element at interior reference points.

    Points at a node are offset inward by 1e-12 and flagged in the log.
    """
    ws = _get_ws(ws_or_mesh)
    t = np.atleast_1d(np.asarray(ref_points, dtype=float)).copy()
    at_node = (t <= 0.0) | (t >= 1.0)
    if np.any(at_node):
        logger.warning("trace evaluation at a node; offsetting %d point(s) inward", int(at_node.sum()))
        t = np.clip(t, 1e-12, 1.0 - 1e-12)
    coeffs = np.asarray(coeffs, dtype=float)
    if op == "W":
        dspace = space.derivative_space()
        return eval_trace(ws, "gradV", dspace, -(space.derivative_map @ coeffs), eid, t)
    if op not in _KERNEL_OPS:
        raise ValueError(f"unknown trace operator {op!r}")
    return _element_rows(ws, space, op, eid, t) @ coeffs
