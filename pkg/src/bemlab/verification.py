"""Built-in verification battery behind ``bemlab check``.

Quick self-contained checks of the quadrature rules, geometry, operator
identities, pencil solver, and marking; each returns a pass flag plus a
one-line detail.  The full property suite lives in the test directory; this
battery is the installable subset.
"""

from __future__ import annotations

import numpy as np

from .estimators import EstimatorReport, doerfler_mark
from .geometry import circle, polygon, square
from .invlab import InequalitySpec, build_pencil
from .mesh import build_mesh
from .norms import solve_pencil
from .operators import Workspace, assemble_K, assemble_Kprime, assemble_V, assemble_W, mass_matrix
from .potentials import eval_double_layer, eval_single_layer
from .quadrature import gauss_rule, log_gauss_rule
from .spaces import make_space


def _check_quadrature():
    g = gauss_rule(8)
    err = abs(g.integrate(lambda t: t**15) - 1.0 / 16.0)
    lg = log_gauss_rule(4)
    err = max(
        err,
        abs(lg.integrate(lambda t: np.ones_like(t)) - 1.0),
        abs(lg.integrate(lambda t: t) - 0.25),
        abs(lg.integrate(lambda t: t**2) - 1.0 / 9.0),
    )
    return err < 1e-13, f"max rule error {err:.2e}"


def _check_mesh():
    m = build_mesh(circle(0.4), 16)
    err = abs(m.h_vector[0] - 2 * 0.4 * np.sin(np.pi / 16))
    err = max(err, abs(m.arclength() - 2 * np.pi * 0.4))
    patch_ok = max(len(m.patch(i)) for i in range(16)) == 3
    return err < 1e-9 and patch_ok, f"chord/coverage error {err:.2e}"


def _check_v_anchor():
    m = build_mesh(polygon([(0.0, 0.0), (1.0, 0.0)], closed=False), 1)
    V = assemble_V(m, make_space(m, "Pq", 0))
    err = abs(V.matrix[0, 0] - 3.0 / (4.0 * np.pi))
    return err < 1e-10, f"unit-segment entry error {err:.2e}"


def _check_potential():
    a = 0.4
    m = build_mesh(circle(a), 32)
    P0 = make_space(m, "Pq", 0)
    val = eval_single_layer(P0, np.ones(32), np.array([[0.0, 0.0]]))
    err = abs(val - (-a * np.log(a)))
    return err < 1e-8, f"center potential error {err:.2e}"


def _check_identities():
    a = 0.4
    m = build_mesh(circle(a), 16)
    ws = Workspace(m)
    P0 = make_space(m, "Pq", 0)
    S1 = make_space(m, "Sq1", 0)
    ones_s = np.ones(S1.dim)
    K = assemble_K(ws, S1, P0)
    M = mass_matrix(S1, P0)
    errK = np.max(np.abs(K.matrix @ ones_s + 0.5 * M.matrix @ ones_s))
    W = assemble_W(ws, S1)
    errW = np.max(np.abs(W.matrix @ ones_s))
    dl_in = eval_double_layer(S1, ones_s, np.array([[0.05, -0.1]]))
    dl_out = eval_double_layer(S1, ones_s, np.array([[0.9, 0.4]]))
    errD = max(abs(dl_in + 1.0), abs(dl_out))
    ok = errK < 1e-8 and errW < 1e-10 and errD < 1e-8
    return ok, f"K/W/jump errors {errK:.1e} {errW:.1e} {errD:.1e}"


def _check_kprime_flat():
    m = build_mesh(square(0.5), 8)
    P1 = make_space(m, "Pq", 1)
    Kp = assemble_Kprime(m, P1)
    M = mass_matrix(P1)
    worst = 0.0
    for e in range(8):
        dofs = P1.global_dofs(e)
        blk = Kp.matrix[np.ix_(dofs, dofs)] + 0.5 * M.matrix[np.ix_(dofs, dofs)]
        worst = max(worst, float(np.max(np.abs(blk))))
    return worst == 0.0, f"flat self-block defect {worst:.1e}"


def _check_pencil():
    m = build_mesh(polygon([(0.0, 0.0), (1.0, 0.0)], closed=False), 1)
    B, A = build_pencil(InequalitySpec("inv_l2", 0), m)
    r = solve_pencil(B, A)
    err = abs(r.constant - np.sqrt(4.0 * np.pi / 3.0))
    rng = np.random.default_rng(0)
    S = rng.normal(size=(6, 6)) + 4 * np.eye(6)
    Br = rng.normal(size=(6, 6))
    Br = Br @ Br.T
    Ar = rng.normal(size=(6, 6))
    Ar = Ar @ Ar.T + 6 * np.eye(6)
    drift = abs(
        solve_pencil(S.T @ Br @ S, S.T @ Ar @ S).lambda_max - solve_pencil(Br, Ar).lambda_max
    ) / solve_pencil(Br, Ar).lambda_max
    return err < 1e-12 and drift < 1e-9, f"anchor {err:.1e}, congruence drift {drift:.1e}"


def _check_doerfler():
    rng = np.random.default_rng(1)
    ind = rng.random(10)
    rep = EstimatorReport(ind, "etaV")
    marked = doerfler_mark(rep, 0.4)
    # brute force minimality
    best = None
    from itertools import combinations

    tot = np.sum(ind**2)
    for k in range(1, 11):
        for combo in combinations(range(10), k):
            if np.sum(ind[list(combo)] ** 2) >= 0.4 * tot - 1e-14 * tot:
                best = k
                break
        if best:
            break
    return len(marked) == best, f"marked {len(marked)}, minimal {best}"


def _check_harmonicity():
    a = 0.4
    m = build_mesh(circle(a), 16)
    P0 = make_space(m, "Pq", 0)
    rng = np.random.default_rng(2)
    coeffs = rng.normal(size=16)
    worst = 0.0
    hstep = 1e-3
    for x in (np.array([0.1, 0.05]), np.array([0.8, 0.3])):
        stencil = np.array([x, x + [hstep, 0], x - [hstep, 0], x + [0, hstep], x - [0, hstep]])
        u = eval_single_layer(P0, coeffs, stencil)
        lap = (u[1] + u[2] + u[3] + u[4] - 4 * u[0]) / hstep**2
        worst = max(worst, abs(lap))
    return worst < 1e-4, f"FD Laplacian {worst:.1e}"


CHECKS = [
    ("quadrature exactness", _check_quadrature),
    ("mesh geometry", _check_mesh),
    ("single-layer anchor", _check_v_anchor),
    ("potential at center", _check_potential),
    ("operator identities", _check_identities),
    ("adjoint flat blocks", _check_kprime_flat),
    ("pencil solver", _check_pencil),
    ("marking minimality", _check_doerfler),
    ("potential harmonicity", _check_harmonicity),
]


def run_all_checks():
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # surface the failure, keep the battery going
            ok, detail = False, f"exception: {exc}"
        results.append((name, ok, detail))
    return results
