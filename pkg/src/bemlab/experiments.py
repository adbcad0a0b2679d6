"""Experiment presets: geometries and right-hand sides with analytic data.

On a circle of radius a the layer operators diagonalize over trigonometric
polynomials in the angle:

    V[cos k.] = (a / 2k) cos k.   (k >= 1),     V[1] = -a log a,
    W[cos k.] = (k / 2a) cos k.,                W[1] = 0,

which provides exact solutions, exact energy pairings <f, solution>, and
analytic data gradients for the efficiency and convergence studies.  The
slit problems use constant data; the energy of the exact slit density is
known in closed form even though the density itself is not square
integrable near the tips.
"""

from __future__ import annotations

import numpy as np

from .estimators import ProblemRun
from .geometry import circle, slit

__all__ = ["symm_circle_fourier", "hyp_circle_fourier", "symm_slit_constant", "hyp_slit_constant", "PRESETS"]

_RADIUS = 0.4
_SLIT_LENGTH = 0.5


def _angle(center):
    cx, cy = center

    def theta(x):
        return np.arctan2(x[:, 1] - cy, x[:, 0] - cx)

    return theta


def symm_circle_fourier(radius: float = _RADIUS, degree: int = 0) -> ProblemRun:
    """V phi = f with phi = 1 + cos(2t) + 0.5 sin(3t) on a circle."""
    a = radius
    th = _angle((0.0, 0.0))

    def phi(x):
        t = th(x)
        return 1.0 + np.cos(2 * t) + 0.5 * np.sin(3 * t)

    def f(x):
        t = th(x)
        return -a * np.log(a) + (a / 4.0) * np.cos(2 * t) + (a / 12.0) * np.sin(3 * t)

    def grad_f(x):
        # arclength derivative: d/ds = (1/a) d/dt
        t = th(x)
        return -(0.5) * np.sin(2 * t) + (1.0 / 4.0) * np.cos(3 * t)

    pairing = 2 * np.pi * a * (-a * np.log(a)) + np.pi * a * ((a / 4.0) + 0.25 * (a / 6.0))
    return ProblemRun(
        equation="symm",
        curve_factory=lambda: circle(a),
        f=f,
        grad_f=grad_f,
        exact=phi,
        energy_pairing=float(pairing),
        space_kind="Pq",
        degree=degree,
        label=f"circle({a})",
    )


def hyp_circle_fourier(radius: float = _RADIUS, degree: int = 0) -> ProblemRun:
    """W u = f with u = cos(2t) + 0.5 sin(3t) (zero mean) on a circle."""
    a = radius
    th = _angle((0.0, 0.0))

    def grad_u(x):
        t = th(x)
        return (-2.0 * np.sin(2 * t) + 1.5 * np.cos(3 * t)) / a

    def f(x):
        t = th(x)
        return (1.0 / a) * np.cos(2 * t) + (3.0 / (4.0 * a)) * np.sin(3 * t)

    pairing = np.pi * a * ((1.0 / a) + 0.25 * (3.0 / (2.0 * a)))
    return ProblemRun(
        equation="hypersingular",
        curve_factory=lambda: circle(a),
        f=f,
        exact=grad_u,
        energy_pairing=float(pairing),
        space_kind="Sq1",
        degree=degree,
        label=f"circle({a})",
    )


def symm_slit_constant(length: float = _SLIT_LENGTH, degree: int = 0) -> ProblemRun:
    """V phi = 1 on a straight slit; the density blows up like an inverse
    square root at the tips, so adaptive refinement pays off.

    The energy <phi, 1> = 2 pi / log(4 / length) is known exactly.
    """
    ell = length

    def f(x):
        return np.ones(len(x))

    def grad_f(x):
        return np.zeros(len(x))

    pairing = 2.0 * np.pi / np.log(4.0 / ell)
    return ProblemRun(
        equation="symm",
        curve_factory=lambda: slit(ell),
        f=f,
        grad_f=grad_f,
        exact=None,
        energy_pairing=float(pairing),
        space_kind="Pq",
        degree=degree,
        label=f"slit({ell})",
    )


def hyp_slit_constant(length: float = _SLIT_LENGTH, degree: int = 0) -> ProblemRun:
    """W u = 1 on a straight slit with zero-trace continuous elements."""
    ell = length

    def f(x):
        return np.ones(len(x))

    return ProblemRun(
        equation="hypersingular",
        curve_factory=lambda: slit(ell),
        f=f,
        exact=None,
        energy_pairing=None,
        space_kind="Sq1_tilde",
        degree=degree,
        label=f"slit({ell})",
    )


PRESETS = {
    ("symm", "fourier"): symm_circle_fourier,
    ("symm", "constant"): symm_slit_constant,
    ("hypersingular", "fourier"): hyp_circle_fourier,
    ("hypersingular", "constant"): hyp_slit_constant,
}
