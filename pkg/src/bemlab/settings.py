"""Numerical parameters shared across assembly, traces, and the lab.

Defaults are validated by the test suite; experiment configs may override
individual fields.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Settings:
    far_order: int = 16  # Gauss order for well-separated element pairs
    self_order: int = 24  # panel order for singular self-element integrals
    duffy_order: int = 16  # tensor order after a Duffy split
    log_order: int = 16  # order of the log-weighted rules
    graded_order: int = 16  # Gauss order per graded panel
    graded_ratio: float = 0.15  # geometric grading toward the singularity
    graded_depth: int = 20
    near_factor: float = 0.5  # pairs with dist < near_factor*(h+h') get upgraded
    neighbor_cap: float = 2.0  # closure cap for refine()
    trace_quad_extra: int = 6  # pencil quadrature order = 2q + extra
    norm_quad_extra: int = 4  # estimator quadrature order = 2q + extra
    dof_cap: int = 5000
    eta_tol: float = 1e-8
    dim_cap: int = 4096

    def override(self, **kwargs) -> "Settings":
        known = {f.name for f in fields(self)}
        bad = set(kwargs) - known
        if bad:
            raise ValueError(f"unknown settings: {sorted(bad)}")
        return replace(self, **kwargs)


DEFAULT = Settings()
