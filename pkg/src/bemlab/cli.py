"""Configuration-driven experiment runner.

Subcommands:

* ``run <config.json>``   execute one experiment, write CSV + manifest + summary
* ``table <csv...>``      merge run histories and print a comparison table with
                          experimental orders of convergence
* ``check``               run the built-in verification battery

Exit codes: 0 success, 1 configuration error (the offending field is named),
2 numerical failure (the failing stage is named).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import (
    HISTORY_COLUMNS,
    AdaptiveStep,
    EstimatorReport,
    adaptive_loop,
    estimate_etaV,
    estimate_etaW,
    history_csv,
    solve_hypersingular,
    solve_symm,
)
from .experiments import PRESETS
from .geometry import circle, polygon, slit, square
from .invlab import CONSTANT_COLUMNS, InequalitySpec, constant_sweep, projection_stability_ratios, sweep_tags
from .mesh import build_mesh
from .operators import Workspace, assemble_V, assemble_W
from .settings import DEFAULT, Settings
from .spaces import make_space

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["problem", "geometry"],
    "properties": {
        "problem": {"enum": ["symm", "hypersingular", "invlab", "projection-stability"]},
        "geometry": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["circle", "square", "slit", "polygon"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "side": {"type": "number", "exclusiveMinimum": 0},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "vertices": {"type": "array"},
                "closed": {"type": "boolean"},
            },
        },
        "rhs": {"enum": ["fourier", "constant"]},
        "degree": {"type": "integer", "minimum": 0},
        "degrees": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "tags": {"type": "array", "items": {"type": "string"}},
        "weight": {"enum": ["canonical", "mesh-width"]},
        "probes": {"type": "array", "items": {"type": "string"}},
        "refinement": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["uniform", "adaptive"]},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "theta": {"type": "number"},
                "initial": {"type": "integer", "minimum": 1},
                "dof_cap": {"type": "integer", "minimum": 1},
                "eta_tol": {"type": "number"},
            },
        },
        "seed": {"type": "integer"},
        "out_dir": {"type": "string"},
        "settings": {"type": "object"},
    },
}


class ConfigError(ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"invalid configuration field '{field}': {message}")


class StageError(RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"numerical failure in stage '{stage}': {message}")


def _validate_config(cfg: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(path, exc.message) from exc
    ref = cfg.get("refinement", {})
    if ref.get("mode") == "adaptive":
        theta = ref.get("theta")
        if theta is None or not (0.0 < theta <= 1.0):
            raise ConfigError("refinement.theta", "must lie in (0, 1]")


def _build_curve(geom: dict):
    kind = geom["type"]
    if kind == "circle":
        return circle(geom.get("radius", 0.4), tuple(geom.get("center", (0.0, 0.0))))
    if kind == "square":
        return square(geom.get("side", 0.5))
    if kind == "slit":
        return slit(geom.get("length", 0.5))
    return polygon(geom["vertices"], closed=geom.get("closed", True))


def _geometry_label(geom: dict) -> str:
    kind = geom["type"]
    if kind == "circle":
        return f"circle({geom.get('radius', 0.4)})"
    if kind == "square":
        return f"square({geom.get('side', 0.5)})"
    if kind == "slit":
        return f"slit({geom.get('length', 0.5)})"
    return "polygon"


def _settings_from(cfg: dict) -> Settings:
    return DEFAULT.override(**cfg.get("settings", {}))


def _probe_library(curve, names):
    """Named probe callables; periodic in the angle on closed curves,
    polynomial-trigonometric in the relative position on arcs."""
    probes = {}
    closed = curve.closed

    def angle(x):
        return np.arctan2(x[:, 1], x[:, 0])

    start = curve.point(np.array([0.0]))[0]
    end = curve.point(np.array([1.0]))[0] if not closed else None
    for name in names:
        kind, _, num = name.partition("-")
        k = int(num) if num else 2
        if closed:
            fn = (lambda kk: (lambda x: np.sin(kk * angle(x))))(k) if kind == "sin" else (
                (lambda kk: (lambda x: np.cos(kk * angle(x))))(k)
            )
        else:
            span = end - start

            def fn(x, kk=k, trig=np.sin if kind == "sin" else np.cos):
                s = ((x - start) @ span) / (span @ span)
                return trig(np.pi * kk * s)

        probes[name] = fn
    return probes


def _run_galerkin(cfg: dict, out_dir: Path, st: Settings) -> list[Path]:
    equation = cfg["problem"]
    rhs = cfg.get("rhs", "fourier")
    preset = PRESETS.get((equation, rhs))
    if preset is None:
        raise ConfigError("rhs", f"no preset for problem {equation!r} with rhs {rhs!r}")
    geom = cfg["geometry"]
    degree = int(cfg.get("degree", 0))
    if rhs == "fourier" and geom["type"] != "circle":
        raise ConfigError("rhs", "the fourier data preset needs a circle geometry")
    if rhs == "constant" and equation == "symm" and geom["type"] != "slit":
        raise ConfigError("rhs", "the constant-data preset is defined on the slit")
    if geom["type"] == "circle":
        problem = preset(geom.get("radius", 0.4), degree)
    else:
        problem = preset(geom.get("length", 0.5), degree)

    ref = cfg.get("refinement", {"mode": "uniform", "levels": [8, 16, 32, 64]})
    history: list[AdaptiveStep] = []
    if ref.get("mode", "uniform") == "adaptive":
        history = adaptive_loop(
            problem,
            theta=float(ref["theta"]),
            initial_n=int(ref.get("initial", 8)),
            dof_cap=int(ref.get("dof_cap", 400)),
            eta_tol=float(ref.get("eta_tol", st.eta_tol)),
            settings=st,
        )
    else:
        curve = problem.curve_factory()
        prev = None
        for lvl, n in enumerate(ref.get("levels", [8, 16, 32, 64])):
            mesh = build_mesh(curve, int(n))
            ws = Workspace(mesh, st)
            space = make_space(mesh, problem.space_kind, problem.degree)
            if equation == "symm":
                A = assemble_V(ws, space).matrix
                coeffs = solve_symm(ws, space, problem.f, V=A)
                rep = estimate_etaV(ws, space, coeffs, problem.grad_f, exact=problem.exact)
            else:
                A = assemble_W(ws, space).matrix
                coeffs = solve_hypersingular(ws, space, problem.f, W=A)
                rep = estimate_etaW(ws, space, coeffs, problem.f, exact_grad=problem.exact)
            if problem.energy_pairing is not None:
                err2 = problem.energy_pairing - float(coeffs @ (A @ coeffs))
                rep = EstimatorReport(
                    rep.indicators,
                    rep.tag,
                    error_l2_weighted=rep.error_l2_weighted,
                    error_energy=float(np.sqrt(max(err2, 0.0))),
                )
            eoc = None
            if prev is not None:
                eoc = float(np.log(prev[1] / rep.eta) / np.log(space.dim / prev[0]))
            history.append(AdaptiveStep(lvl, mesh, space, coeffs, rep, eoc))
            prev = (space.dim, rep.eta)
    path = out_dir / "history.csv"
    path.write_text(history_csv(history))
    summary = _history_summary(cfg, history)
    return [path], summary


def _history_summary(cfg, history) -> str:
    lines = [f"{cfg['problem']} on {_geometry_label(cfg['geometry'])}"]
    lines.append(f"{'level':>5} {'dofs':>6} {'eta':>14} {'eoc':>8}")
    for s in history:
        eoc = f"{s.eoc:8.3f}" if s.eoc is not None else "       -"
        lines.append(f"{s.level:>5} {s.dofs:>6} {s.report.eta:14.6e} {eoc}")
    return "\n".join(lines) + "\n"


def _run_invlab(cfg: dict, out_dir: Path, st: Settings) -> tuple[list[Path], str]:
    curve = _build_curve(cfg["geometry"])
    label = _geometry_label(cfg["geometry"])
    tags = cfg.get("tags", ["inv_slp_grad"])
    for t in tags:
        from .invlab import PENCIL_TAGS

        if t not in PENCIL_TAGS:
            raise ConfigError("tags", f"unknown pencil tag {t!r}")
    levels = cfg.get("levels", [8, 16, 32, 64, 128])
    degrees = cfg.get("degrees", [int(cfg.get("degree", 0))])
    weight = cfg.get("weight", "canonical")
    traces = sweep_tags(tags, curve, label, levels, degrees, weight=weight, settings=st)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONSTANT_COLUMNS)
    summary_lines = [f"inverse-estimate constants on {label} (weight: {weight})"]
    for (tag, q), trace in sorted(traces.items()):
        for r in trace.records:
            writer.writerow(
                [label, tag, r["level"], r["dofs"], r["q_min"], r["q_max"], f"{r['C']:.12e}", f"{r['residual']:.3e}"]
            )
        cs = trace.constants()
        tail = cs[-3:] if len(cs) >= 3 else cs
        lo = float(np.min(tail[np.nonzero(tail)])) if np.any(tail) else 0.0
        ratio = float(np.max(tail) / lo) if lo > 0 else float("nan")
        summary_lines.append(
            f"  {tag} q={q}: C = {np.array2string(cs, precision=4)}  tail max/min = {ratio:.3f}"
        )
    path = out_dir / "constants.csv"
    path.write_text(buf.getvalue())
    return [path], "\n".join(summary_lines) + "\n"


def _run_stability(cfg: dict, out_dir: Path, st: Settings) -> tuple[list[Path], str]:
    curve = _build_curve(cfg["geometry"])
    names = cfg.get("probes", ["sin-2", "cos-4"])
    probes = _probe_library(curve, names)
    levels = cfg.get("levels", [8, 16, 32, 64])
    rows = projection_stability_ratios(curve, levels, int(cfg.get("degree", 0)), probes, settings=st)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["probe", "projection", "level", "dofs", "ratio_grad", "ratio_adlp", "skipped"])
    for r in rows:
        writer.writerow(
            [
                r["probe"],
                r["projection"],
                r["level"],
                r["dofs"],
                "" if r["skipped"] else f"{r['ratio_grad']:.12e}",
                "" if r["skipped"] else f"{r['ratio_adlp']:.12e}",
                int(r["skipped"]),
            ]
        )
    path = out_dir / "stability.csv"
    path.write_text(buf.getvalue())
    lines = [f"projection stability on {_geometry_label(cfg['geometry'])}"]
    for r in rows:
        if not r["skipped"]:
            lines.append(
                f"  {r['probe']:>8} {r['projection']:>9} level {r['level']}: grad {r['ratio_grad']:.4f} adlp {r['ratio_adlp']:.4f}"
            )
    return [path], "\n".join(lines) + "\n"


def run_config(cfg: dict, out_dir: Path) -> int:
    _validate_config(cfg)
    st = _settings_from(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    timings = {}
    try:
        if cfg["problem"] in ("symm", "hypersingular"):
            paths, summary = _run_galerkin(cfg, out_dir, st)
        elif cfg["problem"] == "invlab":
            paths, summary = _run_invlab(cfg, out_dir, st)
        else:
            paths, summary = _run_stability(cfg, out_dir, st)
    except ConfigError:
        raise
    except np.linalg.LinAlgError as exc:
        raise StageError("linear-algebra", str(exc)) from exc
    timings["run"] = round(time.time() - t0, 3)
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(summary)
    manifest = {
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()
        ).hexdigest(),
        "seed": cfg.get("seed", 0),
        "versions": {
            "bemlab": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "timings": timings,
        "outputs": [
            {
                "path": p.name,
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
            }
            for p in list(paths) + [summary_path]
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return 0


def _read_history(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def merge_tables(paths) -> str:
    """Merge run histories on the level key and recompute convergence orders."""
    tables: dict[str, list] = {}
    for p in paths:
        name = Path(p).stem
        if name in tables:
            name = f"{name}#{len(tables)}"
        tables[name] = _read_history(Path(p))
    for rows in tables.values():
        if not rows or set(rows[0]) != set(HISTORY_COLUMNS):
            raise ValueError("incompatible history schema; expected columns " + ",".join(HISTORY_COLUMNS))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["level"]
    for name in tables:
        header += [f"{name}:dofs", f"{name}:eta", f"{name}:eoc"]
    writer.writerow(header)
    max_levels = max(len(rows) for rows in tables.values())
    eocs = {}
    for name, rows in tables.items():
        e = [""]
        for a, b in zip(rows[:-1], rows[1:]):
            num = np.log(float(a["eta"]) / float(b["eta"]))
            den = np.log(float(b["dofs"]) / float(a["dofs"]))
            e.append(f"{num / den:.6f}")
        eocs[name] = e
    for lvl in range(max_levels):
        row = [lvl]
        for name, rows in tables.items():
            if lvl < len(rows):
                row += [rows[lvl]["dofs"], rows[lvl]["eta"], eocs[name][lvl]]
            else:
                row += ["", "", ""]
        writer.writerow(row)
    return out.getvalue()


def _check_battery(quiet: bool) -> int:
    from .verification import run_all_checks

    failures = 0
    for name, ok, detail in run_all_checks():
        if not ok:
            failures += 1
        if not quiet or not ok:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    print(f"{'all checks passed' if failures == 0 else f'{failures} check(s) failed'}")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bemlab", description=__doc__)
    parser.add_argument("--out-dir", default=None, help="output directory for run artifacts")
    parser.add_argument("--seed", type=int, default=None, help="seed override for randomized checks")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment configuration")
    p_run.add_argument("config", type=Path)
    p_table = sub.add_parser("table", help="merge history CSVs into a comparison table")
    p_table.add_argument("csvs", nargs="+")
    sub.add_parser("check", help="run the verification battery")
    args = parser.parse_args(argv)

    if args.threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            pass

    if args.command == "check":
        return _check_battery(args.quiet)
    if args.command == "table":
        try:
            sys.stdout.write(merge_tables(args.csvs))
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = Path(args.out_dir or cfg.get("out_dir", "runs/" + Path(args.config).stem))
    try:
        code = run_config(cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        print((out_dir / "summary.txt").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
