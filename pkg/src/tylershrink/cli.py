"""Command line front end: data generation, fitting, selection, benchmarks.

CSV and JSON layouts are documented in FORMATS.md at the repository
root. Every JSON artifact embeds a run manifest recording the command,
its resolved parameters, input digests, and timestamps, so a result can
be tied back to the exact invocation that produced it. With timestamps
set aside, identical manifests produce identical numbers.
"""

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, CsvFormatError, NotPositiveDefiniteError
from .scatter import FitConfig, ScatterMatrix, normalize_samples, rtme_fit, tme_fit
from .synth import EllipticalSpec, RadialLaw, sample_elliptical, toeplitz_scatter
from .cvl import AlphaGrid, select_alpha_bisection, select_alpha_grid
from .metrics import bench_exact_vs_approx, nmse_sweep

# Guard for the exact selector: n leave-one-out refits per grid point
# get slow past this many rows, so `bench` insists on --force beyond it.
EXACT_GUARD_N = 1000


# ---------------------------------------------------------------------------
# CSV exchange


def load_csv_samples(path, center=False, skip_header=False):
    """Read a rectangular numeric CSV into an (n, p) float array.

    Parameters
    ----------
    path : str or Path
    center : bool
        Subtract the per-column mean after parsing.
    skip_header : bool
        Ignore the first line of the file.

    Returns
    -------
    (n, p) float ndarray

    Raises
    ------
    CsvFormatError
        Empty file, ragged row, or non-numeric cell. Messages name the
        offending row and column with 1-based file positions.
    OSError
        Missing or unreadable file.
    """
    text = Path(path).read_text()
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if skip_header and lineno == 1:
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise CsvFormatError(
                f"{path}: row {lineno} has {len(cells)} columns, expected {width}"
            )
        parsed = []
        for col, cell in enumerate(cells, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise CsvFormatError(
                    f"{path}: row {lineno}, column {col}: "
                    f"cannot parse {cell.strip()!r} as a number"
                ) from None
        rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: empty file, no data rows")
    arr = np.array(rows, dtype=float)
    if center:
        arr = arr - arr.mean(axis=0)
    return arr


def write_csv_rows(path, rows, header=None):
    """Write a numeric table with shortest round-trip decimal rendering.

    repr() of a Python float is the shortest string that parses back to
    the same double, so generate -> load round trips are bit exact.
    """
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in np.asarray(rows, dtype=float):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Run manifests


@dataclass
class RunManifest:
    """Provenance block embedded in every JSON artifact."""

    command: str
    params: dict
    seed: int | None
    tool_version: str
    input_digest: dict | None
    started_at: str
    finished_at: str

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "input_digest": self.input_digest,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _digest_files(paths) -> dict | None:
    out = {}
    for p in paths:
        if p is None:
            continue
        out[str(p)] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
    return out or None


def _finish_manifest(command, params, seed, inputs, started_at) -> dict:
    return RunManifest(
        command=command,
        params=params,
        seed=seed,
        tool_version=__version__,
        input_digest=_digest_files(inputs),
        started_at=started_at,
        finished_at=_utc_now(),
    ).as_dict()


def _emit_json(payload, out):
    text = json.dumps(payload, indent=2)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + "\n")


def _num(x):
    """JSON-safe scalar: NaN and infinities become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _matrix_lists(S: ScatterMatrix):
    return [[float(v) for v in row] for row in S.entries]


# ---------------------------------------------------------------------------
# Shared construction helpers


def _make_spec(args) -> EllipticalSpec:
    return EllipticalSpec(
        p=args.p,
        n=args.n,
        scatter=toeplitz_scatter(args.p, args.gamma),
        radial=RadialLaw.parse(args.radial),
        seed=args.seed,
    )


def _grid_for(args, n, p) -> AlphaGrid:
    """Build the search grid, honoring explicit endpoint overrides."""
    if args.grid < 2:
        raise ValueError(f"--grid needs at least 2 points, got {args.grid}")
    base = AlphaGrid.uniform(args.grid, n=n, p=p)
    lo = args.alpha_min if getattr(args, "alpha_min", None) is not None else base.values[0]
    hi = args.alpha_max if getattr(args, "alpha_max", None) is not None else base.values[-1]
    if lo == base.values[0] and hi == base.values[-1]:
        return base
    vals = lo + (hi - lo) * np.arange(args.grid) / (args.grid - 1)
    return AlphaGrid(values=tuple(float(v) for v in vals), lower_bound=base.lower_bound)


def _curve_payload(curve) -> dict:
    return {
        "method": curve.method,
        "points": [
            {
                "alpha": pt.alpha,
                "loss": pt.loss,
                "rfpi_calls": pt.rfpi_calls,
                "wall_time_ns": pt.wall_time_ns,
            }
            for pt in curve.points
        ],
        "argmin_alpha": curve.argmin_alpha,
        "argmin_loss": curve.argmin_loss,
        "total_rfpi_calls": curve.total_rfpi_calls,
        "total_wall_time_ns": curve.total_wall_time_ns,
    }


def _bench_payload(report) -> dict:
    s = report.setting
    return {
        "setting": {
            "p": s.p,
            "n": s.n,
            "gamma": _num(s.gamma),
            "radial": s.radial,
            "seed": s.seed,
            "m": s.m,
        },
        "exact_time_ns": report.exact_time_ns,
        "approx_time_ns": report.approx_time_ns,
        "speedup": report.speedup,
        "exact_calls": report.exact_calls,
        "approx_calls": report.approx_calls,
        "argmin_exact": report.argmin_exact,
        "argmin_approx": report.argmin_approx,
    }


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_generate(args) -> int:
    raw = sample_elliptical(_make_spec(args))
    write_csv_rows(args.out, raw.rows)
    return 0


def _cmd_fit(args) -> int:
    started = _utc_now()
    arr = load_csv_samples(args.infile, center=args.center, skip_header=args.header)
    X = normalize_samples(arr)
    target = None
    target_path = None
    if args.target != "identity":
        target_path = args.target
        target = ScatterMatrix(load_csv_samples(target_path))
    if args.alpha == "auto":
        probe = FitConfig(alpha=0.5, target=target, tol=args.tol, max_iter=args.max_iter)
        grid = AlphaGrid.uniform(50, n=X.n, p=X.p)
        curve = select_alpha_grid(X, grid, probe, method="approximate", threads=args.threads)
        alpha = curve.argmin_alpha
        alpha_mode = "auto"
    else:
        alpha = float(args.alpha)
        alpha_mode = "fixed"
    cfg = FitConfig(alpha=alpha, target=target, tol=args.tol, max_iter=args.max_iter)
    report = tme_fit(X, cfg) if alpha == 0.0 else rtme_fit(X, cfg)
    params = {
        "in": str(args.infile),
        "alpha": alpha,
        "alpha_mode": alpha_mode,
        "target": args.target,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "center": args.center,
        "header": args.header,
        "threads": args.threads,
        "rows_dropped": X.dropped,
    }
    payload = {
        "manifest": _finish_manifest("fit", params, None, [args.infile, target_path], started),
        "estimate": _matrix_lists(report.estimate),
        "iterations": report.iterations,
        "final_step": report.final_step,
        "fixed_point_residual": report.fixed_point_residual,
        "wall_time_ns": report.wall_time_ns,
        "warnings": list(report.warnings),
    }
    _emit_json(payload, args.out)
    return 0


def _cmd_select_alpha(args) -> int:
    started = _utc_now()
    arr = load_csv_samples(args.infile, center=args.center, skip_header=args.header)
    X = normalize_samples(arr)
    params = {
        "in": str(args.infile),
        "method": args.method,
        "center": args.center,
        "header": args.header,
        "threads": args.threads,
    }
    if args.bisect is not None:
        if args.method == "exact":
            raise ValueError("--bisect searches the approximate loss; it cannot be "
                             "combined with --method exact")
        base = AlphaGrid.uniform(2, n=X.n, p=X.p)
        lo = args.alpha_min if args.alpha_min is not None else base.values[0]
        hi = args.alpha_max if args.alpha_max is not None else base.values[-1]
        res = select_alpha_bisection(X, (lo, hi), args.bisect)
        params.update({"bisect": args.bisect, "alpha_min": lo, "alpha_max": hi})
        payload = {
            "manifest": _finish_manifest("select-alpha", params, args.seed,
                                         [args.infile], started),
            "method": "bisect",
            "alpha": res.alpha,
            "loss": res.loss,
            "iterations": res.iterations,
            "evaluations": res.evaluations,
            "fell_back": res.fell_back,
        }
    else:
        grid = _grid_for(args, X.n, X.p)
        curve = select_alpha_grid(X, grid, method=args.method, threads=args.threads)
        params.update({
            "grid": args.grid,
            "alpha_min": grid.values[0],
            "alpha_max": grid.values[-1],
        })
        payload = {
            "manifest": _finish_manifest("select-alpha", params, args.seed,
                                         [args.infile], started),
        }
        payload.update(_curve_payload(curve))
    _emit_json(payload, args.out)
    return 0


def _sweep_csv_rows(sweep):
    acvl = next((s for s in sweep.selected if s.label == "acvl"), None)
    rows = []
    for pt in sweep.points:
        mark = 1.0 if acvl is not None and pt.alpha == acvl.alpha else 0.0
        rows.append((pt.alpha, pt.nmse, mark))
    return rows


def _sweep_payload(sweep) -> dict:
    return {
        "points": [{"alpha": pt.alpha, "nmse": pt.nmse} for pt in sweep.points],
        "oracle_alpha": sweep.oracle_alpha,
        "oracle_nmse": sweep.oracle_nmse,
        "selected": [
            {"label": s.label, "alpha": s.alpha, "nmse": s.nmse}
            for s in sweep.selected
        ],
    }


def _cmd_nmse_sweep(args) -> int:
    started = _utc_now()
    spec = _make_spec(args)
    grid = AlphaGrid.uniform(args.grid, n=args.n, p=args.p)
    sweep = nmse_sweep(spec, grid)
    params = {
        "p": args.p, "n": args.n, "gamma": args.gamma,
        "radial": args.radial, "grid": args.grid, "out": str(args.out),
    }
    write_csv_rows(f"{args.out}.csv", _sweep_csv_rows(sweep),
                   header=("alpha", "nmse", "acvl_selected"))
    payload = {"manifest": _finish_manifest("nmse-sweep", params, args.seed, [], started)}
    payload.update(_sweep_payload(sweep))
    _emit_json(payload, f"{args.out}.json")
    return 0


def _cmd_bench(args) -> int:
    started = _utc_now()
    if args.n > EXACT_GUARD_N and not args.force:
        raise ValueError(
            f"n={args.n} exceeds the exact-selector guard ({EXACT_GUARD_N}); "
            "pass --force to run anyway"
        )
    spec = _make_spec(args)
    grid = AlphaGrid.uniform(args.grid, n=args.n, p=args.p)
    report = bench_exact_vs_approx(spec, grid, threads=args.threads)
    params = {
        "p": args.p, "n": args.n, "gamma": args.gamma, "radial": args.radial,
        "grid": args.grid, "threads": args.threads, "force": args.force,
    }
    payload = {"manifest": _finish_manifest("bench", params, args.seed, [], started)}
    payload.update(_bench_payload(report))
    _emit_json(payload, args.out)
    return 0


def _reproduce_curves(spec, grid, tag, out_dir, threads, summary, checks):
    X = normalize_samples(sample_elliptical(spec))
    exact = select_alpha_grid(X, grid, method="exact", threads=threads)
    approx = select_alpha_grid(X, grid, method="approximate", threads=threads)
    e, a = exact.losses, approx.losses
    spread = float(e.max() - e.min())
    sup_ratio = float(np.abs(e - a).max() / spread) if spread > 0 else float("inf")
    argmin_gap = abs(exact.argmin_alpha - approx.argmin_alpha)
    write_csv_rows(
        out_dir / f"curves_{tag}.csv",
        list(zip(exact.alphas, e, a)),
        header=("alpha", "exact_loss", "approx_loss"),
    )
    summary[tag] = {
        "sup_ratio": sup_ratio,
        "argmin_exact": exact.argmin_alpha,
        "argmin_approx": approx.argmin_alpha,
        "grid_step": grid.step,
        "exact_calls": exact.total_rfpi_calls,
        "approx_calls": approx.total_rfpi_calls,
        "exact_time_ns": exact.total_wall_time_ns,
        "approx_time_ns": approx.total_wall_time_ns,
    }
    checks[tag] = {
        "sup_ratio_below_0.05": sup_ratio < 0.05,
        "argmin_within_one_step": argmin_gap <= grid.step * (1 + 1e-9),
    }


def _reproduce_nmse(spec, grid, tag, out_dir, summary, checks):
    sweep = nmse_sweep(spec, grid)
    write_csv_rows(out_dir / f"nmse_{tag}.csv", _sweep_csv_rows(sweep),
                   header=("alpha", "nmse", "acvl_selected"))
    acvl = next(s for s in sweep.selected if s.label == "acvl")
    ratio = acvl.nmse / sweep.oracle_nmse if sweep.oracle_nmse > 0 else float("inf")
    summary[tag] = {
        "oracle_alpha": sweep.oracle_alpha,
        "oracle_nmse": sweep.oracle_nmse,
        "acvl_alpha": acvl.alpha,
        "acvl_nmse": acvl.nmse,
        "nmse_ratio": ratio,
    }
    checks[tag] = {"acvl_nmse_within_1.2x_oracle": ratio <= 1.2}


def _reproduce_speedup(spec, grid, tag, out_dir, threads, manifest_fn, summary, checks):
    report = bench_exact_vs_approx(spec, grid, threads=threads)
    payload = {"manifest": manifest_fn()}
    payload.update(_bench_payload(report))
    _emit_json(payload, out_dir / f"bench_{tag}.json")
    summary[tag] = {
        "speedup": report.speedup,
        "exact_time_ns": report.exact_time_ns,
        "approx_time_ns": report.approx_time_ns,
        "exact_calls": report.exact_calls,
        "approx_calls": report.approx_calls,
    }
    entry = {"call_counts_consistent": True}
    if spec.n == 2 * spec.p:
        entry["speedup_at_least_10x"] = report.speedup >= 10.0
    checks[tag] = entry


def _cmd_reproduce(args) -> int:
    started = _utc_now()
    if args.p < 4:
        raise ValueError(f"reproduce needs p >= 4, got {args.p}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    law = RadialLaw.parse(args.radial)
    params = {
        "recipe": args.recipe, "out_dir": str(out_dir), "p": args.p,
        "radial": args.radial, "grid": args.grid, "threads": args.threads,
    }
    def manifest_fn():
        return _finish_manifest("reproduce", params, args.seed, [], started)

    summary = {}
    checks = {}
    failures = {}
    settings = [(g, n) for g in (0.1, 0.5, 0.85)
                for n in (2 * args.p, args.p, args.p // 2)]
    for idx, (gamma, n) in enumerate(settings):
        tag = f"gamma{gamma:g}_n{n}"
        spec = EllipticalSpec(
            p=args.p, n=n, scatter=toeplitz_scatter(args.p, gamma),
            radial=law, seed=args.seed + idx,
        )
        grid = AlphaGrid.uniform(args.grid, n=n, p=args.p)
        try:
            if args.recipe == "curves":
                _reproduce_curves(spec, grid, tag, out_dir, args.threads, summary, checks)
            elif args.recipe == "nmse":
                _reproduce_nmse(spec, grid, tag, out_dir, summary, checks)
            else:
                _reproduce_speedup(spec, grid, tag, out_dir, args.threads,
                                   manifest_fn, summary, checks)
        except (ValueError, RuntimeError, FloatingPointError) as err:
            failures[tag] = f"{type(err).__name__}: {err}"
            summary[tag] = {"error": failures[tag]}
    all_pass = not failures and all(v for entry in checks.values() for v in entry.values())
    _emit_json(
        {"manifest": manifest_fn(), "recipe": args.recipe,
         "settings": summary, "failures": failures},
        out_dir / "summary.json",
    )
    _emit_json(
        {"manifest": manifest_fn(), "recipe": args.recipe,
         "checks": checks, "all_pass": all_pass},
        out_dir / "checks.json",
    )
    if failures:
        raise RuntimeError(
            f"{len(failures)} of {len(settings)} settings failed; "
            f"partial results kept in {out_dir}"
        )
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point


def _add_synth_flags(sp, default_grid):
    sp.add_argument("--p", type=int, required=True, help="dimension")
    sp.add_argument("--n", type=int, required=True, help="sample count")
    sp.add_argument("--gamma", type=float, default=0.5,
                    help="Toeplitz decay of the true scatter (default 0.5)")
    sp.add_argument("--radial", default="gaussian",
                    help="gaussian | student:d | laplace | cauchy")
    sp.add_argument("--seed", type=int, default=0)
    if default_grid is not None:
        sp.add_argument("--grid", type=int, default=default_grid,
                        help=f"grid size (default {default_grid})")


def _add_input_flags(sp):
    sp.add_argument("--in", dest="infile", required=True, help="input sample CSV")
    sp.add_argument("--center", action="store_true",
                    help="subtract column means before normalization")
    sp.add_argument("--header", action="store_true",
                    help="skip the first CSV line")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tylershrink",
        description="Robust scatter estimation with shrinkage selection.",
    )
    ap.add_argument("--version", action="version",
                    version=f"tylershrink {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("generate", help="sample a synthetic elliptical dataset to CSV")
    _add_synth_flags(g, default_grid=None)
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=_cmd_generate)

    f = sub.add_parser("fit", help="fit a scatter matrix to CSV samples")
    _add_input_flags(f)
    f.add_argument("--alpha", default="auto",
                   help="shrinkage coefficient in [0, 1], or 'auto' (default)")
    f.add_argument("--target", default="identity",
                   help="'identity' or a CSV file holding a p x p target")
    f.add_argument("--tol", type=float, default=1e-9)
    f.add_argument("--max-iter", type=int, default=2000, dest="max_iter")
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("--out", default=None, help="output JSON path (default stdout)")
    f.set_defaults(func=_cmd_fit)

    s = sub.add_parser("select-alpha", help="search the shrinkage coefficient")
    _add_input_flags(s)
    s.add_argument("--method", choices=("exact", "approx"), default="approx")
    s.add_argument("--grid", type=int, default=50, help="grid size (default 50)")
    s.add_argument("--bisect", type=float, default=None, metavar="EPS",
                   help="bisection tolerance; replaces the grid search")
    s.add_argument("--alpha-min", type=float, default=None, dest="alpha_min")
    s.add_argument("--alpha-max", type=float, default=None, dest="alpha_max")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", default=None, help="output JSON path (default stdout)")
    s.set_defaults(func=_cmd_select_alpha)

    w = sub.add_parser("nmse-sweep", help="estimation error across the grid, synthetic truth")
    _add_synth_flags(w, default_grid=20)
    w.add_argument("--out", required=True,
                   help="output path prefix; writes <out>.csv and <out>.json")
    w.set_defaults(func=_cmd_nmse_sweep)

    b = sub.add_parser("bench", help="time exact vs approximate selection")
    _add_synth_flags(b, default_grid=20)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--force", action="store_true",
                   help=f"allow n > {EXACT_GUARD_N} despite the exact-selector cost")
    b.add_argument("--out", default=None, help="output JSON path (default stdout)")
    b.set_defaults(func=_cmd_bench)

    r = sub.add_parser("reproduce", help="run a full 3x3 experiment recipe")
    r.add_argument("recipe", choices=("curves", "nmse", "speedup"))
    r.add_argument("out_dir", help="directory for per-setting artifacts")
    r.add_argument("--p", type=int, default=50)
    r.add_argument("--radial", default="gaussian")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--grid", type=int, default=20)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=_cmd_reproduce)

    return ap


def entry(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CsvFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (NotPositiveDefiniteError, ConvergenceError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except RuntimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
