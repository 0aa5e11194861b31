"""Command-line front end.

Exit status: 0 success, 2 usage/config/input errors, 3 solver/runtime failures.
Progress goes to stderr; results go to files and stdout.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, derive_seed
from .dataset import IntensityScheme, generate_dataset
from .errors import FormatError, HsloError, SolverError
from .fieldio import read_field, write_field_csv, write_hslf
from .moea import make_objective, run_nsga2, write_front_csv
from .optim import resimulate, run_mnslo, write_archive_csv, write_trajectories_csv
from .surrogate import ExactEvaluator, benchmark_surrogate, parse_evaluator
from .thermal import REFERENCE_INTENSITY, Layout, metric_from_tmax, solve_temperature

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

PALETTES = {
    "gray": ((0, 0, 0), (255, 255, 255)),
    "heat": ((0, 0, 255), (255, 0, 0)),
}

CASE_THRESHOLDS = {
    "case1": (326.9, 326.95, 327.0, 327.05),
    "case2": (328.02, 328.03, 328.04, 328.05),
}


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def reference_intensity(scheme: IntensityScheme) -> float:
    return scheme.intensity if scheme.kind == "uniform" else REFERENCE_INTENSITY


def read_layout_csv(path) -> Layout:
    """Parse a ``cell,intensity`` CSV; errors name the offending line."""
    pairs = []
    seen: dict[int, int] = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["cell", "intensity"]:
        raise FormatError(f"{path}: line 1: expected header 'cell,intensity'")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            cell, q = int(row[0]), float(row[1])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: cannot parse {row!r}") from None
        if cell in seen:
            raise FormatError(f"{path}: line {lineno}: cell {cell} already used on line {seen[cell]}")
        if cell < 1 or not q > 0:
            raise FormatError(f"{path}: line {lineno}: need cell >= 1 and intensity > 0")
        seen[cell] = lineno
        pairs.append((cell, q))
    return Layout.from_pairs(pairs)


def write_layout_csv(path, layout: Layout) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("cell,intensity\n")
        for c, q in layout.key:
            fh.write(f"{c},{q!r}\n")


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    spec = cfg.domain()
    layout = read_layout_csv(args.layout)
    bad = [c for c in layout.cells if c > spec.n_cells]
    if bad:
        raise FormatError(f"{args.layout}: cell {bad[0]} exceeds {spec.n_cells}")
    field = solve_temperature(layout, spec, tol=args.tol, method=args.method)
    if args.csv:
        write_field_csv(args.csv, field)
    if args.hslf:
        write_hslf(args.hslf, field)
    tmax = float(field.max())
    r_m = metric_from_tmax(tmax, spec, reference_intensity(cfg.scheme()))
    print(f"tmax_K={tmax!r} r_m={r_m!r}")
    return EXIT_OK


def render_ppm(field: np.ndarray, palette: str) -> bytes:
    if palette in PALETTES:
        lo, hi = PALETTES[palette]
    else:
        try:
            a, b = palette.split(":")
            lo = tuple(int(a[i:i + 2], 16) for i in (0, 2, 4))
            hi = tuple(int(b[i:i + 2], 16) for i in (0, 2, 4))
        except ValueError:
            raise FormatError(f"unknown palette {palette!r}") from None
    field = np.asarray(field, float)
    fmin, fmax = float(field.min()), float(field.max())
    t = np.zeros_like(field) if fmax == fmin else (field - fmin) / (fmax - fmin)
    lo_a, hi_a = np.array(lo, float), np.array(hi, float)
    rgb = np.rint(lo_a + t[..., None] * (hi_a - lo_a)).astype(np.uint8)
    rows, cols = field.shape
    return f"P6\n{cols} {rows}\n255\n".encode("ascii") + rgb.tobytes()


def cmd_render(args, cfg: RunConfig) -> int:
    field = read_field(args.field)
    Path(args.out).write_bytes(render_ppm(field, args.palette))
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    spec, scheme = cfg.domain(), cfg.scheme()
    seed = derive_seed(args.seed, "dataset")
    manifest = generate_dataset(spec, scheme, args.count, seed, args.out,
                                progress=lambda i, n: log(f"sample {i}/{n}"))
    print(f"count={manifest.count} seed={manifest.seed} out={args.out}")
    return EXIT_OK


def _optimize(spec, scheme, cfg: RunConfig, seed: int, evaluator_text: str | None,
              cache: int | None, workers: int, quiet: bool = False):
    ev_text, cache_cfg, tol = cfg.mnslo_extra()
    ev = parse_evaluator(evaluator_text or ev_text, spec, tol=tol,
                         cache=cache_cfg if cache is None else cache, workers=workers)
    mcfg = cfg.mnslo(derive_seed(seed, "mnslo"))
    progress = None if quiet else (lambda s, g, f: log(f"sweep={s} group={g} fitness={f:.9g}"))
    result = run_mnslo(ev, mcfg, scheme, progress=progress)
    exact = ExactEvaluator(spec, tol=tol)
    rows = resimulate(result.archive, exact)
    return result, rows, ev


def cmd_optimize(args, cfg: RunConfig) -> int:
    spec, scheme = cfg.domain(), cfg.scheme()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result, rows, ev = _optimize(spec, scheme, cfg, args.seed, args.evaluator, args.cache, args.workers)
    wall = time.perf_counter() - t0
    write_archive_csv(out / "archive.csv", rows)
    write_trajectories_csv(out / "trajectories.csv", result.trajectories)
    best = min(rows, key=lambda r: (r[2], r[1]))
    write_layout_csv(out / "best_layout.csv", best[0])
    phi0 = reference_intensity(scheme)
    summary = (
        f"evaluator={ev.name}\n"
        f"best_fitness={result.best_fitness!r}\n"
        f"best_tmax_K={best[2]!r}\n"
        f"best_r_m={metric_from_tmax(best[2], spec, phi0)!r}\n"
        f"archive_size={len(rows)}\n"
        f"evaluator_calls={result.evaluations}\n"
    )
    (out / "summary.txt").write_text(summary)
    (out / "timing.txt").write_text(f"wall_time_s={wall:.3f}\n")
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_nas(args, cfg: RunConfig) -> int:
    mcfg, preset = cfg.moea(derive_seed(args.seed, "moea"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_nsga2(make_objective(preset), mcfg, n_layers=preset.n_layers,
                       progress=lambda g, o: log(f"generation={g} best_error={o[:, 0].min():.6g}"))
    write_front_csv(out / "front.csv", result.front, preset)
    texts = sorted(g.to_text() for g in result.front)
    (out / "front_genomes.txt").write_text("".join(t + "\n" for t in texts))
    print(f"front_size={len(result.front)} evaluations={result.evaluations}")
    return EXIT_OK


def cmd_benchmark(args, cfg: RunConfig) -> int:
    spec = cfg.domain()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "surrogate":
        cand = parse_evaluator(f"coarse:{args.coarse}", spec)
        report = benchmark_surrogate(cand, spec, args.samples, derive_seed(args.seed, "benchmark"),
                                     scheme=cfg.scheme())
        report.write_csv(out / "surrogate.csv")
        print(report.summary_line())
        return EXIT_OK
    scheme = IntensityScheme() if args.kind == "case1" else IntensityScheme.case2()
    for key, val in (("population_size", 30), ("group_count", 3)):
        cfg.values["mnslo"].setdefault(key, val)
    thresholds = CASE_THRESHOLDS[args.kind]
    lines = ["seed,best_tmax_K,best_r_m,archive_size,evaluator_calls,"
             + ",".join(f"n_le_{t:g}" for t in thresholds)]
    for seed in range(args.seed, args.seed + args.seeds):
        result, rows, _ = _optimize(spec, scheme, cfg, seed, args.evaluator or f"coarse:{args.coarse}",
                                    None, args.workers, quiet=True)
        tm = [r[2] for r in rows]
        best = min(tm)
        counts = [sum(t <= thr for t in tm) for thr in thresholds]
        lines.append(f"{seed},{best:.6f},{metric_from_tmax(best, spec, REFERENCE_INTENSITY):.6f},"
                     f"{len(rows)},{result.evaluations}," + ",".join(map(str, counts)))
        log(f"seed={seed} best_tmax_K={best:.4f}")
    (out / f"{args.kind}.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hslo", description="Heat-source layout optimisation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [domain] [scheme] [mnslo] [moea] sections")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--workers", type=int, default=1, help="threads for batch evaluations")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="solve one layout")
    s.add_argument("layout", help="CSV with header cell,intensity")
    s.add_argument("--csv", help="write the field as CSV")
    s.add_argument("--hslf", help="write the field as HSLF binary")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--method", choices=("direct", "cg"), default="direct")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("render", parents=[common], help="field file to binary PPM")
    s.add_argument("field")
    s.add_argument("out")
    s.add_argument("--palette", default="heat", help="gray, heat or RRGGBB:RRGGBB")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("generate", parents=[common], help="write a layout/field dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("optimize", parents=[common], help="run the multimodal layout search")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--evaluator", help="exact or coarse:R (overrides [mnslo] evaluator)")
    s.add_argument("--cache", type=int, help="LRU capacity; 0 disables")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("nas", parents=[common], help="NSGA-II over backbone genomes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nas)

    s = sub.add_parser("benchmark", parents=[common], help="surrogate error or case studies")
    s.add_argument("kind", choices=("surrogate", "case1", "case2"))
    s.add_argument("--out", required=True)
    s.add_argument("--coarse", type=int, default=50)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--evaluator")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.set)
        return args.func(args, cfg)
    except SolverError as exc:
        log(f"error: {exc}")
        return EXIT_RUNTIME
    except (HsloError, OSError) as exc:
        log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
