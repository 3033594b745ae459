"""``calsig simulate | segment | clarify | compare``.

Each subcommand reads files, writes files, and finishes with
``run_manifest.json`` listing every output with its sha256. Values come from
built-in defaults, then ``--config`` JSON, then explicit flags.

Exit codes: 0 success, 2 config/parse error, 3 data error, 4 convergence.
"""
import argparse
import logging
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, compare, io, plots
from .errors import CalsigError, ConfigError, ConvergenceError, IllConditionedError
from .linalg import svd, variance_explained
from .segmentation import RoughRoi, find_peak_frame, segment_roi
from .simulation import (
    CohortConfig,
    DiskLayout,
    SimConfig,
    generate,
    recovery_study,
    render_movie,
    synthetic_cohort,
)
from .wsvd import build_mask, wsvd_fit

log = logging.getLogger("calsig")

DEFAULTS = {
    "simulate": {
        "n_pixels": 131,
        "n_frames": 512,
        "clip_level": 0.5,
        "noise_scale": 0.1,
        "seed": 1,
        "frame_interval": 10.0,
        "width": 32,
        "height": 32,
        "movie": True,
        "cohort": False,
        "cohort_size": 10,
        "cohort_delay": 12,
        "tol": 1e-8,
        "max_iters": 500,
    },
    "segment": {"sigma": 2.0, "min_area": 20, "seed_footprint": 3, "jobs": 1},
    "clarify": {
        "saturation_level": 255.0,
        "tol": 1e-8,
        "max_iters": 500,
        "weights": "variance",
        "jobs": 1,
    },
    "compare": {
        "peak_window": [0.0, 4.0],
        "post_peak_window": [40.0, 80.0],
        "k_values": [1, 2, 3, 4, 5],
        "cv_runs": 1000,
        "train_fraction": 0.8,
        "n_perm": 100000,
        "perm_mode": "auto",
        "alternative": "greater",
        "seed": 0,
    },
}
REQUIRED = {
    "simulate": ("out",),
    "segment": ("movie", "rois", "out"),
    "clarify": ("cells", "out"),
    "compare": ("signals", "labels", "out"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _window(text):
    try:
        lo, hi = (float(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'start,stop' minutes, got {text!r}") from exc
    return [lo, hi]


def _ints(text):
    try:
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser():
    p = _Parser(prog="calsig", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"calsig {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--log-level", default="WARNING")
        return sp

    S = argparse.SUPPRESS
    sim = common(sub.add_parser("simulate", help="synthetic dataset, movie and recovery report"))
    sim.add_argument("--n-pixels", type=int, default=S)
    sim.add_argument("--n-frames", type=int, default=S)
    sim.add_argument("--clip-level", type=float, default=S)
    sim.add_argument("--noise-scale", type=float, default=S)
    sim.add_argument("--seed", type=int, default=S)
    sim.add_argument("--frame-interval", type=float, default=S)
    sim.add_argument("--width", type=int, default=S)
    sim.add_argument("--height", type=int, default=S)
    sim.add_argument("--no-movie", dest="movie", action="store_false", default=S)
    sim.add_argument("--cohort", action="store_true", default=S, help="also write a two-group signal cohort")
    sim.add_argument("--cohort-size", type=int, default=S, help="cells per group")
    sim.add_argument("--cohort-delay", type=int, default=S, help="treated onset delay in frames")
    sim.add_argument("--tol", type=float, default=S)
    sim.add_argument("--max-iters", type=int, default=S)

    seg = common(sub.add_parser("segment", help="movie + rough ROIs -> cell masks and matrices"))
    seg.add_argument("--movie", default=S, help="directory of frame_%%04d.pgm + manifest.json")
    seg.add_argument("--rois", default=S, help="CSV cell_id,x0,y0,x1,y1")
    seg.add_argument("--sigma", type=float, default=S)
    seg.add_argument("--min-area", type=int, default=S)
    seg.add_argument("--seed-footprint", type=int, default=S)
    seg.add_argument("--jobs", type=int, default=S)

    cla = common(sub.add_parser("clarify", help="weighted rank-1 SVD per cell"))
    cla.add_argument("--cells", default=S, help="segment output directory (or its cells/ folder)")
    cla.add_argument("--saturation-level", type=float, default=S)
    cla.add_argument("--tol", type=float, default=S)
    cla.add_argument("--max-iters", type=int, default=S)
    cla.add_argument("--weights", choices=("variance", "indicator", "none"), default=S)
    cla.add_argument(
        "--no-variance-weights", dest="weights", action="store_const", const="indicator", default=S
    )
    cla.add_argument("--jobs", type=int, default=S)

    cmp_ = common(sub.add_parser("compare", help="group comparison of EigenSignals"))
    cmp_.add_argument("--signals", default=S, help="clarify output directory")
    cmp_.add_argument("--labels", default=S, help="CSV cell_id,group,hormone_level")
    cmp_.add_argument("--peak-window", type=_window, default=S, metavar="START,STOP")
    cmp_.add_argument("--post-peak-window", type=_window, default=S, metavar="START,STOP")
    cmp_.add_argument("--k-values", type=_ints, default=S)
    cmp_.add_argument("--cv-runs", type=int, default=S)
    cmp_.add_argument("--train-fraction", type=float, default=S)
    cmp_.add_argument("--n-perm", type=int, default=S)
    cmp_.add_argument("--perm-mode", choices=("auto", "exact", "monte_carlo"), default=S)
    cmp_.add_argument("--alternative", choices=("greater", "two-sided"), default=S)
    cmp_.add_argument("--two-sided", dest="alternative", action="store_const", const="two-sided", default=S)
    cmp_.add_argument("--seed", type=int, default=S)
    return p


def resolve_config(args):
    """Defaults < ``--config`` file < flags. Returns a plain dict."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}
    if args.config:
        loaded = io.read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        loaded = loaded.get(cmd, loaded) if isinstance(loaded.get(cmd), dict) else loaded
        known = set(DEFAULTS[cmd]) | set(REQUIRED[cmd])
        unknown = sorted(set(loaded) - known - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{args.config}: unknown option(s) {unknown} for {cmd}")
        cfg.update({k: v for k, v in loaded.items() if k in known})
    cfg.update({k: v for k, v in flags.items() if v is not None})
    missing = [k for k in REQUIRED[cmd] if not cfg.get(k)]
    if missing:
        raise ConfigError(f"{cmd}: missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    _check_ranges(cmd, cfg)
    return cfg


def _check_ranges(cmd, cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigError(f"{cmd}: {msg}")

    if "jobs" in cfg:
        need(int(cfg["jobs"]) >= 1, "jobs must be >= 1")
    if "tol" in cfg:
        need(float(cfg["tol"]) > 0, "tol must be positive")
    if "max_iters" in cfg:
        need(int(cfg["max_iters"]) >= 1, "max_iters must be >= 1")
    if cmd == "segment":
        need(float(cfg["sigma"]) >= 0, "sigma must be >= 0")
        need(int(cfg["min_area"]) >= 1, "min_area must be >= 1")
    if cmd == "clarify":
        need(float(cfg["saturation_level"]) > 0, "saturation_level must be positive")
    if cmd == "compare":
        need(0 < float(cfg["train_fraction"]) < 1, "train_fraction must lie in (0, 1)")
        need(min(cfg["k_values"]) >= 1, "k values must be >= 1")
        need(int(cfg["cv_runs"]) >= 1 and int(cfg["n_perm"]) >= 1, "cv_runs and n_perm must be >= 1")
        for key in ("peak_window", "post_peak_window"):
            lo, hi = cfg[key]
            need(0 <= lo < hi, f"{key} must satisfy 0 <= start < stop")
    if cmd == "simulate":
        need(int(cfg["cohort_size"]) >= 2, "cohort_size must be >= 2")


def substream_seed(seed, *names):
    """Deterministic child seed for a named sub-stream of ``seed``."""
    key = [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return int(np.random.SeedSequence([int(seed), *key]).generate_state(1, np.uint64)[0])


class Run:
    """Collects outputs and writes ``run_manifest.json`` at the end."""

    def __init__(self, command, cfg, out):
        self.command, self.cfg, self.out = command, cfg, Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.inputs = {}

    def add_input(self, path):
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for f in files:
            self.inputs[str(f)] = io.sha256_file(f)

    def finish(self, status="ok"):
        outputs = {
            str(p.relative_to(self.out)): io.sha256_file(p)
            for p in sorted(self.out.rglob("*"))
            if p.is_file() and p.name != "run_manifest.json"
        }
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "version": __version__,
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "status": status,
            "inputs": self.inputs,
            "outputs": outputs,
        }
        io.write_json(self.out / "run_manifest.json", manifest)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _error_entry(exc):
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}


# simulate ------------------------------------------------------------------


def cmd_simulate(cfg):
    out = Path(cfg["out"])
    run = Run("simulate", cfg, out)
    sim_cfg = SimConfig(
        n_pixels=int(cfg["n_pixels"]),
        n_frames=int(cfg["n_frames"]),
        clip_level=float(cfg["clip_level"]),
        noise_scale=float(cfg["noise_scale"]),
        seed=int(cfg["seed"]),
        frame_interval=float(cfg["frame_interval"]),
    )
    ds = generate(sim_cfg)
    for name in ("truth", "noisy", "saturated"):
        io.write_matrix(out / f"{name}.csv", getattr(ds, name))
    io.write_matrix(out / "mask.csv", ds.mask.astype(np.float64))
    io.write_matrix(out / "true_u.csv", ds.true_u[:, None])
    io.write_matrix(out / "true_v.csv", ds.true_v[:, None])

    if cfg["movie"]:
        w, h = int(cfg["width"]), int(cfg["height"])
        layout = DiskLayout(w, h, (w // 2, h // 2))
        io.write_movie(out / "movie", render_movie(ds, layout))
        x0, y0, x1, y1 = layout.roi_bounds(sim_cfg.n_pixels)
        io.write_rois(out / "rois.csv", [RoughRoi("cell1", x0, y0, x1, y1)])

    report = recovery_study(ds, tol=float(cfg["tol"]), max_iters=int(cfg["max_iters"]))
    report["config"] = sim_cfg.to_dict()
    io.write_json(out / "sim_report.json", report)

    if cfg["cohort"]:
        n = int(cfg["cohort_size"])
        cc = CohortConfig(
            n_control=n,
            n_treated=n,
            n_frames=sim_cfg.n_frames,
            frame_interval=sim_cfg.frame_interval,
            delay=int(cfg["cohort_delay"]),
            seed=substream_seed(sim_cfg.seed, "cohort"),
        )
        signals = synthetic_cohort(cc)
        for s in signals:
            _write_signal(out / "cohort" / s.cell_id / "eigensignal.csv", s.eigensignal, s.frame_interval)
        io.write_table(
            out / "cohort" / "labels.csv",
            ("cell_id", "group", "hormone_level"),
            [(s.cell_id, s.group_label, s.hormone_level) for s in signals],
        )
    run.finish()
    return 0


# segment -------------------------------------------------------------------


def cmd_segment(cfg):
    out = Path(cfg["out"])
    stack = io.read_movie(cfg["movie"])
    rois = io.read_rois(cfg["rois"])
    for r in rois:
        r.validate(stack)
    run = Run("segment", cfg, out)
    run.add_input(cfg["movie"])
    run.add_input(cfg["rois"])

    def work(roi):
        try:
            return roi, segment_roi(
                stack, roi, float(cfg["sigma"]), int(cfg["min_area"]), int(cfg["seed_footprint"])
            ), None
        except CalsigError as exc:
            log.warning("roi %s: %s", roi.cell_id, exc)
            return roi, [], exc

    results = _map(work, rois, int(cfg["jobs"]))
    report = {"peak_frame": find_peak_frame(stack), "frame_interval": stack.frame_interval, "rois": {}}
    n_cells = 0
    for roi, cells, exc in results:
        entry = {"cells": []} if exc is None else _error_entry(exc)
        for mask, ptm in cells:
            io.write_cell(out / "cells" / mask.cell_id, mask, ptm)
            entry["cells"].append({"cell_id": mask.cell_id, "n_pixels": len(mask)})
            n_cells += 1
        report["rois"][roi.cell_id] = entry
    report["n_cells"] = n_cells
    io.write_json(out / "segment_report.json", report)
    run.finish("ok" if n_cells else "no cells")
    if not n_cells:
        log.error("no cells found in any ROI")
        return 3
    return 0


# clarify -------------------------------------------------------------------


def _cell_dirs(root):
    root = Path(root)
    base = root / "cells" if (root / "cells").is_dir() else root
    dirs = sorted(d for d in base.iterdir() if (d / "matrix.csv").exists()) if base.is_dir() else []
    if not dirs:
        raise ConfigError(f"{root}: no cell directories with matrix.csv")
    return dirs


def _write_signal(path, values, frame_interval, extra=None):
    rows = []
    for j, v in enumerate(values):
        row = [j, io.fmt(j * frame_interval), io.fmt(v)]
        if extra is not None:
            row.append(io.fmt(extra[j]))
        rows.append(row)
    header = ["frame", "time_seconds", "value"] + (["svd"] if extra is not None else [])
    return io.write_table(path, header, rows)


def _clarify_one(cell_dir, cfg, out):
    ptm = io.read_cell(cell_dir)
    ptm.saturation_level = float(cfg["saturation_level"])
    cid = ptm.cell_id
    full = svd(ptm.values)
    frac = variance_explained(full) if np.any(full.singular_values > 0) else np.zeros(1)
    res = wsvd_fit(
        ptm,
        build_mask(ptm),
        weights=cfg["weights"],
        tol=float(cfg["tol"]),
        max_iters=int(cfg["max_iters"]),
    )
    dest = out / cid
    plain_v = full.right_vectors[:, 0]
    if plain_v @ res.eigensignal < 0:
        plain_v = -plain_v
    coords = ptm.coords[res.kept_rows]
    io.write_table(
        dest / "eigenpixel.csv",
        ("index", "x", "y", "value"),
        [(int(i), int(x), int(y), io.fmt(u)) for i, (x, y), u in zip(res.kept_rows, coords, res.eigenpixel)],
    )
    _write_signal(dest / "eigensignal.csv", res.eigensignal, ptm.frame_interval, plain_v)
    io.write_matrix(dest / "imputed.csv", res.imputed)
    io.write_json(
        dest / "wsvd_report.json",
        {
            "cell_id": cid,
            "scale": res.scale,
            "iterations": res.iterations,
            "converged": res.converged,
            "dropped_pixels": res.dropped_pixels,
            "flag_report": [list(f) for f in res.flag_report],
            "n_flagged": len(res.flag_report),
            "final_objective": res.final_objective,
            "objective_trace": res.objective_trace,
            "guarded_updates": res.guarded_updates,
            "weights": res.meta["weights"],
            "n_saturated": int(np.count_nonzero(ptm.values == ptm.saturation_level)),
        },
    )
    return {"status": "ok", "variance_explained": float(frac[0]), "iterations": res.iterations,
            "n_flagged": len(res.flag_report), "dropped": len(res.dropped_pixels)}


def cmd_clarify(cfg):
    out = Path(cfg["out"])
    dirs = _cell_dirs(cfg["cells"])
    run = Run("clarify", cfg, out)
    for d in dirs:
        run.add_input(d)

    def work(d):
        try:
            return d.name, _clarify_one(d, cfg, out)
        except CalsigError as exc:
            log.warning("cell %s: %s", d.name, exc)
            return d.name, _error_entry(exc)

    results = sorted(_map(work, dirs, int(cfg["jobs"])))
    cells = dict(results)
    io.write_table(
        out / "variance_explained.csv",
        ("cell_id", "first_fraction"),
        [(cid, io.fmt(e["variance_explained"])) for cid, e in results if e.get("status") == "ok"],
    )
    io.write_json(out / "clarify_report.json", {"cells": cells, "n_ok": sum(e.get("status") == "ok" for e in cells.values())})
    ok = any(e.get("status") == "ok" for e in cells.values())
    run.finish("ok" if ok else "all cells failed")
    if ok:
        return 0
    codes = {e["exit_code"] for e in cells.values()}
    return 4 if codes == {4} else 3


# compare -------------------------------------------------------------------


def _load_signals(root, labels):
    root = Path(root)
    signals = []
    for cid, (group, level) in sorted(labels.items()):
        path = root / cid / "eigensignal.csv"
        if not path.exists():
            raise ConfigError(f"{path}: missing signal for labelled cell {cid}")
        dt = 10.0
        rep = root / cid / "wsvd_report.json"
        scale = float(io.read_json(rep)["scale"]) if rep.exists() else 1.0
        with open(path, encoding="utf-8") as fh:
            fh.readline()
            first = fh.readline().split(",")
            second = fh.readline().split(",")
        if len(second) > 1:
            dt = float(second[1]) - float(first[1])
        signals.append(compare.CellSignal(cid, group, io.read_signal(path), dt, level, scale))
    return signals


def _compare_region(signals, registered, region, regions, cfg, dest, tag):
    files = {}
    windowed = [compare.window(s, region, regions) for s in signals]
    emb = compare.eigencell_embed(windowed)
    io.write_table(
        dest / "eigencells.csv",
        ("cell_id", "coord1", "coord2", "label"),
        [(c, io.fmt(a), io.fmt(b), lab) for c, (a, b), lab in zip(emb.cell_ids, emb.coords, emb.labels)],
    )
    cv = compare.knn_cv(
        emb,
        cfg["k_values"],
        int(cfg["cv_runs"]),
        float(cfg["train_fraction"]),
        substream_seed(cfg["seed"], tag, region, "cv"),
    )
    io.write_json(
        dest / "cv_report.json",
        {
            "mean_error": cv.mean_error,
            "per_k": {str(k): v for k, v in cv.per_k.items()},
            "runs": cv.runs,
            "train_fraction": cv.train_fraction,
            "variance_fractions": emb.variance_fractions,
        },
    )
    plots.scatter_embedding(dest / "eigencells.svg", emb, f"{tag} {region}")
    files["cv_mean_error"] = cv.mean_error

    try:
        stats = [(s, compare.peak_stats(s, region, regions)) for s in registered]
    except CalsigError as exc:
        log.warning("%s/%s: peak statistics skipped: %s", tag, region, exc)
        io.write_json(dest / "permtest.json", {"skipped": str(exc)})
        return files
    io.write_table(
        dest / "peaks.csv",
        ("cell_id", "label", "height", "area"),
        [(s.cell_id, s.group_label, io.fmt(h), io.fmt(a)) for s, (h, a) in stats],
    )
    perm = {}
    for m, name in enumerate(("height", "area")):
        by = {g: [st[m] for s, st in stats if s.group_label == g] for g in (compare.CONTROL, compare.TREATED)}
        if min(len(v) for v in by.values()) == 0:
            perm[name] = {"skipped": "a group has no registered cells"}
            continue
        r = compare.permutation_test(
            by[compare.CONTROL],
            by[compare.TREATED],
            int(cfg["n_perm"]),
            substream_seed(cfg["seed"], tag, region, name, "perm"),
            cfg["perm_mode"],
            cfg["alternative"],
        )
        perm[name] = {
            "statistic": r.statistic,
            "p": r.p_value,
            "mode": r.mode,
            "n_perm": r.n_permutations,
            "alternative": r.alternative,
            "n_control": len(by[compare.CONTROL]),
            "n_treated": len(by[compare.TREATED]),
        }
        plots.box_by_group(dest / f"{name}.svg", by, f"peak {name}", f"{tag} {region}")
    io.write_json(dest / "permtest.json", perm)
    return files


def cmd_compare(cfg):
    out = Path(cfg["out"])
    labels = io.read_labels(cfg["labels"])
    bad = sorted({g for g, _ in labels.values()} - {compare.CONTROL, compare.TREATED})
    if bad:
        raise ConfigError(f"{cfg['labels']}: unknown group label(s) {bad}")
    signals = _load_signals(cfg["signals"], labels)
    run = Run("compare", cfg, out)
    run.add_input(cfg["labels"])
    for s in signals:
        run.add_input(Path(cfg["signals"]) / s.cell_id / "eigensignal.csv")
    regions = {"peak": tuple(cfg["peak_window"]), "post_peak": tuple(cfg["post_peak_window"])}
    need = max(max(cfg["k_values"]), 2)
    summary = {}
    for level in sorted({s.hormone_level for s in signals}):
        cohort = [s for s in signals if s.hormone_level == level]
        sizes = {g: sum(s.group_label == g for s in cohort) for g in (compare.CONTROL, compare.TREATED)}
        if min(sizes.values()) < need:
            log.error("hormone %s: group sizes %s, need at least %d per group", level, sizes, need)
            run.finish("insufficient group sizes")
            return 3
        registered, excluded = compare.register_cohort(cohort)
        entry = {"group_sizes": sizes, "excluded_no_rise": excluded, "regions": {}}
        for region in ("peak", "post_peak"):
            dest = out / level / region
            entry["regions"][region] = _compare_region(cohort, registered, region, regions, cfg, dest, level)
        summary[level] = entry
    io.write_json(out / "compare_report.json", summary)
    run.finish()
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "segment": cmd_segment,
    "clarify": cmd_clarify,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConvergenceError, IllConditionedError) as exc:
        print(f"calsig: {exc}", file=sys.stderr)
        return 4
    except CalsigError as exc:
        print(f"calsig: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"calsig: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
