"""Command-line entry points: ``simulate``, ``sweep``, ``analyze2c`` and ``list``.

Exit codes: 0 success, 1 usage or configuration error, 2 detected
instability (outputs are still written), 3 stability thresholds not found or
certification failed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import analysis as an
from . import io
from . import scenarios as sc
from .errors import ConfigurationError, UsageError
from .numerics import SimulationError

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE, EXIT_NOT_CERTIFIED = 0, 1, 2, 3
RECORD_ENV = "HACGRID_RECORD_EVERY"

log = logging.getLogger("hacgrid")


def _read_config(path):
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    return raw, sc.load_scenario(p)


def _record_override() -> Optional[int]:
    v = os.environ.get(RECORD_ENV)
    if v is None or v == "":
        return None
    try:
        n = int(v)
    except ValueError as exc:
        raise UsageError(f"{RECORD_ENV} must be a positive integer, got {v!r}") from exc
    if n < 1:
        raise UsageError(f"{RECORD_ENV} must be a positive integer, got {v!r}")
    return n


def _write_run(out: Path, res: sc.SimResult) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = [io.write_trajectories(out / "trajectories.csv", res.times, res.channels),
             io.write_metrics(out / "metrics.csv", res.metrics, res.device_metrics)]
    return files


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    raw, spec = _read_config(args.config)
    rec = _record_override()
    res = sc.run(spec, backend=args.backend, h=args.h, horizon=args.horizon, record_every=rec)
    out = Path(args.out)
    files = _write_run(out, res)
    io.write_manifest(out / "manifest.json", "simulate", raw, time.perf_counter() - t0, files,
                      {"stability_flag": res.metrics.stability_flag, "failure": res.failure})
    m = res.metrics
    print(f"{res.spec.get('name', args.config)}: {m.stability_flag}; "
          f"max deviation {m.max_freq_deviation_hz:.4f} Hz, RoCoF {m.rocof_hz_s:.4f} Hz/s "
          f"({m.observed}); settling {m.settling_time:.3f} s; sharing {m.sharing_error:.4f} pu")
    if res.failure:
        print(f"integration stopped: {res.failure}")
    return EXIT_UNSTABLE if m.stability_flag == "diverged" else EXIT_OK


SUMMARY_METRICS = ["stability_flag", "max_freq_deviation_hz", "rocof_hz_s", "settling_time",
                   "sharing_error", "observed"]


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    raw, spec = _read_config(args.config)
    if not spec.get("sweep"):
        raise UsageError("config has no (or an empty) sweep grid")
    rec = _record_override()
    if rec is not None:
        spec.setdefault("integrator", {})["record_every"] = rec
    pts = sc.sweep(spec, workers=args.workers, backend=args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = [k for k, _ in pts[0].labels]
    rows, files = [], []
    for p in pts:
        vals = [v for _, v in p.labels]
        if p.result is None:
            rows.append([p.index, *vals, "failed"] + [None] * len(SUMMARY_METRICS) + [p.error])
            continue
        files += _write_run(out / f"point_{p.index:03d}", p.result)
        d = p.result.metrics.as_dict()
        rows.append([p.index, *vals, "ok"] + [d[k] for k in SUMMARY_METRICS] + [p.result.failure])
    header = ["index", *labels, "status", *SUMMARY_METRICS, "error"]
    files.insert(0, io.write_table(out / "summary.csv", header, rows))
    io.write_manifest(out / "manifest.json", "sweep", raw, time.perf_counter() - t0, files,
                      {"points": len(pts)})
    for r in rows:
        print(", ".join(io.fmt(v) for v in r[: len(labels) + 4]))
    return EXIT_OK if any(p.result is not None for p in pts) else EXIT_UNSTABLE


def cmd_analyze2c(args) -> int:
    t0 = time.perf_counter()
    raw, spec = _read_config(args.config)
    cfg = an.config_from_dict(spec)
    rep = an.certify(cfg.params, cfg.grid, cfg.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[k, *pt.x0, pt.monotone, pt.max_uptick, pt.final_error, pt.converged, pt.v_min, pt.v_max]
            for k, pt in enumerate(rep.points)]
    files = [io.write_table(out / "certification.csv",
                            ["point", "v_dc_1_0", "v_dc_2_0", "delta_0", "monotone", "max_uptick",
                             "final_error", "converged", "energy_min", "energy_max"], rows)]
    thr = []
    if cfg.estimate_thresholds and not args.skip_thresholds:
        g, k = an.estimate_gain_thresholds(cfg.params, cfg.grid, cfg.gamma_ac_bounds, cfg.kappa_dc_bounds,
                                           cfg.horizon, cfg.rel_tol)
        thr = [g, k]
        files.append(io.write_table(out / "thresholds.csv", ["gain", "estimate", "found", "lower", "upper",
                                                              "evaluations"],
                                    [[t.name, t.value, t.found, t.lower, t.upper, t.evaluations] for t in thr]))
    lines = [
        f"monotone_fraction: {io.fmt(rep.monotone_fraction)}",
        f"converged_fraction: {io.fmt(rep.converged_fraction)}",
        f"max_energy_uptick: {io.fmt(rep.max_energy_uptick)}",
        f"reference_residual: {' '.join(io.fmt(v) for v in rep.reference_residual)}",
        f"grid_points: {len(rep.points)}",
        f"horizon_s: {io.fmt(rep.horizon)}",
        f"certified: {io.fmt(rep.certified)}",
    ]
    for t in thr:
        lines.append(f"threshold_{t.name}: {io.fmt(t.value) if t.found else 'not-found'}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    files.append(out / "report.txt")
    io.write_manifest(out / "manifest.json", "analyze2c", raw, time.perf_counter() - t0, files)
    print("\n".join(lines))
    ok = rep.certified and all(t.found for t in thr)
    return EXIT_OK if ok else EXIT_NOT_CERTIFIED


def cmd_list(args) -> int:
    for p in sorted(sc.SCENARIO_DIR.glob("*.yaml")):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hacgrid", description="Grid-forming converter simulations on the IEEE 9-bus system.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run one scenario")
    s.add_argument("config")
    s.add_argument("--out", default="out")
    s.add_argument("--h", type=float, help="step size override (s)")
    s.add_argument("--horizon", type=float, help="post-event horizon override (s)")
    s.add_argument("--backend", choices=["compiled", "python"])
    s.set_defaults(func=cmd_simulate)
    w = sub.add_parser("sweep", help="run a scenario over its sweep grid")
    w.add_argument("config")
    w.add_argument("--out", default="out")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--backend", choices=["compiled", "python"])
    w.set_defaults(func=cmd_sweep)
    a = sub.add_parser("analyze2c", help="certify the reduced two-converter model")
    a.add_argument("config")
    a.add_argument("--out", default="out")
    a.add_argument("--skip-thresholds", action="store_true", help="certify only, no bisection")
    a.set_defaults(func=cmd_analyze2c)
    ls = sub.add_parser("list", help="print the shipped scenario files")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sc.InitializationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
