"""Command-line entry point.

Exit codes: 0 when every declared assertion passes (or a replay matches),
1 for failing assertions or replay mismatches, 2 for configuration errors,
unknown kinds and regime violations.
"""
import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io as sio
from .config import load_config, parse_config_text
from .drift import catalog
from .errors import ConfigError, ParameterError, RegimeError
from .experiments import KINDS, get_kind
from .parallel import default_workers
from .sheet import GridSpec, generate_sheet

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def execute(cfg, workers=None):
    """Run ``cfg`` and return the report dictionary."""
    k = get_kind(cfg.kind)
    t0 = time.perf_counter()
    result = k.func(cfg, workers)
    wall = time.perf_counter() - t0
    asserts = {name: bool(ok) for name, ok in result.assertions.items() if name not in cfg.skip}
    return {
        "kind": cfg.kind,
        "statement": k.statement,
        "config": cfg.raw,
        "config_text": cfg.canonical(),
        "config_hash": cfg.hash,
        "seed_range": [cfg.seed0, cfg.seed0 + cfg.n - 1],
        "tables": _clean(result.tables),
        "fitted": _clean(result.fitted),
        "assertions": asserts,
        "passed": all(asserts.values()),
        "wall_clock_s": wall,
        "workers": workers or default_workers(),
        "versions": {"sheetfield": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def write_report(report, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    for name, rows in report["tables"].items():
        if not rows:
            continue
        header = list(rows[0].keys())
        sio.write_csv(out / f"{report['kind']}_{name}.csv", header, [[r.get(h) for h in header] for r in rows])
    sio.write_csv(out / "assertions.csv", ["config_hash", "assertion", "passed"],
                  [[report["config_hash"], k, v] for k, v in report["assertions"].items()])
    return out / "report.json"


def _same(a, b):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


def compare_tables(stored, fresh):
    """List of mismatching cells as ``table[row].column`` strings."""
    bad = []
    for name in sorted(set(stored) | set(fresh)):
        a, b = stored.get(name), fresh.get(name)
        if a is None or b is None:
            bad.append(f"{name}: table missing")
            continue
        if len(a) != len(b):
            bad.append(f"{name}: {len(a)} rows stored, {len(b)} recomputed")
        for i, (ra, rb) in enumerate(zip(a, b)):
            for col in sorted(set(ra) | set(rb)):
                if not _same(ra.get(col), rb.get(col)):
                    bad.append(f"{name}[{i}].{col}: stored {ra.get(col)!r}, recomputed {rb.get(col)!r}")
    return bad


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed_offset:
        cfg = cfg.with_seed_offset(args.seed_offset)
    report = execute(cfg, args.workers)
    out = args.out or cfg.out or f"results/{cfg.kind}"
    path = write_report(report, out)
    print(f"report: {path}")
    print(f"config hash: {report['config_hash']}")
    for name, ok in report["assertions"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if not report["passed"]:
        print("failing assertions: " + ", ".join(k for k, v in report["assertions"].items() if not v))
        return EXIT_FAIL
    return EXIT_OK


def cmd_describe(args):
    k = KINDS.get(args.kind)
    if k is None:
        print(f"unknown experiment kind {args.kind!r}; known: {', '.join(sorted(KINDS))}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{k.name}: {k.statement}")
    return EXIT_OK


def cmd_replay(args):
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    try:
        report = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None
    cfg = parse_config_text(report["config_text"])
    if cfg.hash != report["config_hash"]:
        print("config hash mismatch: the stored config was edited")
        return EXIT_FAIL
    fresh = execute(cfg, args.workers)
    bad = compare_tables(report["tables"], fresh["tables"])
    bad += [f"fitted.{k}" for k in sorted(set(report["fitted"]) | set(fresh["fitted"]))
            if not _same(report["fitted"].get(k), fresh["fitted"].get(k))]
    if bad:
        print("replay mismatch:")
        for line in bad:
            print("  " + line)
        return EXIT_FAIL
    print(f"replay identical ({sum(len(t) for t in fresh['tables'].values())} rows, hash {cfg.hash[:12]})")
    return EXIT_OK


def cmd_catalog(args):
    for did, summary in catalog().items():
        print(f"{did:18s} {summary}")
    return EXIT_OK


def cmd_sheet(args):
    grid = GridSpec(args.n_s, args.n_t or args.n_s, args.s_max, args.t_max, args.d)
    path = generate_sheet(grid, args.seed)
    sio.save_sheet(args.out, path)
    sio.write_sidecar(args.out, {"grid": grid.as_dict(), "seed": args.seed})
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sheetfield", description="Brownian-sheet SDE laboratory")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: $SHEETFIELD_WORKERS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", nargs="?")
    r.add_argument("--config", dest="config_opt")
    r.add_argument("--out")
    r.add_argument("--seed-offset", type=int, default=0)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("describe", help="print what an experiment kind verifies")
    d.add_argument("kind")
    d.set_defaults(func=cmd_describe)

    rp = sub.add_parser("replay", help="recompute a report and compare its tables bit for bit")
    rp.add_argument("report")
    rp.set_defaults(func=cmd_replay)

    c = sub.add_parser("catalog", help="list the built-in drifts")
    c.set_defaults(func=cmd_catalog)

    s = sub.add_parser("sheet", help="generate and save one sheet path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-s", type=int, default=64)
    s.add_argument("--n-t", type=int, default=None)
    s.add_argument("--s-max", type=float, default=1.0)
    s.add_argument("--t-max", type=float, default=1.0)
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sheet)

    for sp in (r, rp, s, d, c):
        sp.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "run":
        args.config = args.config_opt or args.config
        if not args.config:
            print("run needs a config file", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except RegimeError as exc:
        print(f"regime violation: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
