"""Command line entry point: ``mspde run`` and ``mspde replay``.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__, _kernels, csvio
from .config import EXPERIMENTS, from_canonical, load_config
from .errors import MspdeError, NumericalError, UsageError
from .experiments import run_experiment

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
META_NAME = "meta.json"


def _report(outcome) -> int:
    for c in outcome.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def _write_meta(cfg, out: Path, outcome, code: int) -> Path:
    meta = {
        "experiment": cfg.experiment,
        "config": cfg.canonical_text(),
        "config_hash": cfg.hash(),
        "seed": cfg["mc.seed"],
        "code_version": __version__,
        "backend": _kernels.backend(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "exit_code": code,
        "trajectory": outcome.trajectory,
        "outputs": {p.name: csvio.sha256_file(p) for p in outcome.files},
    }
    path = out / META_NAME
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def cmd_run(args) -> int:
    cfg = load_config(args.config, experiment=args.experiment, out=args.out)
    out = Path(cfg["output.dir"])
    outcome = run_experiment(cfg, out)
    code = _report(outcome)
    _write_meta(cfg, out, outcome, code)
    print(f"wrote {len(outcome.files)} files to {out}")
    return code


def cmd_replay(args) -> int:
    meta_path = Path(args.meta)
    try:
        meta = json.loads(meta_path.read_text())
        cfg = from_canonical(meta["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read metadata {meta_path}: {exc}") from exc
    if cfg.hash() != meta.get("config_hash"):
        raise UsageError("config hash mismatch: metadata was edited")
    src = meta_path.parent
    dW = None
    if meta.get("trajectory"):
        tpath = src / meta["trajectory"]
        if not tpath.exists():
            raise UsageError(f"missing trajectory {tpath}")
        if csvio.sha256_file(tpath) != meta["outputs"].get(meta["trajectory"]):
            raise UsageError(f"trajectory hash mismatch: {tpath} differs from the recorded run")
        problem = cfg.problem()
        dW = csvio.read_increments(tpath, problem.grid.K, problem.cov.M)
    out = Path(args.out) if args.out else src / "replay"
    outcome = run_experiment(cfg, out, dW=dW)
    code = _report(outcome)
    mismatched = [p.name for p in outcome.files if csvio.sha256_file(p) != meta["outputs"].get(p.name)]
    for name in mismatched:
        print(f"DIFF {name}")
    if mismatched:
        return EXIT_FAIL
    print(f"replay identical: {len(outcome.files)} files")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mspde", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mspde {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("config", help="config file of 'section.key = value' lines")
    r.add_argument("--experiment", choices=EXPERIMENTS, help="override experiment.name")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.set_defaults(func=cmd_run)
    p = sub.add_parser("replay", help="re-run from a metadata sidecar and compare outputs")
    p.add_argument("meta", help=f"{META_NAME} written by 'mspde run'")
    p.add_argument("--out", help="directory for replayed outputs (default <run>/replay)")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MspdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
