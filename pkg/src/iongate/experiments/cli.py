"""Command-line entry point ``iongate-sim``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..crystal import ConsistencyError, SolverError
from ..effective import ResonanceError
from ..fidelity import FidelityConsistencyError
from ..propagate import StepSizeError
from .config import ConfigError, load_config
from .io import _jsonable, write_csv
from .pipelines import PIPELINES, SUBCOMMAND_EXPERIMENT

log = logging.getLogger("iongate")

HELP = {
    "modes": "transverse normal modes of the crystal",
    "jeff": "effective couplings, residual terms and predicted gate time",
    "swap": "swap probabilities vs time for several nbar (undriven)",
    "bell": "Bell-state error vs nbar and drive strength",
    "coherence": "Ramsey decay under OU noise and fitted T2",
    "noise-gate": "Bell-state error vs T2 for the driven gate",
    "channel-fidelity": "entanglement and Haar channel fidelities vs T2",
    "polaron-check": "numerical check of the polaron operator identities",
    "force-demo": "Trotterized spin-dependent force trajectories",
    "convergence": "dt-halving and Fock-cutoff drifts of the gate fidelity",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iongate-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, default=None, help="YAML config file (Hz, s)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for trajectories")
        p.add_argument("--full-scale", action="store_true", help="full-size cutoffs and sample counts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, SUBCOMMAND_EXPERIMENT[args.command], args.full_scale)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.threads is not None:
        cfg.numerics["threads"] = args.threads
    out_dir = args.out or cfg.output
    t0 = time.perf_counter()
    try:
        res = PIPELINES[args.command](cfg)
    except (SolverError, ConsistencyError, ResonanceError, FidelityConsistencyError, StepSizeError) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    runtime = time.perf_counter() - t0
    meta = {**cfg.metadata(), "lab_hz": cfg.lab.to_hz_dict(), "summary": res.summary,
            "violations": res.violations}
    stem = args.command.replace("-", "_")
    paths = [write_csv(out_dir / f"{stem}.csv", res.columns, res.rows, meta)]
    for key, (cols, rows, extra) in res.extra_tables.items():
        paths.append(write_csv(out_dir / f"{stem}_{key}.csv", cols, rows, {**meta, "slice": extra}))
    print(json.dumps({"command": args.command, "files": [str(p) for p in paths],
                      "summary": _jsonable(res.summary), "violations": res.violations,
                      "runtime_s": round(runtime, 3)}, indent=2, default=str))
    if res.violations:
        for v in res.violations:
            print(f"invariant violation: {v}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
