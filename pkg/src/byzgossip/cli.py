"""Command-line front end: ``byzgossip {topology inspect, run, sweep}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_json
from .engine import Network, records_to_csv, run
from .errors import DisconnectedRegularSubgraph, InvalidSpec, NonFiniteState
from .graph import inspection_rows
from .sweep import SweepSpec, atomic_write, run_sweep

EXIT_OK, EXIT_SPEC, EXIT_DISCONNECTED, EXIT_NONFINITE = 0, 2, 3, 4
SEED_ENV = "BYZGOSSIP_SEED"


def _err(msg: str):
    print(f"byzgossip: {msg}", file=sys.stderr)


def _load_config(path, seed=None) -> ExperimentConfig:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise InvalidSpec("experiment config must be a JSON object")
    if seed is None and os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise InvalidSpec(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        doc = {**doc, "seed": seed}
    return ExperimentConfig.from_dict(doc)


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def cmd_topology_inspect(args) -> int:
    cfg = _load_config(args.config)
    net = Network.from_config(cfg)
    topo, eff = net.topology, net.effective
    out = sys.stdout
    out.write("node_id,is_byzantine,degree,delta_i\n")
    for node, byz, deg, delta in inspection_rows(topo, eff):
        out.write(f"{node},{byz},{deg},{_fmt(delta)}\n")
    out.write(f"n={topo.n_total} n_regular={topo.n_regular} n_byzantine={topo.n_byzantine}\n")
    out.write(f"gamma={_fmt(eff.gamma)} delta_max={_fmt(eff.delta_max)} p={_fmt(eff.p)}\n")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    run_id = cfg.resolved_run_id()
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    try:
        records = run(cfg)
    except NonFiniteState as exc:
        atomic_write(out, records_to_csv(exc.records, run_id, "NonFiniteState", exc.round))
        _err(str(exc))
        return EXIT_NONFINITE
    atomic_write(out, records_to_csv(records, run_id))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = SweepSpec.from_dict(load_json(args.spec))
    entries = run_sweep(spec, args.out_dir, max(1, args.parallel))
    counts = {}
    for e in entries:
        counts[e["status"]] = counts.get(e["status"], 0) + 1
    _err("sweep done: " + " ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="byzgossip", description="Byzantine-robust gossip simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topology", help="graph utilities")
    tsub = topo.add_subparsers(dest="topology_command", required=True)
    insp = tsub.add_parser("inspect", help="print per-node degree and Byzantine weight")
    insp.add_argument("config")
    insp.set_defaults(func=cmd_topology_inspect)

    r = sub.add_parser("run", help="run one experiment and write its CSV")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help=f"overrides {SEED_ENV} and the config seed")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("spec")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_SPEC if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DisconnectedRegularSubgraph as exc:
        _err(f"disconnected regular subgraph: {exc}")
        return EXIT_DISCONNECTED
    except (InvalidSpec, json.JSONDecodeError, OSError) as exc:
        _err(str(exc))
        return EXIT_SPEC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
