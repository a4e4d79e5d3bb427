"""Command line: ``idaf {validate,graph,sim,demo-dft,demo-rooms}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .builtin import SpecFormatError, load_spec
from .configuration import to_dot, to_graph
from .scenario import ScenarioError, load_scenario, run_scenario
from .topology import TopologyError, validate
from .transport import SimParams

log = logging.getLogger("idaf")

OK, FAILED, USAGE = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _skew(text: str) -> dict:
    """``n1=50,n2=100`` -> extra send delay in ms per node."""
    out = {}
    for part in filter(None, text.split(",")):
        node, _, ms = part.partition("=")
        try:
            out[node.strip()] = int(ms)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad skew entry {part!r}") from None
    return out


def _common(suppress: bool) -> argparse.ArgumentParser:
    # the same flags are accepted before or after the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=_u64, default=d(0), help="RNG seed (default 0)")
    p.add_argument("--trace", type=Path, default=d(None), help="write the JSONL event trace here")
    p.add_argument("--transport", choices=("sim", "socket"), default=d("sim"))
    p.add_argument("--report", type=Path, default=d(None), metavar="DIR",
                   help="write metrics tables and figures into DIR")
    p.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idaf", parents=[_common(False)],
                                 description="Topology-driven distributed application framework.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    common = [_common(True)]

    p = sub.add_parser("validate", parents=common, help="check a topology file")
    p.add_argument("topology", help="JSON file or builtin name (star, mesh4, mesh6)")

    p = sub.add_parser("graph", parents=common, help="run a scenario and write the configuration as DOT")
    p.add_argument("scenario", type=Path)
    p.add_argument("--at", type=float, default=None, help="snapshot time in virtual ms")
    p.add_argument("--out", type=Path, default=None, help="DOT file (default stdout)")

    p = sub.add_parser("sim", parents=common, help="execute a scenario script")
    p.add_argument("scenario", type=Path)

    p = sub.add_parser("demo-dft", parents=common, help="distributed block DFT on a star")
    p.add_argument("--leaves", type=int, default=3)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--samples", type=int, default=256, help="samples per block")
    p.add_argument("--stats", action="store_true", help="leaves return (mean, std) per block")
    p.add_argument("--input", type=Path, default=None, help="text file of 'real imag' lines")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--compute-cost", type=float, default=0.0, metavar="MS",
                   help="simulated compute time per block")
    p.add_argument("--skew", type=_skew, default={}, metavar="NODE=MS,...",
                   help="extra send latency per node, e.g. n1=50,n2=100")

    p = sub.add_parser("demo-rooms", parents=common, help="Room Explorer on a 2x2 mesh")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--out", type=Path, default=None, help="JSONL activity log")
    return ap


# -- helpers ---------------------------------------------------------------------
def _transport(args, params: SimParams):
    if args.transport == "socket":
        from .socket_transport import SocketTransport

        return SocketTransport(params)
    return None


def _close(swarm) -> None:
    close = getattr(swarm.transport, "close", None)
    if close is not None:
        close()


def _write_trace(args, swarm) -> None:
    if args.trace is not None:
        swarm.trace.write(args.trace)


def _tsv(path: Path, rows: list, header: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if r.get(h) is None else r.get(h) for h in header])


def _report(args, swarm, ida: str, metrics: dict) -> None:
    """metrics.tsv, joins.tsv and the topology figure shared by every command."""
    if args.report is None:
        return
    from . import plotting

    d = args.report
    d.mkdir(parents=True, exist_ok=True)
    joins = swarm.join_metrics(ida)
    _tsv(d / "joins.tsv", joins, ["node", "messages", "latency_ms", "attempts", "phase"])
    _tsv(d / "metrics.tsv", [{"metric": k, "value": v} for k, v in metrics.items()],
         ["metric", "value"])
    plotting.draw_configuration(swarm.cfg(ida), d / "topology.png")
    if joins:
        plotting.plot_join_metrics(joins, d / "joins.png")


# -- commands ----------------------------------------------------------------------
def cmd_validate(args) -> int:
    try:
        spec = load_spec(args.topology)
    except (SpecFormatError, TopologyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    problems = validate(spec)
    for v in problems:
        print(v)
    if problems:
        return FAILED
    print(f"{spec.name}: ok", file=sys.stderr)
    return OK


def cmd_graph(args) -> int:
    try:
        sc = load_scenario(args.scenario)
        if args.at is not None and args.at > sc.end:
            print(f"warning: --at {args.at:g} is past the end of the script ({sc.end:g});"
                  " running to completion", file=sys.stderr)
            args.at = None
        out = run_scenario(sc, seed=args.seed, until=args.at,
                           transport=_transport(args, SimParams(seed=args.seed)))
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    try:
        dot = to_dot(to_graph(out.cfg))
        if args.out is None:
            sys.stdout.write(dot)
        else:
            args.out.write_text(dot, encoding="utf-8")
        _write_trace(args, out.swarm)
        _report(args, out.swarm, sc.ida, {"members": len(out.cfg.members),
                                          "edges": len(out.cfg.connections)})
    finally:
        _close(out.swarm)
    return OK


def cmd_sim(args) -> int:
    try:
        sc = load_scenario(args.scenario)
        out = run_scenario(sc, seed=args.seed,
                           transport=_transport(args, SimParams(seed=args.seed)))
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    try:
        for w in out.warnings:
            print(f"warning: {w}", file=sys.stderr)
        for s in out.snapshots:
            print(f"t={s.at:g}\t{s.label}\tmembers={s.members}\tedges={s.edges}"
                  f"\tfrozen={len(s.frozen)}\tdamaged={'yes' if s.damaged else 'no'}"
                  f"\tfailed={'yes' if s.failed else 'no'}\tverify={'ok' if s.ok else 'FAIL'}")
            if s.frozen:
                print(f"  frozen: {','.join(s.frozen)}")
            for v in s.violations:
                print(f"  violation: {v}")
        if "census" in out.state:
            n, c = out.state["census"]
            print(f"census: persons={n} cookies={c}")
        _write_trace(args, out.swarm)
        final = out.snapshots[-1]
        metrics = {"snapshots": len(out.snapshots),
                   "snapshots_failing": sum(not s.ok for s in out.snapshots),
                   "members": final.members, "edges": final.edges,
                   "frozen": len(final.frozen), "damaged": int(final.damaged),
                   "ida_failed": int(final.failed)}
        _report(args, out.swarm, sc.ida, metrics)
        if args.report is not None:
            _tsv(args.report / "snapshots.tsv",
                 [{"at": s.at, "label": s.label, "members": s.members, "edges": s.edges,
                   "frozen": len(s.frozen), "damaged": int(s.damaged), "failed": int(s.failed),
                   "violations": len(s.violations)} for s in out.snapshots],
                 ["at", "label", "members", "edges", "frozen", "damaged", "failed", "violations"])
    finally:
        _close(out.swarm)
    return OK if out.ok else FAILED


def cmd_demo_dft(args) -> int:
    from .apps.dft import read_signal, run_dft_demo, write_signal
    from .swarm import Swarm

    if args.leaves < 1 or args.blocks < 1 or args.samples < 1:
        print("error: --leaves, --blocks and --samples must be >= 1", file=sys.stderr)
        return USAGE
    real = imag = None
    if args.input is not None:
        try:
            real, imag = read_signal(args.input)
        except (OSError, ValueError) as e:
            print(f"error: cannot read {args.input}: {e}", file=sys.stderr)
            return USAGE
        if len(real) % args.blocks:
            print(f"error: {len(real)} samples do not split into {args.blocks} equal blocks",
                  file=sys.stderr)
            return USAGE
    params = SimParams(seed=args.seed, extra_delay=dict(args.skew))
    swarm = Swarm(params, transport=_transport(args, params))
    try:
        res = run_dft_demo(args.leaves, args.blocks, args.samples, args.stats, args.seed,
                           real, imag, args.compute_cost, params, swarm=swarm)
    except ValueError as e:
        _close(swarm)
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    try:
        _write_trace(args, swarm)
        if res.refused is not None:
            print(f"error: run did not complete: {res.refused}", file=sys.stderr)
            return FAILED
        print("assembly order: " + ",".join(map(str, res.assembly_order)))
        for b in res.per_block:
            print(f"block {b['seq']}\tleaf={b['leaf']}\tsent={b['sent_ms']:g}"
                  f"\treturned={b['returned_ms']:g}")
        if args.stats:
            for i, (m, s) in enumerate(res.stats):
                print(f"stats {i}\tmean={m!r}\tstd={s!r}")
        print(f"completion: {res.completion_ms:g} ms (virtual)")
        print(f"max abs error vs serial: {res.max_error:.3e}")
        if args.out is not None:
            write_signal(args.out, res.real, res.imag)
        metrics = {"leaves": args.leaves, "blocks": args.blocks, "samples": args.samples,
                   "completion_ms": res.completion_ms, "max_error": res.max_error,
                   "assembly_order": ",".join(map(str, res.assembly_order))}
        _report(args, swarm, "dft", metrics)
        if args.report is not None:
            from . import plotting

            _tsv(args.report / "blocks.tsv", res.per_block, ["seq", "leaf", "sent_ms", "returned_ms"])
            plotting.plot_block_timeline(res.per_block, args.report / "blocks.png")
            if not args.stats:
                plotting.plot_spectrum(res.real, res.imag, len(res.real) // args.blocks,
                                       args.report / "spectrum.png")
        if not res.ok:
            diff = np.maximum(np.abs(res.real - res.ref_real), np.abs(res.imag - res.ref_imag))
            bad = np.flatnonzero(diff > 1e-9)
            print(f"mismatch: {len(bad)} of {len(diff)} values differ from the serial oracle;"
                  f" first at index {bad[0]}", file=sys.stderr)
            return FAILED
    finally:
        _close(swarm)
    return OK


def cmd_demo_rooms(args) -> int:
    from .apps.rooms import run_rooms_demo

    if args.steps < 0:
        print("error: --steps must be >= 0", file=sys.stderr)
        return USAGE
    params = SimParams(seed=args.seed)
    res = run_rooms_demo(args.steps, args.seed, params=params, transport=_transport(args, params))
    try:
        _write_trace(args, res.swarm)
        if args.out is not None:
            args.out.write_text(res.dumps(), encoding="utf-8")
        last = res.counts[-1] if res.counts else None
        if last is not None:
            print(f"ticks: {args.steps}\tpersons={last[1]}\tcookies={last[2]}")
        else:
            print(f"ticks: {args.steps}")
        print(f"log records: {len(res.log)}")
        metrics = {"steps": args.steps, "log_records": len(res.log),
                   "first_breach": res.first_breach}
        _report(args, res.swarm, "rooms", metrics)
        if args.report is not None:
            from . import plotting

            plotting.plot_census(res.counts, args.report / "census.png")
        if not res.ok:
            print(f"conservation breached at tick {res.first_breach}", file=sys.stderr)
            return FAILED
    finally:
        _close(res.swarm)
    return OK


COMMANDS = {
    "validate": cmd_validate,
    "graph": cmd_graph,
    "sim": cmd_sim,
    "demo-dft": cmd_demo_dft,
    "demo-rooms": cmd_demo_rooms,
}


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
