"""Command-line entry point: ``tda <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
Errors are reported on stderr as a single ``error: <code>: <detail>`` line.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from tda.errors import TDAError
from tda.scheduler import Policy

log = logging.getLogger("tda")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class ResultMismatch(TDAError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _endpoint(allow_zero=False):
    from tda.transport import Endpoint

    def parse(text):
        try:
            return Endpoint.parse(text, allow_zero=allow_zero)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _policy(text):
    try:
        return Policy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def setup_logging():
    level = LOG_LEVELS.get(os.environ.get("TDA_LOG_LEVEL", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")


def _announce(text):
    print(text, file=sys.stderr, flush=True)


def _serve_forever(node):
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    try:
        while not done.wait(0.5):
            pass
    finally:
        node.stop()
    return 0


# -- live subcommands ---------------------------------------------------------

def cmd_coordinator(args):
    from tda.coordinator import CoordinatorConfig, CoordinatorServer
    from tda.transport import TcpNetwork

    config = CoordinatorConfig.from_file(args.config) if args.config else CoordinatorConfig()
    server = CoordinatorServer(TcpNetwork(), args.listen, config).start()
    _announce(f"listening {server.endpoint}")
    return _serve_forever(server)


def cmd_provider(args):
    from tda.provider import Provider, ProviderConfig
    from tda.transport import TcpNetwork

    config = ProviderConfig(id=args.id, coordinator=args.coordinator, listen=args.listen,
                            heartbeat_interval=args.heartbeat, calibration=args.calibration,
                            synthetic_slowdown=args.slowdown)
    provider = Provider(config, TcpNetwork()).start()
    _announce(f"ready {provider.node_id} {provider.endpoint} speed={provider.speed:.6g}")
    return _serve_forever(provider)


def cmd_client_submit(args):
    from tda.client import Client
    from tda.matmul import Matrix, multiply_reference
    from tda.perfmodel import OverheadModel, SpeedupModel, predicted_speedup
    from tda.provider import calibrate
    from tda.sim import write_csv
    from tda.transport import TcpNetwork

    first = Matrix.random(args.size, args.size, seed=args.seed)
    second = Matrix.random(args.size, args.size, seed=args.seed + 1)
    with Client(TcpNetwork(), args.coordinator, args.listen) as client:
        result, report = client.submit(first, second, args.policy)
    t0 = time.perf_counter()
    reference = multiply_reference(first, second)
    t_standalone = time.perf_counter() - t0
    if result != reference:
        raise ResultMismatch("distributed product differs from the local reference product")
    n_h = sum(report.performances.values()) / calibrate()
    formula = predicted_speedup(SpeedupModel(t_standalone, n_h, OverheadModel(args.slope), args.size))
    row = {"run_id": 1, "policy": report.policy, "load_rows": args.size,
           "n_providers": report.n_providers, "n_h": n_h, "t_standalone_s": t_standalone,
           "t_total_s": report.total_seconds, "t_compute_max_s": report.compute_max_seconds,
           "t_overhead_s": report.overhead_seconds,
           "speedup_measured": t_standalone / report.total_seconds, "speedup_formula": formula}
    sys.stdout.write(write_csv([row], header=args.header))
    return 0


def cmd_status(args):
    from tda.errors import IoError, JobFailed
    from tda.transport import Kind, Message, StatusRequest, TcpNetwork

    ch = TcpNetwork().connect(args.coordinator)
    ch.sock.settimeout(args.timeout)
    try:
        ch.send(Message.of(StatusRequest(), "status"))
        reply = ch.receive()
    except TimeoutError:
        raise IoError(f"no status reply from {args.coordinator}") from None
    finally:
        ch.close()
    if reply.kind is not Kind.STATUS:
        raise JobFailed(f"unexpected reply {reply.kind.name}")
    header = ("id", "endpoint", "performance", "last_seen_age_s", "response_time_s", "samples", "services")
    rows = [(p.provider_id, str(p.endpoint), f"{p.performance:.6g}",
             "never" if p.last_seen_age < 0 else f"{p.last_seen_age:.1f}",
             f"{p.response_time:.4f}", str(p.samples), ",".join(p.services))
            for p in reply.payload.providers]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    for r in [header, *rows]:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return 0


# -- simulation subcommands ---------------------------------------------------

def _scenario(args, full_sweep=True):
    from tda.sim import SimScenario, replication_scenario

    sc = SimScenario.from_file(args.scenario) if args.scenario else replication_scenario()
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if not full_sweep and sc.provider_counts is None:
        sc = dataclasses.replace(sc, provider_counts=(len(sc.speeds),))
    return sc


def _emit(csv_text, out):
    if out is None or out == "-":
        sys.stdout.write(csv_text)
    else:
        Path(out).write_text(csv_text, newline="")


def _figures(outcome, args, default_dir=None):
    from tda.plotting import render_report

    out_dir = args.figures or default_dir
    if out_dir is None:
        return
    stem = Path(args.out).stem if args.out and args.out != "-" else "sim"
    for path in render_report(outcome, out_dir, stem):
        log.info("event=figure path=%s", path)


def _simulate_and_emit(args, scenario, default_fig_dir=None):
    from tda.sim import simulate, write_csv

    outcome = simulate(scenario)
    _emit(write_csv(r.row() for r in outcome.runs), args.out)
    _figures(outcome, args, default_fig_dir)
    return 0


def cmd_sim_run(args):
    return _simulate_and_emit(args, _scenario(args, full_sweep=False))


def cmd_sim_sweep(args):
    return _simulate_and_emit(args, _scenario(args))


def cmd_sim_replicate(args):
    from tda.sim import replication_scenario

    sc = replication_scenario()
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    default_dir = None
    if not args.no_figures and args.out and args.out != "-":
        default_dir = Path(args.out).resolve().parent
    return _simulate_and_emit(args, sc, default_dir)


def cmd_sim_compare(args):
    from tda.sim import compare_live, deviation_csv, read_csv

    sc = _scenario(args)
    reports = read_csv(Path(args.reports).read_text())
    _emit(deviation_csv(compare_live(reports, sc), sc), args.out)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tda", allow_abbrev=False,
                description="Homogenized load balancing: live cluster and simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("coordinator", help="run the coordinator", allow_abbrev=False)
    c.add_argument("--listen", type=_endpoint(allow_zero=True), default="127.0.0.1:7700",
                   help="host:port to listen on (port 0 picks a free port)")
    c.add_argument("--config", help="key = value config file")
    c.set_defaults(func=cmd_coordinator)

    pr = sub.add_parser("provider", help="run a service provider", allow_abbrev=False)
    pr.add_argument("--id", required=True)
    pr.add_argument("--coordinator", type=_endpoint(), required=True)
    pr.add_argument("--listen", type=_endpoint(allow_zero=True), default="127.0.0.1:0")
    pr.add_argument("--slowdown", type=float, default=1.0, metavar="FACTOR",
                    help="stretch compute time by FACTOR (>= 1)")
    pr.add_argument("--calibration", type=_positive_float, metavar="VALUE",
                    help="fixed speed in reference rows/s instead of measuring")
    pr.add_argument("--heartbeat", type=_positive_float, default=2.0, metavar="SECONDS")
    pr.set_defaults(func=cmd_provider)

    cl = sub.add_parser("client", help="thin client", allow_abbrev=False)
    clsub = cl.add_subparsers(dest="client_command", required=True, parser_class=_Parser)
    s = clsub.add_parser("submit", help="multiply two seeded random square matrices", allow_abbrev=False)
    s.add_argument("--coordinator", type=_endpoint(), required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--policy", type=_policy, default=Policy.HOMOGENIZED, help="homogenized|equal")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--listen", type=_endpoint(allow_zero=True), default="127.0.0.1:0",
                   help="where providers send partial results")
    s.add_argument("--slope", type=float, default=0.0,
                   help="overhead slope for the formula column (seconds per row)")
    s.add_argument("--header", action="store_true", help="print the CSV header too")
    s.set_defaults(func=cmd_client_submit)

    st = sub.add_parser("status", help="show the coordinator's provider table", allow_abbrev=False)
    st.add_argument("--coordinator", type=_endpoint(), required=True)
    st.add_argument("--timeout", type=_positive_float, default=10.0)
    st.set_defaults(func=cmd_status)

    sim = sub.add_parser("sim", help="deterministic simulator", allow_abbrev=False)
    simsub = sim.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    for name, func, helptext in (("run", cmd_sim_run, "simulate with every provider of the scenario"),
                                 ("sweep", cmd_sim_sweep, "simulate every provider-count prefix")):
        q = simsub.add_parser(name, help=helptext, allow_abbrev=False)
        q.add_argument("--scenario", help="scenario file (default: bundled replication scenario)")
        q.add_argument("--seed", type=int)
        q.add_argument("--out", help="CSV path (default: stdout)")
        q.add_argument("--figures", help="directory for PNG figures")
        q.set_defaults(func=func)
    r = simsub.add_parser("replicate-paper", help="sweep the bundled 9-provider scenario",
                          allow_abbrev=False)
    r.add_argument("--out", help="CSV path (default: stdout); figures go next to it")
    r.add_argument("--seed", type=int)
    r.add_argument("--figures", help="directory for PNG figures (default: next to --out)")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_sim_replicate)
    cmp_ = simsub.add_parser("compare", help="measured vs formula speedup for recorded runs",
                             allow_abbrev=False)
    cmp_.add_argument("--reports", required=True, help="CSV of runs (sweep schema)")
    cmp_.add_argument("--scenario")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_sim_compare)
    return p


def _validate(args):
    if getattr(args, "size", 1) < 1:
        raise UsageError(f"--size must be at least 1, got {args.size}")
    if getattr(args, "slowdown", 1.0) < 1:
        raise UsageError(f"--slowdown must be >= 1, got {args.slowdown}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    setup_logging()
    try:
        return args.func(args)
    except TDAError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
