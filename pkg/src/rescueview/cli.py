"""Command-line harness.

    rescueview generate --seed 1 --entities 1035 --viewers 50 --out runs/
    rescueview run --seed 1 --entities 1035 --viewers 50 --ticks 3 --out runs/
    rescueview score --scenario s.txt --views mv.txt
    rescueview dump-views --scenario s.txt --views mv.txt --out img/
    rescueview oracle-check
    rescueview agent --connect 127.0.0.1:5000 --out runs/

A ``--config`` file holds ``key=value`` lines named like the long flags
(``entities=1035``); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import socket
import subprocess
import sys
import threading
from pathlib import Path

from . import checks
from .annealer import AnnealSchedule, MoveConfig, OptimizeResult
from .camera import DEFAULT_FOV, CameraError, MultiView
from .protocol import (AnnealingAgent, Mode, Problem, SocketChannel, SolutionLog, SolutionView, TickSource,
                       _solution_view, decode, memory_pipe, run_agent, run_app_endpoint)
from .quality import Weights, total_quality
from .scene import (DEFAULT_EXTENT, Box, DynamicsScript, RelevanceConfig, Scenario, ScenarioError,
                    advance_tick, generate_scenario, parse_scenario, parse_vec, serialize_scenario)
from .visibility import VisibilityConfig, render_item_buffer, write_ppm

log = logging.getLogger("rescueview")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, out_default: str = ".") -> None:
    p.add_argument("--config", help="key=value file mirroring the long flags")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=out_default, help="output directory")


def _scene_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--scenario", help="scenario file (instead of generator flags)")
    p.add_argument("--entities", type=int, required=required)
    p.add_argument("--viewers", type=int, required=required)
    p.add_argument("--extent", help="x0,y0,z0,x1,y1,z1 in meters")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--w1", type=float, default=0.8)
    p.add_argument("--w2", type=float, default=0.2)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--maxdist", type=float, default=300.0)
    p.add_argument("--fov", type=float, default=DEFAULT_FOV)


def _anneal_flags(p: argparse.ArgumentParser) -> None:
    d = AnnealSchedule()
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--iters-per-temp", type=int, default=d.iters_per_temp)
    p.add_argument("--t0-samples", type=int, default=d.t0_samples)
    p.add_argument("--t-floor-ratio", type=float, default=d.t_floor_ratio)
    p.add_argument("--swap-only", action="store_true", help="freeze view parameters")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rescueview", description="Multiview optimization for rescue-simulation monitoring")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic scenario file")
    _common(p)
    p.add_argument("--entities", type=int)
    p.add_argument("--viewers", type=int)
    p.add_argument("--extent")
    p.add_argument("--file", help="output file name inside --out (default scenario_seed<seed>.txt)")

    p = sub.add_parser("run", help="simulate ticks and optimize each over the agent protocol")
    _common(p, "run_out")
    _scene_flags(p)
    _model_flags(p)
    _anneal_flags(p)
    p.add_argument("--ticks", type=int, default=1)
    p.add_argument("--script", help="dynamics script file")
    p.add_argument("--transport", choices=["loopback", "listen", "connect"], default="loopback")
    p.add_argument("--port", type=int, default=0, help="listen port (0 picks a free one)")
    p.add_argument("--address", help="host:port of a listening agent (connect mode)")
    p.add_argument("--external-agent", action="store_true",
                   help="listen mode: wait for an external agent instead of spawning one")
    p.add_argument("--period", type=int, default=0, help="tick period announced to the agent (ms)")

    for name, helptext in (("score", "evaluate one multiview"), ("dump-views", "write item buffers as PPM")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--scenario", required=True)
        p.add_argument("--views", required=True, help="file of VIEW lines")
        _model_flags(p)

    p = sub.add_parser("oracle-check", help="run the visibility and annealer oracle suites")
    _common(p)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--resolutions", default="32,64,128")
    p.add_argument("--sa-runs", type=int, default=100)

    p = sub.add_parser("agent", help="run a standalone optimization agent")
    _common(p)
    _model_flags(p)
    _anneal_flags(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--connect", help="host:port of the application")
    g.add_argument("--listen", type=int, help="port to accept one application on")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    extra: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{args.config}:{lineno}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "yes", "1") and flag in ("--swap-only", "--external-agent"):
            extra.append(flag)
        elif value.lower() not in ("false", "no", "0") or flag not in ("--swap-only", "--external-agent"):
            extra += [flag, value]
    # command-line flags come last so they override the file
    return parser.parse_args([argv[0], *extra, *argv[1:]])


def _extent(text: str | None) -> Box:
    if not text:
        return DEFAULT_EXTENT
    try:
        v = parse_vec(text, 6)
        return Box(v[:3], v[3:])
    except (ValueError, ScenarioError) as exc:
        raise UsageError(f"bad --extent: {exc}") from None


def _schedule(args) -> AnnealSchedule:
    return AnnealSchedule(t0_samples=args.t0_samples, alpha=args.alpha, iters_per_temp=args.iters_per_temp,
                          max_iters=args.max_iters, t_floor_ratio=args.t_floor_ratio)


def _moves(args) -> MoveConfig:
    return MoveConfig(swap_probability=1.0, perturb=False) if args.swap_only else MoveConfig()


def _load_scenario(args) -> Scenario:
    if args.scenario:
        if args.entities is not None or args.viewers is not None:
            raise UsageError("give either --scenario or generator flags, not both")
        try:
            return parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read scenario: {exc}") from None
    if args.entities is None or args.viewers is None:
        raise UsageError("need --scenario or both --entities and --viewers")
    return generate_scenario(args.seed, args.entities, args.viewers, _extent(args.extent))


def _problem(args) -> Problem:
    p = Problem(args.k, args.w1, args.w2, args.res, args.maxdist, getattr(args, "period", 0))
    try:
        Weights(p.w1, p.w2)
        VisibilityConfig(p.resolution, p.max_view_distance)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if p.k < 1:
        raise UsageError("--k must be at least 1")
    return p


def _trace_writer(out: Path):
    def write(tick: int, result: OptimizeResult) -> None:
        (out / f"trace_tick{tick}.csv").write_text(result.trace_csv(), encoding="utf-8")
    return write


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.entities is None or args.viewers is None:
        raise UsageError("generate needs --entities and --viewers")
    try:
        s = generate_scenario(args.seed, args.entities, args.viewers, _extent(args.extent))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (args.file or f"scenario_seed{args.seed}.txt")
    path.write_text(serialize_scenario(s), encoding="utf-8")
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        s0 = _load_scenario(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    problem = _problem(args)
    if problem.k > len(s0.viewers):
        raise UsageError(f"--k {problem.k} exceeds the {len(s0.viewers)} viewers")
    if args.ticks < 1:
        raise UsageError("--ticks must be positive")
    script = DynamicsScript()
    if args.script:
        try:
            script = DynamicsScript.parse(Path(args.script).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"bad dynamics script: {exc}") from None
    snapshots = [s0]
    for _ in range(args.ticks - 1):
        snapshots.append(advance_tick(snapshots[-1], script))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sink = SolutionLog()
    source = TickSource(snapshots)

    if args.transport == "loopback":
        app_end, agent_end = memory_pipe()
        agent = AnnealingAgent(_schedule(args), args.seed, _moves(args), args.fov, _trace_writer(out))
        box: dict = {}
        t = threading.Thread(target=lambda: box.setdefault("r", run_agent(agent_end, agent)), daemon=True)
        t.start()
        report = run_app_endpoint(app_end, source, sink, problem)
        t.join()
        agent_report = box.get("r")
        if agent_report is not None and agent_report.failure:
            report.failure = report.failure or agent_report.failure
    elif args.transport == "listen":
        report = _run_listening(args, source, sink, problem, out)
    else:
        if not args.address:
            raise UsageError("connect mode needs --address host:port")
        sock = socket.create_connection(_host_port(args.address), timeout=None)
        chan = SocketChannel(sock)
        report = run_app_endpoint(chan, source, sink, problem)
        chan.detach()

    header = " ".join([
        f"seed={args.seed}", f"k={problem.k}", f"w1={problem.w1!r}", f"w2={problem.w2!r}",
        f"res={problem.resolution}", f"maxdist={problem.max_view_distance!r}", f"fov={args.fov!r}",
        f"ticks={args.ticks}", f"max_iters={args.max_iters}", f"alpha={args.alpha!r}",
        f"iters_per_temp={args.iters_per_temp}", f"t0_samples={args.t0_samples}",
        f"t_floor_ratio={args.t_floor_ratio!r}", f"swap_only={int(args.swap_only)}",
        f"entities={len(s0.entities)}", f"viewers={len(s0.viewers)}",
    ])
    (out / "summary.txt").write_text("\n".join([f"# {header}", *sink.summary_lines()]) + "\n", encoding="utf-8")
    for line in sink.summary_lines():
        print(line)
    if report.failure or len(sink.applied) != args.ticks:
        log.error("session ended early: %s (%d of %d ticks solved)", report.failure or "no failure reported",
                  len(sink.applied), args.ticks)
        return EXIT_CHECK
    return EXIT_OK


def _agent_argv(args, host: str, port: int, out: Path) -> list[str]:
    argv = [sys.executable, "-m", "rescueview", "agent", "--connect", f"{host}:{port}", "--out", str(out),
            "--seed", str(args.seed), "--fov", repr(args.fov), "--max-iters", str(args.max_iters),
            "--alpha", repr(args.alpha), "--iters-per-temp", str(args.iters_per_temp),
            "--t0-samples", str(args.t0_samples), "--t-floor-ratio", repr(args.t_floor_ratio)]
    if args.swap_only:
        argv.append("--swap-only")
    return argv


def _run_listening(args, source, sink, problem, out):
    server = socket.create_server(("127.0.0.1", args.port))
    host, port = server.getsockname()[:2]
    child = None
    if args.external_agent:
        print(f"listening on {host}:{port}", flush=True)
    else:
        child = subprocess.Popen(_agent_argv(args, host, port, out))
    try:
        server.settimeout(None if args.external_agent else 120.0)
        conn, _ = server.accept()
    finally:
        server.close()
    chan = SocketChannel(conn)
    report = run_app_endpoint(chan, source, sink, problem)
    chan.detach()
    if child is not None and child.wait(timeout=600) != 0:
        report.failure = report.failure or f"agent process exited with {child.returncode}"
    return report


def cmd_agent(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent = AnnealingAgent(_schedule(args), args.seed, _moves(args), args.fov, _trace_writer(out))
    if args.connect:
        sock = socket.create_connection(_host_port(args.connect))
    else:
        server = socket.create_server(("127.0.0.1", args.listen))
        print(f"listening on {server.getsockname()[0]}:{server.getsockname()[1]}", flush=True)
        sock, _ = server.accept()
        server.close()
    chan = SocketChannel(sock)
    report = run_agent(chan, agent)
    chan.detach()
    for tick, q, iters, ids in report.solutions:
        log.info("tick %d: q=%r after %d iterations, views %s", tick, q, iters, ids)
    return EXIT_CHECK if report.failure else EXIT_OK


def _load_views(args, s: Scenario) -> MultiView:
    try:
        text = Path(args.views).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read views: {exc}") from None
    views = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        msg = decode(line, Mode.SOLUTION)
        if not isinstance(msg, SolutionView):
            raise UsageError(f"{args.views}:{lineno}: expected a VIEW line")
        try:
            views.append(_solution_view(s, msg))
        except ValueError as exc:
            raise UsageError(f"{args.views}:{lineno}: {exc}") from None
    if not views:
        raise UsageError("the multiview is empty")
    try:
        return MultiView(tuple(views))
    except CameraError as exc:
        raise UsageError(str(exc)) from None


def _scenario_and_views(args) -> tuple[Scenario, MultiView]:
    try:
        s = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad scenario: {exc}") from None
    return s, _load_views(args, s)


def cmd_score(args) -> int:
    s, mv = _scenario_and_views(args)
    p = _problem(args)
    b = total_quality(mv, s, p.weights, RelevanceConfig(), p.visibility)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "score.csv").write_text(b.to_csv(), encoding="utf-8")
    sys.stdout.write(b.to_csv())
    return EXIT_OK


def cmd_dump_views(args) -> int:
    s, mv = _scenario_and_views(args)
    p = _problem(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for j, v in enumerate(mv):
        path = out / f"view{j}.ppm"
        write_ppm(render_item_buffer(v, s, p.visibility), path)
        print(path)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    try:
        resolutions = [int(r) for r in args.resolutions.split(",")]
    except ValueError:
        raise UsageError("--resolutions must be comma-separated integers") from None
    reports = [
        checks.visibility_suite(args.scenes, resolutions, seed=args.seed),
        checks.annealer_suite(args.sa_runs, seed=args.seed),
    ]
    for r in reports:
        print(r.line())
    print(f"scenes tested: {args.scenes}")
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"first counterexample: {failed[0].first_counterexample}")
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "score": cmd_score,
    "dump-views": cmd_dump_views,
    "oracle-check": cmd_oracle_check,
    "agent": cmd_agent,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rescueview: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
