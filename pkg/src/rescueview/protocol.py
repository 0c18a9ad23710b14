"""Line protocol between the optimization agent and the visualization app.

Every message is one UTF-8 line ``WORD key=value ...``; scene data and
solutions travel as blocks closed by ``END``.  Unknown keys are ignored so
either side can grow new fields without breaking the other.

    agent                      app
      CONNECT proto=1 name=..  ->
                           <-  ACK session=..
                           <-  PROBLEM k=.. w1=.. w2=.. res=.. maxdist=.. period=..
      REQ                      ->
                           <-  DATA tick=.. n=.. m=..  / ENT .. / VIEWER .. / END
      SOLUTION tick=.. ..      ->  VIEW .. / END
      ...
                           <-  BYE
"""

from __future__ import annotations

import enum
import math
import queue
import re
import socket
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol as TypingProtocol, Union

from .annealer import AnnealSchedule, MoveConfig, OptimizeResult, optimize, warm_start
from .camera import FOV_MAX, FOV_MIN, DegenerateFrameError, MultiView, ViewParams, CameraError
from .quality import Weights
from .scene import (Box, Entity, Scenario, ScenarioError, ViewerAgent, entity_line, format_float,
                    format_vec, parse_entity_fields, parse_vec, viewer_line)
from .visibility import VisibilityConfig

PROTO_VERSION = 1

TOKEN_RE = re.compile(r"[A-Za-z0-9_-]+")
INT_RE = re.compile(r"\d+")
FLOAT_RE = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


class EncodeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class Connect:
    proto: int
    name: str


@dataclass(frozen=True)
class Ack:
    session: int


@dataclass(frozen=True)
class Problem:
    k: int
    w1: float
    w2: float
    resolution: int
    max_view_distance: float
    tick_period_ms: int

    @property
    def weights(self) -> Weights:
        return Weights(self.w1, self.w2)

    @property
    def visibility(self) -> VisibilityConfig:
        return VisibilityConfig(self.resolution, self.max_view_distance)


@dataclass(frozen=True)
class DataRequest:
    tick: int | None = None


@dataclass(frozen=True)
class DataBegin:
    tick: int
    n: int
    m: int


@dataclass(frozen=True)
class DataEntity:
    entity: Entity


@dataclass(frozen=True)
class DataViewer:
    viewer: ViewerAgent


@dataclass(frozen=True)
class SolutionBegin:
    tick: int
    q: float
    iterations: int


@dataclass(frozen=True)
class SolutionView:
    view_id: int
    view_dir: tuple[float, float, float]
    view_up: tuple[float, float, float]
    fov: float


@dataclass(frozen=True)
class End:
    """Closes a DATA or SOLUTION block."""


@dataclass(frozen=True)
class Err:
    code: str
    text: str = ""


@dataclass(frozen=True)
class Bye:
    pass


Message = Union[Connect, Ack, Problem, DataRequest, DataBegin, DataEntity, DataViewer,
                SolutionBegin, SolutionView, End, Err, Bye]


@dataclass(frozen=True)
class DecodeError:
    """A line that could not be decoded; ``token`` names the offender."""

    token: str
    message: str


class Mode(enum.Enum):
    TOP = "top"
    DATA = "data"
    SOLUTION = "solution"


# ---------------------------------------------------------------------------
# validation shared by encode and decode


def _validate(m: Message) -> tuple[str, str] | None:
    """(offending field, reason) or None when ``m`` is well-formed."""

    def nonneg_int(name, v):
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            return name, f"expected a nonnegative integer, got {v!r}"
        return None

    def finite(name, v, lo=-math.inf, lo_open=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            return name, f"expected a finite number, got {v!r}"
        if v < lo or (lo_open and v == lo):
            return name, f"{v!r} is out of range"
        return None

    def token(name, v):
        if not isinstance(v, str) or not TOKEN_RE.fullmatch(v):
            return name, f"expected a token, got {v!r}"
        return None

    def vec(name, v):
        if not isinstance(v, tuple) or len(v) != 3:
            return name, "expected a 3-vector"
        for c in v:
            if finite(name, c):
                return name, f"non-finite component in {v!r}"
        return None

    checks: list = []
    if isinstance(m, Connect):
        checks = [nonneg_int("proto", m.proto), token("name", m.name)]
    elif isinstance(m, Ack):
        checks = [nonneg_int("session", m.session)]
    elif isinstance(m, Problem):
        checks = [nonneg_int("k", m.k), finite("w1", m.w1, 0.0), finite("w2", m.w2, 0.0),
                  nonneg_int("res", m.resolution), finite("maxdist", m.max_view_distance, 0.0, True),
                  nonneg_int("period", m.tick_period_ms)]
        if not any(checks):
            if m.k < 1:
                checks.append(("k", "k must be at least 1"))
            if m.resolution < 8:
                checks.append(("res", "resolution must be at least 8"))
            if not m.w1 + m.w2 > 0:
                checks.append(("w1", "weights must have a positive sum"))
    elif isinstance(m, DataRequest):
        checks = [None if m.tick is None else nonneg_int("tick", m.tick)]
    elif isinstance(m, DataBegin):
        checks = [nonneg_int("tick", m.tick), nonneg_int("n", m.n), nonneg_int("m", m.m)]
    elif isinstance(m, DataEntity):
        checks = [None if isinstance(m.entity, Entity) else ("ENT", "not an entity")]
    elif isinstance(m, DataViewer):
        ok = isinstance(m.viewer, ViewerAgent) and math.isfinite(m.viewer.eye_height) \
            and not nonneg_int("ent", m.viewer.entity_id)
        checks = [None if ok else ("VIEWER", "invalid viewer")]
    elif isinstance(m, SolutionBegin):
        checks = [nonneg_int("tick", m.tick), finite("q", m.q, 0.0), nonneg_int("iters", m.iterations)]
    elif isinstance(m, SolutionView):
        checks = [nonneg_int("id", m.view_id), vec("dir", m.view_dir), vec("up", m.view_up),
                  finite("fov", m.fov)]
        if not any(checks) and not FOV_MIN <= m.fov <= FOV_MAX:
            checks.append(("fov", f"fov {m.fov!r} outside [{FOV_MIN}, {FOV_MAX}]"))
    elif isinstance(m, Err):
        checks = [token("code", m.code)]
        if not isinstance(m.text, str) or "\n" in m.text or "\r" in m.text:
            checks.append(("msg", "message text must be a single line"))
    elif isinstance(m, (End, Bye)):
        checks = []
    else:
        return "message", f"unknown message type {type(m).__name__}"
    for c in checks:
        if c:
            return c
    return None


# ---------------------------------------------------------------------------
# encode


def encode(m: Message) -> str:
    """One protocol line (no terminator)."""
    problem = _validate(m)
    if problem:
        raise EncodeError(f"{type(m).__name__}.{problem[0]}: {problem[1]}")
    if isinstance(m, Connect):
        return f"CONNECT proto={m.proto} name={m.name}"
    if isinstance(m, Ack):
        return f"ACK session={m.session}"
    if isinstance(m, Problem):
        return (f"PROBLEM k={m.k} w1={format_float(m.w1)} w2={format_float(m.w2)} res={m.resolution} "
                f"maxdist={format_float(m.max_view_distance)} period={m.tick_period_ms}")
    if isinstance(m, DataRequest):
        return "REQ" if m.tick is None else f"REQ tick={m.tick}"
    if isinstance(m, DataBegin):
        return f"DATA tick={m.tick} n={m.n} m={m.m}"
    if isinstance(m, DataEntity):
        return entity_line(m.entity)
    if isinstance(m, DataViewer):
        return viewer_line(m.viewer)
    if isinstance(m, SolutionBegin):
        return f"SOLUTION tick={m.tick} q={format_float(m.q)} iters={m.iterations}"
    if isinstance(m, SolutionView):
        return (f"VIEW id={m.view_id} dir={format_vec(m.view_dir)} up={format_vec(m.view_up)} "
                f"fov={format_float(m.fov)}")
    if isinstance(m, End):
        return "END"
    if isinstance(m, Err):
        return f"ERR code={m.code} msg={m.text}"
    return "BYE"


def encode_data_block(s: Scenario) -> list[str]:
    lines = [encode(DataBegin(s.tick, len(s.entities), len(s.viewers)))]
    lines += [encode(DataEntity(e)) for e in sorted(s.entities, key=lambda e: e.id)]
    lines += [encode(DataViewer(v)) for v in s.viewers]
    lines.append("END")
    return lines


def encode_solution_block(tick: int, q: float, iterations: int, mv: MultiView) -> list[str]:
    lines = [encode(SolutionBegin(tick, float(q), iterations))]
    lines += [encode(SolutionView(v.view_id, v.view_dir, v.view_up, float(v.fov_y))) for v in mv]
    lines.append("END")
    return lines


# ---------------------------------------------------------------------------
# decode


class _Bad(Exception):
    def __init__(self, token, message):
        super().__init__(message)
        self.token = token


def _int(f: dict[str, str], key: str) -> int:
    if key not in f:
        raise _Bad(key, f"missing key {key!r}")
    if not INT_RE.fullmatch(f[key]):
        raise _Bad(key, f"{key}={f[key]!r} is not a nonnegative integer")
    return int(f[key])


def _float(f: dict[str, str], key: str) -> float:
    if key not in f:
        raise _Bad(key, f"missing key {key!r}")
    if not FLOAT_RE.fullmatch(f[key]):
        raise _Bad(key, f"{key}={f[key]!r} is not a decimal number")
    return float(f[key])


def _vec(f: dict[str, str], key: str) -> tuple[float, float, float]:
    if key not in f:
        raise _Bad(key, f"missing key {key!r}")
    parts = f[key].split(",")
    if len(parts) != 3 or not all(FLOAT_RE.fullmatch(p) for p in parts):
        raise _Bad(key, f"{key}={f[key]!r} is not a 3-vector")
    return tuple(float(p) for p in parts)


def _token(f: dict[str, str], key: str) -> str:
    if key not in f:
        raise _Bad(key, f"missing key {key!r}")
    if not TOKEN_RE.fullmatch(f[key]):
        raise _Bad(key, f"{key}={f[key]!r} is not a token")
    return f[key]


def _fields(tokens: Iterable[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise _Bad(tok, f"malformed field {tok!r}")
        out.setdefault(key, value)
    return out


_TOP = {"CONNECT", "ACK", "PROBLEM", "REQ", "DATA", "SOLUTION", "ERR", "BYE"}
_BLOCK = {Mode.DATA: {"ENT", "VIEWER", "END"}, Mode.SOLUTION: {"VIEW", "END"}}


def decode(line: str | bytes, mode: Mode = Mode.TOP) -> Message | DecodeError | None:
    """Decode one line.  Returns None for blank lines, a DecodeError for
    anything malformed; never raises."""
    try:
        return _decode(line, mode)
    except _Bad as exc:
        return DecodeError(str(exc.token), str(exc))
    except Exception as exc:  # noqa: BLE001 - decode is total by contract
        return DecodeError("line", f"undecodable line: {exc}")


def _decode(line: str | bytes, mode: Mode) -> Message | None:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    word, _, rest = line.lstrip().partition(" ")
    allowed = _TOP if mode is Mode.TOP else _BLOCK[mode]
    if word not in allowed:
        raise _Bad(word, f"unexpected message word {word!r} in {mode.value} context")
    if word == "ERR":
        head, sep, text = rest.partition("msg=")
        f = _fields(head.split())
        msg = Err(_token(f, "code"), text if sep else "")
    else:
        f = _fields(rest.split())
        if word == "CONNECT":
            msg = Connect(_int(f, "proto"), _token(f, "name"))
        elif word == "ACK":
            msg = Ack(_int(f, "session"))
        elif word == "PROBLEM":
            msg = Problem(_int(f, "k"), _float(f, "w1"), _float(f, "w2"), _int(f, "res"),
                          _float(f, "maxdist"), _int(f, "period"))
        elif word == "REQ":
            msg = DataRequest(_int(f, "tick") if "tick" in f else None)
        elif word == "DATA":
            msg = DataBegin(_int(f, "tick"), _int(f, "n"), _int(f, "m"))
        elif word == "SOLUTION":
            msg = SolutionBegin(_int(f, "tick"), _float(f, "q"), _int(f, "iters"))
        elif word == "ENT":
            for key in ("id", "kind", "min", "max", "fire", "buried"):
                if key not in f:
                    raise _Bad(key, f"missing key {key!r}")
            for key in ("fire", "base"):
                if key in f and not FLOAT_RE.fullmatch(f[key]):
                    raise _Bad(key, f"{key}={f[key]!r} is not a decimal number")
            for key in ("min", "max"):
                _vec(f, key)
            try:
                msg = DataEntity(parse_entity_fields(f))
            except (ValueError, KeyError) as exc:
                raise _Bad("ENT", f"invalid entity: {exc}") from None
        elif word == "VIEWER":
            msg = DataViewer(ViewerAgent(_int(f, "ent"), _float(f, "eye")))
        elif word == "VIEW":
            msg = SolutionView(_int(f, "id"), _vec(f, "dir"), _vec(f, "up"), _float(f, "fov"))
        elif word == "END":
            msg = End()
        else:
            msg = Bye()
    problem = _validate(msg)
    if problem:
        raise _Bad(*problem)
    return msg


# ---------------------------------------------------------------------------
# transports


class Channel(TypingProtocol):
    def send(self, line: str) -> None: ...

    def recv(self) -> str | None: ...

    def close(self) -> None: ...


class ChannelClosed(ConnectionError):
    pass


class MemoryChannel:
    """One end of an in-memory duplex line pipe."""

    _EOF = object()

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None = None):
        self._in = inbox
        self._out = outbox
        self._closed = False
        self._eof = False
        self.timeout = timeout

    def send(self, line: str) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        self._out.put(line)

    def recv(self) -> str | None:
        if self._eof:
            return None
        try:
            item = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelClosed(f"no data within {self.timeout} s") from None
        if item is self._EOF:
            self._eof = True
            return None
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(self._EOF)


def memory_pipe(timeout: float | None = None) -> tuple[MemoryChannel, MemoryChannel]:
    a, b = queue.Queue(), queue.Queue()
    return MemoryChannel(a, b, timeout), MemoryChannel(b, a, timeout)


class SocketChannel:
    """Line channel over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._r = sock.makefile("rb")
        self._closed = False

    def send(self, line: str) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def recv(self) -> str | None:
        try:
            raw = self._r.readline()
        except OSError:
            return None
        if not raw:
            return None
        return raw.decode("utf-8", errors="replace").rstrip("\r\n")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def detach(self) -> None:
        self.close()
        self._r.close()
        self.sock.close()


class Recorder:
    """Wraps a channel and keeps the transcript as (direction, line) pairs."""

    def __init__(self, chan: Channel):
        self.chan = chan
        self.transcript: list[tuple[str, str]] = []

    def send(self, line: str) -> None:
        self.transcript.append((">", line))
        self.chan.send(line)

    def recv(self) -> str | None:
        line = self.chan.recv()
        if line is not None:
            self.transcript.append(("<", line))
        return line

    def close(self) -> None:
        self.chan.close()


# ---------------------------------------------------------------------------
# agent side


class AgentState(enum.Enum):
    Idle = "Idle"
    Connected = "Connected"
    Problemed = "Problemed"
    AwaitingData = "AwaitingData"
    Optimizing = "Optimizing"
    Closed = "Closed"


@dataclass
class SessionReport:
    solutions: list[tuple[int, float, int, tuple[int, ...]]] = field(default_factory=list)
    errors_sent: list[Err] = field(default_factory=list)
    errors_received: list[Err] = field(default_factory=list)
    transcript: list[tuple[str, str]] = field(default_factory=list)
    final_state: str = ""
    failure: str | None = None


class AnnealingAgent:
    """Optimizer facade for the agent session: one annealing run per tick,
    warm-started from the previous tick's result."""

    def __init__(self, schedule: AnnealSchedule = AnnealSchedule(), seed: int = 0,
                 moves: MoveConfig = MoveConfig(), fov: float = 60.0,
                 on_result: Callable[[int, OptimizeResult], None] | None = None):
        self.schedule = schedule
        self.seed = seed
        self.moves = moves
        self.fov = fov
        self.on_result = on_result
        self.prev: OptimizeResult | None = None

    def solve(self, s: Scenario, problem: Problem) -> OptimizeResult:
        warm = None
        if self.prev is not None and self.prev.best.k == problem.k:
            warm = warm_start(self.prev, s, rng_seed=self.seed + s.tick, fov=self.fov)
        result = optimize(s, problem.k, self.schedule, problem.weights, vcfg=problem.visibility,
                          rng_seed=self.seed + s.tick, warm=warm, moves=self.moves, fov=self.fov)
        self.prev = result
        if self.on_result is not None:
            self.on_result(s.tick, result)
        return result


def _scenario_from_block(begin: DataBegin, entities: list[Entity], viewers: list[ViewerAgent]) -> Scenario:
    if len(entities) != begin.n or len(viewers) != begin.m:
        raise ScenarioError(f"block announced n={begin.n} m={begin.m}, "
                            f"carried {len(entities)} entities and {len(viewers)} viewers")
    if not entities:
        raise ScenarioError("empty data block")
    lo = tuple(min(e.box.min[a] for e in entities) for a in range(3))
    hi = tuple(max(e.box.max[a] for e in entities) for a in range(3))
    entities = sorted(entities, key=lambda e: e.id)
    return Scenario(begin.tick, tuple(entities), tuple(viewers), Box(lo, hi))


def run_agent(transport: Channel, opt, name: str = "sa-agent") -> SessionReport:
    """Drive the optimization-agent side of a session until BYE or end of stream.

    ``opt`` must provide ``solve(scenario, problem) -> OptimizeResult``.
    """
    chan = Recorder(transport)
    report = SessionReport(transcript=chan.transcript)
    state = AgentState.Idle
    problem: Problem | None = None
    block: tuple[DataBegin, list, list] | None = None
    # inside a broken data block: skip lines up to its END
    skipping = False

    def err(code: str, text: str):
        e = Err(code, text)
        report.errors_sent.append(e)
        chan.send(encode(e))

    try:
        chan.send(encode(Connect(PROTO_VERSION, name)))
        while state is not AgentState.Closed:
            line = chan.recv()
            if line is None:
                break
            msg = decode(line, Mode.DATA if block is not None or skipping else Mode.TOP)
            if msg is None:
                continue
            if skipping:
                top = decode(line, Mode.TOP)
                if top is None or isinstance(top, DecodeError):
                    if isinstance(msg, End):
                        skipping = False
                        chan.send(encode(DataRequest()))
                    continue
                # a top-level message also ends the broken block
                skipping, msg = False, top
            if isinstance(msg, DecodeError):
                if block is not None:
                    # a broken block is dropped as a whole
                    block = None
                    skipping = True
                    err("parse", f"{msg.token}: {msg.message}; data block discarded")
                else:
                    err("parse", f"{msg.token}: {msg.message}")
                continue
            if block is not None:
                begin, ents, viewers = block
                if isinstance(msg, DataEntity):
                    ents.append(msg.entity)
                    continue
                if isinstance(msg, DataViewer):
                    viewers.append(msg.viewer)
                    continue
                block = None
                try:
                    s = _scenario_from_block(begin, ents, viewers)
                except (ScenarioError, ValueError) as exc:
                    err("data", str(exc).replace("\n", " "))
                    chan.send(encode(DataRequest()))
                    continue
                state = AgentState.Optimizing
                result = opt.solve(s, problem)
                for out in encode_solution_block(s.tick, result.best_q, result.iterations_run, result.best):
                    chan.send(out)
                report.solutions.append((s.tick, result.best_q, result.iterations_run, result.best.ids))
                state = AgentState.AwaitingData
                chan.send(encode(DataRequest()))
                continue
            if isinstance(msg, Bye):
                state = AgentState.Closed
            elif isinstance(msg, Err):
                report.errors_received.append(msg)
                if msg.code == "ver":
                    state = AgentState.Closed
            elif isinstance(msg, Ack) and state is AgentState.Idle:
                state = AgentState.Connected
            elif isinstance(msg, Problem) and state in (AgentState.Connected, AgentState.Problemed,
                                                        AgentState.AwaitingData):
                problem = msg
                if state is not AgentState.AwaitingData:
                    state = AgentState.AwaitingData
                    chan.send(encode(DataRequest()))
            elif isinstance(msg, DataBegin) and state is AgentState.AwaitingData:
                block = (msg, [], [])
            else:
                err("proto", f"unexpected {type(msg).__name__} in state {state.value}")
    except (ChannelClosed, OSError) as exc:
        report.failure = str(exc)
    report.final_state = state.value
    transport.close()
    return report


# ---------------------------------------------------------------------------
# application side


class TickSource:
    """Serves scenario snapshots by tick; a bare REQ gets the next unserved one."""

    def __init__(self, scenarios: Iterable[Scenario]):
        self.by_tick = {s.tick: s for s in scenarios}
        self._order = sorted(self.by_tick)
        self._next = 0

    def get(self, tick: int) -> Scenario | None:
        return self.by_tick.get(tick)

    def next(self) -> Scenario | None:
        if self._next >= len(self._order):
            return None
        s = self.by_tick[self._order[self._next]]
        self._next += 1
        return s


class SolutionLog:
    """Sink keeping every applied solution in arrival order."""

    def __init__(self):
        self.applied: list[tuple[int, float, int, MultiView]] = []

    def apply(self, tick: int, q: float, iterations: int, mv: MultiView) -> None:
        self.applied.append((tick, q, iterations, mv))

    def summary_lines(self) -> list[str]:
        return [f"tick={t} best_q={format_float(q)} iters={it} views={','.join(str(i) for i in mv.ids)}"
                for t, q, it, mv in self.applied]


def _solution_view(s: Scenario, sv: SolutionView) -> ViewParams:
    if sv.view_id not in s.viewer_ids:
        raise ValueError(f"view id {sv.view_id} is not a viewer")
    dirs = []
    for name, vec in (("dir", sv.view_dir), ("up", sv.view_up)):
        n = math.sqrt(sum(c * c for c in vec))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"{name} is not unit length")
        # renormalize only what the camera model would reject
        dirs.append(tuple(vec) if abs(n - 1.0) <= 1e-9 else tuple(c / n for c in vec))
    try:
        return ViewParams(sv.view_id, s.viewer_position(sv.view_id), dirs[0], dirs[1], sv.fov)
    except (CameraError, DegenerateFrameError) as exc:
        raise ValueError(str(exc)) from None


def run_app_endpoint(transport: Channel, source: TickSource, sink, problem: Problem,
                     session_id: int = 1) -> SessionReport:
    """Drive the visualization-application side until the agent leaves or the
    source runs dry (then BYE is sent)."""
    chan = Recorder(transport)
    report = SessionReport(transcript=chan.transcript)
    connected = False
    served: dict[int, Scenario] = {}
    sol: tuple[SolutionBegin, list[SolutionView]] | None = None
    skipping = False
    done = False

    def err(code: str, text: str):
        e = Err(code, text)
        report.errors_sent.append(e)
        chan.send(encode(e))

    try:
        while not done:
            line = chan.recv()
            if line is None:
                break
            msg = decode(line, Mode.SOLUTION if sol is not None or skipping else Mode.TOP)
            if msg is None:
                continue
            if skipping:
                top = decode(line, Mode.TOP)
                if top is None or isinstance(top, DecodeError):
                    skipping = not isinstance(msg, End)
                    continue
                skipping, msg = False, top
            if isinstance(msg, DecodeError):
                if sol is not None:
                    sol = None
                    skipping = True
                    err("parse", f"{msg.token}: {msg.message}; solution discarded")
                else:
                    err("parse", f"{msg.token}: {msg.message}")
                continue
            if sol is not None:
                if isinstance(msg, SolutionView):
                    sol[1].append(msg)
                    continue
                begin, views = sol
                sol = None
                s = served.get(begin.tick)
                if s is None:
                    err("tick", f"solution for tick {begin.tick}, which was never served")
                    continue
                try:
                    if len(views) != problem.k:
                        raise ValueError(f"expected {problem.k} views, got {len(views)}")
                    mv = MultiView(tuple(_solution_view(s, v) for v in views))
                except (ValueError, CameraError) as exc:
                    err("view", f"{exc}; solution discarded")
                    continue
                sink.apply(begin.tick, begin.q, begin.iterations, mv)
                report.solutions.append((begin.tick, begin.q, begin.iterations, mv.ids))
                continue
            if isinstance(msg, Connect):
                if connected:
                    err("proto", "already connected")
                elif msg.proto != PROTO_VERSION:
                    err("ver", f"protocol {msg.proto} unsupported, expected {PROTO_VERSION}")
                    chan.send(encode(Bye()))
                    done = True
                else:
                    connected = True
                    chan.send(encode(Ack(session_id)))
                    chan.send(encode(problem))
            elif isinstance(msg, Bye):
                done = True
            elif isinstance(msg, Err):
                report.errors_received.append(msg)
            elif not connected:
                err("proto", f"unexpected {type(msg).__name__} before CONNECT")
            elif isinstance(msg, DataRequest):
                s = source.next() if msg.tick is None else source.get(msg.tick)
                if s is None and msg.tick is not None:
                    err("tick", f"no data for tick {msg.tick}")
                elif s is None:
                    chan.send(encode(Bye()))
                    done = True
                else:
                    served[s.tick] = s
                    for out in encode_data_block(s):
                        chan.send(out)
            elif isinstance(msg, SolutionBegin):
                sol = (msg, [])
            else:
                err("proto", f"unexpected {type(msg).__name__}")
    except (ChannelClosed, OSError) as exc:
        report.failure = str(exc)
    report.final_state = "Closed" if done else "Disconnected"
    transport.close()
    return report
