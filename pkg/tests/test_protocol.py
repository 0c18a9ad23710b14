import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rescueview.annealer import AnnealSchedule, initial_solution
from rescueview.protocol import (
    Ack, AnnealingAgent, Bye, Connect, DataBegin, DataEntity, DataRequest, DataViewer, DecodeError, EncodeError,
    End, Err, Mode, Problem, SocketChannel, SolutionBegin, SolutionLog, SolutionView, TickSource, decode, encode,
    encode_data_block, encode_solution_block, memory_pipe, run_agent, run_app_endpoint,
)
from rescueview.scene import Box, Entity, EntityKind, ViewerAgent, advance_tick, DynamicsScript, generate_scenario

EXTENT = Box((0.0, 0.0, -1.0), (300.0, 300.0, 100.0))
TINY = AnnealSchedule(t0_samples=5, max_iters=30, iters_per_temp=5)
PROBLEM = Problem(2, 0.8, 0.2, 16, 300.0, 0)

# strategies ------------------------------------------------------------------

nonneg = st.integers(0, 2 ** 40)
tokens = st.from_regex(r"[A-Za-z0-9_-]{1,12}", fullmatch=True)
finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12)
nonneg_f = st.floats(allow_nan=False, allow_infinity=False, min_value=0, max_value=1e12)
vec3 = st.tuples(finite, finite, finite)
text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\n\x0b\x0c\x1c\x1d\x1e\x85  "),
               max_size=40)


@st.composite
def entities(draw):
    lo = draw(st.tuples(*[st.floats(-1e6, 1e6)] * 3))
    ext = draw(st.tuples(*[st.floats(0, 1e3)] * 3))
    base = draw(st.none() | st.floats(0, 1))
    return Entity(draw(nonneg), draw(st.sampled_from(list(EntityKind))),
                  Box(lo, tuple(a + b for a, b in zip(lo, ext))), draw(st.floats(0, 1)), draw(st.booleans()), base)


messages = st.one_of(
    st.builds(Connect, nonneg, tokens),
    st.builds(Ack, nonneg),
    st.builds(Problem, st.integers(1, 1000), st.floats(0.01, 10), nonneg_f, st.integers(8, 4096),
              st.floats(1e-3, 1e6), nonneg),
    st.builds(DataRequest, st.none() | nonneg),
    st.builds(DataBegin, nonneg, nonneg, nonneg),
    st.builds(DataEntity, entities()),
    st.builds(DataViewer, st.builds(ViewerAgent, nonneg, st.floats(-100, 100))),
    st.builds(SolutionBegin, nonneg, nonneg_f, nonneg),
    st.builds(SolutionView, nonneg, vec3, vec3, st.floats(20, 100)),
    st.builds(End),
    st.builds(Err, tokens, text),
    st.builds(Bye),
)


def mode_for(m):
    if isinstance(m, (DataEntity, DataViewer)):
        return Mode.DATA
    if isinstance(m, SolutionView):
        return Mode.SOLUTION
    if isinstance(m, End):
        return Mode.DATA
    return Mode.TOP


@settings(max_examples=2000, deadline=None)
@given(messages)
def test_round_trip(m):
    line = encode(m)
    assert "\n" not in line
    assert decode(line, mode_for(m)) == m


@settings(max_examples=2000, deadline=None)
@given(st.binary(max_size=120), st.sampled_from(list(Mode)))
def test_fuzz_never_raises(raw, mode):
    out = decode(raw, mode)
    assert out is None or isinstance(out, DecodeError) or type(out).__module__ == "rescueview.protocol"


# grammar ---------------------------------------------------------------------

def test_grammar_examples():
    assert encode(Connect(1, "sa-agent")) == "CONNECT proto=1 name=sa-agent"
    assert encode(SolutionBegin(12, 3.5, 500)) == "SOLUTION tick=12 q=3.5 iters=500"
    assert encode(DataRequest()) == "REQ" and encode(DataRequest(4)) == "REQ tick=4"
    assert encode(Err("tick", "no data for tick 9")) == "ERR code=tick msg=no data for tick 9"
    assert encode(PROBLEM) == "PROBLEM k=2 w1=0.8 w2=0.2 res=16 maxdist=300.0 period=0"


def test_unknown_keys_ignored():
    assert decode("CONNECT proto=1 name=x extra=9") == Connect(1, "x")


def test_bad_value_names_key():
    out = decode("PROBLEM k=four w1=0.8 w2=0.2 res=16 maxdist=300 period=0")
    assert isinstance(out, DecodeError) and out.token == "k"
    out = decode("PROBLEM w1=0.8 w2=0.2 res=16 maxdist=300 period=0")
    assert isinstance(out, DecodeError) and out.token == "k"


def test_unknown_word_and_blank():
    out = decode("HELLO there")
    assert isinstance(out, DecodeError) and out.token == "HELLO"
    assert decode("") is None and decode("   \n") is None
    assert isinstance(decode("ENT id=1", Mode.TOP), DecodeError)
    assert isinstance(decode("CONNECT proto=1 name=x", Mode.DATA), DecodeError)


def test_encode_rejects_invalid():
    for bad in (Connect(1, "two words"), Ack(-1), SolutionView(1, (1.0, 0.0, float("nan")), (0, 0, 1), 60.0),
                Err("x", "line\nbreak"), Problem(0, 0.8, 0.2, 16, 300.0, 0), SolutionView(1, (1.0, 0, 0),
                                                                                      (0, 0, 1.0), 10.0)):
        with pytest.raises(EncodeError):
            encode(bad)


# sessions ----------------------------------------------------------------------

def _scenarios(ticks=2, seed=3):
    s = generate_scenario(seed, 60, 5, EXTENT)
    out = [s]
    for _ in range(ticks - 1):
        out.append(advance_tick(out[-1], DynamicsScript()))
    return out


def _loopback(ticks=2):
    app_end, agent_end = memory_pipe(timeout=60)
    box = {}
    agent = AnnealingAgent(TINY, seed=4)
    t = threading.Thread(target=lambda: box.setdefault("r", run_agent(agent_end, agent)))
    t.start()
    sink = SolutionLog()
    app = run_app_endpoint(app_end, TickSource(_scenarios(ticks)), sink, PROBLEM)
    t.join(60)
    return app, box["r"], sink


def _words(transcript, direction):
    return [line.split(" ", 1)[0] for d, line in transcript if d == direction]


def test_loopback_session_order():
    app, agent, sink = _loopback(2)
    assert len(sink.applied) == 2
    assert [t for t, *_ in sink.applied] == [0, 1]
    sent = _words(agent.transcript, ">")
    got = _words(agent.transcript, "<")
    assert sent[0] == "CONNECT" and got[:2] == ["ACK", "PROBLEM"]
    order = [w for _, w in sorted(
        [(i, line.split(" ", 1)[0]) for i, (_, line) in enumerate(agent.transcript)])]
    firsts = [order.index(w) for w in ("CONNECT", "ACK", "PROBLEM", "REQ", "DATA", "SOLUTION")]
    assert firsts == sorted(firsts)
    assert got[-1] == "BYE"
    assert not app.errors_sent and not agent.errors_sent
    assert [s[0] for s in agent.solutions] == [0, 1]


class ScriptedApp:
    """Test-side endpoint for hand-driven transcripts."""

    def __init__(self):
        self.chan, agent_end = memory_pipe(timeout=30)
        self.report = None
        self.t = threading.Thread(target=self._run, args=(agent_end,))
        self.t.start()

    def _run(self, chan):
        self.report = run_agent(chan, AnnealingAgent(TINY, seed=1))

    def send(self, *lines):
        for line in lines:
            self.chan.send(line)

    def expect(self, word):
        line = self.chan.recv()
        assert line is not None and line.split(" ", 1)[0] == word, line
        return line

    def close(self):
        self.chan.send("BYE")
        self.t.join(30)
        self.chan.close()
        return self.report


def test_problem_before_ack_is_rejected():
    app = ScriptedApp()
    app.expect("CONNECT")
    app.send(encode(PROBLEM))
    assert "code=proto" in app.expect("ERR")
    app.send(encode(Ack(1)), encode(PROBLEM))
    app.expect("REQ")
    rep = app.close()
    assert rep.solutions == []


def test_solution_tick_matches_data_and_bad_block_is_dropped():
    s = _scenarios(1)[0]
    app = ScriptedApp()
    app.expect("CONNECT")
    app.send(encode(Ack(1)), encode(PROBLEM))
    app.expect("REQ")
    block = encode_data_block(s)
    app.send(*block[:3], "ENT id=oops", *block[3:])
    assert "code=parse" in app.expect("ERR")
    # the rest of the broken block is skipped silently, then data is requested again
    app.expect("REQ")
    s7 = s.replace(tick=7)
    app.send(*encode_data_block(s7))
    head = app.expect("SOLUTION")
    assert "tick=7" in head
    views = []
    while True:
        line = app.chan.recv()
        if line == "END":
            break
        views.append(decode(line, Mode.SOLUTION))
    assert len(views) == PROBLEM.k and all(v.view_id in s.viewer_ids for v in views)
    rep = app.close()
    assert [x[0] for x in rep.solutions] == [7]


def test_count_mismatch_is_data_error():
    s = _scenarios(1)[0]
    app = ScriptedApp()
    app.expect("CONNECT")
    app.send(encode(Ack(1)), encode(PROBLEM))
    app.expect("REQ")
    block = encode_data_block(s)
    app.send(block[0], *block[2:])  # one entity fewer than announced
    assert "code=data" in app.expect("ERR")
    app.expect("REQ")
    app.close()


def _app_session(lines, scenarios=None, problem=PROBLEM):
    chan, peer = memory_pipe(timeout=30)
    sink = SolutionLog()
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("r", run_app_endpoint(
        peer, TickSource(scenarios or _scenarios(1)), sink, problem)))
    t.start()
    for line in lines:
        chan.send(line)
    chan.close()
    received = []
    while True:
        line = chan.recv()
        if line is None:
            break
        received.append(line)
    t.join(30)
    return box["r"], sink, received


def test_broken_block_ended_by_top_level_message():
    s = _scenarios(1)[0]
    app = ScriptedApp()
    app.expect("CONNECT")
    app.send(encode(Ack(1)), encode(PROBLEM))
    app.expect("REQ")
    app.send(*encode_data_block(s)[:3], "ENT id=oops")
    assert "code=parse" in app.expect("ERR")
    rep = app.close()
    assert rep.final_state == "Closed" and rep.failure is None


def test_app_version_mismatch():
    rep, _, got = _app_session(["CONNECT proto=2 name=x"])
    assert got[0].startswith("ERR code=ver") and got[1] == "BYE"


def test_app_unknown_tick_and_bad_view():
    s = _scenarios(1)[0]
    mv = initial_solution(s, 2, 0)
    bad = [line.replace(f"id={mv[0].view_id}", "id=0") for line in encode_solution_block(0, 1.0, 5, mv)]
    rep, sink, got = _app_session(["CONNECT proto=1 name=x", "REQ tick=99", "REQ tick=0", *bad,
                                   *encode_solution_block(0, 1.0, 5, mv)])
    errs = [g for g in got if g.startswith("ERR")]
    assert errs[0].startswith("ERR code=tick") and errs[1].startswith("ERR code=view")
    assert len(sink.applied) == 1 and sink.applied[0][3] == mv


def test_app_rejects_solution_for_unserved_tick():
    s = _scenarios(1)[0]
    mv = initial_solution(s, 2, 0)
    _, sink, got = _app_session(["CONNECT proto=1 name=x", *encode_solution_block(0, 1.0, 5, mv)])
    assert any(g.startswith("ERR code=tick") for g in got) and not sink.applied


def test_app_source_exhausted_sends_bye():
    _, _, got = _app_session(["CONNECT proto=1 name=x", "REQ", "REQ"])
    assert got[-1] == "BYE"
    assert sum(g.startswith("DATA") for g in got) == 1


@pytest.mark.parametrize("seed", range(30))
def test_random_interleavings_never_solve_before_problem(seed):
    rng = np.random.default_rng(seed)
    s = _scenarios(1)[0]
    pool = [encode(Ack(1)), encode(PROBLEM), "REQ", "BYE", "garbage", encode(Err("x", "y")), "",
            *encode_data_block(s)]
    lines = [pool[int(i)] for i in rng.integers(len(pool), size=int(rng.integers(1, 40)))]
    lines = [ln for ln in lines if ln != "BYE"] + ["BYE"]
    chan, agent_end = memory_pipe(timeout=30)
    for ln in lines:
        chan.send(ln)
    rep = run_agent(agent_end, AnnealingAgent(TINY, seed=seed))
    sent = [ln for d, ln in rep.transcript if d == ">"]
    recv = [ln for d, ln in rep.transcript if d == "<"]
    if any(ln.startswith("SOLUTION") for ln in sent):
        assert any(ln.startswith("PROBLEM") for ln in recv)
    assert len(rep.solutions) <= 1 + lines.count("END")


def test_socket_transport_round_trip():
    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]
    box = {}

    def agent():
        chan = SocketChannel(socket.create_connection(("127.0.0.1", port)))
        box["r"] = run_agent(chan, AnnealingAgent(TINY, seed=4))

    t = threading.Thread(target=agent)
    t.start()
    conn, _ = server.accept()
    server.close()
    sink = SolutionLog()
    run_app_endpoint(SocketChannel(conn), TickSource(_scenarios(2)), sink, PROBLEM)
    t.join(60)
    _, _, loop_sink = _loopback(2)
    assert sink.summary_lines() == loop_sink.summary_lines()
