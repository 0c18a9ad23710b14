"""
A detached optimization agent
=============================

The application owns the scene and the agent only sees what it asks for.
Both ends speak a line protocol; here they run in one process over an
in-memory pipe, and a fire spreads between the two ticks.
"""

import threading

from rescueview.annealer import AnnealSchedule
from rescueview.protocol import (AnnealingAgent, Problem, SolutionLog, TickSource, memory_pipe, run_agent,
                                 run_app_endpoint)
from rescueview.scene import DynamicsScript, advance_tick, generate_scenario

s0 = generate_scenario(seed=5, n_entities=400, m_viewers=20)
script = DynamicsScript.parse("GROWTH 0.2\n1 Ignite 0\n1 Ignite 1\n")
s1 = advance_tick(s0, script)

app_end, agent_end = memory_pipe()
agent = AnnealingAgent(AnnealSchedule(max_iters=500), seed=5)
thread = threading.Thread(target=run_agent, args=(agent_end, agent))
thread.start()

log = SolutionLog()
session = run_app_endpoint(app_end, TickSource([s0, s1]), log, Problem(3, 0.8, 0.2, 64, 300.0, 0))
thread.join()

# the first lines of the conversation, as seen by the application
for direction, line in session.transcript[:6]:
    print(direction, line[:90])
for line in log.summary_lines():
    print(line)
