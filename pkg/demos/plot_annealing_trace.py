"""
Annealing a four-view multiview
===============================

Simulated annealing picks 4 of 50 viewer agents and tunes their view
direction, roll and field of view.  The trace holds the current and the
best quality after every proposal; its best_q column is the curve to plot.
"""

from rescueview.annealer import AnnealSchedule, optimize
from rescueview.quality import QualityModel
from rescueview.scene import generate_scenario

s = generate_scenario(seed=3, n_entities=1035, m_viewers=50)
res = optimize(s, k=4, sched=AnnealSchedule(), rng_seed=3)

print("initial Q", res.initial_q, "T0", res.t0)
for row in res.trace[::250]:
    print(f"iter {row.iteration:5d}  current {row.current_q:.4f}  best {row.best_q:.4f}  T {row.temperature:.2e}")
print("best Q", res.best_q, "views", res.best.ids)

# the breakdown shows where the quality comes from
b = QualityModel(s).breakdown(res.best)
for t in sorted(b.terms, key=lambda t: -t.contribution)[:5]:
    print(f"view {t.view_index} entity {t.entity_id}: vis {t.vis:.3f} rel {t.rel:.2f} "
          f"red {t.red:.2f} ecc {t.ecc:.2f} -> {t.contribution:.4f}")

with open("trace.csv", "w") as fh:
    fh.write(res.trace_csv())
