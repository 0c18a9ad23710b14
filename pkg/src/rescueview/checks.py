"""Oracle suites: grid renderer vs brute-force ray casting, and swap-only
annealing vs exhaustive search on small instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .annealer import SWAP_ONLY, AnnealSchedule, brute_force_optimum, optimize
from .camera import FOV_MAX, FOV_MIN, ViewParams, look_at
from .quality import QualityModel, Weights
from .scene import Box, Entity, EntityKind, RelevanceConfig, Scenario, ViewerAgent, generate_scenario
from .visibility import VisibilityConfig, coverage_histogram, raycast_oracle, render_item_buffer

KINDS = list(EntityKind)


def random_scene(rng: np.random.Generator, n: int, size: float = 200.0) -> Scenario:
    """Random boxes in a cube of side ``size``, with deliberate coincident
    duplicates so depth ties actually happen."""
    extent = Box((0.0, 0.0, 0.0), (size, size, size / 4))
    ents: list[Entity] = []
    ids = rng.permutation(10 * n + 10)[: n + 1]
    for i in range(n):
        if ents and rng.random() < 0.15:
            box = ents[int(rng.integers(len(ents)))].box
        else:
            lo = rng.uniform([0, 0, 0], [size * 0.9, size * 0.9, size / 4 * 0.8])
            ext = rng.uniform(0.5, [size * 0.1, size * 0.1, size / 4 * 0.2])
            hi = np.minimum(lo + ext, [size, size, size / 4])
            box = Box(tuple(map(float, lo)), tuple(map(float, hi)))
        kind = KINDS[int(rng.integers(len(KINDS)))]
        ents.append(Entity(int(ids[i]), kind, box, fire_intensity=float(rng.choice([0.0, rng.uniform()]))))
    # a small marker entity carries the single viewer
    ents.append(Entity(int(ids[n]), EntityKind.FireBrigade, Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))))
    return Scenario(0, tuple(ents), (ViewerAgent(int(ids[n])),), extent)


def random_view(rng: np.random.Generator, s: Scenario, view_id: int | None = None) -> ViewParams:
    lo = np.asarray(s.extent.min)
    hi = np.asarray(s.extent.max)
    pos = rng.uniform(lo, hi)
    target = rng.uniform(lo, hi)
    while np.linalg.norm(target - pos) < 1.0:
        target = rng.uniform(lo, hi)
    up = rng.normal(size=3)
    fov = float(rng.uniform(FOV_MIN, FOV_MAX))
    vid = s.viewer_ids[0] if view_id is None else view_id
    return look_at(vid, pos, target, up, fov)


@dataclass
class SuiteReport:
    name: str
    cases: int = 0
    failures: int = 0
    first_counterexample: str | None = None
    # fraction of cases that must agree
    required: float = 1.0

    @property
    def agreed(self) -> int:
        return self.cases - self.failures

    @property
    def passed(self) -> bool:
        return self.cases > 0 and self.agreed >= math.ceil(self.required * self.cases)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.agreed}/{self.cases} cases agree (need {math.ceil(self.required * self.cases)})"


def visibility_suite(n_scenes: int = 50, resolutions: Sequence[int] = (32, 64, 128), seed: int = 0,
                     render: Callable | None = None, max_view_distance: float = 150.0) -> SuiteReport:
    """coverage_histogram(render(...)) must equal raycast_oracle exactly."""
    render = render or render_item_buffer
    rep = SuiteReport(f"visibility oracle ({n_scenes} scenes x res {','.join(map(str, resolutions))})")
    rng = np.random.default_rng(seed)
    for i in range(n_scenes):
        s = random_scene(rng, int(rng.integers(5, 60)))
        v = random_view(rng, s)
        for res in resolutions:
            cfg = VisibilityConfig(res, max_view_distance)
            rep.cases += 1
            got = coverage_histogram(render(v, s, cfg))
            want = raycast_oracle(v, s, cfg)
            if got != want:
                rep.failures += 1
                if rep.first_counterexample is None:
                    diff = {k: (got.count(k), want.count(k)) for k in set(got.counts) | set(want.counts)
                            if got.count(k) != want.count(k)}
                    rep.first_counterexample = (f"scene {i} res {res} view {v}: "
                                                f"entity -> (render, oracle) {dict(sorted(diff.items()))}")
    return rep


def annealer_suite(runs: int = 100, m: int = 6, k: int = 2, seed: int = 0,
                   schedule: AnnealSchedule = AnnealSchedule(),
                   vcfg: VisibilityConfig = VisibilityConfig(64, 300.0)) -> SuiteReport:
    """Swap-only annealing must find the exhaustive optimum over C(m, k) subsets."""
    rep = SuiteReport(f"annealer vs brute force (m={m}, k={k}, {runs} runs)", required=0.95)
    w, rcfg = Weights(), RelevanceConfig()
    extent = Box((0.0, 0.0, -1.0), (300.0, 300.0, 100.0))
    for r in range(runs):
        s = generate_scenario(seed + r, 60, m, extent)
        model = QualityModel(s, w, rcfg, vcfg)
        bf_mv, bf_q = brute_force_optimum(s, k, w, rcfg, vcfg, model=model)
        res = optimize(s, k, schedule, w, rcfg, vcfg, rng_seed=seed + r, moves=SWAP_ONLY, model=model)
        rep.cases += 1
        if not res.best_q >= bf_q - 1e-12 * max(1.0, abs(bf_q)):
            rep.failures += 1
            if rep.first_counterexample is None:
                rep.first_counterexample = (f"run {r}: annealer {sorted(res.best.ids)} q={res.best_q!r} vs "
                                            f"brute force {sorted(bf_mv.ids)} q={bf_q!r}")
    return rep
