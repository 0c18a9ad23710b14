"""Simulated annealing over multiviews.

A state is a MultiView of k distinct viewers.  Neighbours either swap one
member for a viewer outside the set, or perturb one member's direction, roll
or field of view; camera positions stay on their viewer anchors.  Perturbation
magnitudes scale with an adaptive step driven by the recent acceptance rate.

Random draws come from one ``numpy.random.Generator`` seeded per run, in this
order: initial members, then per iteration the move kind, its parameters and
finally the acceptance uniform.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .camera import (CANONICAL_UP, DEFAULT_FOV, FOV_MAX, FOV_MIN, MultiView, ViewParams,
                     camera_basis, look_at, rotate)
from .quality import QualityModel, Weights
from .scene import RelevanceConfig, Scenario, relevance_array
from .visibility import VisibilityConfig


class AnnealError(ValueError):
    pass


class BudgetExceeded(AnnealError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    t0_samples: int = 50
    alpha: float = 0.95
    iters_per_temp: int = 20
    max_iters: int = 2000
    t_floor_ratio: float = 1e-4
    # T0 multiplier for warm-started runs
    warm_t0_scale: float = 0.3

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise AnnealError("alpha must lie in (0, 1)")
        for name in ("t0_samples", "iters_per_temp", "max_iters"):
            if getattr(self, name) < 1:
                raise AnnealError(f"{name} must be positive")
        if not self.t_floor_ratio > 0 or not self.warm_t0_scale > 0:
            raise AnnealError("t_floor_ratio and warm_t0_scale must be positive")


@dataclass(frozen=True)
class MoveConfig:
    swap_probability: float = 0.5
    dir_degrees: float = 10.0
    roll_degrees: float = 10.0
    fov_degrees: float = 5.0
    window: int = 50
    scale_min: float = 0.1
    scale_max: float = 3.0
    # False freezes view parameters: only swaps are proposed
    perturb: bool = True


SWAP_ONLY = MoveConfig(swap_probability=1.0, perturb=False)


@dataclass(frozen=True)
class SwapView:
    member_index: int
    incoming_viewer_id: int


@dataclass(frozen=True)
class PerturbDir:
    member_index: int
    axis: tuple[float, float, float]
    angle_deg: float


@dataclass(frozen=True)
class PerturbUp:
    member_index: int
    angle_deg: float


@dataclass(frozen=True)
class PerturbFov:
    member_index: int
    delta_deg: float


Move = Union[SwapView, PerturbDir, PerturbUp, PerturbFov]


@dataclass
class AdaptiveState:
    step_scale: float = 1.0
    window: deque = field(default_factory=deque)
    bounds: tuple[float, float] = (0.1, 3.0)

    def __post_init__(self):
        lo, hi = self.bounds
        if not 0 < lo <= hi:
            raise AnnealError("adaptive bounds must satisfy 0 < min <= max")
        self.step_scale = min(hi, max(lo, self.step_scale))


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    current_q: float
    best_q: float
    temperature: float


@dataclass(frozen=True)
class OptimizeResult:
    best: MultiView
    best_q: float
    trace: tuple[TraceRow, ...]
    iterations_run: int
    initial_q: float = 0.0
    t0: float = 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["iteration", "current_q", "best_q", "temperature"])
        for r in self.trace:
            out.writerow([r.iteration, repr(r.current_q), repr(r.best_q), repr(r.temperature)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# views


def focus_point(s: Scenario, rcfg: RelevanceConfig) -> tuple[float, float, float]:
    """Box center of the most relevant entity (lowest id on ties)."""
    rel = relevance_array(s, rcfg)
    top = rel == rel.max()
    i = int(np.flatnonzero(top)[np.argmin(s.ids[top])])
    return tuple(float(c) for c in s.box_center[i])


def default_view(s: Scenario, viewer_id: int, target: Sequence[float], fov: float = DEFAULT_FOV) -> ViewParams:
    """Camera on the viewer anchor aimed at ``target`` with the canonical up."""
    pos = np.asarray(s.viewer_position(viewer_id))
    tgt = np.asarray(target, dtype=np.float64)
    if np.linalg.norm(tgt - pos) < 1e-9:
        tgt = pos + np.array([1.0, 0.0, 0.0])
    return look_at(viewer_id, pos, tgt, CANONICAL_UP, fov)


def initial_solution(s: Scenario, k: int, rng_seed, rcfg: RelevanceConfig | None = None,
                     fov: float = DEFAULT_FOV) -> MultiView:
    """k viewers drawn uniformly without replacement, all aimed at the most
    relevant entity.  ``rng_seed`` may be an int or a Generator."""
    m = len(s.viewers)
    if not 1 <= k <= m:
        raise AnnealError(f"k={k} must lie in [1, m={m}]")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(m, size=k, replace=False)
    target = focus_point(s, rcfg or RelevanceConfig())
    return MultiView(tuple(default_view(s, s.viewer_ids[int(p)], target, fov) for p in picks))


# ---------------------------------------------------------------------------
# moves


def propose_move(mv: MultiView, s: Scenario, a: AdaptiveState, rng: np.random.Generator,
                 cfg: MoveConfig = MoveConfig()) -> Move:
    k = mv.k
    members = set(mv.ids)
    outside = [vid for vid in s.viewer_ids if vid not in members]
    can_swap = bool(outside)
    if not cfg.perturb and not can_swap:
        raise AnnealError("no move available: swaps exhausted and perturbations disabled")
    if can_swap and (not cfg.perturb or rng.random() < cfg.swap_probability):
        j = int(rng.integers(k))
        return SwapView(j, outside[int(rng.integers(len(outside)))])
    j = int(rng.integers(k))
    kind = int(rng.integers(3))
    if kind == 0:
        # rotate the view direction about a random axis perpendicular to it
        _, up, fwd = camera_basis(mv[j])
        phi = rng.uniform(0.0, 2.0 * math.pi)
        right = np.cross(fwd, up)
        axis = math.cos(phi) * up + math.sin(phi) * right
        angle = rng.uniform(-1.0, 1.0) * cfg.dir_degrees * a.step_scale
        return PerturbDir(j, tuple(float(c) for c in axis), float(angle))
    if kind == 1:
        return PerturbUp(j, float(rng.uniform(-1.0, 1.0) * cfg.roll_degrees * a.step_scale))
    return PerturbFov(j, float(rng.uniform(-1.0, 1.0) * cfg.fov_degrees * a.step_scale))


def _orthonormal_up(d: np.ndarray, up: np.ndarray) -> np.ndarray:
    u = up - np.dot(up, d) * d
    n = np.linalg.norm(u)
    if n < 1e-6:
        u = np.cross(d, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(d, [0.0, 1.0, 0.0])
        n = np.linalg.norm(u)
    return u / n


def _view(old: ViewParams, d: np.ndarray, up: np.ndarray, fov: float) -> ViewParams:
    d = d / np.linalg.norm(d)
    up = _orthonormal_up(d, up)
    return ViewParams(old.view_id, old.pos, tuple(map(float, d)), tuple(map(float, up)), float(fov))


def apply_move(mv: MultiView, move: Move, s: Scenario, target: Sequence[float],
               fov: float = DEFAULT_FOV) -> MultiView:
    """The multiview after ``move``; an incoming viewer starts from its default view."""
    views = list(mv.views)
    j = move.member_index
    old = views[j]
    if isinstance(move, SwapView):
        views[j] = default_view(s, move.incoming_viewer_id, target, fov)
    elif isinstance(move, PerturbDir):
        ang = math.radians(move.angle_deg)
        d = rotate(old.view_dir, move.axis, ang)
        up = rotate(old.view_up, move.axis, ang)
        views[j] = _view(old, d, up, old.fov_y)
    elif isinstance(move, PerturbUp):
        up = rotate(old.view_up, old.view_dir, math.radians(move.angle_deg))
        views[j] = _view(old, np.asarray(old.view_dir), up, old.fov_y)
    else:
        fov_new = min(FOV_MAX, max(FOV_MIN, old.fov_y + move.delta_deg))
        views[j] = dataclasses.replace(old, fov_y=fov_new)
    return MultiView(tuple(views))


def acceptance_probability(delta_q: float, temperature: float) -> float:
    if not temperature > 0:
        raise AnnealError("temperature must be positive")
    if delta_q >= 0:
        return 1.0
    return math.exp(delta_q / temperature)


def adapt_step(a: AdaptiveState, window_acceptance: float) -> AdaptiveState:
    scale = a.step_scale
    if window_acceptance > 0.5:
        scale *= 1.1
    elif window_acceptance < 0.3:
        scale *= 0.9
    lo, hi = a.bounds
    return AdaptiveState(min(hi, max(lo, scale)), deque(), a.bounds)


# ---------------------------------------------------------------------------
# search


def optimize(s: Scenario, k: int, sched: AnnealSchedule = AnnealSchedule(), w: Weights = Weights(),
             rcfg: RelevanceConfig = RelevanceConfig(), vcfg: VisibilityConfig = VisibilityConfig(),
             rng_seed: int = 0, warm: MultiView | None = None, moves: MoveConfig = MoveConfig(),
             fov: float = DEFAULT_FOV, model: QualityModel | None = None,
             check: Callable[[MultiView], None] | None = None) -> OptimizeResult:
    """Anneal from a random (or warm) multiview and return the best one seen.

    T0 is the standard deviation of |dQ| over ``t0_samples`` random moves from
    the start state (times ``warm_t0_scale`` for warm starts).  The
    temperature drops by ``alpha`` every ``iters_per_temp`` iterations; the
    run stops after ``max_iters`` iterations or once T < t_floor_ratio * T0.
    ``check`` is called on every visited state (test hook).
    """
    rng = np.random.default_rng(rng_seed)
    if model is None:
        model = QualityModel(s, w, rcfg, vcfg)
    target = focus_point(s, rcfg)
    if warm is not None:
        if warm.k != k:
            raise AnnealError(f"warm start has {warm.k} views, expected {k}")
        current = warm
    else:
        current = initial_solution(s, k, rng, rcfg, fov)
    if check is not None:
        check(current)
    q = model.score(current)
    initial_q = q

    adapt = AdaptiveState(1.0, deque(), (moves.scale_min, moves.scale_max))
    deltas = []
    for _ in range(sched.t0_samples):
        cand = apply_move(current, propose_move(current, s, adapt, rng, moves), s, target, fov)
        deltas.append(abs(model.score(cand) - q))
    t0 = max(float(np.std(deltas)), 1e-12)
    if warm is not None:
        t0 *= sched.warm_t0_scale
    temperature = t0

    best, best_q = current, q
    trace = []
    it = 0
    while it < sched.max_iters and temperature >= sched.t_floor_ratio * t0:
        it += 1
        move = propose_move(current, s, adapt, rng, moves)
        cand = apply_move(current, move, s, target, fov)
        cq = model.score(cand)
        accepted = rng.random() < acceptance_probability(cq - q, temperature)
        if accepted:
            current, q = cand, cq
            if check is not None:
                check(current)
            if q > best_q:
                best, best_q = current, q
        if not isinstance(move, SwapView):
            # the adaptive range only governs parameter perturbations
            adapt.window.append(accepted)
        if len(adapt.window) >= moves.window:
            adapt = adapt_step(adapt, sum(adapt.window) / len(adapt.window))
        trace.append(TraceRow(it, q, best_q, temperature))
        if it % sched.iters_per_temp == 0:
            temperature *= sched.alpha
    return OptimizeResult(best, best_q, tuple(trace), it, initial_q, t0)


def brute_force_optimum(s: Scenario, k: int, w: Weights = Weights(), rcfg: RelevanceConfig = RelevanceConfig(),
                        vcfg: VisibilityConfig = VisibilityConfig(),
                        param_grid: Sequence[tuple[Sequence[float], Sequence[float], float]] | None = None,
                        budget: int = 100_000, fov: float = DEFAULT_FOV,
                        model: QualityModel | None = None) -> tuple[MultiView, float]:
    """Exhaustive maximum over all k-subsets of viewers.

    Without ``param_grid`` every viewer uses its default view.  With it, each
    member independently takes every (direction, up, fov) triple of the grid.
    Ties go to the lexicographically smallest sorted id tuple.
    """
    m = len(s.viewers)
    if not 1 <= k <= m:
        raise AnnealError(f"k={k} must lie in [1, m={m}]")
    g = 1 if param_grid is None else len(param_grid)
    n_eval = math.comb(m, k) * g ** k
    if n_eval > budget:
        raise BudgetExceeded(f"{n_eval} candidates exceed the budget of {budget}")
    if model is None:
        model = QualityModel(s, w, rcfg, vcfg)
    target = focus_point(s, rcfg)
    best: MultiView | None = None
    best_q = -math.inf
    for subset in itertools.combinations(sorted(s.viewer_ids), k):
        if param_grid is None:
            options = [[default_view(s, vid, target, fov)] for vid in subset]
        else:
            options = [[ViewParams(vid, s.viewer_position(vid), tuple(d), tuple(u), f) for d, u, f in param_grid]
                       for vid in subset]
        for views in itertools.product(*options):
            q = model.score(views)
            if q > best_q:
                best, best_q = MultiView(tuple(views)), q
    return best, best_q


def warm_start(prev: OptimizeResult, s_next: Scenario, rng_seed=0, rcfg: RelevanceConfig | None = None,
               fov: float = DEFAULT_FOV) -> MultiView:
    """Carry the previous best multiview over to the next tick.

    Members keep their orientation and field of view but move with their
    viewer entity; members whose viewer vanished are replaced by random
    viewers outside the set, aimed at the most relevant entity.
    """
    rng = np.random.default_rng(rng_seed)
    alive = set(s_next.viewer_ids)
    views: list[ViewParams | None] = []
    for v in prev.best:
        if v.view_id in alive:
            views.append(dataclasses.replace(v, pos=s_next.viewer_position(v.view_id)))
        else:
            views.append(None)
    if any(v is None for v in views):
        taken = {v.view_id for v in views if v is not None}
        pool = [vid for vid in s_next.viewer_ids if vid not in taken]
        missing = sum(v is None for v in views)
        if len(pool) < missing:
            raise AnnealError("not enough viewers left to repair the warm start")
        picks = rng.choice(len(pool), size=missing, replace=False)
        target = focus_point(s_next, rcfg or RelevanceConfig())
        it = iter(picks)
        views = [v if v is not None else default_view(s_next, pool[int(next(it))], target, fov) for v in views]
    return MultiView(tuple(views))
