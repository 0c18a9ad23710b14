"""Multiview quality: visibility, relevance, redundancy and eccentricity.

    Q(MV) = sum_j sum_i vis(i, j) * red(i) * (w1 * rel(i) + w2 * ecc(i, j))

vis is the fraction of the image covered by entity i in view j, red(i) is
1 / (number of views in which i is visible), rel comes from the scene model
and ecc rewards entities whose box center projects near the image center.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import MultiView, ViewParams, ndc_of_points
from .scene import Entity, RelevanceConfig, Scenario, relevance_array
from .visibility import VisibilityConfig, VisibilityStats, entity_pixel_counts

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Weights:
    w1: float = 0.8
    w2: float = 0.2

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or not self.w1 + self.w2 > 0:
            raise ValueError("weights must be nonnegative with a positive sum")

    def scaled(self, factor: float) -> "Weights":
        return Weights(self.w1 * factor, self.w2 * factor)


@dataclass(frozen=True)
class EntityViewTerm:
    entity_id: int
    view_index: int
    vis: float
    rel: float
    red: float
    ecc: float
    contribution: float


@dataclass(frozen=True)
class QualityBreakdown:
    terms: tuple[EntityViewTerm, ...]
    total: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["view_index", "entity_id", "vis", "rel", "red", "ecc", "contribution"])
        for t in self.terms:
            out.writerow([t.view_index, t.entity_id, repr(t.vis), repr(t.rel), repr(t.red),
                          repr(t.ecc), repr(t.contribution)])
        out.writerow(["TOTAL", "", "", "", "", "", repr(self.total)])
        return buf.getvalue()


def vis_score(stats: VisibilityStats, entity_id: int) -> float:
    return stats.count(entity_id) / stats.total_pixels


def _ecc_from_ndc(x: np.ndarray, y: np.ndarray, inside: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        ecc = np.maximum(0.0, 1.0 - np.sqrt(x * x + y * y) / SQRT2)
    return np.where(inside, ecc, 0.0)


def eccentricities(v: ViewParams, centers: np.ndarray) -> np.ndarray:
    """Eccentricity score of each box center (n, 3) in view ``v``."""
    return _ecc_from_ndc(*ndc_of_points(v, np.asarray(centers, dtype=np.float64).reshape(-1, 3)))


def eccentricity(v: ViewParams, e: Entity) -> float:
    """1 at the image center, falling linearly to 0 at the corners; 0 when
    the box center does not project into the image."""
    return float(eccentricities(v, np.asarray([e.box.center]))[0])


def redundancy_factors(per_view_stats: Sequence[VisibilityStats]) -> dict[int, float]:
    seen: dict[int, int] = {}
    for stats in per_view_stats:
        for eid, c in stats.counts.items():
            if c > 0:
                seen[eid] = seen.get(eid, 0) + 1
    return {eid: 1.0 / c for eid, c in seen.items()}


def _weighted_terms(counts: np.ndarray, ecc: np.ndarray, rel: np.ndarray, w: Weights,
                    total_pixels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """vis, red and contribution arrays, each (k, n)."""
    vis = counts / float(total_pixels)
    seen = (counts > 0).sum(axis=0)
    red = np.where(seen > 0, 1.0 / np.maximum(seen, 1), 1.0)
    contrib = vis * red[None, :] * (w.w1 * rel[None, :] + w.w2 * ecc)
    return vis, np.broadcast_to(red, counts.shape), contrib


def _sum_q(contrib: np.ndarray) -> float:
    # fixed view-major order keeps Q reproducible
    return float(math.fsum(contrib.ravel().tolist()))


class QualityModel:
    """Scores multiviews over one frozen scenario, caching per-view renders."""

    def __init__(self, s: Scenario, w: Weights | None = None, rcfg: RelevanceConfig | None = None,
                 vcfg: VisibilityConfig | None = None, cache_size: int = 512):
        self.scenario = s
        self.weights = w or Weights()
        self.rcfg = rcfg or RelevanceConfig()
        self.vcfg = vcfg or VisibilityConfig()
        self.rel = relevance_array(s, self.rcfg)
        self.total_pixels = int(self.vcfg.resolution) ** 2
        self._cache: OrderedDict[ViewParams, tuple[np.ndarray, np.ndarray]] = OrderedDict()
        self._cache_size = cache_size
        self.renders = 0

    def with_weights(self, w: Weights) -> "QualityModel":
        """Same scenario and render cache, different weights."""
        other = QualityModel.__new__(QualityModel)
        other.__dict__.update(self.__dict__)
        other.weights = w
        return other

    def view_arrays(self, v: ViewParams) -> tuple[np.ndarray, np.ndarray]:
        """(pixel counts, eccentricities) per entity for one view."""
        hit = self._cache.get(v)
        if hit is not None:
            self._cache.move_to_end(v)
            return hit
        counts = entity_pixel_counts(v, self.scenario, self.vcfg)
        ecc = eccentricities(v, self.scenario.box_center) if len(self.scenario.entities) else np.zeros(0)
        self.renders += 1
        self._cache[v] = (counts, ecc)
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return counts, ecc

    def _stack(self, mv: MultiView | Sequence[ViewParams]) -> tuple[np.ndarray, np.ndarray]:
        arrays = [self.view_arrays(v) for v in mv]
        n = len(self.scenario.entities)
        counts = np.array([a[0] for a in arrays], dtype=np.float64).reshape(len(arrays), n)
        ecc = np.array([a[1] for a in arrays], dtype=np.float64).reshape(len(arrays), n)
        return counts, ecc

    def score(self, mv: MultiView | Sequence[ViewParams]) -> float:
        counts, ecc = self._stack(mv)
        _, _, contrib = _weighted_terms(counts, ecc, self.rel, self.weights, self.total_pixels)
        return _sum_q(contrib)

    def breakdown(self, mv: MultiView | Sequence[ViewParams]) -> QualityBreakdown:
        counts, ecc = self._stack(mv)
        vis, red, contrib = _weighted_terms(counts, ecc, self.rel, self.weights, self.total_pixels)
        ids = self.scenario.ids
        terms = []
        for j, i in zip(*np.nonzero(counts > 0)):
            terms.append(EntityViewTerm(int(ids[i]), int(j), float(vis[j, i]), float(self.rel[i]),
                                        float(red[j, i]), float(ecc[j, i]), float(contrib[j, i])))
        return QualityBreakdown(tuple(terms), _sum_q(contrib))


def total_quality(mv: MultiView, s: Scenario, w: Weights, rcfg: RelevanceConfig,
                  vcfg: VisibilityConfig) -> QualityBreakdown:
    """Render every view of ``mv`` and evaluate the full quality sum."""
    return QualityModel(s, w, rcfg, vcfg).breakdown(mv)
