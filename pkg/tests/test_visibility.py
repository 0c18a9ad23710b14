import math

import numpy as np
import pytest

from rescueview import checks
from rescueview.camera import ViewParams, look_at, pixel_rays
from rescueview.scene import Box, Entity, EntityKind, Scenario, ViewerAgent
from rescueview.visibility import (
    ItemBuffer, VisibilityConfig, _grid_for, _trace_grid, candidate_filter, candidate_mask, coverage_histogram,
    entity_pixel_counts, item_buffer_to_ppm, ray_aabb, raycast_oracle, render_item_buffer,
)

EXTENT = Box((-500.0, -500.0, -500.0), (500.0, 500.0, 500.0))


def scene(*boxes, ids=None):
    ids = ids or list(range(1, len(boxes) + 1))
    ents = [Entity(i, EntityKind.OrdinaryBuilding, Box(tuple(map(float, lo)), tuple(map(float, hi))))
            for i, (lo, hi) in zip(ids, boxes)]
    return Scenario(0, tuple(ents), (ViewerAgent(ids[0]),), EXTENT)


DOWN = ViewParams(0, (0.0, 0.0, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), 60.0)


# ray_aabb ----------------------------------------------------------------

def test_ray_aabb_axis_aligned():
    assert ray_aabb((0, 0, 0), (0, 0, -1), (-1, -1, -10), (1, 1, -5)) == 5.0


def test_ray_aabb_away():
    assert ray_aabb((0, 0, 0), (0, 0, 1), (-1, -1, -10), (1, 1, -5)) is None


def test_ray_aabb_inside():
    assert ray_aabb((0, 0, -7), (0, 0, -1), (-1, -1, -10), (1, 1, -5)) == 0.0


def test_ray_aabb_parallel_outside_slab():
    assert ray_aabb((5, 0, 0), (0, 0, -1), (-1, -1, -10), (1, 1, -5)) is None


def test_ray_aabb_oblique():
    d = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
    t = ray_aabb((0, 0, 0), d, (4, -1, -100), (6, 1, 100))
    assert t == pytest.approx(4 * math.sqrt(2))


# candidate filter --------------------------------------------------------

def test_filter_excludes_behind_and_far():
    cfg = VisibilityConfig(32, 100.0)
    s = scene(((-1, -1, -10), (1, 1, -5)), ((-1, -1, 5), (1, 1, 10)), ((-1, -1, -210), (1, 1, -200)))
    assert candidate_filter(DOWN, s, cfg) == {1}


@pytest.mark.parametrize("seed", range(50))
def test_filter_is_conservative(seed):
    rng = np.random.default_rng(1000 + seed)
    s = checks.random_scene(rng, int(rng.integers(5, 60)))
    v = checks.random_view(rng, s)
    cfg = VisibilityConfig(48, 150.0)
    keep = candidate_filter(v, s, cfg)
    assert set(raycast_oracle(v, s, cfg).counts) <= keep
    assert set(coverage_histogram(render_item_buffer(v, s, cfg)).counts) <= keep
    assert len(keep) == int(candidate_mask(v, s, cfg).sum())


# rendering ---------------------------------------------------------------

def test_nothing_in_view_renders_empty():
    s = scene(((-1, -1, 5), (1, 1, 10)))
    b = render_item_buffer(DOWN, s, VisibilityConfig(16, 300.0))
    assert (b.ids == -1).all() and np.isnan(b.depths).all()
    assert coverage_histogram(b).counts == {}
    assert raycast_oracle(DOWN, s, VisibilityConfig(16, 300.0)).counts == {}


def test_full_cover_depths():
    s = scene(((-100, -100, -20), (100, 100, -10)), ids=[7])
    cfg = VisibilityConfig(16, 300.0)
    b = render_item_buffer(DOWN, s, cfg)
    assert (b.ids == 7).all()
    dirs = pixel_rays(DOWN, 16)
    np.testing.assert_allclose(b.depths, 10.0 / -dirs[..., 2], rtol=1e-12)
    assert (b.depths > 0).all()


def test_occluded_box_gets_zero_pixels():
    s = scene(((-50, -50, -20), (50, 50, -10)), ((-2, -2, -40), (2, 2, -30)))
    stats = coverage_histogram(render_item_buffer(DOWN, s, VisibilityConfig(32, 300.0)))
    assert stats.count(2) == 0 and stats.count(1) == 32 * 32


def test_distance_cutoff():
    s = scene(((-50, -50, -20), (50, 50, -10)))
    assert coverage_histogram(render_item_buffer(DOWN, s, VisibilityConfig(16, 9.0))).counts == {}


def test_tie_goes_to_lower_id():
    box = ((-50, -50, -20), (50, 50, -10))
    s = scene(box, box, ids=[9, 4])
    cfg = VisibilityConfig(16, 300.0)
    assert coverage_histogram(render_item_buffer(DOWN, s, cfg)).counts == {4: 256}
    assert raycast_oracle(DOWN, s, cfg).counts == {4: 256}


def test_single_entity_oracle_matches():
    s = scene(((3, -4, -30), (9, 2, -12)))
    v = look_at(0, (0, 0, 0), (6, -1, -20), (0, 1, 0), 45)
    cfg = VisibilityConfig(64, 300.0)
    want = raycast_oracle(v, s, cfg)
    assert want.count(1) > 0
    assert coverage_histogram(render_item_buffer(v, s, cfg)) == want


def test_histogram_counts():
    ids = np.full((4, 4), -1, dtype=np.int64)
    ids.flat[:10] = 7
    b = ItemBuffer(ids, np.where(ids >= 0, 1.0, np.nan))
    stats = coverage_histogram(b)
    assert stats.counts == {7: 10} and stats.total_pixels == 16


@pytest.mark.parametrize("seed", range(20))
def test_histogram_partition_and_invariants(seed):
    rng = np.random.default_rng(seed)
    s = checks.random_scene(rng, 30)
    v = checks.random_view(rng, s)
    b = render_item_buffer(v, s, VisibilityConfig(32, 150.0))
    stats = coverage_histogram(b)
    assert sum(stats.counts.values()) + int((b.ids == -1).sum()) == stats.total_pixels
    assert set(stats.counts) <= set(s.ids.tolist())
    assert (b.depths[b.ids >= 0] >= 0).all() and np.isnan(b.depths[b.ids < 0]).all()
    np.testing.assert_array_equal(entity_pixel_counts(v, s, VisibilityConfig(32, 150.0)),
                                  [stats.count(int(i)) for i in s.ids])


def test_render_deterministic():
    rng = np.random.default_rng(5)
    s = checks.random_scene(rng, 40)
    v = checks.random_view(rng, s)
    cfg = VisibilityConfig(64, 150.0)
    assert render_item_buffer(v, s, cfg) == render_item_buffer(v, s, cfg)


def test_ppm_dump():
    ids = np.array([[-1, 3], [3, -1]] * 4, dtype=np.int64).repeat(4, axis=1)[:8, :8]
    b = ItemBuffer(ids, np.where(ids >= 0, 1.0, np.nan))
    data = item_buffer_to_ppm(b)
    header = b"P6\n8 8\n255\n"
    assert data.startswith(header)
    rgb = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(8, 8, 3)
    assert (rgb[ids < 0] == 0).all()
    assert (rgb[ids >= 0] > 0).any(axis=-1).all()


# oracle suite ------------------------------------------------------------

def test_oracle_suite_small():
    rep = checks.visibility_suite(n_scenes=10, resolutions=(32, 64), seed=3)
    assert rep.passed, rep.first_counterexample
    assert rep.cases == 20


def higher_id_wins(v, s, cfg):
    """Faulty renderer: depth ties go to the HIGHER id."""
    res = int(cfg.resolution)
    dirs = pixel_rays(v, res).reshape(-1, 3)
    idx = np.full(len(dirs), -1, dtype=np.int64)
    t = np.full(len(dirs), np.nan)
    g = _grid_for(s)
    _trace_grid(np.asarray(v.pos, dtype=np.float64), dirs, s.box_min, s.box_max, -s.ids,
                candidate_mask(v, s, cfg), g.x0, g.y0, g.cell_x, g.cell_y, g.nx, g.ny, g.start, g.items,
                float(cfg.max_view_distance), idx, t)
    ids = np.where(idx >= 0, s.ids[np.maximum(idx, 0)], -1)
    return ItemBuffer(ids.reshape(res, res), t.reshape(res, res))


def test_faulty_tie_rule_is_detected():
    box = ((-50, -50, -20), (50, 50, -10))
    s = scene(box, box, ids=[9, 4])
    assert coverage_histogram(higher_id_wins(DOWN, s, VisibilityConfig(16, 300.0))).counts == {9: 256}
    rep = checks.visibility_suite(n_scenes=10, resolutions=(32,), seed=0, render=higher_id_wins)
    assert not rep.passed
    assert rep.first_counterexample
