"""Per-view visibility from an item buffer.

Every pixel stores the id of the entity whose box is hit first by the ray
through the pixel center (ties on the exact hit distance go to the lower
id).  Two routes compute it:

* ``render_item_buffer`` culls candidates with a frustum + distance test and
  walks a uniform xy grid per ray (numba);
* ``raycast_oracle`` tests every ray against every box in plain numpy.

Both share the pixel rays and the slab arithmetic, so their results agree
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .camera import ViewParams, camera_basis, pixel_rays
from .scene import Scenario

DEFAULT_RESOLUTION = 128
DEFAULT_MAX_VIEW_DISTANCE = 300.0


@dataclass(frozen=True)
class VisibilityConfig:
    resolution: int = DEFAULT_RESOLUTION
    max_view_distance: float = DEFAULT_MAX_VIEW_DISTANCE

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ValueError("resolution must be an integer >= 8")
        if not self.max_view_distance > 0:
            raise ValueError("max_view_distance must be positive")


@dataclass(frozen=True, eq=False)
class ItemBuffer:
    """Entity id per pixel (-1 = empty) and hit distance (nan = empty)."""

    ids: np.ndarray
    depths: np.ndarray

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ItemBuffer):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.depths, other.depths, equal_nan=True)


@dataclass(frozen=True)
class VisibilityStats:
    counts: dict[int, int]
    total_pixels: int

    def count(self, entity_id: int) -> int:
        return self.counts.get(entity_id, 0)


# ---------------------------------------------------------------------------
# ray / box


@numba.njit(cache=True)
def _slab_hit(ox, oy, oz, dx, dy, dz, x0, y0, z0, x1, y1, z1):
    # Entering distance along the ray, 0 if the origin is inside, -1 on a miss.
    tnear = -np.inf
    tfar = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    lo_c = (x0, y0, z0)
    hi_c = (x1, y1, z1)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo_c[a] or o[a] > hi_c[a]:
                return -1.0
        else:
            inv = 1.0 / d[a]
            t1 = (lo_c[a] - o[a]) * inv
            t2 = (hi_c[a] - o[a]) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tnear:
                tnear = t1
            if t2 < tfar:
                tfar = t2
    if tnear > tfar or tfar < 0.0:
        return -1.0
    if tnear < 0.0:
        return 0.0
    return tnear


def ray_aabb(origin: Sequence[float], direction: Sequence[float],
             box_min: Sequence[float], box_max: Sequence[float]) -> float | None:
    """Slab-method entering distance of a ray into a box; 0 when the origin is
    inside, None when the box is missed or lies behind the origin."""
    t = _slab_hit(*map(float, origin), *map(float, direction), *map(float, box_min), *map(float, box_max))
    return None if t < 0.0 else float(t)


def _slab_hit_many(origin: np.ndarray, dirs: np.ndarray, bmin: np.ndarray, bmax: np.ndarray) -> np.ndarray:
    """Vectorized ``_slab_hit`` of many rays against one box; -1 on a miss."""
    tnear = np.full(len(dirs), -np.inf)
    tfar = np.full(len(dirs), np.inf)
    miss = np.zeros(len(dirs), dtype=bool)
    for a in range(3):
        d = dirs[:, a]
        zero = d == 0.0
        if zero.any() and (origin[a] < bmin[a] or origin[a] > bmax[a]):
            miss |= zero
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (bmin[a] - origin[a]) * inv
            t2 = (bmax[a] - origin[a]) * inv
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        tnear = np.where(zero, tnear, np.maximum(tnear, lo))
        tfar = np.where(zero, tfar, np.minimum(tfar, hi))
    miss |= (tnear > tfar) | (tfar < 0.0)
    t = np.where(tnear < 0.0, 0.0, tnear)
    return np.where(miss, -1.0, t)


# ---------------------------------------------------------------------------
# candidate pre-filter


def frustum_planes(v: ViewParams) -> np.ndarray:
    """Inward plane normals through the eye (4 sides + eye plane), shape (5, 3)."""
    right, up, forward = camera_basis(v)
    t = v.tan_half
    return np.array([
        -right + t * forward,
        right + t * forward,
        -up + t * forward,
        up + t * forward,
        forward,
    ])


def candidate_mask(v: ViewParams, s: Scenario, cfg: VisibilityConfig) -> np.ndarray:
    if not s.entities:
        return np.zeros(0, dtype=bool)
    eye = np.asarray(v.pos)
    lo = s.box_min - eye
    hi = s.box_max - eye
    keep = np.ones(len(lo), dtype=bool)
    for n in frustum_planes(v):
        # largest signed distance over the 8 corners = support point along n
        best = np.where(n >= 0, hi, lo) @ n
        keep &= best >= -1e-9
    nearest = np.clip(eye, s.box_min, s.box_max) - eye
    keep &= np.sqrt(np.einsum("ij,ij->i", nearest, nearest)) <= cfg.max_view_distance
    return keep


def candidate_filter(v: ViewParams, s: Scenario, cfg: VisibilityConfig) -> set[int]:
    """Ids of entities that may be visible: box touches the view frustum and
    its nearest point lies within the maximum view distance."""
    return set(s.ids[candidate_mask(v, s, cfg)].tolist())


# ---------------------------------------------------------------------------
# uniform grid + traversal


@dataclass(frozen=True, eq=False)
class _Grid:
    x0: float
    y0: float
    cell_x: float
    cell_y: float
    nx: int
    ny: int
    start: np.ndarray  # (nx*ny + 1,) offsets into items
    items: np.ndarray  # entity indices


_GRID_PAD = 1e-6


def _build_grid(s: Scenario) -> _Grid:
    (x0, y0, _), (x1, y1, _) = s.extent.min, s.extent.max
    n = max(len(s.entities), 1)
    side = max(1, min(256, int(math.sqrt(n) * 1.5)))
    cell_x = max((x1 - x0) / side, 1e-9)
    cell_y = max((y1 - y0) / side, 1e-9)
    nx = ny = side
    if not s.entities:
        return _Grid(x0, y0, cell_x, cell_y, nx, ny, np.zeros(nx * ny + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    ix0 = np.clip(np.floor((s.box_min[:, 0] - _GRID_PAD - x0) / cell_x), 0, nx - 1).astype(np.int64)
    ix1 = np.clip(np.floor((s.box_max[:, 0] + _GRID_PAD - x0) / cell_x), 0, nx - 1).astype(np.int64)
    iy0 = np.clip(np.floor((s.box_min[:, 1] - _GRID_PAD - y0) / cell_y), 0, ny - 1).astype(np.int64)
    iy1 = np.clip(np.floor((s.box_max[:, 1] + _GRID_PAD - y0) / cell_y), 0, ny - 1).astype(np.int64)
    cells, owners = [], []
    for e in range(len(s.entities)):
        xs = np.arange(ix0[e], ix1[e] + 1)
        ys = np.arange(iy0[e], iy1[e] + 1)
        c = (ys[:, None] * nx + xs[None, :]).ravel()
        cells.append(c)
        owners.append(np.full(len(c), e, dtype=np.int64))
    cells_a = np.concatenate(cells)
    owners_a = np.concatenate(owners)
    order = np.argsort(cells_a, kind="stable")
    counts = np.bincount(cells_a, minlength=nx * ny)
    start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return _Grid(x0, y0, cell_x, cell_y, nx, ny, start, owners_a[order])


def _grid_for(s: Scenario) -> _Grid:
    # Scenarios are immutable, so the grid is memoized on the instance.
    grid = s.__dict__.get("_visibility_grid")
    if grid is None:
        grid = _build_grid(s)
        s.__dict__["_visibility_grid"] = grid
    return grid


@numba.njit(cache=True)
def _trace_grid(origin, dirs, bmin, bmax, ids, mask, gx0, gy0, csx, csy, nx, ny, start, items,
                max_dist, out_idx, out_t):
    ox, oy, oz = origin[0], origin[1], origin[2]
    gx1 = gx0 + nx * csx
    gy1 = gy0 + ny * csy
    margin = 1e-6
    for r in range(dirs.shape[0]):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = np.inf
        best_i = -1
        best_id = -1
        # clip the ray against the grid footprint in xy
        t_lo = 0.0
        t_hi = max_dist
        ok = True
        if dx == 0.0:
            if ox < gx0 or ox > gx1:
                ok = False
        else:
            a = (gx0 - ox) / dx
            b = (gx1 - ox) / dx
            if a > b:
                a, b = b, a
            t_lo = max(t_lo, a)
            t_hi = min(t_hi, b)
        if dy == 0.0:
            if oy < gy0 or oy > gy1:
                ok = False
        else:
            a = (gy0 - oy) / dy
            b = (gy1 - oy) / dy
            if a > b:
                a, b = b, a
            t_lo = max(t_lo, a)
            t_hi = min(t_hi, b)
        if not ok or t_lo > t_hi + margin:
            out_idx[r] = -1
            out_t[r] = np.nan
            continue
        px = ox + dx * t_lo
        py = oy + dy * t_lo
        ix = int(math.floor((px - gx0) / csx))
        iy = int(math.floor((py - gy0) / csy))
        ix = min(max(ix, 0), nx - 1)
        iy = min(max(iy, 0), ny - 1)
        if dx > 0.0:
            sx = 1
            tmx = (gx0 + (ix + 1) * csx - ox) / dx
            tdx = csx / dx
        elif dx < 0.0:
            sx = -1
            tmx = (gx0 + ix * csx - ox) / dx
            tdx = -csx / dx
        else:
            sx = 0
            tmx = np.inf
            tdx = np.inf
        if dy > 0.0:
            sy = 1
            tmy = (gy0 + (iy + 1) * csy - oy) / dy
            tdy = csy / dy
        elif dy < 0.0:
            sy = -1
            tmy = (gy0 + iy * csy - oy) / dy
            tdy = -csy / dy
        else:
            sy = 0
            tmy = np.inf
            tdy = np.inf
        t_in = t_lo
        while True:
            if t_in > best_t + margin or t_in > max_dist + margin:
                break
            c = iy * nx + ix
            for q in range(start[c], start[c + 1]):
                e = items[q]
                if not mask[e]:
                    continue
                t = _slab_hit(ox, oy, oz, dx, dy, dz,
                              bmin[e, 0], bmin[e, 1], bmin[e, 2], bmax[e, 0], bmax[e, 1], bmax[e, 2])
                if t < 0.0 or t > max_dist:
                    continue
                if t < best_t or (t == best_t and ids[e] < best_id):
                    best_t = t
                    best_i = e
                    best_id = ids[e]
            if tmx < tmy:
                ix += sx
                t_in = tmx
                tmx += tdx
            else:
                iy += sy
                t_in = tmy
                tmy += tdy
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                break
        out_idx[r] = best_i
        out_t[r] = best_t if best_i >= 0 else np.nan


def _render_indices(v: ViewParams, s: Scenario, cfg: VisibilityConfig,
                    mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Entity index (-1 empty) and depth per pixel, flattened row-major."""
    res = int(cfg.resolution)
    dirs = pixel_rays(v, res).reshape(-1, 3)
    out_idx = np.full(len(dirs), -1, dtype=np.int64)
    out_t = np.full(len(dirs), np.nan)
    if not s.entities:
        return out_idx, out_t
    if mask is None:
        mask = candidate_mask(v, s, cfg)
    if not mask.any():
        return out_idx, out_t
    g = _grid_for(s)
    _trace_grid(np.asarray(v.pos, dtype=np.float64), dirs, s.box_min, s.box_max, s.ids, mask,
                g.x0, g.y0, g.cell_x, g.cell_y, g.nx, g.ny, g.start, g.items,
                float(cfg.max_view_distance), out_idx, out_t)
    return out_idx, out_t


def render_item_buffer(v: ViewParams, s: Scenario, cfg: VisibilityConfig) -> ItemBuffer:
    res = int(cfg.resolution)
    idx, t = _render_indices(v, s, cfg)
    ids = np.where(idx >= 0, s.ids[np.maximum(idx, 0)] if len(s.ids) else -1, -1)
    return ItemBuffer(ids.reshape(res, res), t.reshape(res, res))


def entity_pixel_counts(v: ViewParams, s: Scenario, cfg: VisibilityConfig) -> np.ndarray:
    """Pixel count per entity index (same order as ``s.entities``)."""
    idx, _ = _render_indices(v, s, cfg)
    return np.bincount(idx[idx >= 0], minlength=len(s.entities))


def coverage_histogram(b: ItemBuffer) -> VisibilityStats:
    ids = b.ids[b.ids >= 0]
    uniq, cnt = np.unique(ids, return_counts=True)
    return VisibilityStats({int(i): int(c) for i, c in zip(uniq, cnt)}, int(b.ids.size))


def raycast_oracle(v: ViewParams, s: Scenario, cfg: VisibilityConfig) -> VisibilityStats:
    """Brute force: every pixel ray against every entity box, no culling."""
    res = int(cfg.resolution)
    dirs = pixel_rays(v, res).reshape(-1, 3)
    origin = np.asarray(v.pos, dtype=np.float64)
    best_t = np.full(len(dirs), np.inf)
    best_id = np.full(len(dirs), -1, dtype=np.int64)
    for e in s.entities:
        t = _slab_hit_many(origin, dirs, np.asarray(e.box.min, dtype=np.float64),
                           np.asarray(e.box.max, dtype=np.float64))
        hit = (t >= 0.0) & (t <= cfg.max_view_distance)
        better = hit & ((t < best_t) | ((t == best_t) & (e.id < best_id)))
        best_t[better] = t[better]
        best_id[better] = e.id
    ids = best_id[best_id >= 0]
    uniq, cnt = np.unique(ids, return_counts=True)
    return VisibilityStats({int(i): int(c) for i, c in zip(uniq, cnt)}, res * res)


# ---------------------------------------------------------------------------
# debug output


def id_color(entity_id: int) -> tuple[int, int, int]:
    h = (entity_id * 2654435761 + 0x9E3779B9) & 0xFFFFFFFF
    r, g, b = (h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF
    # keep visible entities distinguishable from the black background
    return max(r, 32), max(g, 32), max(b, 32)


def item_buffer_to_ppm(b: ItemBuffer) -> bytes:
    rgb = np.zeros((b.height, b.width, 3), dtype=np.uint8)
    for eid in np.unique(b.ids[b.ids >= 0]):
        rgb[b.ids == eid] = id_color(int(eid))
    header = f"P6\n{b.width} {b.height}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def write_ppm(b: ItemBuffer, path: str | Path) -> None:
    Path(path).write_bytes(item_buffer_to_ppm(b))
