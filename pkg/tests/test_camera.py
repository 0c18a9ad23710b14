import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rescueview.camera import (
    CameraError, DegenerateFrameError, MultiView, ViewParams, camera_basis, look_at, ndc_of_point, ndc_of_points,
    pixel_of_ndc, pixel_ray, pixel_rays, rotate, to_camera,
)

unit = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1).map(
    lambda v: tuple(np.asarray(v) / np.linalg.norm(v)))


@st.composite
def views(draw):
    d = draw(unit)
    u = draw(unit)
    assume(abs(np.dot(d, u)) < 0.99)
    pos = draw(st.tuples(*[st.floats(-100, 100)] * 3))
    fov = draw(st.floats(20, 100))
    return ViewParams(0, pos, d, u, fov)


def down_view(fov=60.0, pos=(0.0, 0.0, 0.0)):
    return ViewParams(1, pos, (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), fov)


def test_canonical_basis():
    r, u, f = camera_basis(down_view())
    np.testing.assert_allclose(r, (1, 0, 0), atol=1e-12)
    np.testing.assert_allclose(u, (0, 1, 0), atol=1e-12)
    np.testing.assert_allclose(f, (0, 0, -1), atol=1e-12)


def test_parallel_up_is_degenerate():
    with pytest.raises(DegenerateFrameError):
        ViewParams(1, (0, 0, 0), (0, 0, -1), (0, 0, -1), 60)


def test_slightly_skewed_up_reorthogonalized():
    up = np.array([0.0, 1.0, 0.05])
    up /= np.linalg.norm(up)
    _, u, f = camera_basis(ViewParams(1, (0, 0, 0), (0, 0, -1), tuple(up), 60))
    assert abs(np.dot(u, f)) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(views())
def test_basis_orthonormal(v):
    r, u, f = camera_basis(v)
    for a, b in ((r, u), (u, f), (f, r)):
        assert abs(np.dot(a, b)) <= 1e-9
    for a in (r, u, f):
        assert abs(np.linalg.norm(a) - 1) <= 1e-9


def test_view_params_validation():
    with pytest.raises(CameraError):
        ViewParams(1, (0, 0, 0), (0, 0, -2), (0, 1, 0), 60)
    with pytest.raises(CameraError):
        ViewParams(1, (0, 0, 0), (0, 0, -1), (0, 1, 0), 19.9)
    with pytest.raises(CameraError):
        ViewParams(1, (0, 0, 0), (0, 0, -1), (0, 1, 0), 100.1)
    with pytest.raises(CameraError):
        MultiView((down_view(), down_view()))
    with pytest.raises(CameraError):
        MultiView(())


def test_ndc_on_axis():
    x, y, d = ndc_of_point(down_view(), (0, 0, -10))
    assert (x, y) == (0.0, 0.0) and d == pytest.approx(10.0)


def test_ndc_right_edge_fov90():
    z = 7.0
    x, y, _ = ndc_of_point(down_view(90.0), (z * math.tan(math.radians(45)), 0, -z))
    assert x == pytest.approx(1.0, abs=1e-12) and y == pytest.approx(0.0, abs=1e-12)


def test_ndc_behind_and_outside():
    v = down_view()
    assert ndc_of_point(v, (0, 0, 5)) is None
    assert ndc_of_point(v, (0, 0, -1e-7)) is None
    assert ndc_of_point(v, (100, 0, -1)) is None


def test_center_pixel_ray():
    v = look_at(3, (1, 2, 3), (40, -5, 9), (0, 0, 1), 55)
    _, d = pixel_ray(v, (9, 9), 4, 4)
    np.testing.assert_allclose(d, v.view_dir, atol=1e-9)


def test_pixel_ray_out_of_range():
    with pytest.raises(CameraError):
        pixel_ray(down_view(), (4, 4), 4, 0)
    with pytest.raises(CameraError):
        pixel_ray(down_view(), (4, 4), 0, -1)


def test_two_by_two_corner_rays_fov90():
    # pixel centers sit at +-0.5 of the half-width, which is tan(45) = 1
    v = down_view(90.0)
    expected = {(0, 0): (-0.5, 0.5), (1, 0): (0.5, 0.5), (0, 1): (-0.5, -0.5), (1, 1): (0.5, -0.5)}
    for (px, py), (cx, cy) in expected.items():
        _, d = pixel_ray(v, (2, 2), px, py)
        cam = to_camera(v, np.asarray(v.pos) + d)
        np.testing.assert_allclose(cam / cam[2], (cx, cy, 1.0), atol=1e-12)


def test_row_zero_is_top():
    v = down_view()
    rays = pixel_rays(v, 8)
    cam = to_camera(v, rays)
    assert np.all(cam[0, :, 1] > 0) and np.all(cam[-1, :, 1] < 0)
    assert np.all(cam[:, 0, 0] < 0) and np.all(cam[:, -1, 0] > 0)


@settings(max_examples=200, deadline=None)
@given(views(), st.integers(1, 64), st.data())
def test_ray_projects_back_into_its_pixel(v, res, data):
    px = data.draw(st.integers(0, res - 1))
    py = data.draw(st.integers(0, res - 1))
    depth = data.draw(st.floats(0.5, 500))
    o, d = pixel_ray(v, (res, res), px, py)
    x, y, dist = ndc_of_point(v, o + depth * d)
    assert pixel_of_ndc(x, y, (res, res)) == (px, py)
    assert dist == pytest.approx(depth, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(views(), st.floats(-0.99, 0.99), st.floats(-0.99, 0.99), st.floats(0.1, 1000))
def test_project_then_reproject(v, x, y, z):
    r, u, f = camera_basis(v)
    t = v.tan_half
    p = np.asarray(v.pos) + z * (x * t * r + y * t * u + f)
    nx, ny, depth = ndc_of_point(v, p)
    ray = normalize_ray(v, nx, ny)
    q = np.asarray(v.pos) + depth * ray
    assert np.linalg.norm(q - p) <= 1e-6 * max(1.0, np.linalg.norm(p))


def normalize_ray(v, x, y):
    r, u, f = camera_basis(v)
    d = x * v.tan_half * r + y * v.tan_half * u + f
    return d / np.linalg.norm(d)


@settings(max_examples=200, deadline=None)
@given(views(), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0.5, 300))
def test_axis_symmetry(v, x, y, z):
    r, u, f = camera_basis(v)
    t = v.tan_half
    pos = np.asarray(v.pos)
    a = ndc_of_point(v, pos + z * (x * t * r + y * t * u + f))
    b = ndc_of_point(v, pos + z * (-x * t * r - y * t * u + f))
    assert a[0] == pytest.approx(-b[0], abs=1e-9) and a[1] == pytest.approx(-b[1], abs=1e-9)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    v = look_at(0, (0, 0, 0), (10, 3, -2), (0, 0, 1), 70)
    pts = rng.uniform(-20, 20, size=(500, 3))
    xs, ys, inside = ndc_of_points(v, pts)
    for p, x, y, ok in zip(pts, xs, ys, inside):
        got = ndc_of_point(v, p)
        assert (got is not None) == bool(ok)
        if got is not None:
            assert got[:2] == pytest.approx((x, y), abs=1e-12)


def test_rotate_quarter_turn():
    np.testing.assert_allclose(rotate((1, 0, 0), (0, 0, 1), math.pi / 2), (0, 1, 0), atol=1e-12)
