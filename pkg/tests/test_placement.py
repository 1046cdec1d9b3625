"""Region back-projection, RANSAC plane, and placement solving tests."""

import numpy as np
import pytest

from conftest import unit_cube_mesh
from placekit.depth import DepthMap
from placekit.fixture import FLOOR_Y, floor_mask, make_fixture
from placekit.geometry import Intrinsics, Pose, exp_update, rodrigues
from placekit.placement import (
    DegenerateInput,
    EmptyRegion,
    PlaneModel,
    Placement,
    RegionSelection,
    ZeroFootprint,
    backproject_region,
    placement_from_json,
    placement_to_json,
    plane_frame,
    ransac_plane,
    solve_placement,
)

INTR = Intrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)


def make_plane(normal, offset, anchor, inliers=10):
    n = np.asarray(normal, dtype=np.float64)
    return PlaneModel(
        normal=n / np.linalg.norm(n),
        offset=float(offset),
        inlier_indices=np.arange(inliers),
        anchor=np.asarray(anchor, dtype=np.float64),
    )


def test_region_selection_validation():
    with pytest.raises(ValueError):
        RegionSelection(frame_index=0, box=(10, 10, 5, 20))
    with pytest.raises(ValueError):
        RegionSelection(frame_index=0, points=[[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        RegionSelection(frame_index=0)


def test_backproject_contains_principal_ray():
    """A box around the principal point at constant depth includes (0,0,2)."""
    depth = DepthMap(z=np.full((48, 64), 2.0), valid=np.ones((48, 64), dtype=bool))
    sel = RegionSelection(frame_index=0, box=(28, 20, 36, 28))
    pts = backproject_region(sel, depth, Pose(), INTR)
    d = np.linalg.norm(pts - [0.0, 0.0, 2.0], axis=1)
    assert d.min() < 1e-9


def test_backproject_fixture_floor_on_plane():
    """Floor-region points satisfy the known plane equation y = FLOOR_Y."""
    fix = make_fixture(n_frames=1, width=160, height=120, focal=130.0)
    sel = RegionSelection(frame_index=0, box=(30, 95, 130, 115))
    assert floor_mask(fix.poses[0], fix.intr)[95:116, 30:131].all()
    pts = backproject_region(sel, fix.depth(0), fix.poses[0], fix.intr)
    assert np.abs(pts[:, 1] - FLOOR_Y).max() < 1e-6


def test_backproject_point_polygon_region():
    depth = DepthMap(z=np.full((48, 64), 2.0), valid=np.ones((48, 64), dtype=bool))
    sel = RegionSelection(frame_index=0, points=[[10, 10], [50, 12], [30, 40]])
    pts = backproject_region(sel, depth, Pose(), INTR)
    assert len(pts) > 50


def test_backproject_invalid_depth_raises():
    depth = DepthMap(z=np.zeros((48, 64)), valid=np.zeros((48, 64), dtype=bool))
    sel = RegionSelection(frame_index=0, box=(10, 10, 30, 30))
    with pytest.raises(EmptyRegion):
        backproject_region(sel, depth, Pose(), INTR)


def test_ransac_exact_plane_faces_camera():
    """Points on z=1 seen from the origin get the camera-facing normal."""
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100), np.ones(100)])
    plane = ransac_plane(pts, Pose(), seed=0)
    assert np.allclose(plane.normal, [0.0, 0.0, -1.0], atol=1e-9)
    assert plane.offset == pytest.approx(-1.0)
    assert len(plane.inlier_indices) == 100


def test_ransac_inliers_outliers():
    """80/20 noisy split recovers the plane to < 1 degree, recall >= 95%."""
    rng = np.random.default_rng(42)
    n_in, n_out = 800, 200
    true_n = np.array([0.2, 0.9, -0.3])
    true_n = true_n / np.linalg.norm(true_n)
    basis = np.linalg.svd(true_n[None])[2][1:]
    inl = rng.uniform(-1, 1, (n_in, 2)) @ basis + 3.0 * true_n
    inl += rng.normal(scale=0.002, size=(n_in, 3))
    out = rng.uniform(-2, 2, (n_out, 3)) + 3.0 * true_n
    pts = np.concatenate([inl, out])
    camera = Pose(translation=3.0 * true_n + true_n * 2.0)
    plane = ransac_plane(pts, camera, seed=7)
    ang = np.degrees(np.arccos(min(1.0, abs(plane.normal @ true_n))))
    assert ang < 1.0
    recall = np.isin(np.arange(n_in), plane.inlier_indices).mean()
    assert recall >= 0.95


def test_ransac_deterministic():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200), np.ones(200)])
    pts[::5] += rng.normal(scale=0.5, size=(40, 3))
    a = ransac_plane(pts, Pose(), seed=11)
    b = ransac_plane(pts, Pose(), seed=11)
    assert np.array_equal(a.normal, b.normal)
    assert np.array_equal(a.inlier_indices, b.inlier_indices)


def test_ransac_collinear_points():
    t = np.linspace(0, 1, 10)
    pts = np.column_stack([t, 2 * t, 3 * t])
    with pytest.raises(DegenerateInput):
        ransac_plane(pts, Pose(), seed=0)


def test_ransac_rigid_covariance():
    """Transforming points and camera together transforms the plane covariantly."""
    rng = np.random.default_rng(5)
    pts = np.column_stack([rng.uniform(-1, 1, 150), rng.uniform(-1, 1, 150), np.ones(150)])
    cam = Pose(translation=(0.2, -0.1, -1.0))
    T = exp_update(Pose(), np.array([0.4, -0.3, 0.9, 0.3, -0.2, 0.5]))
    a = ransac_plane(pts, cam, seed=2)
    b = ransac_plane(T.apply(pts), T.compose(cam), seed=2)
    assert np.abs(b.normal - T.R @ a.normal).max() < 1e-6
    assert np.abs(b.anchor - T.apply(a.anchor)).max() < 1e-6


def test_plane_frame_axis_aligned():
    plane = make_plane([0, 1, 0], 0.0, [0, 0, 0])
    x, y, z = plane_frame(plane, Pose())
    assert np.allclose(x, [1, 0, 0])
    assert np.allclose(y, [0, 1, 0])
    assert np.allclose(z, np.cross(x, y))


def test_plane_frame_orthonormal_random():
    """100 random planes give right-handed orthonormal triads."""
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = rng.normal(size=3)
        plane = make_plane(n, rng.normal(), rng.normal(size=3))
        cam = exp_update(Pose(), rng.normal(size=6))
        x, y, z = plane_frame(plane, cam)
        M = np.stack([x, y, z])
        assert np.abs(M @ M.T - np.eye(3)).max() < 1e-9
        assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-9)


def test_plane_frame_fallback_branch():
    """Camera right-axis parallel to the normal still yields a valid triad."""
    plane = make_plane([1, 0, 0], 0.0, [0, 0, 0])
    x, y, z = plane_frame(plane, Pose())
    M = np.stack([x, y, z])
    assert np.abs(M @ M.T - np.eye(3)).max() < 1e-9


def test_solve_placement_aligned_plane_identity_rotation():
    plane = make_plane([0, 1, 0], 0.0, [0, 0, 0])
    pts = np.column_stack([np.linspace(-1, 1, 10), np.zeros(10), np.linspace(-1, 1, 10)])
    pl = solve_placement(plane, pts, unit_cube_mesh(), Pose(), yaw_deg=0.0)
    assert np.allclose(pl.rotation.q, [0, 0, 0, 1], atol=1e-9)


def test_solve_placement_scale_formula():
    """ex=2, ez=1, unit footprint, fill 0.5 gives s = 0.5."""
    plane = make_plane([0, 1, 0], 0.0, [0, 0, 0], inliers=4)
    pts = np.array([[-1.0, 0, -0.5], [1.0, 0, -0.5], [-1.0, 0, 0.5], [1.0, 0, 0.5]])
    pl = solve_placement(plane, pts, unit_cube_mesh(), Pose())
    assert pl.scale == pytest.approx(0.5)


def test_solve_placement_up_axis_parallel_to_normal():
    """For any plane and yaw the cube's +y maps to the plane normal."""
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = rng.normal(size=3)
        n = n / np.linalg.norm(n)
        plane = make_plane(n, 1.0, n * 1.0, inliers=4)
        basis = np.linalg.svd(n[None])[2][1:]
        pts = np.array([[-1, -0.5], [1, -0.5], [-1, 0.5], [1, 0.5]]) @ basis + n
        cam = exp_update(Pose(), rng.normal(size=6) * 0.3)
        pl = solve_placement(plane, pts, unit_cube_mesh(), cam,
                             yaw_deg=float(rng.uniform(0, 360)))
        up = pl.rotation.R @ np.array([0.0, 1.0, 0.0])
        assert np.linalg.norm(np.cross(up, n)) < 1e-9


def test_solve_placement_bottom_on_plane():
    """The placed cube's bottom face lands exactly on the fitted plane."""
    fix = make_fixture(n_frames=1, width=160, height=120, focal=130.0)
    sel = RegionSelection(frame_index=0, box=(30, 95, 130, 115))
    pts = backproject_region(sel, fix.depth(0), fix.poses[0], fix.intr)
    plane = ransac_plane(pts, fix.poses[0], seed=0)
    pl = solve_placement(plane, pts, unit_cube_mesh(), fix.poses[0])
    cube = unit_cube_mesh().vertices * pl.scale @ pl.rotation.R.T + pl.translation
    dist = cube @ plane.normal - plane.offset
    bottom = dist.min()
    assert abs(bottom) < 1e-6
    assert dist.max() > 0  # rest of the cube on the visible side


def test_solve_placement_planar_offset():
    plane = make_plane([0, 1, 0], 0.0, [0, 0, 0], inliers=4)
    pts = np.array([[-1.0, 0, -1.0], [1.0, 0, -1.0], [-1.0, 0, 1.0], [1.0, 0, 1.0]])
    a = solve_placement(plane, pts, unit_cube_mesh(), Pose(), planar_offset=(0.0, 0.0))
    b = solve_placement(plane, pts, unit_cube_mesh(), Pose(), planar_offset=(0.25, -0.5))
    x, _, z = plane_frame(plane, Pose())
    assert np.abs(b.translation - a.translation - 0.25 * x + 0.5 * z).max() < 1e-9


def test_solve_placement_flat_mesh_rejected():
    from placekit.splat import TexturedMesh

    flat = TexturedMesh(
        vertices=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0]]),
        faces=np.array([[0, 1, 2]]),
    )
    plane = make_plane([0, 1, 0], 0.0, [0, 0, 0], inliers=4)
    pts = np.array([[-1.0, 0, -1.0], [1.0, 0, -1.0], [-1.0, 0, 1.0], [1.0, 0, 1.0]])
    with pytest.raises(ZeroFootprint):
        solve_placement(plane, pts, flat, Pose())


def test_placement_json_roundtrip():
    """placement.json survives a save/load cycle field for field."""
    sel = RegionSelection(frame_index=3, box=(10.0, 20.0, 110.0, 90.0))
    plane = make_plane([0.1, 0.9, 0.2], 1.3, [0.5, 1.2, 3.0])
    pl = Placement(
        rotation=Pose(),
        scale=0.37,
        translation=np.array([1.0, 2.0, 3.0]),
        yaw_deg=25.0,
        scale_mult=1.5,
        planar_offset=(0.1, -0.2),
    )
    doc = placement_to_json(sel, plane, pl)
    sel2, plane2, pl2 = placement_from_json(doc)
    assert sel2.box == sel.box and sel2.frame_index == 3
    assert np.allclose(plane2.normal, plane.normal)
    assert pl2.scale == pl.scale and pl2.yaw_deg == 25.0
    assert np.allclose(pl2.translation, pl.translation)
