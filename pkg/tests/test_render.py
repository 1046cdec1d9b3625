"""Software rasterizer and depth-composite tests."""

import numpy as np
import pytest

from conftest import unit_cube_mesh
from placekit.depth import DepthMap
from placekit.fixture import make_fixture
from placekit.geometry import Intrinsics, Pose, project
from placekit.render import (
    DimensionMismatch,
    FrameRenderJob,
    RenderError,
    composite,
    rasterize_mesh,
    render_frame,
    render_sequence,
)
from placekit.splat import TexturedMesh

INTR = Intrinsics(100.0, 100.0, 31.5, 31.5, 64, 64)
EYE4 = np.eye(4)


def tri_mesh(*tris):
    verts = np.array([p for t in tris for p in t], dtype=np.float64)
    faces = np.arange(len(verts)).reshape(-1, 3)
    return TexturedMesh(vertices=verts, faces=faces)


def test_cube_silhouette_matches_projected_corners():
    """The rendered cube's bounding box matches hand-projected corners."""
    intr = Intrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)
    mesh = unit_cube_mesh()
    M = np.eye(4)
    M[:3, 3] = [0.2, -0.1, 4.0]
    layer, _ = rasterize_mesh(mesh, M, Pose(), intr)
    cov = layer[..., 3] > 0
    vs, us = np.nonzero(cov)
    proj = np.array([project(v + [0.2, -0.1, 4.0], intr) for v in mesh.vertices])
    assert abs(us.min() - proj[:, 0].min()) <= 1.0
    assert abs(us.max() - proj[:, 0].max()) <= 1.0
    assert abs(vs.min() - proj[:, 1].min()) <= 1.0
    assert abs(vs.max() - proj[:, 1].max()) <= 1.0


def test_mesh_behind_camera_renders_nothing():
    mesh = tri_mesh([[-1, -1, -3], [1, -1, -3], [0, 1, -3]])
    layer, zbuf = rasterize_mesh(mesh, EYE4, Pose(), INTR)
    assert not layer.any()
    assert np.isinf(zbuf).all()


def test_rasterize_deterministic():
    mesh = unit_cube_mesh()
    M = np.eye(4)
    M[:3, 3] = [0, 0, 3]
    a = rasterize_mesh(mesh, M, Pose(), INTR)
    b = rasterize_mesh(mesh, M, Pose(), INTR)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_zbuffer_against_ray_triangle_oracle():
    """Two interpenetrating triangles agree with a per-pixel ray cast."""
    A = [[-0.8, -0.8, 2.0], [0.8, -0.6, 3.0], [0.0, 0.9, 2.5]]
    B = [[-0.7, 0.7, 2.8], [0.7, 0.8, 1.8], [0.1, -0.9, 2.4]]
    mesh = tri_mesh(A, B)
    layer, zbuf = rasterize_mesh(mesh, EYE4, Pose(), INTR, shade=False)

    def ray_hit(tri, d):
        # solve d * t = v0 + a*(v1-v0) + b*(v2-v0) for (t, a, b)
        v0, v1, v2 = (np.asarray(p) for p in tri)
        M = np.column_stack([d, v0 - v1, v0 - v2])
        try:
            t, a, b = np.linalg.solve(M, v0)
        except np.linalg.LinAlgError:
            return np.inf
        if t > 0 and a >= 0 and b >= 0 and a + b <= 1:
            return t * d[2]
        return np.inf

    agree = 0
    total = 0
    for v in range(64):
        for u in range(64):
            d = np.array([(u - INTR.cx) / INTR.fx, (v - INTR.cy) / INTR.fy, 1.0])
            z = min(ray_hit(A, d), ray_hit(B, d))
            total += 1
            raster_z = zbuf[v, u]
            if np.isinf(z) and np.isinf(raster_z):
                agree += 1
            elif np.isfinite(z) and np.isfinite(raster_z) and abs(z - raster_z) < 1e-6:
                agree += 1
    # fill-rule differences only matter on edge pixels
    assert agree / total > 0.99


def test_zbuffer_combines_as_elementwise_min():
    A = [[-0.8, -0.8, 2.0], [0.8, -0.6, 3.0], [0.0, 0.9, 2.5]]
    B = [[-0.7, 0.7, 2.8], [0.7, 0.8, 1.8], [0.1, -0.9, 2.4]]
    _, za = rasterize_mesh(tri_mesh(A), EYE4, Pose(), INTR)
    _, zb = rasterize_mesh(tri_mesh(B), EYE4, Pose(), INTR)
    _, zab = rasterize_mesh(tri_mesh(A, B), EYE4, Pose(), INTR)
    assert np.array_equal(zab, np.minimum(za, zb))


def test_near_plane_clipping_keeps_front_part():
    """A triangle straddling the near plane still covers front pixels."""
    mesh = tri_mesh([[0.0, 0.0, 2.0], [0.1, 0.0, -1.0], [0.0, 0.1, 2.0]])
    layer, _ = rasterize_mesh(mesh, EYE4, Pose(), INTR)
    assert layer[..., 3].any()


def test_composite_object_in_front():
    """No occlusion means pure alpha-over wherever covered."""
    h = w = 32
    layer = np.zeros((h, w, 4))
    layer[8:24, 8:24] = [1.0, 0.0, 0.0, 1.0]
    obj_depth = np.full((h, w), 2.0)
    bg = np.zeros((h, w, 3), dtype=np.uint8)
    scene = DepthMap(z=np.full((h, w), 5.0), valid=np.ones((h, w), dtype=bool))
    out = composite(layer, obj_depth, bg, scene)
    assert (out[8:24, 8:24, 0] == 255).all()
    assert (out[:8, :, 0] == 0).all()


def test_composite_object_fully_occluded():
    h = w = 32
    layer = np.zeros((h, w, 4))
    layer[8:24, 8:24] = [1.0, 0.0, 0.0, 1.0]
    obj_depth = np.full((h, w), 5.0)
    bg = np.full((h, w, 3), 7, dtype=np.uint8)
    scene = DepthMap(z=np.full((h, w), 2.0), valid=np.ones((h, w), dtype=bool))
    out = composite(layer, obj_depth, bg, scene)
    assert (out[..., :3] == 7).all()


def test_composite_depth_edge_matches_analytic_mask():
    """Across a scene depth step the occluded set is exactly the near half."""
    h = w = 32
    layer = np.zeros((h, w, 4))
    layer[:, :, 3] = 1.0
    layer[:, :, 0] = 1.0
    obj_depth = np.full((h, w), 3.0)
    z = np.full((h, w), 6.0)
    z[:, :16] = 1.0  # left half occludes
    scene = DepthMap(z=z, valid=np.ones((h, w), dtype=bool))
    bg = np.zeros((h, w, 3), dtype=np.uint8)
    out = composite(layer, obj_depth, bg, scene)
    assert (out[:, :16, 0] == 0).all()
    assert (out[:, 16:, 0] == 255).all()


def test_composite_invalid_scene_depth_passes_object():
    h = w = 8
    layer = np.zeros((h, w, 4))
    layer[:, :, 3] = 1.0
    layer[:, :, 1] = 1.0
    scene = DepthMap(z=np.zeros((h, w)), valid=np.zeros((h, w), dtype=bool))
    out = composite(layer, np.full((h, w), 9.0), np.zeros((h, w, 3), dtype=np.uint8), scene)
    assert (out[..., 1] == 255).all()


def test_composite_eps_rel_monotone():
    """Raising eps_rel never shrinks the visible object pixel set."""
    rng = np.random.default_rng(0)
    h = w = 24
    layer = np.zeros((h, w, 4))
    layer[:, :, 3] = 1.0
    layer[:, :, 0] = 1.0
    obj_depth = rng.uniform(1.0, 3.0, (h, w))
    scene = DepthMap(z=rng.uniform(1.0, 3.0, (h, w)), valid=np.ones((h, w), dtype=bool))
    bg = np.zeros((h, w, 3), dtype=np.uint8)
    prev = None
    for eps in (0.0, 0.01, 0.05, 0.2, 1.0):
        vis = composite(layer, obj_depth, bg, scene, eps_rel=eps)[..., 0] == 255
        if prev is not None:
            assert (vis | ~prev).all()  # prev is a subset of vis
        prev = vis


def test_composite_output_in_range_no_nan():
    h = w = 16
    layer = np.zeros((h, w, 4))
    layer[:, :, 3] = 0.5
    layer[:, :, 2] = 2.0  # deliberately out of range input
    scene = DepthMap(z=np.zeros((h, w)), valid=np.zeros((h, w), dtype=bool))
    out = composite(layer, np.full((h, w), 1.0), np.zeros((h, w, 3), dtype=np.uint8), scene)
    assert out.dtype == np.uint8


def test_composite_dimension_mismatch():
    scene = DepthMap(z=np.ones((8, 8)), valid=np.ones((8, 8), dtype=bool))
    with pytest.raises(DimensionMismatch):
        composite(np.zeros((8, 9, 4)), np.zeros((8, 8)), np.zeros((8, 8, 3), dtype=np.uint8), scene)


def _fixture_jobs(n=6):
    fix = make_fixture(n_frames=n, width=160, height=120, focal=130.0, deg_per_frame=2.0)
    mesh = unit_cube_mesh()
    M = np.eye(4)
    M[:3, :3] *= 0.4
    M[:3, 3] = [0.0, 0.8, 3.0]
    jobs = []
    for k in range(n):
        jobs.append(
            FrameRenderJob(
                frame_index=k,
                pose=fix.poses[k],
                intr=fix.intr,
                scene_depth=fix.depth(k),
                background=fix.frame(k),
                mesh=mesh,
                model_matrix=M,
            )
        )
    return jobs


def test_render_sequence_parallelism_invariant():
    """Serial and 8-way parallel rendering produce identical bytes."""
    a = render_sequence(_fixture_jobs(), parallelism=1)
    b = render_sequence(_fixture_jobs(), parallelism=8)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.composited, rb.composited)
        assert np.array_equal(ra.obj_depth, rb.obj_depth)


def test_render_sequence_empty():
    assert render_sequence([]) == []


def test_render_sequence_progress_callback():
    seen = []
    render_sequence(_fixture_jobs(4), parallelism=2, progress=seen.append)
    assert sorted(seen) == [0, 1, 2, 3]


def test_render_sequence_error_names_frame():
    jobs = _fixture_jobs(3)
    jobs[1].background = np.zeros((10, 10, 3), dtype=np.uint8)
    with pytest.raises(RenderError) as exc:
        render_sequence(jobs, parallelism=2)
    assert exc.value.frame_index == 1


def test_render_frame_composites_over_background():
    out = render_frame(_fixture_jobs(1)[0])
    assert out.composited.shape == (120, 160, 4)
    assert (out.layer[..., 3] > 0).any()
