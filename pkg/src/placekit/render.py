"""Deterministic software rasterizer and depth-aware video compositing.

Fixed conventions for exact reproducibility: near-plane clip at z = 1e-3,
pixel centers at integer coordinates, top-left fill rule, z-buffer ties
keep the earlier triangle, no anti-aliasing unless supersampling is
requested.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from placekit.depth import DepthMap
from placekit.geometry import Intrinsics, Pose

NEAR_Z = 1e-3
AMBIENT = 0.7


class DimensionMismatch(ValueError):
    pass


class RenderError(RuntimeError):
    def __init__(self, frame_index, cause):
        super().__init__(f"frame {frame_index}: {cause}")
        self.frame_index = frame_index
        self.cause = cause


@dataclass
class FrameRenderJob:
    frame_index: int
    pose: Pose  # camera-to-world
    intr: Intrinsics
    scene_depth: DepthMap
    background: np.ndarray  # (h, w, 3) uint8 or float
    mesh: "object"  # TexturedMesh
    model_matrix: np.ndarray  # 4x4 model-to-world

    def validate(self):
        h, w = self.background.shape[:2]
        if (h, w) != (self.intr.height, self.intr.width):
            raise DimensionMismatch(
                f"background {w}x{h} vs intrinsics {self.intr.width}x{self.intr.height}"
            )
        if self.scene_depth.z.shape != (h, w):
            raise DimensionMismatch("scene depth does not match background size")


@dataclass
class RenderOutput:
    composited: np.ndarray  # (h, w, 4) uint8
    layer: np.ndarray  # (h, w, 4) float, object only
    obj_depth: np.ndarray  # (h, w) float, inf where empty


def sample_texture(texture: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample with clamp-to-edge; uv in [0,1], v up = row 0."""
    h, w = texture.shape[:2]
    x = np.clip(u * w - 0.5, 0, w - 1)
    y = np.clip(v * h - 0.5, 0, h - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    t = texture.astype(np.float64)
    if t.max() > 1.5:
        t = t / 255.0
    return (
        t[y0, x0] * (1 - fx) * (1 - fy)
        + t[y0, x1] * fx * (1 - fy)
        + t[y1, x0] * (1 - fx) * fy
        + t[y1, x1] * fx * fy
    )


def _clip_near(tri_pos, tri_attr):
    """Sutherland-Hodgman clip of one triangle against z = NEAR_Z.

    tri_pos: (3, 3) camera-space positions; tri_attr: (3, k) attributes
    interpolated linearly in 3D. Returns lists of clipped triangles.
    """
    out_pos, out_attr = [], []
    pos = list(tri_pos)
    attr = list(tri_attr)
    poly_p, poly_a = [], []
    for i in range(3):
        a, b = pos[i], pos[(i + 1) % 3]
        aa, ab = attr[i], attr[(i + 1) % 3]
        ain = a[2] >= NEAR_Z
        bin_ = b[2] >= NEAR_Z
        if ain:
            poly_p.append(a)
            poly_a.append(aa)
        if ain != bin_:
            t = (NEAR_Z - a[2]) / (b[2] - a[2])
            poly_p.append(a + t * (b - a))
            poly_a.append(aa + t * (ab - aa))
    tris = []
    for i in range(1, len(poly_p) - 1):
        tris.append(
            (
                np.stack([poly_p[0], poly_p[i], poly_p[i + 1]]),
                np.stack([poly_a[0], poly_a[i], poly_a[i + 1]]),
            )
        )
    return tris


def rasterize_mesh(
    mesh,
    model_matrix: np.ndarray,
    pose: Pose,
    intr: Intrinsics,
    texture: np.ndarray | None = None,
    shade: bool = True,
):
    """Render a triangle mesh; returns (rgba float (h,w,4), depth (h,w)).

    Perspective-correct UV interpolation, top-left fill rule, z-buffer
    ties keep the earlier triangle in index order.
    """
    h, w = intr.height, intr.width
    color = np.zeros((h, w, 4))
    zbuf = np.full((h, w), np.inf)
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    if len(verts) == 0 or len(mesh.faces) == 0:
        return color, zbuf

    M = np.asarray(model_matrix, dtype=np.float64)
    world = verts @ M[:3, :3].T + M[:3, 3]
    cam = (world - pose.t) @ pose.R  # world-to-camera

    faces = np.asarray(mesh.faces, dtype=int)
    has_uv = mesh.face_uvs is not None and texture is not None
    uv_all = np.asarray(mesh.uvs, dtype=np.float64) if has_uv else None

    cam_tris = cam[faces]  # (F, 3, 3)
    # quick reject: fully behind near plane or degenerate
    any_front = (cam_tris[:, :, 2] >= NEAR_Z).any(axis=1)

    for fi in np.nonzero(any_front)[0]:
        tri = cam_tris[fi]
        if has_uv:
            attr = uv_all[mesh.face_uvs[fi]]
        else:
            attr = np.zeros((3, 2))
        # flat normal in camera space, from the unclipped triangle
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        nn = np.linalg.norm(n)
        if nn < 1e-15:
            continue
        n = n / nn
        pieces = _clip_near(tri, attr) if (tri[:, 2] < NEAR_Z).any() else [(tri, attr)]
        for cpos, cattr in pieces:
            _raster_triangle(color, zbuf, cpos, cattr, n, intr, texture, shade, has_uv)
    return color, zbuf


def _raster_triangle(color, zbuf, pos, attr, normal, intr, texture, shade, has_uv):
    h, w = zbuf.shape
    z = pos[:, 2]
    sx = intr.fx * pos[:, 0] / z + intr.cx
    sy = intr.fy * pos[:, 1] / z + intr.cy

    area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0])
    if area == 0:
        return
    x0 = max(int(np.ceil(min(sx))), 0)
    x1 = min(int(np.floor(max(sx))), w - 1)
    y0 = max(int(np.ceil(min(sy))), 0)
    y1 = min(int(np.floor(max(sy))), h - 1)
    if x1 < x0 or y1 < y0:
        return

    py, px = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    inside = np.ones(px.shape, dtype=bool)
    bary = []
    sgn = 1.0 if area > 0 else -1.0
    for i in range(3):
        ax, ay = sx[(i + 1) % 3], sy[(i + 1) % 3]
        bx, by = sx[(i + 2) % 3], sy[(i + 2) % 3]
        e = ((py - ay) * (bx - ax) - (px - ax) * (by - ay)) * sgn
        ex, ey = (bx - ax) * sgn, (by - ay) * sgn
        # top-left rule (y grows downward): edge going left along a row,
        # or any edge heading upward, owns its boundary pixels
        top_left = (ey == 0 and ex < 0) or ey > 0
        inside &= (e > 0) | ((e == 0) & top_left)
        bary.append(e)
    if not inside.any():
        return
    b = np.stack(bary, axis=-1) / abs(area)

    inv_z = b @ (1.0 / z)
    depth = 1.0 / inv_z
    ys, xs = np.nonzero(inside)
    d = depth[ys, xs]
    win = d < zbuf[y0 + ys, x0 + xs]
    if not win.any():
        return
    ys, xs, d = ys[win], xs[win], d[win]

    if has_uv:
        uvz = b[ys, xs] @ (attr / z[:, None])
        uv = uvz * d[:, None]
        base = sample_texture(texture, uv[:, 0], uv[:, 1])[:, :3]
    else:
        base = np.full((len(ys), 3), 0.8)

    if shade:
        # headlight: light direction = fragment to camera
        frag = b[ys, xs] @ (pos / z[:, None]) * d[:, None]
        l = -frag / np.maximum(np.linalg.norm(frag, axis=1, keepdims=True), 1e-12)
        lam = np.maximum(0.0, l @ normal)
        base = base * (AMBIENT + (1 - AMBIENT) * lam)[:, None]

    zbuf[y0 + ys, x0 + xs] = d
    color[y0 + ys, x0 + xs, :3] = np.clip(base, 0, 1)
    color[y0 + ys, x0 + xs, 3] = 1.0


def placement_matrix(placement) -> np.ndarray:
    """4x4 model-to-world matrix of a Placement (scale, then R, then t)."""
    M = np.eye(4)
    M[:3, :3] = placement.rotation.R * placement.scale
    M[:3, 3] = placement.translation
    return M


def rasterize(mesh, placement, pose: Pose, intr: Intrinsics, texture=None, shade=True):
    """Render a placed mesh into a camera; see rasterize_mesh."""
    tex = texture if texture is not None else getattr(mesh, "texture", None)
    return rasterize_mesh(mesh, placement_matrix(placement), pose, intr, tex, shade)


def composite(
    layer: np.ndarray,
    obj_depth: np.ndarray,
    background: np.ndarray,
    scene_depth: DepthMap,
    eps_rel: float = 0.02,
) -> np.ndarray:
    """Alpha-over the object layer where it passes the scene depth test.

    A fragment is visible iff alpha > 0 and (scene depth invalid or
    obj_depth <= scene_depth * (1 + eps_rel)). Returns uint8 RGBA.
    """
    h, w = background.shape[:2]
    if layer.shape[:2] != (h, w) or obj_depth.shape != (h, w) or scene_depth.z.shape != (h, w):
        raise DimensionMismatch(
            f"layer {layer.shape[:2]}, depth {obj_depth.shape}, "
            f"scene {scene_depth.z.shape}, background {(h, w)}"
        )
    bg = background.astype(np.float64)
    if bg.max() > 1.5:
        bg = bg / 255.0
    bg = bg[..., :3]

    alpha = layer[..., 3]
    depth_ok = (~scene_depth.valid) | (obj_depth <= scene_depth.z * (1 + eps_rel))
    vis = (alpha > 0) & depth_ok
    a = np.where(vis, alpha, 0.0)[..., None]
    rgb = layer[..., :3] * a + bg * (1 - a)
    out = np.empty((h, w, 4), dtype=np.uint8)
    out[..., :3] = (np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)
    out[..., 3] = 255
    return out


def render_frame(job: FrameRenderJob, eps_rel: float = 0.02) -> RenderOutput:
    """Rasterize and composite one frame job."""
    job.validate()
    layer, depth = rasterize_mesh(
        job.mesh, job.model_matrix, job.pose, job.intr, getattr(job.mesh, "texture", None)
    )
    comp = composite(layer, depth, job.background, job.scene_depth, eps_rel)
    return RenderOutput(composited=comp, layer=layer, obj_depth=depth)


def render_sequence(jobs, parallelism: int = 1, eps_rel: float = 0.02, progress=None):
    """Render frame jobs, byte-identical for any parallelism degree."""
    if not jobs:
        return []

    def run(job):
        try:
            return render_frame(job, eps_rel)
        except Exception as exc:  # tagged with the frame it came from
            raise RenderError(job.frame_index, exc) from exc

    results = [None] * len(jobs)
    if parallelism <= 1:
        for k, job in enumerate(jobs):
            results[k] = run(job)
            if progress:
                progress(k)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(run, j) for j in jobs]
            for k, fut in enumerate(futures):
                results[k] = fut.result()
                if progress:
                    progress(k)
    return results
