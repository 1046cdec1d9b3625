"""Gaussian-splat assets to textured meshes.

Pipeline: load a 3D-Gaussian PLY, sample the opacity-weighted density on
a uniform grid, extract the isosurface with marching cubes, and bake a
texture atlas by back-projecting alpha-composited splat renders.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from placekit._mc_tables import EDGE_TABLE, TRI_TABLE
from placekit.geometry import Intrinsics, Pose, look_at, quat_to_matrix

SH_C0 = 0.28209479177387814
MAHALANOBIS_CUTOFF = 3.5


class MissingField(ValueError):
    pass


class MalformedHeader(ValueError):
    pass


class DegenerateScale(ValueError):
    pass


class EmptySurfaceWarning(UserWarning):
    pass


class NoViews(ValueError):
    pass


@dataclass
class GaussianCloud:
    """Activated splat parameters: linear scales, sigmoid opacity, RGB color."""

    means: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3), linear
    rotations: np.ndarray  # (N, 4), unit (qx, qy, qz, qw)
    opacities: np.ndarray  # (N,), in (0, 1)
    colors: np.ndarray  # (N, 3), RGB in [0, 1]

    def __post_init__(self):
        n = len(self.means)
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations = self.rotations / np.maximum(norms, 1e-12)
        for name in ("means", "scales", "rotations", "opacities", "colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")

    def __len__(self):
        return len(self.means)


_PLY_FIELDS = [
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
]


def load_gaussians(path) -> GaussianCloud:
    """Read a binary-little-endian 3D-Gaussian PLY and apply activations.

    Scales are exponentiated, opacity passes through a sigmoid, rot_0 is
    the scalar quaternion component, and the DC spherical-harmonics term
    maps to RGB as clamp(0.5 + C0 * f_dc, 0, 1). Unknown properties are
    skipped.
    """
    with open(path, "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise MalformedHeader(f"not a PLY file: {line!r}")
        n_vertex = None
        props = []
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise MalformedHeader("header never ends")
            tok = line.strip().split()
            if not tok:
                continue
            if tok[0] == b"format":
                fmt = tok[1]
            elif tok[0] == b"element":
                if tok[1] == b"vertex":
                    n_vertex = int(tok[2])
                elif n_vertex is not None:
                    raise MalformedHeader("unsupported extra elements after vertex")
            elif tok[0] == b"property" and n_vertex is not None:
                if tok[1] != b"float":
                    raise MalformedHeader(f"unsupported property type {tok[1]!r}")
                props.append(tok[2].decode("ascii"))
            elif tok[0] == b"end_header":
                break
        if fmt != b"binary_little_endian":
            raise MalformedHeader(f"expected binary_little_endian, got {fmt!r}")
        if n_vertex is None:
            raise MalformedHeader("no vertex element")
        missing = [f for f in _PLY_FIELDS if f not in props]
        if missing:
            raise MissingField(", ".join(missing))
        data = np.fromfile(fh, dtype="<f4", count=n_vertex * len(props))
        if data.size < n_vertex * len(props):
            raise MalformedHeader("truncated vertex data")
    data = data.reshape(n_vertex, len(props)).astype(np.float64)
    col = {p: data[:, k] for k, p in enumerate(props)}

    means = np.stack([col["x"], col["y"], col["z"]], axis=-1)
    scales = np.exp(np.stack([col["scale_0"], col["scale_1"], col["scale_2"]], axis=-1))
    # file order is (qw, qx, qy, qz); internal order is (qx, qy, qz, qw)
    rotations = np.stack([col["rot_1"], col["rot_2"], col["rot_3"], col["rot_0"]], axis=-1)
    opacities = 1.0 / (1.0 + np.exp(-col["opacity"]))
    f_dc = np.stack([col["f_dc_0"], col["f_dc_1"], col["f_dc_2"]], axis=-1)
    colors = np.clip(0.5 + SH_C0 * f_dc, 0.0, 1.0)
    return GaussianCloud(means, scales, rotations, opacities, colors)


def save_gaussians(path, cloud: GaussianCloud) -> None:
    """Write a cloud back to the PLY layout read by load_gaussians."""
    op = np.clip(cloud.opacities, 1e-7, 1 - 1e-7)
    cols = [
        cloud.means[:, 0], cloud.means[:, 1], cloud.means[:, 2],
        np.log(cloud.scales[:, 0]), np.log(cloud.scales[:, 1]), np.log(cloud.scales[:, 2]),
        cloud.rotations[:, 3], cloud.rotations[:, 0], cloud.rotations[:, 1], cloud.rotations[:, 2],
        np.log(op / (1 - op)),
        (cloud.colors[:, 0] - 0.5) / SH_C0,
        (cloud.colors[:, 1] - 0.5) / SH_C0,
        (cloud.colors[:, 2] - 0.5) / SH_C0,
    ]
    data = np.stack(cols, axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n".encode("ascii"))
        for f in _PLY_FIELDS:
            fh.write(f"property float {f}\n".encode("ascii"))
        fh.write(b"end_header\n")
        fh.write(data.tobytes())


@dataclass
class ScalarGrid:
    """Scalar samples at the corners of a uniform axis-aligned grid."""

    values: np.ndarray  # (nx, ny, nz)
    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)

    def __post_init__(self):
        if min(self.values.shape) < 2:
            raise ValueError("grid needs at least 2 samples per axis")
        if np.any(self.hi <= self.lo):
            raise ValueError("degenerate bounds")

    @property
    def spacing(self) -> np.ndarray:
        n = np.array(self.values.shape)
        return (self.hi - self.lo) / (n - 1)


def default_bounds(cloud: GaussianCloud, pad_sigmas: float = 3.0):
    """Splat AABB inflated by pad_sigmas times each splat's largest scale."""
    pad = pad_sigmas * cloud.scales.max(axis=1, keepdims=True)
    lo = (cloud.means - pad).min(axis=0)
    hi = (cloud.means + pad).max(axis=0)
    return lo, hi


def weighted_opacity_field(
    cloud: GaussianCloud, resolution: int = 128, bounds=None
) -> ScalarGrid:
    """Sum of opacity-weighted Gaussian densities on a uniform grid.

    Each splat contributes alpha * exp(-0.5 * mahalanobis^2) with
    covariance R diag(s^2) R^T, truncated at 3.5 Mahalanobis radii.
    """
    if bounds is None:
        if len(cloud) == 0:
            bounds = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
        else:
            bounds = default_bounds(cloud)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    n = resolution
    values = np.zeros((n, n, n))
    grid = ScalarGrid(values, lo, hi)
    if len(cloud) == 0:
        return grid
    if np.any(cloud.scales < 1e-9):
        raise DegenerateScale("splat scale below 1e-9")

    axes = [np.linspace(lo[a], hi[a], n) for a in range(3)]
    spacing = grid.spacing
    for k in range(len(cloud)):
        R = quat_to_matrix(cloud.rotations[k])
        s = cloud.scales[k]
        prec = R @ np.diag(1.0 / s**2) @ R.T
        radius = MAHALANOBIS_CUTOFF * s.max()
        i0 = np.maximum(np.ceil((cloud.means[k] - radius - lo) / spacing), 0).astype(int)
        i1 = np.minimum(np.floor((cloud.means[k] + radius - lo) / spacing), n - 1).astype(int)
        if np.any(i1 < i0):
            continue
        xs = axes[0][i0[0] : i1[0] + 1] - cloud.means[k, 0]
        ys = axes[1][i0[1] : i1[1] + 1] - cloud.means[k, 1]
        zs = axes[2][i0[2] : i1[2] + 1] - cloud.means[k, 2]
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        m2 = (
            prec[0, 0] * X * X + prec[1, 1] * Y * Y + prec[2, 2] * Z * Z
            + 2 * (prec[0, 1] * X * Y + prec[0, 2] * X * Z + prec[1, 2] * Y * Z)
        )
        contrib = np.where(
            m2 <= MAHALANOBIS_CUTOFF**2, cloud.opacities[k] * np.exp(-0.5 * m2), 0.0
        )
        values[i0[0] : i1[0] + 1, i0[1] : i1[1] + 1, i0[2] : i1[2] + 1] += contrib
    return grid


@dataclass
class TexturedMesh:
    """Triangle mesh with optional per-corner UVs and a texture atlas."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    uvs: np.ndarray | None = None  # (T, 2) in [0,1]^2
    face_uvs: np.ndarray | None = None  # (F, 3) indices into uvs
    texture: np.ndarray | None = None  # (th, tw, 4) uint8
    warning: str | None = None

    def __len__(self):
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-15)


# local marching-cubes edge -> (corner offset, axis), Bourke numbering
_EDGE_SPEC = [
    ((0, 0, 0), 0), ((1, 0, 0), 1), ((0, 1, 0), 0), ((0, 0, 0), 1),
    ((0, 0, 1), 0), ((1, 0, 1), 1), ((0, 1, 1), 0), ((0, 0, 1), 1),
    ((0, 0, 0), 2), ((1, 0, 0), 2), ((1, 1, 0), 2), ((0, 1, 0), 2),
]
_CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
)


def marching_cubes(grid: ScalarGrid, iso: float = 0.5) -> TexturedMesh:
    """Extract the iso-level surface as a watertight triangle mesh.

    Vertices are deduplicated per grid edge, so every interior edge of a
    closed level set is shared by exactly two triangles. Triangles are
    wound so normals point along -gradient (out of the dense interior).
    """
    vals = grid.values
    nx, ny, nz = vals.shape
    inside = vals > iso

    cube_idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (cx, cy, cz) in enumerate(_CORNERS):
        cube_idx |= inside[cx : cx + nx - 1, cy : cy + ny - 1, cz : cz + nz - 1] << bit
    active = np.nonzero((cube_idx != 0) & (cube_idx != 255))
    if len(active[0]) == 0:
        return TexturedMesh(
            vertices=np.zeros((0, 3)),
            faces=np.zeros((0, 3), dtype=int),
            warning="no voxel crosses the iso level",
        )
    ax, ay, az = (a.astype(np.int64) for a in active)
    ci = cube_idx[active]

    # global edge key for each of the 12 local edges of each active cube
    def edge_key(local_edge):
        (ox, oy, oz), axis = _EDGE_SPEC[local_edge]
        gx, gy, gz = ax + ox, ay + oy, az + oz
        return ((gx * ny + gy) * nz + gz) * 3 + axis

    keys = np.stack([edge_key(e) for e in range(12)], axis=-1)  # (A, 12)

    tri_rows = TRI_TABLE[ci]  # (A, 16)
    valid = tri_rows >= 0
    counts = valid.sum(axis=1)
    cube_rep = np.repeat(np.arange(len(ax)), counts)
    local_edges = tri_rows[valid]
    tri_keys = keys[cube_rep, local_edges]  # flattened corner stream
    face_keys = tri_keys.reshape(-1, 3)

    uniq, inv = np.unique(face_keys.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)

    # vertex positions: interpolate along each unique crossed edge
    axis = uniq % 3
    g = uniq // 3
    gz = g % nz
    gy = (g // nz) % ny
    gx = g // (nz * ny)
    p0 = np.stack([gx, gy, gz], axis=-1)
    step = np.eye(3, dtype=int)[axis]
    p1 = p0 + step
    v0 = vals[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = vals[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = np.clip((iso - v0) / np.where(v1 != v0, v1 - v0, 1.0), 0.0, 1.0)
    coords = p0 + t[:, None] * step
    verts = grid.lo + coords * grid.spacing

    mesh = TexturedMesh(vertices=verts, faces=faces)

    # orient: normals should oppose the field gradient (point outward)
    n = mesh.face_normals()
    centroids = verts[faces].mean(axis=1)
    grads = _field_gradient(grid, centroids)
    if (np.einsum("ij,ij->i", n, grads).sum()) > 0:
        mesh.faces = faces[:, ::-1].copy()
    return mesh


def _field_gradient(grid: ScalarGrid, pts: np.ndarray) -> np.ndarray:
    """Central-difference gradient of the trilinearly interpolated field."""
    h = grid.spacing * 0.5
    out = np.zeros_like(pts)
    for a in range(3):
        d = np.zeros(3)
        d[a] = h[a]
        out[:, a] = (_trilinear(grid, pts + d) - _trilinear(grid, pts - d)) / (2 * h[a])
    return out


def _trilinear(grid: ScalarGrid, pts: np.ndarray) -> np.ndarray:
    n = np.array(grid.values.shape)
    f = (pts - grid.lo) / grid.spacing
    f = np.clip(f, 0, n - 1 - 1e-9)
    i0 = np.floor(f).astype(int)
    w = f - i0
    out = np.zeros(len(pts))
    for cx, cy, cz in _CORNERS:
        wt = (
            (w[:, 0] if cx else 1 - w[:, 0])
            * (w[:, 1] if cy else 1 - w[:, 1])
            * (w[:, 2] if cz else 1 - w[:, 2])
        )
        out += wt * grid.values[i0[:, 0] + cx, i0[:, 1] + cy, i0[:, 2] + cz]
    return out


def render_splats(cloud: GaussianCloud, pose: Pose, intr: Intrinsics):
    """Painter's-algorithm alpha compositing of projected 2D Gaussians.

    Splats are truncated at 3 sigma in the image and composited back to
    front. Returns (rgb, coverage): rgb is normalized by the accumulated
    alpha, so partially covered pixels keep the surface color instead of
    fading toward the empty background. Good enough for color transfer,
    not a reference splatter.
    """
    h, w = intr.height, intr.width
    img = np.zeros((h, w, 3))
    acc_alpha = np.zeros((h, w))
    if len(cloud) == 0:
        return img, acc_alpha
    cam = (cloud.means - pose.t) @ pose.R
    order = np.argsort(-cam[:, 2], kind="stable")  # far to near
    Rcw = pose.R.T
    for k in order:
        z = cam[k, 2]
        if z <= 1e-6:
            continue
        u0 = intr.fx * cam[k, 0] / z + intr.cx
        v0 = intr.fy * cam[k, 1] / z + intr.cy
        Rk = quat_to_matrix(cloud.rotations[k])
        cov3 = Rk @ np.diag(cloud.scales[k] ** 2) @ Rk.T
        cov_cam = Rcw @ cov3 @ Rcw.T
        J = np.array(
            [[intr.fx / z, 0, -intr.fx * cam[k, 0] / z**2],
             [0, intr.fy / z, -intr.fy * cam[k, 1] / z**2]]
        )
        cov2 = J @ cov_cam @ J.T + 0.1 * np.eye(2)  # dilation keeps tiny splats visible
        r = 3.0 * np.sqrt(max(cov2[0, 0], cov2[1, 1]))
        x0, x1 = int(max(np.floor(u0 - r), 0)), int(min(np.ceil(u0 + r), w - 1))
        y0, y1 = int(max(np.floor(v0 - r), 0)), int(min(np.ceil(v0 + r), h - 1))
        if x1 < x0 or y1 < y0:
            continue
        py, px = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
        dx = px - u0
        dy = py - v0
        det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] ** 2
        if det <= 1e-12:
            continue
        a_, b_, c_ = cov2[1, 1] / det, -cov2[0, 1] / det, cov2[0, 0] / det
        m2 = a_ * dx * dx + 2 * b_ * dx * dy + c_ * dy * dy
        alpha = np.where(m2 <= 9.0, cloud.opacities[k] * np.exp(-0.5 * m2), 0.0)
        img[y0 : y1 + 1, x0 : x1 + 1] = (
            cloud.colors[k] * alpha[..., None]
            + img[y0 : y1 + 1, x0 : x1 + 1] * (1 - alpha[..., None])
        )
        acc_alpha[y0 : y1 + 1, x0 : x1 + 1] = (
            alpha + acc_alpha[y0 : y1 + 1, x0 : x1 + 1] * (1 - alpha)
        )
    rgb = img / np.maximum(acc_alpha[..., None], 1e-6)
    return np.where(acc_alpha[..., None] > 1e-6, rgb, 0.0), acc_alpha


def _orbit_views(center, radius, n_views, elevation_deg=20.0):
    poses = []
    el = np.deg2rad(elevation_deg)
    for k in range(n_views):
        az = 2 * np.pi * k / n_views
        eye = center + radius * np.array(
            [np.cos(el) * np.sin(az), -np.sin(el), np.cos(el) * np.cos(az)]
        )
        poses.append(look_at(eye, center))
    return poses


def bake_texture(
    mesh: TexturedMesh,
    cloud: GaussianCloud,
    n_views: int = 16,
    tex_size: int = 1024,
    view_size: int = 512,
) -> TexturedMesh:
    """Assign surface color by back-projecting splat renders onto texels.

    Each triangle owns an isolated block of a square atlas. For every
    occupied texel the view maximizing visibility * |n . view_dir| is
    sampled bilinearly; texels no view sees inherit the nearest filled
    texel.
    """
    if n_views < 1:
        raise NoViews(f"n_views must be >= 1, got {n_views}")
    if len(mesh) == 0:
        raise ValueError("cannot bake an empty mesh")
    from placekit.render import rasterize_mesh, sample_texture  # noqa: F401 (cycle guard)

    F = len(mesh.faces)
    blocks = int(np.ceil(np.sqrt(F)))
    bs = tex_size // blocks
    if bs < 4:
        raise ValueError(f"tex_size {tex_size} too small for {F} triangles")

    # every block maps its triangle onto the same right triangle:
    # corners (m, m), (bs-1-m, m), (m, bs-1-m) with margin m = 1
    m = 1.0
    corners_local = np.array([[m, m], [bs - 1 - m, m], [m, bs - 1 - m]])
    bx = (np.arange(F) % blocks) * bs
    by = (np.arange(F) // blocks) * bs

    uvs = np.zeros((F, 3, 2))
    uvs[:, :, 0] = (bx[:, None] + corners_local[None, :, 0] + 0.5) / tex_size
    uvs[:, :, 1] = (by[:, None] + corners_local[None, :, 1] + 0.5) / tex_size

    # occupied local texels: integer centers inside the right triangle
    ly, lx = np.mgrid[0:bs, 0:bs].astype(np.float64)
    span = bs - 1 - 2 * m
    w1 = (lx - m) / span
    w2 = (ly - m) / span
    w0 = 1 - w1 - w2
    occ = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
    lys, lxs = np.nonzero(occ)
    bary = np.stack([w0[lys, lxs], w1[lys, lxs], w2[lys, lxs]], axis=-1)  # (P, 3)
    P = len(lys)

    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    pts = np.einsum("pk,fkc->fpc", bary, tri).reshape(-1, 3)  # (F*P, 3)
    normals = np.repeat(mesh.face_normals(), P, axis=0)

    center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    bound_r = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    radius = 2.0 * max(bound_r, 1e-6)
    views = _orbit_views(center, radius, n_views)
    f = 0.75 * view_size
    vintr = Intrinsics(f, f, view_size / 2.0, view_size / 2.0, view_size, view_size)

    best_score = np.full(len(pts), -np.inf)
    best_color = np.zeros((len(pts), 3))
    eye4 = np.eye(4)
    for pose in views:
        shot, _ = render_splats(cloud, pose, vintr)
        _, mesh_depth = rasterize_mesh(mesh, eye4, pose, vintr, shade=False)
        cam = (pts - pose.t) @ pose.R
        z = cam[:, 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        u = vintr.fx * cam[:, 0] / zs + vintr.cx
        v = vintr.fy * cam[:, 1] / zs + vintr.cy
        inside = front & (u >= 0) & (u <= view_size - 1) & (v >= 0) & (v <= view_size - 1)
        ui = np.clip(np.round(u).astype(int), 0, view_size - 1)
        vi = np.clip(np.round(v).astype(int), 0, view_size - 1)
        d_mesh = mesh_depth[vi, ui]
        visible = inside & np.isfinite(d_mesh) & (z <= d_mesh * 1.01 + 1e-3)
        view_dir = (pose.t - pts)
        view_dir = view_dir / np.maximum(np.linalg.norm(view_dir, axis=1, keepdims=True), 1e-12)
        score = np.where(visible, np.abs(np.einsum("ij,ij->i", normals, view_dir)), -np.inf)
        better = score > best_score
        if better.any():
            from placekit.flow import warp_bilinear

            col, _ = warp_bilinear(shot, u[better], v[better])
            best_color[better] = col
            best_score[better] = score[better]

    texture = np.zeros((tex_size, tex_size, 4), dtype=np.uint8)
    filled = np.zeros((tex_size, tex_size), dtype=bool)
    tx = (bx[:, None] + lxs[None, :]).ravel()
    ty = (by[:, None] + lys[None, :]).ravel()
    got = np.isfinite(best_score)
    colors = np.where(got[:, None], best_color, 0.0)
    texture[ty, tx, :3] = (np.clip(colors, 0, 1) * 255 + 0.5).astype(np.uint8)
    texture[ty, tx, 3] = 255
    filled[ty[got], tx[got]] = True
    any_tex = np.zeros((tex_size, tex_size), dtype=bool)
    any_tex[ty, tx] = True

    # texels with no visible view (plus the margin ring) inherit the
    # nearest filled texel by iterative dilation
    for _ in range(max(bs, 8)):
        todo = ~filled
        if not todo.any():
            break
        grew = False
        for sy, sx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            shifted = np.roll(filled, (sy, sx), axis=(0, 1))
            src = np.roll(texture, (sy, sx), axis=(0, 1))
            take = todo & shifted
            if take.any():
                texture[take] = src[take]
                filled[take] = True
                todo &= ~take
                grew = True
        if not grew:
            break
    texture[..., 3] = 255

    flat_uvs = uvs.reshape(-1, 2)
    face_uvs = np.arange(F * 3).reshape(F, 3)
    return TexturedMesh(
        vertices=mesh.vertices,
        faces=mesh.faces,
        uvs=flat_uvs,
        face_uvs=face_uvs,
        texture=texture,
        warning=mesh.warning,
    )


def atlas_occupancy(n_faces: int, tex_size: int) -> np.ndarray:
    """Boolean mask of texels owned by a triangle in bake_texture's atlas."""
    blocks = int(np.ceil(np.sqrt(n_faces)))
    bs = tex_size // blocks
    m = 1.0
    ly, lx = np.mgrid[0:bs, 0:bs].astype(np.float64)
    span = bs - 1 - 2 * m
    w1 = (lx - m) / span
    w2 = (ly - m) / span
    occ_local = (1 - w1 - w2 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
    mask = np.zeros((tex_size, tex_size), dtype=bool)
    for f in range(n_faces):
        x0 = (f % blocks) * bs
        y0 = (f // blocks) * bs
        mask[y0 : y0 + bs, x0 : x0 + bs] |= occ_local
    return mask


def save_mesh_obj(path_base: str, mesh: TexturedMesh) -> None:
    """Write <base>.obj / <base>.mtl / <base>.png.

    OBJ vt uses v-up texture coordinates; the PNG stores row 0 at v=1.
    """
    from PIL import Image

    name = path_base.rsplit("/", 1)[-1]
    with open(path_base + ".mtl", "w") as fh:
        fh.write(f"newmtl {name}\nKa 1 1 1\nKd 1 1 1\nmap_Kd {name}.png\n")
    with open(path_base + ".obj", "w") as fh:
        fh.write(f"mtllib {name}.mtl\nusemtl {name}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}\n")
        if mesh.uvs is not None:
            for uv in mesh.uvs:
                fh.write(f"vt {uv[0]:.8g} {1.0 - uv[1]:.8g}\n")
            for f, fu in zip(mesh.faces, mesh.face_uvs):
                fh.write(
                    f"f {f[0]+1}/{fu[0]+1} {f[1]+1}/{fu[1]+1} {f[2]+1}/{fu[2]+1}\n"
                )
        else:
            for f in mesh.faces:
                fh.write(f"f {f[0]+1} {f[1]+1} {f[2]+1}\n")
    if mesh.texture is not None:
        Image.fromarray(mesh.texture).save(path_base + ".png")
    else:
        Image.fromarray(np.full((4, 4, 4), 255, dtype=np.uint8)).save(path_base + ".png")


def load_mesh_obj(obj_path: str) -> TexturedMesh:
    """Read an OBJ written by save_mesh_obj (v / vt / f v/vt triangles)."""
    import os

    from PIL import Image

    verts, uvs, faces, face_uvs = [], [], [], []
    with open(obj_path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vt":
                uvs.append([float(tok[1]), 1.0 - float(tok[2])])
            elif tok[0] == "f":
                vi, ti = [], []
                for part in tok[1:4]:
                    ids = part.split("/")
                    vi.append(int(ids[0]) - 1)
                    ti.append(int(ids[1]) - 1 if len(ids) > 1 and ids[1] else -1)
                faces.append(vi)
                face_uvs.append(ti)
    texture = None
    png = obj_path[:-4] + ".png"
    if os.path.exists(png):
        img = np.asarray(Image.open(png).convert("RGBA"))
        texture = img
    face_uvs = np.asarray(face_uvs, dtype=int)
    have_uv = uvs and (face_uvs >= 0).all()
    return TexturedMesh(
        vertices=np.asarray(verts, dtype=np.float64),
        faces=np.asarray(faces, dtype=int),
        uvs=np.asarray(uvs, dtype=np.float64) if have_uv else None,
        face_uvs=face_uvs if have_uv else None,
        texture=texture,
    )
