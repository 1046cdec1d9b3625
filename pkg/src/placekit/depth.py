"""Dense depth maps: PFM files, grid upsampling, pose-based propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from placekit.geometry import Intrinsics, Pose
from placekit.flow import warp_bilinear


@dataclass
class DepthMap:
    """Per-pixel depth in world units with a validity mask."""

    z: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.valid.shape:
            raise ValueError("depth and mask shapes differ")
        if np.any(self.z[self.valid] <= 0):
            raise ValueError("valid depths must be positive")

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.z.shape[1]


def save_pfm(path, depth: DepthMap) -> None:
    """Write grayscale little-endian PFM; invalid pixels stored as 0."""
    data = np.where(depth.valid, depth.z, 0.0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        # PFM stores rows bottom-up
        fh.write(data[::-1].tobytes())


def load_pfm(path) -> DepthMap:
    """Read a grayscale PFM written by save_pfm (0 marks invalid)."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM: {header!r}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        raw = fh.read(w * h * 4)
    dtype = "<f4" if scale < 0 else ">f4"
    z = np.frombuffer(raw, dtype=dtype).reshape(h, w)[::-1].astype(np.float64)
    return DepthMap(z=z, valid=z > 0)


def upsample_keyframe_depth(grid_values: np.ndarray, intr: Intrinsics, s: int) -> DepthMap:
    """Bilinearly upsample a coarse inverse-depth grid to full resolution.

    Grid cell (gu, gv) sits at full-image pixel (gu + 0.5) * s - 0.5;
    sampling happens in inverse depth, then inverts. All pixels valid.
    """
    h, w = intr.height, intr.width
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    gu = (u + 0.5) / s - 0.5
    gv = (v + 0.5) / s - 0.5
    gh, gw = grid_values.shape
    gu = np.clip(gu, 0, gw - 1)
    gv = np.clip(gv, 0, gh - 1)
    inv, _ = warp_bilinear(np.asarray(grid_values, dtype=np.float64), gu, gv)
    inv = np.maximum(inv, 1e-12)
    return DepthMap(z=1.0 / inv, valid=np.ones((h, w), dtype=bool))


def propagate_depth(
    frame_pose: Pose,
    ref_pose: Pose,
    ref_depth: DepthMap,
    intr: Intrinsics,
    max_fill_sweeps: int = 64,
) -> DepthMap:
    """Forward-warp a reference depth map into another frame.

    Collisions keep the smaller depth (z-buffer); remaining holes are
    filled by repeated 4-neighborhood averaging, never touching pixels
    that received a warped value.
    """
    h, w = ref_depth.z.shape
    if not ref_depth.valid.any():
        return DepthMap(z=np.zeros((h, w)), valid=np.zeros((h, w), dtype=bool))

    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    m = ref_depth.valid
    z = ref_depth.z[m]
    x = z * (u[m] - intr.cx) / intr.fx
    y = z * (v[m] - intr.cy) / intr.fy
    pts = np.stack([x, y, z], axis=-1)

    rel = frame_pose.inverse().compose(ref_pose)
    q = rel.apply(pts)
    zq = q[:, 2]
    front = zq > 1e-9
    q = q[front]
    zq = zq[front]
    ut = np.round(intr.fx * q[:, 0] / zq + intr.cx).astype(int)
    vt = np.round(intr.fy * q[:, 1] / zq + intr.cy).astype(int)
    inside = (ut >= 0) & (ut < w) & (vt >= 0) & (vt < h)
    ut, vt, zq = ut[inside], vt[inside], zq[inside]

    zbuf = np.full((h, w), np.inf)
    np.minimum.at(zbuf, (vt, ut), zq)
    warped = np.isfinite(zbuf)
    out = np.where(warped, zbuf, 0.0)

    filled = warped.copy()
    for _ in range(max_fill_sweeps):
        if filled.all():
            break
        padded = np.pad(out, 1)
        pmask = np.pad(filled.astype(np.float64), 1)
        nsum = padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        ncnt = pmask[:-2, 1:-1] + pmask[2:, 1:-1] + pmask[1:-1, :-2] + pmask[1:-1, 2:]
        grow = (~filled) & (ncnt > 0)
        out = np.where(grow, nsum / np.maximum(ncnt, 1), out)
        filled = filled | grow
    return DepthMap(z=out, valid=filled)
