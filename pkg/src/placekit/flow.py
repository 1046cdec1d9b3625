"""Weighted optical-flow fields: PAFW files, keyframe selection, synthesis.

The learned flow predictor is out of scope; flows are ingested from PAFW
files or synthesized from known geometry for testing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from placekit.geometry import Intrinsics, Pose

PAFW_MAGIC = b"PAFW"


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class EmptySequence(ValueError):
    pass


@dataclass
class FlowField:
    """Per-pixel displacement (source -> target) with confidence weights."""

    dx: np.ndarray
    dy: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        if not (self.dx.shape == self.dy.shape == self.weight.shape):
            raise DimensionMismatch(
                f"maps differ: {self.dx.shape} {self.dy.shape} {self.weight.shape}"
            )
        if np.any(self.weight < 0) or np.any(self.weight > 1):
            raise ValueError("weights must lie in [0, 1]")
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dy))):
            raise ValueError("displacements must be finite")

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]


def save_flow(path, f: FlowField) -> None:
    """Write a FlowField in the PAFW format (little-endian, no padding)."""
    data = np.stack(
        [f.dx.astype("<f4"), f.dy.astype("<f4"), f.weight.astype("<f4")], axis=-1
    )
    with open(path, "wb") as fh:
        fh.write(PAFW_MAGIC)
        fh.write(struct.pack("<II", f.width, f.height))
        fh.write(data.tobytes())


def load_flow(path) -> FlowField:
    """Read a PAFW file; bit-exact round-trip with save_flow."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PAFW_MAGIC:
            raise BadMagic(f"expected {PAFW_MAGIC!r}, got {magic!r}")
        header = fh.read(8)
        if len(header) < 8:
            raise TruncatedFile("missing dimensions")
        w, h = struct.unpack("<II", header)
        raw = fh.read(w * h * 3 * 4)
        if len(raw) < w * h * 3 * 4:
            raise TruncatedFile(f"expected {w * h * 3 * 4} payload bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    return FlowField(
        dx=data[..., 0].astype(np.float64),
        dy=data[..., 1].astype(np.float64),
        weight=data[..., 2].astype(np.float64),
    )


def mean_flow_magnitude(f: FlowField) -> float:
    """Confidence-weighted mean displacement magnitude, 0 if all weights 0."""
    wsum = f.weight.sum()
    if wsum <= 0:
        return 0.0
    mag = np.hypot(f.dx, f.dy)
    return float((mag * f.weight).sum() / wsum)


def select_keyframes(flows, tau: float) -> list:
    """Threshold accumulated mean flow displacement into keyframe indices.

    flows[k] maps frame k -> k+1. Frame 0 is always a keyframe; frame k+1
    becomes one when the mean magnitudes summed since the last keyframe
    reach tau. The final frame is always appended.
    """
    flows = list(flows)
    if not flows:
        raise EmptySequence("need at least one inter-frame flow")
    if tau <= 0:
        raise ValueError("tau must be positive")
    keyframes = [0]
    acc = 0.0
    last = len(flows)  # index of the final frame
    for k, f in enumerate(flows):
        acc += mean_flow_magnitude(f)
        if acc >= tau and (k + 1) < last:
            keyframes.append(k + 1)
            acc = 0.0
    keyframes.append(last)
    return keyframes


def synthesize_flow(depth_i: np.ndarray, G_i: Pose, G_j: Pose, intr: Intrinsics) -> FlowField:
    """Geometric flow i -> j induced by a known depth map and poses.

    Pixels with non-positive depth or whose reprojection leaves image j
    get weight 0 (their displacement is still reported where computable).
    """
    h, w = depth_i.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = np.asarray(depth_i, dtype=np.float64)
    valid = z > 0
    zs = np.where(valid, z, 1.0)

    x = zs * (u - intr.cx) / intr.fx
    y = zs * (v - intr.cy) / intr.fy
    pts = np.stack([x, y, zs], axis=-1).reshape(-1, 3)

    rel = G_j.inverse().compose(G_i)
    q = rel.apply(pts).reshape(h, w, 3)
    zq = q[..., 2]
    in_front = zq > 1e-9
    zq_safe = np.where(in_front, zq, 1.0)
    u2 = intr.fx * q[..., 0] / zq_safe + intr.cx
    v2 = intr.fy * q[..., 1] / zq_safe + intr.cy

    inside = (u2 >= 0) & (u2 <= w - 1) & (v2 >= 0) & (v2 <= h - 1)
    weight = (valid & in_front & inside).astype(np.float64)
    dx = np.where(in_front, u2 - u, 0.0)
    dy = np.where(in_front, v2 - v, 0.0)
    return FlowField(dx=dx, dy=dy, weight=weight)


def warp_bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample img at continuous (u, v); returns (values, inside_mask)."""
    h, w = img.shape[:2]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.floor(uc).astype(int)
    v0 = np.floor(vc).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    if img.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    out = (
        img[v0, u0] * (1 - fu) * (1 - fv)
        + img[v0, u1] * fu * (1 - fv)
        + img[v1, u0] * (1 - fu) * fv
        + img[v1, u1] * fu * fv
    )
    return out, inside


def accumulate_flow(a: FlowField, b: FlowField) -> FlowField:
    """Chain flow a (i->k) with flow b (k->j) by bilinear warping.

    Weights multiply; targets that leave the intermediate image get 0.
    """
    h, w = a.dx.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    um = u + a.dx
    vm = v + a.dy
    bdx, inside = warp_bilinear(b.dx, um, vm)
    bdy, _ = warp_bilinear(b.dy, um, vm)
    bw, _ = warp_bilinear(b.weight, um, vm)
    weight = a.weight * bw * inside
    return FlowField(dx=a.dx + bdx, dy=a.dy + bdy, weight=weight)


def downsample_flow(f: FlowField, s: int) -> FlowField:
    """Sample flow at coarse-grid cell centers and rescale to grid pixels.

    Cell (gu, gv) reads the full-resolution flow at
    (gu + 0.5) * s - 0.5, and displacements shrink by 1/s.
    """
    gh = int(np.ceil(f.height / s))
    gw = int(np.ceil(f.width / s))
    gv, gu = np.mgrid[0:gh, 0:gw].astype(np.float64)
    u = np.clip((gu + 0.5) * s - 0.5, 0, f.width - 1)
    v = np.clip((gv + 0.5) * s - 0.5, 0, f.height - 1)
    dx, _ = warp_bilinear(f.dx, u, v)
    dy, _ = warp_bilinear(f.dy, u, v)
    wt, _ = warp_bilinear(f.weight, u, v)
    # bilinear blending can mix valid and invalid pixels; treat partial
    # confidence as-is but clamp for safety
    return FlowField(dx=dx / s, dy=dy / s, weight=np.clip(wt, 0.0, 1.0))


@dataclass
class KeyframeGraph:
    """Keyframe indices plus directed flow edges between nearby keyframes."""

    keyframes: list
    edges: list = field(default_factory=list)  # (i, j, FlowField), i,j frame indices

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.keyframes, self.keyframes[1:])):
            raise ValueError("keyframe indices must be strictly increasing")
        for i, j, _ in self.edges:
            if i == j or i not in self.keyframes or j not in self.keyframes:
                raise ValueError(f"edge ({i}, {j}) does not join two distinct keyframes")


def build_keyframe_graph(keyframes, pair_flow, radius: int = 3) -> KeyframeGraph:
    """Connect keyframes within `radius` positions, both directions.

    `pair_flow(i, j)` must return the FlowField from frame i to frame j
    (already at whatever resolution the consumer wants).
    """
    edges = []
    n = len(keyframes)
    for a in range(n):
        for b in range(a + 1, min(a + radius + 1, n)):
            i, j = keyframes[a], keyframes[b]
            edges.append((i, j, pair_flow(i, j)))
            edges.append((j, i, pair_flow(j, i)))
    return KeyframeGraph(keyframes=list(keyframes), edges=edges)
