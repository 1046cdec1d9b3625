"""Region back-projection, RANSAC plane fitting, and object placement.

Turns a 2D selection (box or points) on one frame into the rotation,
uniform scale, and translation that stand a mesh upright on the selected
planar surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from placekit.depth import DepthMap
from placekit.geometry import Intrinsics, Pose, rodrigues, matrix_to_quat


class EmptyRegion(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class NoConsensus(RuntimeError):
    pass


class ZeroFootprint(ValueError):
    pass


class EmptyInliers(ValueError):
    pass


@dataclass
class RegionSelection:
    """A box (u0, v0, u1, v1) or >= 3 points on one frame, in pixels."""

    frame_index: int
    box: tuple | None = None
    points: list | None = None

    def __post_init__(self):
        if (self.box is None) == (self.points is None):
            raise ValueError("exactly one of box or points required")
        if self.box is not None:
            u0, v0, u1, v1 = self.box
            if not (u1 > u0 and v1 > v0):
                raise ValueError(f"degenerate box {self.box}")
        elif len(self.points) < 3:
            raise ValueError("need at least 3 points")


@dataclass
class PlaneModel:
    """Oriented plane N . x = d with inliers and an on-plane anchor."""

    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray
    anchor: np.ndarray

    def distance(self, pts) -> np.ndarray:
        return np.abs(np.asarray(pts) @ self.normal - self.offset)


@dataclass
class Placement:
    """Model-to-world similarity plus the user parameters that shaped it."""

    rotation: Pose  # rotation-only pose (zero translation)
    scale: float
    translation: np.ndarray
    yaw_deg: float = 0.0
    scale_mult: float = 1.0
    planar_offset: tuple = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.q.tolist(),
            "scale": self.scale,
            "translation": self.translation.tolist(),
        }


def _region_mask(sel: RegionSelection, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if sel.box is not None:
        u0, v0, u1, v1 = sel.box
        mask[int(np.ceil(v0)) : int(np.floor(v1)) + 1, int(np.ceil(u0)) : int(np.floor(u1)) + 1] = True
    else:
        # convex hull of the points, tested by half-plane intersection
        pts = np.asarray(sel.points, dtype=np.float64)
        hull = _convex_hull(pts)
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        inside = np.ones((height, width), dtype=bool)
        for a, b in zip(hull, np.roll(hull, -1, axis=0)):
            inside &= (u - a[0]) * (b[1] - a[1]) - (v - a[1]) * (b[0] - a[0]) <= 1e-9
        mask = inside
    return mask


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain, counter-clockwise in (u, v-down) coords."""
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def backproject_region(
    sel: RegionSelection,
    depth: DepthMap,
    pose: Pose,
    intr: Intrinsics,
    max_points: int = 5000,
) -> np.ndarray:
    """World points of every valid-depth pixel in the selection.

    Subsampled by uniform stride to at most max_points.
    """
    mask = _region_mask(sel, intr.width, intr.height) & depth.valid
    vs, us = np.nonzero(mask)
    if len(us) == 0:
        raise EmptyRegion("no valid-depth pixels inside the selection")
    stride = max(1, int(np.ceil(len(us) / max_points)))
    us = us[::stride]
    vs = vs[::stride]
    z = depth.z[vs, us]
    x = z * (us - intr.cx) / intr.fx
    y = z * (vs - intr.cy) / intr.fy
    return pose.apply(np.stack([x, y, z], axis=-1))


def ransac_plane(
    points: np.ndarray,
    camera: Pose,
    iters: int = 1000,
    tol: float | None = None,
    seed: int = 0,
) -> PlaneModel:
    """Robust plane fit, oriented to face the camera center.

    tol defaults to 1 percent of the median point depth seen from the
    camera. The winner by inlier count is refit by least squares through
    its inliers (smallest principal component of the centered covariance).
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateInput(f"need >= 3 points, got {len(pts)}")
    if tol is None:
        cam_pts = camera.inverse().apply(pts)
        tol = 0.01 * float(np.median(cam_pts[:, 2]))

    rng = np.random.default_rng(seed)
    best_count = 0
    best_inliers = None
    for _ in range(iters):
        idx = rng.choice(len(pts), 3, replace=False)
        a, b, c = pts[idx]
        n = np.cross(b - a, c - a)
        area2 = np.linalg.norm(n)
        if area2 / 2 < 1e-12:
            continue
        n = n / area2
        d = n @ a
        inl = np.abs(pts @ n - d) <= tol
        cnt = int(inl.sum())
        if cnt > best_count:
            best_count = cnt
            best_inliers = inl
    if best_inliers is None:
        raise DegenerateInput("all sampled triples were collinear")
    if best_count < 0.1 * len(pts):
        raise NoConsensus(f"best consensus {best_count}/{len(pts)} below 10%")

    inl_pts = pts[best_inliers]
    centroid = inl_pts.mean(axis=0)
    cov = (inl_pts - centroid).T @ (inl_pts - centroid)
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    # face the camera center
    if normal @ (camera.t - centroid) < 0:
        normal = -normal
    offset = float(normal @ centroid)
    anchor = centroid - (centroid @ normal - offset) * normal
    return PlaneModel(
        normal=normal,
        offset=offset,
        inlier_indices=np.nonzero(best_inliers)[0],
        anchor=anchor,
    )


def plane_frame(plane: PlaneModel, camera: Pose):
    """Right-handed orthonormal triad (x', y' = N, z') on the plane.

    x' follows the camera's world right-axis projected into the plane,
    falling back to the camera forward-axis projection when they are
    parallel.
    """
    N = plane.normal
    for axis in (camera.R[:, 0], camera.R[:, 2]):
        x = axis - (axis @ N) * N
        if np.linalg.norm(x) >= 1e-6:
            x = x / np.linalg.norm(x)
            return x, N, np.cross(x, N)
    # both camera axes parallel to N cannot happen (they are orthogonal),
    # but keep a hard fallback for safety
    x = np.array([1.0, 0.0, 0.0]) if abs(N[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = x - (x @ N) * N
    x = x / np.linalg.norm(x)
    return x, N, np.cross(x, N)


def _rotation_y_to(N: np.ndarray) -> np.ndarray:
    """Minimal rotation taking (0, 1, 0) to N; pi about x if antiparallel."""
    y = np.array([0.0, 1.0, 0.0])
    c = float(y @ N)
    axis = np.cross(y, N)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return rodrigues(np.array([np.pi, 0.0, 0.0]))
    return rodrigues(axis / s * np.arctan2(s, c))


def solve_placement(
    plane: PlaneModel,
    region_points: np.ndarray,
    mesh,
    camera: Pose,
    yaw_deg: float = 0.0,
    scale_mult: float = 1.0,
    planar_offset=(0.0, 0.0),
    fill_ratio: float = 0.5,
) -> Placement:
    """Rotation/scale/translation standing the mesh upright on the plane.

    The mesh's +y axis is rotated onto the plane normal (then yawed about
    it); scale fills fill_ratio of the smaller inlier extent along the
    plane axes; the bounding-box bottom-center lands on the anchor plus
    the planar offset.
    """
    if len(plane.inlier_indices) == 0:
        raise EmptyInliers("plane has no inliers")
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    if len(verts) == 0:
        raise ZeroFootprint("mesh is empty")

    xp, N, zp = plane_frame(plane, camera)
    R0 = _rotation_y_to(N)
    Ryaw = rodrigues(N * np.deg2rad(yaw_deg))
    R = Ryaw @ R0

    inl = np.asarray(region_points)[plane.inlier_indices]
    ex = float((inl @ xp).max() - (inl @ xp).min())
    ez = float((inl @ zp).max() - (inl @ zp).min())

    rot0 = verts @ R0.T
    mx = float((rot0 @ xp).max() - (rot0 @ xp).min())
    mz = float((rot0 @ zp).max() - (rot0 @ zp).min())
    if mx < 1e-12 and mz < 1e-12:
        raise ZeroFootprint("mesh is flat along both plane axes")
    ratios = [ex / mx if mx > 1e-12 else np.inf, ez / mz if mz > 1e-12 else np.inf]
    s = scale_mult * fill_ratio * min(ratios)
    if not (s > 0 and np.isfinite(s)):
        raise ZeroFootprint("degenerate scale")

    rot = verts @ R.T * s
    lo = np.array([(rot @ xp).min(), (rot @ N).min(), (rot @ zp).min()])
    hi = np.array([(rot @ xp).max(), (rot @ N).max(), (rot @ zp).max()])
    bottom_center = (
        0.5 * (lo[0] + hi[0]) * xp + lo[1] * N + 0.5 * (lo[2] + hi[2]) * zp
    )
    dx, dz = planar_offset
    t = plane.anchor + dx * xp + dz * zp - bottom_center
    return Placement(
        rotation=Pose(matrix_to_quat(R)),
        scale=s,
        translation=t,
        yaw_deg=yaw_deg,
        scale_mult=scale_mult,
        planar_offset=tuple(planar_offset),
    )


def placement_to_json(sel: RegionSelection, plane: PlaneModel, placement: Placement) -> dict:
    """The placement.json payload shared by CLI, service, and UI."""
    doc = {
        "frame": sel.frame_index,
        "yaw_deg": placement.yaw_deg,
        "scale_mult": placement.scale_mult,
        "planar_offset": list(placement.planar_offset),
        "plane": {
            "normal": plane.normal.tolist(),
            "offset": plane.offset,
            "anchor": plane.anchor.tolist(),
        },
        "transform": {
            "rotation": placement.rotation.q.tolist(),
            "scale": placement.scale,
            "translation": placement.translation.tolist(),
        },
    }
    if sel.box is not None:
        doc["box"] = list(sel.box)
    else:
        doc["points"] = [list(p) for p in sel.points]
    return doc


def placement_from_json(doc: dict):
    """Inverse of placement_to_json; returns (selection, plane, placement)."""
    sel = RegionSelection(
        frame_index=doc["frame"],
        box=tuple(doc["box"]) if "box" in doc else None,
        points=doc.get("points"),
    )
    plane = PlaneModel(
        normal=np.array(doc["plane"]["normal"]),
        offset=doc["plane"]["offset"],
        inlier_indices=np.array([], dtype=int),
        anchor=np.array(doc["plane"]["anchor"]),
    )
    tr = doc["transform"]
    placement = Placement(
        rotation=Pose(tr["rotation"]),
        scale=tr["scale"],
        translation=np.array(tr["translation"]),
        yaw_deg=doc["yaw_deg"],
        scale_mult=doc["scale_mult"],
        planar_offset=tuple(doc["planar_offset"]),
    )
    return sel, plane, placement
