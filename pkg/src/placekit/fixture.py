"""Synthetic two-plane orbit scene with exact depths, poses, and flows.

The scene is a horizontal floor and a fronto-parallel wall, both
checker-textured, seen by a camera orbiting the scene center. Frame 0 is
the world origin. Everything is closed-form, so the fixture doubles as
the ground-truth oracle for reconstruction tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from placekit.geometry import Intrinsics, Pose, look_at
from placekit.flow import FlowField, synthesize_flow
from placekit.depth import DepthMap

FLOOR_Y = 1.0  # +y is down in the frame-0 camera, so the floor sits below it
WALL_Z = 6.0
ORBIT_CENTER = np.array([0.0, 0.0, 4.0])
ORBIT_RADIUS = 4.0


@dataclass
class Fixture:
    intr: Intrinsics
    poses: list  # camera-to-world, frame 0 = identity
    n_frames: int

    def depth(self, k: int) -> DepthMap:
        return raycast_depth(self.poses[k], self.intr)

    def frame(self, k: int) -> np.ndarray:
        return render_background(self.poses[k], self.intr)

    def flow(self, i: int, j: int) -> FlowField:
        return synthesize_flow(self.depth(i).z, self.poses[i], self.poses[j], self.intr)


def make_fixture(
    n_frames: int = 24,
    width: int = 640,
    height: int = 480,
    focal: float = 500.0,
    deg_per_frame: float = 1.5,
) -> Fixture:
    intr = Intrinsics(focal, focal, width / 2.0, height / 2.0, width, height)
    poses = []
    for k in range(n_frames):
        th = np.deg2rad(k * deg_per_frame)
        eye = ORBIT_CENTER + ORBIT_RADIUS * np.array([-np.sin(th), 0.0, -np.cos(th)])
        poses.append(look_at(eye, ORBIT_CENTER))
    # re-anchor so frame 0 is exactly identity
    g0_inv = poses[0].inverse()
    poses = [g0_inv.compose(p) for p in poses]
    return Fixture(intr=intr, poses=poses, n_frames=n_frames)


def _rays(pose: Pose, intr: Intrinsics):
    v, u = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    d_cam = np.stack(
        [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1
    )
    d_world = d_cam @ pose.R.T
    return d_world, pose.t


def raycast_depth(pose: Pose, intr: Intrinsics) -> DepthMap:
    """Exact z-depth of the nearest plane hit along each pixel ray.

    The ray parameter equals camera-frame z because rays are scaled to
    unit camera-z, so t is directly the depth.
    """
    d, o = _rays(pose, intr)
    t_floor = np.where(d[..., 1] > 1e-9, (FLOOR_Y - o[1]) / np.where(d[..., 1] > 1e-9, d[..., 1], 1.0), np.inf)
    t_wall = np.where(d[..., 2] > 1e-9, (WALL_Z - o[2]) / np.where(d[..., 2] > 1e-9, d[..., 2], 1.0), np.inf)
    t_floor = np.where(t_floor > 0, t_floor, np.inf)
    t_wall = np.where(t_wall > 0, t_wall, np.inf)
    t = np.minimum(t_floor, t_wall)
    valid = np.isfinite(t)
    return DepthMap(z=np.where(valid, t, 0.0), valid=valid)


def floor_mask(pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Pixels whose nearest hit is the floor plane."""
    d, o = _rays(pose, intr)
    t_floor = np.where(d[..., 1] > 1e-9, (FLOOR_Y - o[1]) / np.where(d[..., 1] > 1e-9, d[..., 1], 1.0), np.inf)
    t_wall = np.where(d[..., 2] > 1e-9, (WALL_Z - o[2]) / np.where(d[..., 2] > 1e-9, d[..., 2], 1.0), np.inf)
    t_floor = np.where(t_floor > 0, t_floor, np.inf)
    t_wall = np.where(t_wall > 0, t_wall, np.inf)
    return np.isfinite(t_floor) & (t_floor <= t_wall)


def render_background(pose: Pose, intr: Intrinsics, checker: float = 0.5) -> np.ndarray:
    """Checker-textured RGB (uint8) view of the two planes."""
    depth = raycast_depth(pose, intr)
    d, o = _rays(pose, intr)
    pts = o + d * depth.z[..., None]
    on_floor = floor_mask(pose, intr)

    img = np.zeros((intr.height, intr.width, 3), dtype=np.float64)
    cf = (np.floor(pts[..., 0] / checker) + np.floor(pts[..., 2] / checker)) % 2
    cw = (np.floor(pts[..., 0] / checker) + np.floor(pts[..., 1] / checker)) % 2
    floor_col = np.where(cf[..., None] > 0, [0.55, 0.40, 0.25], [0.35, 0.25, 0.15])
    wall_col = np.where(cw[..., None] > 0, [0.45, 0.50, 0.65], [0.30, 0.34, 0.45])
    img = np.where(on_floor[..., None], floor_col, wall_col)
    img[~depth.valid] = [0.1, 0.1, 0.1]
    return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
