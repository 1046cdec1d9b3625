"""Project store and the reconstruct / extract-mesh / place / render stages.

A project directory holds numbered PNG frames, PAFW flows, and the
artifacts each stage produces (recon.json, depth/, placement.json,
out/). The stage functions are plain functions over directories; the CLI
and HTTP service are thin wrappers.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from placekit import depth as depthmod
from placekit import flow as flowmod
from placekit import placement as placemod
from placekit import render as rendermod
from placekit import scba
from placekit.geometry import Intrinsics, Pose
from placekit.splat import (
    bake_texture,
    load_gaussians,
    load_mesh_obj,
    marching_cubes,
    save_mesh_obj,
    weighted_opacity_field,
)


class MissingInput(FileNotFoundError):
    pass


@dataclass
class Config:
    """Tunables with CLI flag > config file > built-in default precedence."""

    tau: float = 16.0  # keyframe displacement threshold, full-res pixels
    window: int = 3  # keyframe graph temporal radius
    grid_factor: int = 8  # BA depth-grid downsample
    focal_init: float | None = None  # default: 1.2 * max(width, height)
    huber: float = 4.0
    max_iters: int = 100
    fill_ratio: float = 0.5
    iso: float = 0.5
    grid: int = 128  # marching-cubes resolution
    n_views: int = 16
    tex_size: int = 1024
    eps_rel: float = 0.02
    jobs: int = 1

    @staticmethod
    def load(path) -> "Config":
        """Parse a key=value config file (comments with #, blank lines ok)."""
        cfg = Config()
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                cfg.set(key.strip(), val.strip())
        return cfg

    def set(self, key: str, value):
        if not hasattr(self, key):
            raise KeyError(f"unknown config key {key!r}")
        current = getattr(self, key)
        if isinstance(current, bool):
            value = str(value).lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float) or current is None:
            value = float(value)
        setattr(self, key, value)


def list_frames(frames_dir) -> list:
    """Sorted (index, path) of numbered PNG frames."""
    frames = []
    for name in sorted(os.listdir(frames_dir)):
        m = re.fullmatch(r"(\d+)\.png", name)
        if m:
            frames.append((int(m.group(1)), os.path.join(frames_dir, name)))
    return sorted(frames)


def _load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _pair_flow_path(flow_dir, i, j):
    return os.path.join(flow_dir, f"{i:06d}_{j:06d}.pafw")


def _load_consecutive_flows(flow_dir, n_frames):
    flows = []
    for k in range(n_frames - 1):
        path = os.path.join(flow_dir, f"{k:06d}.pafw")
        if not os.path.exists(path):
            raise MissingInput(f"missing consecutive flow {path}")
        flows.append(flowmod.load_flow(path))
    return flows


def _chain_flow(flows, i, j):
    """Accumulate consecutive flows from frame i to frame j (i != j)."""
    if j > i:
        out = flows[i]
        for k in range(i + 1, j):
            out = flowmod.accumulate_flow(out, flows[k])
        return out
    raise ValueError("forward chains only")


@dataclass
class ReconResult:
    intr: Intrinsics
    poses: list
    keyframes: list
    depths: dict  # frame index -> DepthMap
    meta: dict


def reconstruct(frames_dir, flow_dir, out_dir, config: Config | None = None) -> ReconResult:
    """Keyframe selection -> SC-BA -> per-frame tracking -> dense depth.

    Writes recon.json and depth/%06d.pfm under out_dir.
    """
    cfg = config or Config()
    frames = list_frames(frames_dir)
    if not frames:
        raise MissingInput(f"no numbered PNG frames in {frames_dir}")
    n = len(frames)
    first = _load_image(frames[0][1])
    h, w = first.shape[:2]
    f0 = cfg.focal_init if cfg.focal_init else 1.2 * max(w, h)
    intr = Intrinsics(f0, f0, w / 2.0, h / 2.0, w, h)

    flows = _load_consecutive_flows(flow_dir, n)
    keyframes = flowmod.select_keyframes(flows, cfg.tau)
    s = cfg.grid_factor

    # inverse flows are synthesized by chaining the forward consecutive
    # flows in reverse is impossible; reverse pairs need their own chain.
    # Explicit pair files win; otherwise forward chains are accumulated
    # and reverse chains come from reverse consecutive files if present,
    # else the reverse edge is approximated by negating the forward chain
    # warped onto the target grid.
    def full_pair_flow(i, j):
        explicit = _pair_flow_path(flow_dir, i, j)
        if os.path.exists(explicit):
            return flowmod.load_flow(explicit)
        if j > i:
            return _chain_flow(flows, i, j)
        rev = [_reverse_path(flow_dir, k) for k in range(j, i)]
        if all(p is not None for p in rev):
            out = flowmod.load_flow(rev[-1])
            for p in rev[-2::-1]:
                out = flowmod.accumulate_flow(out, flowmod.load_flow(p))
            return out
        return _invert_flow(_chain_flow(flows, j, i))

    def pair_flow_grid(i, j):
        return flowmod.downsample_flow(full_pair_flow(i, j), s)

    graph = flowmod.build_keyframe_graph(keyframes, pair_flow_grid, radius=cfg.window)
    opts = scba.SolverOptions(
        max_iters=cfg.max_iters, huber_delta=cfg.huber, grid_factor=s
    )
    problem = scba.BAProblem(
        graph=graph,
        poses=[Pose() for _ in keyframes],
        depths=[scba.InverseDepthGrid.constant(intr, s, 1.0) for _ in keyframes],
        intr=intr,
        options=opts,
    )
    result = scba.solve(problem)

    # pose-only tracking of non-keyframes against the nearest keyframe
    kf_set = set(keyframes)
    kf_slot = {f: k for k, f in enumerate(keyframes)}
    poses = [None] * n
    for k, f in enumerate(keyframes):
        poses[f] = result.poses[k]
    for f in range(n):
        if f in kf_set:
            continue
        ref = min(keyframes, key=lambda kf: (abs(kf - f), kf))
        flow_ref = flowmod.downsample_flow(full_pair_flow(ref, f), s)
        tr = scba.track_frame(
            flow_ref, result.depths[kf_slot[ref]], poses[ref], result.intr, poses[ref], opts
        )
        poses[f] = tr.pose

    depth_dir = os.path.join(out_dir, "depth")
    os.makedirs(depth_dir, exist_ok=True)
    kf_depths = {}
    for k, f in enumerate(keyframes):
        kf_depths[f] = depthmod.upsample_keyframe_depth(result.depths[k].values, result.intr, s)
    depths = {}
    for f in range(n):
        if f in kf_set:
            depths[f] = kf_depths[f]
        else:
            ref = min(keyframes, key=lambda kf: (abs(kf - f), kf))
            depths[f] = depthmod.propagate_depth(poses[f], poses[ref], kf_depths[ref], result.intr)
        depthmod.save_pfm(os.path.join(depth_dir, f"{f:06d}.pfm"), depths[f])

    doc = {
        "intrinsics": result.intr.to_list(),
        "frames": [
            {"index": f, "pose": poses[f].to_list(), "keyframe": f in kf_set}
            for f in range(n)
        ],
        "meta": {
            "tau": cfg.tau,
            "window": cfg.window,
            "iterations": result.iterations,
            "final_cost": result.final_cost,
        },
    }
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "recon.json"), doc)
    return ReconResult(
        intr=result.intr, poses=poses, keyframes=keyframes, depths=depths, meta=doc["meta"]
    )


def _reverse_path(flow_dir, k):
    p = os.path.join(flow_dir, f"{k + 1:06d}_{k:06d}.pafw")
    return p if os.path.exists(p) else None


def _invert_flow(f: flowmod.FlowField) -> flowmod.FlowField:
    """Approximate reverse flow by forward-splatting negated displacements."""
    h, w = f.dx.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    ut = np.round(u + f.dx).astype(int)
    vt = np.round(v + f.dy).astype(int)
    ok = (f.weight > 0) & (ut >= 0) & (ut < w) & (vt >= 0) & (vt < h)
    dx = np.zeros((h, w))
    dy = np.zeros((h, w))
    wt = np.zeros((h, w))
    dx[vt[ok], ut[ok]] = -f.dx[ok]
    dy[vt[ok], ut[ok]] = -f.dy[ok]
    wt[vt[ok], ut[ok]] = f.weight[ok]
    # fill splatting holes from 4-neighbors
    for _ in range(4):
        hole = wt == 0
        if not hole.any():
            break
        for sy, sx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            src_dx = np.roll(dx, (sy, sx), axis=(0, 1))
            src_dy = np.roll(dy, (sy, sx), axis=(0, 1))
            src_w = np.roll(wt, (sy, sx), axis=(0, 1))
            take = hole & (src_w > 0)
            dx[take] = src_dx[take]
            dy[take] = src_dy[take]
            wt[take] = src_w[take]
            hole &= ~take
    return flowmod.FlowField(dx=dx, dy=dy, weight=np.clip(wt, 0, 1))


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_recon(recon_dir):
    """Read recon.json back into (intr, poses list, keyframe indices)."""
    path = os.path.join(recon_dir, "recon.json")
    if not os.path.exists(path):
        raise MissingInput(f"missing {path}")
    with open(path) as fh:
        doc = json.load(fh)
    intr = Intrinsics.from_list(doc["intrinsics"])
    poses = [Pose.from_list(f["pose"]) for f in doc["frames"]]
    keyframes = [f["index"] for f in doc["frames"] if f["keyframe"]]
    return intr, poses, keyframes


def load_depth(recon_dir, frame_index) -> depthmod.DepthMap:
    path = os.path.join(recon_dir, "depth", f"{frame_index:06d}.pfm")
    if not os.path.exists(path):
        raise MissingInput(f"missing {path}")
    return depthmod.load_pfm(path)


def extract_mesh(ply_path, out_base, config: Config | None = None):
    """Gaussian PLY -> OBJ/MTL/PNG triplet via field + marching cubes + bake."""
    cfg = config or Config()
    cloud = load_gaussians(ply_path)
    grid = weighted_opacity_field(cloud, cfg.grid)
    mesh = marching_cubes(grid, cfg.iso)
    if len(mesh.faces) == 0:
        save_mesh_obj(out_base, mesh)
        return mesh
    baked = bake_texture(cloud=cloud, mesh=mesh, n_views=cfg.n_views, tex_size=cfg.tex_size)
    save_mesh_obj(out_base, baked)
    return baked


def place(recon_dir, mesh_path, frame, box=None, points=None, yaw_deg=0.0,
          scale_mult=1.0, planar_offset=(0.0, 0.0), seed=0,
          config: Config | None = None, out_path=None):
    """Fit the region plane and solve the placement; writes placement.json."""
    cfg = config or Config()
    intr, poses, _ = load_recon(recon_dir)
    depth = load_depth(recon_dir, frame)
    sel = placemod.RegionSelection(frame_index=frame, box=box, points=points)
    pts = placemod.backproject_region(sel, depth, poses[frame], intr)
    plane = placemod.ransac_plane(pts, poses[frame], seed=seed)
    mesh = load_mesh_obj(mesh_path)
    pl = placemod.solve_placement(
        plane, pts, mesh, poses[frame], yaw_deg=yaw_deg, scale_mult=scale_mult,
        planar_offset=planar_offset, fill_ratio=cfg.fill_ratio,
    )
    doc = placemod.placement_to_json(sel, plane, pl)
    out_path = out_path or os.path.join(recon_dir, "placement.json")
    _write_json(out_path, doc)
    return sel, plane, pl


def render_video(recon_dir, frames_dir, mesh_path, out_dir,
                 placement_path=None, config: Config | None = None,
                 save_layers=False, progress=None):
    """Composite the placed mesh over every frame; writes out/%06d.png."""
    cfg = config or Config()
    intr, poses, _ = load_recon(recon_dir)
    placement_path = placement_path or os.path.join(recon_dir, "placement.json")
    if not os.path.exists(placement_path):
        raise MissingInput(f"missing {placement_path}")
    with open(placement_path) as fh:
        _, _, pl = placemod.placement_from_json(json.load(fh))
    mesh = load_mesh_obj(mesh_path)
    model = rendermod.placement_matrix(pl)

    frames = list_frames(frames_dir)
    jobs = []
    for f, path in frames:
        jobs.append(
            rendermod.FrameRenderJob(
                frame_index=f,
                pose=poses[f],
                intr=intr,
                scene_depth=load_depth(recon_dir, f),
                background=_load_image(path),
                mesh=mesh,
                model_matrix=model,
            )
        )
    outputs = rendermod.render_sequence(jobs, parallelism=cfg.jobs,
                                        eps_rel=cfg.eps_rel, progress=progress)
    os.makedirs(out_dir, exist_ok=True)
    if save_layers:
        os.makedirs(os.path.join(out_dir, "layers"), exist_ok=True)
    for (f, _), out in zip(frames, outputs):
        Image.fromarray(out.composited).save(os.path.join(out_dir, f"{f:06d}.png"))
        if save_layers:
            layer8 = (np.clip(out.layer, 0, 1) * 255 + 0.5).astype(np.uint8)
            Image.fromarray(layer8).save(os.path.join(out_dir, "layers", f"{f:06d}.png"))
    return outputs
