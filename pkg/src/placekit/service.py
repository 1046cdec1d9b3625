"""HTTP API around the pipeline: projects, jobs, region/placement, preview.

State machine per project: created -> frames_loaded -> reconstructed ->
region_set -> rendered. Transitions only move forward; re-running a
stage resets everything downstream. Mutating work (reconstruct, render)
runs as queued jobs, one at a time per project; reads may run
concurrently.
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel

from placekit import placement as placemod
from placekit import pipeline
from placekit import render as rendermod
from placekit.splat import load_mesh_obj

STATES = ["created", "frames_loaded", "reconstructed", "region_set", "rendered"]


def _state_rank(state: str) -> int:
    return STATES.index(state)


@dataclass
class Job:
    id: str
    kind: str
    status: str = "queued"  # queued | running | done | failed
    progress: float = 0.0
    error: str | None = None

    def to_dict(self):
        doc = {"id": self.id, "kind": self.kind, "status": self.status,
               "progress": self.progress}
        if self.error:
            doc["error"] = self.error
        return doc


@dataclass
class ProjectRuntime:
    id: str
    name: str
    root: str
    frames_dir: str
    flow_dir: str
    state: str = "created"
    region_points: np.ndarray | None = None
    plane: placemod.PlaneModel | None = None
    selection: placemod.RegionSelection | None = None
    placement: placemod.Placement | None = None
    mesh_path: str | None = None
    preview_version: int = 0
    executor: ThreadPoolExecutor = field(default_factory=lambda: ThreadPoolExecutor(max_workers=1))
    lock: threading.Lock = field(default_factory=threading.Lock)

    def save(self):
        doc = {"id": self.id, "name": self.name, "frames_dir": self.frames_dir,
               "flow_dir": self.flow_dir, "state": self.state}
        with open(os.path.join(self.root, "project.json"), "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)

    def require_state(self, minimum: str):
        if _state_rank(self.state) < _state_rank(minimum):
            raise HTTPException(409, f"project state {self.state!r}, needs >= {minimum!r}")

    def enter_state(self, state: str):
        # re-running a stage resets downstream states
        self.state = state
        self.save()


class CreateProject(BaseModel):
    name: str
    frames_dir: str
    flow_dir: str


class RegionBody(BaseModel):
    frame: int = 0
    box: list[float] | None = None
    points: list[list[float]] | None = None


class PlacementBody(BaseModel):
    yaw_deg: float = 0.0
    scale_mult: float = 1.0
    planar_offset: list[float] = [0.0, 0.0]
    mesh_path: str


def create_app(projects_root: str = "projects", config: pipeline.Config | None = None) -> FastAPI:
    cfg = config or pipeline.Config()
    os.makedirs(projects_root, exist_ok=True)
    app = FastAPI(title="placekit")
    projects: dict[str, ProjectRuntime] = {}
    jobs: dict[str, Job] = {}

    def get_project(pid: str) -> ProjectRuntime:
        if pid not in projects:
            raise HTTPException(404, f"no project {pid}")
        return projects[pid]

    def submit(project: ProjectRuntime, kind: str, fn) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind)
        jobs[job.id] = job

        def run():
            lockfile = os.path.join(project.root, ".lock")
            try:
                fd = os.open(lockfile, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.close(fd)
            except FileExistsError:
                job.status = "failed"
                job.error = "project is locked by another writer"
                return
            job.status = "running"
            try:
                fn(job)
                job.progress = 1.0
                job.status = "done"
            except Exception as exc:
                job.status = "failed"
                job.error = f"{kind}: {exc}"
            finally:
                os.remove(lockfile)

        project.executor.submit(run)
        return job

    @app.post("/api/projects")
    def create_project(body: CreateProject):
        pid = uuid.uuid4().hex[:12]
        root = os.path.join(projects_root, pid)
        os.makedirs(root, exist_ok=True)
        project = ProjectRuntime(
            id=pid, name=body.name, root=root,
            frames_dir=body.frames_dir, flow_dir=body.flow_dir,
        )
        if os.path.isdir(body.frames_dir) and pipeline.list_frames(body.frames_dir):
            project.state = "frames_loaded"
        project.save()
        projects[pid] = project
        return {"id": pid}

    @app.post("/api/projects/{pid}/reconstruct")
    def start_reconstruct(pid: str):
        project = get_project(pid)
        project.require_state("frames_loaded")

        def work(job: Job):
            job.progress = 0.05
            pipeline.reconstruct(project.frames_dir, project.flow_dir, project.root, cfg)
            with project.lock:
                project.region_points = None
                project.plane = None
                project.placement = None
                project.enter_state("reconstructed")

        return {"job": submit(project, "reconstruct", work).to_dict()}

    @app.get("/api/jobs/{jid}")
    def get_job(jid: str):
        if jid not in jobs:
            raise HTTPException(404, f"no job {jid}")
        return jobs[jid].to_dict()

    @app.get("/api/projects/{pid}/frame/{k}")
    def get_frame(pid: str, k: int):
        project = get_project(pid)
        project.require_state("frames_loaded")
        frames = dict(pipeline.list_frames(project.frames_dir))
        if k not in frames:
            raise HTTPException(404, f"no frame {k}")
        with open(frames[k], "rb") as fh:
            return Response(fh.read(), media_type="image/png")

    @app.get("/api/projects/{pid}/frames")
    def get_frame_count(pid: str):
        project = get_project(pid)
        return {"count": len(pipeline.list_frames(project.frames_dir)),
                "state": project.state}

    @app.post("/api/projects/{pid}/region")
    def set_region(pid: str, body: RegionBody):
        project = get_project(pid)
        project.require_state("reconstructed")
        try:
            sel = placemod.RegionSelection(
                frame_index=body.frame,
                box=tuple(body.box) if body.box else None,
                points=body.points,
            )
            intr, poses, _ = pipeline.load_recon(project.root)
            depth = pipeline.load_depth(project.root, body.frame)
            pts = placemod.backproject_region(sel, depth, poses[body.frame], intr)
            plane = placemod.ransac_plane(pts, poses[body.frame])
        except (ValueError, placemod.NoConsensus) as exc:
            raise HTTPException(422, f"invalid region: {exc}")
        xp, _, zp = placemod.plane_frame(plane, poses[body.frame])
        inl = pts[plane.inlier_indices]
        ex = float((inl @ xp).max() - (inl @ xp).min())
        ez = float((inl @ zp).max() - (inl @ zp).min())
        with project.lock:
            project.selection = sel
            project.region_points = pts
            project.plane = plane
            project.placement = None
            project.enter_state("region_set")
        return {
            "plane": {
                "normal": plane.normal.tolist(),
                "anchor": plane.anchor.tolist(),
                "extents": [ex, ez],
            }
        }

    @app.post("/api/projects/{pid}/placement")
    def set_placement(pid: str, body: PlacementBody):
        project = get_project(pid)
        project.require_state("region_set")
        if not os.path.exists(body.mesh_path):
            raise HTTPException(422, f"no mesh at {body.mesh_path}")
        mesh = load_mesh_obj(body.mesh_path)
        intr, poses, _ = pipeline.load_recon(project.root)
        with project.lock:
            try:
                pl = placemod.solve_placement(
                    project.plane, project.region_points, mesh,
                    poses[project.selection.frame_index],
                    yaw_deg=body.yaw_deg, scale_mult=body.scale_mult,
                    planar_offset=tuple(body.planar_offset),
                    fill_ratio=cfg.fill_ratio,
                )
            except ValueError as exc:
                raise HTTPException(422, f"placement failed: {exc}")
            project.placement = pl
            project.mesh_path = body.mesh_path
            project.preview_version += 1
            doc = placemod.placement_to_json(project.selection, project.plane, pl)
            pipeline._write_json(os.path.join(project.root, "placement.json"), doc)
            project.enter_state("region_set")
        return {"placement": doc, "version": project.preview_version}

    @app.get("/api/projects/{pid}/preview")
    def preview(pid: str, frame: int = 0):
        project = get_project(pid)
        project.require_state("region_set")
        if project.placement is None:
            raise HTTPException(409, "no placement committed")
        intr, poses, _ = pipeline.load_recon(project.root)
        frames = dict(pipeline.list_frames(project.frames_dir))
        if frame not in frames:
            raise HTTPException(404, f"no frame {frame}")
        mesh = load_mesh_obj(project.mesh_path)
        job = rendermod.FrameRenderJob(
            frame_index=frame,
            pose=poses[frame],
            intr=intr,
            scene_depth=pipeline.load_depth(project.root, frame),
            background=np.asarray(Image.open(frames[frame]).convert("RGB")),
            mesh=mesh,
            model_matrix=rendermod.placement_matrix(project.placement),
        )
        out = rendermod.render_frame(job, cfg.eps_rel)
        buf = io.BytesIO()
        Image.fromarray(out.composited).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png",
                        headers={"X-Preview-Version": str(project.preview_version)})

    @app.post("/api/projects/{pid}/render")
    def start_render(pid: str):
        project = get_project(pid)
        project.require_state("region_set")
        if project.placement is None:
            raise HTTPException(409, "no placement committed")
        mesh_path = project.mesh_path
        n_frames = len(pipeline.list_frames(project.frames_dir))

        def work(job: Job):
            def progress(k):
                job.progress = max(job.progress, (k + 1) / max(n_frames, 1))

            pipeline.render_video(
                project.root, project.frames_dir, mesh_path,
                os.path.join(project.root, "out"),
                config=cfg, progress=progress,
            )
            with project.lock:
                project.enter_state("rendered")

        return {"job": submit(project, "render", work).to_dict()}

    @app.get("/api/projects/{pid}/out/{k}")
    def get_output_frame(pid: str, k: int):
        project = get_project(pid)
        project.require_state("rendered")
        path = os.path.join(project.root, "out", f"{k:06d}.png")
        if not os.path.exists(path):
            raise HTTPException(404, f"no rendered frame {k}")
        with open(path, "rb") as fh:
            return Response(fh.read(), media_type="image/png")

    return app
