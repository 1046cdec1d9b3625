"""End-to-end insertion demo: reconstruct, place a cube, render the video.

Reuses the synthetic orbit scene, fits the floor plane from a box
selection on frame 0, stands a unit cube on it, and composites it over
every frame with occlusion against the reconstructed depth.
"""

import argparse
import os
import tempfile

import numpy as np

from placekit import fixture as fixmod
from placekit import pipeline
from placekit.splat import TexturedMesh, save_mesh_obj

from reconstruct_orbit import write_project


def cube_mesh():
    v = np.array(
        [
            [-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, 0.5], [-0.5, 0.5, 0.5],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
            [3, 7, 6], [3, 6, 2], [0, 4, 7], [0, 7, 3], [1, 2, 6], [1, 6, 5],
        ]
    )
    return TexturedMesh(vertices=v, faces=f)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output dir (default: temp)")
    ap.add_argument("--yaw", type=float, default=25.0)
    args = ap.parse_args()

    out = args.out or tempfile.mkdtemp(prefix="placekit_demo_")
    fix = fixmod.make_fixture(n_frames=12, width=320, height=240,
                              focal=260.0, deg_per_frame=2.0)
    frames_dir, flow_dir = write_project(fix, out)
    recon_dir = os.path.join(out, "recon")
    pipeline.reconstruct(frames_dir, flow_dir, recon_dir)
    print(f"reconstructed {fix.n_frames} frames")

    mesh_path = os.path.join(out, "cube")
    save_mesh_obj(mesh_path, cube_mesh())
    mesh_path += ".obj"

    # a box on the visible floor in frame 0 (lower middle of the image)
    box = (80, 175, 240, 225)
    _, plane, pl = pipeline.place(recon_dir, mesh_path, frame=0, box=box,
                                  yaw_deg=args.yaw)
    print(f"floor normal {np.round(plane.normal, 3)}, cube scale {pl.scale:.3f}")

    out_dir = os.path.join(out, "video")
    pipeline.render_video(recon_dir, frames_dir, mesh_path, out_dir)
    print(f"composited frames in {out_dir}")


if __name__ == "__main__":
    main()
