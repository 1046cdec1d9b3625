"""Shared fixtures: the synthetic orbit scene written out as a project."""

import numpy as np
import pytest
from PIL import Image

from placekit import fixture as fixmod
from placekit import flow as flowmod
from placekit import pipeline
from placekit.splat import TexturedMesh


def unit_cube_mesh() -> TexturedMesh:
    """Axis-aligned unit cube centered at the origin, outward winding."""
    v = np.array(
        [
            [-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, 0.5], [-0.5, 0.5, 0.5],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z = -0.5
            [4, 5, 6], [4, 6, 7],  # z = +0.5
            [0, 1, 5], [0, 5, 4],  # y = -0.5
            [3, 7, 6], [3, 6, 2],  # y = +0.5
            [0, 4, 7], [0, 7, 3],  # x = -0.5
            [1, 2, 6], [1, 6, 5],  # x = +0.5
        ]
    )
    return TexturedMesh(vertices=v, faces=f)


def write_fixture_project(fix, root, tau=16.0, radius=3):
    """Write frames and PAFW flows (consecutive plus exact pair flows).

    Pair flows are synthesized from the exact fixture geometry for every
    keyframe edge and every tracking reference the pipeline will request,
    standing in for the out-of-scope pairwise flow network.
    """
    frames_dir = root / "frames"
    flow_dir = root / "flow"
    frames_dir.mkdir()
    flow_dir.mkdir()
    for k in range(fix.n_frames):
        Image.fromarray(fix.frame(k)).save(frames_dir / f"{k:06d}.png")
    flows = []
    for k in range(fix.n_frames - 1):
        f = fix.flow(k, k + 1)
        flowmod.save_flow(flow_dir / f"{k:06d}.pafw", f)
        flows.append(f)
    kf = flowmod.select_keyframes(flows, tau)
    pairs = set()
    for a in range(len(kf)):
        for b in range(a + 1, min(a + radius + 1, len(kf))):
            pairs.add((kf[a], kf[b]))
            pairs.add((kf[b], kf[a]))
    for f in range(fix.n_frames):
        if f not in kf:
            ref = min(kf, key=lambda k: (abs(k - f), k))
            pairs.add((ref, f))
    for i, j in sorted(pairs):
        flowmod.save_flow(flow_dir / f"{i:06d}_{j:06d}.pafw", fix.flow(i, j))
    return frames_dir, flow_dir


@pytest.fixture(scope="session")
def fix():
    return fixmod.make_fixture()


@pytest.fixture(scope="session")
def fixture_project(fix, tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_project")
    frames_dir, flow_dir = write_fixture_project(fix, root)
    return {"frames": frames_dir, "flow": flow_dir}


@pytest.fixture(scope="session")
def recon(fix, fixture_project, tmp_path_factory):
    out = tmp_path_factory.mktemp("recon_out")
    res = pipeline.reconstruct(
        str(fixture_project["frames"]), str(fixture_project["flow"]), str(out)
    )
    return {"dir": out, "res": res}


@pytest.fixture(scope="session")
def small_fix():
    return fixmod.make_fixture(n_frames=8, width=160, height=120, focal=130.0, deg_per_frame=3.0)


@pytest.fixture(scope="session")
def small_project(small_fix, tmp_path_factory):
    root = tmp_path_factory.mktemp("small_project")
    frames_dir, flow_dir = write_fixture_project(small_fix, root)
    return {"frames": frames_dir, "flow": flow_dir}


@pytest.fixture(scope="session")
def small_recon(small_fix, small_project, tmp_path_factory):
    out = tmp_path_factory.mktemp("small_recon")
    res = pipeline.reconstruct(
        str(small_project["frames"]), str(small_project["flow"]), str(out)
    )
    return {"dir": out, "res": res}
