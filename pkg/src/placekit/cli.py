"""placekit command line: reconstruct | extract-mesh | place | render | serve.

Exit codes: 2 missing/unreadable inputs, 3 solver divergence, 4 empty or
inconsistent region selection.
"""

from __future__ import annotations

import argparse
import sys

from placekit import placement as placemod
from placekit import pipeline
from placekit.scba import SolverDiverged
from placekit.splat import MalformedHeader, MissingField


def _config_from_args(args) -> pipeline.Config:
    cfg = pipeline.Config.load(args.config) if getattr(args, "config", None) else pipeline.Config()
    for key in vars(cfg):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg.set(key, flag)
    return cfg


def _add_config_flags(p, keys):
    p.add_argument("--config", help="key=value config file")
    for key in keys:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="placekit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="flows + frames -> poses, intrinsics, depth")
    p.add_argument("--frames", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["tau", "window", "grid_factor", "focal_init", "huber", "max_iters"])

    p = sub.add_parser("extract-mesh", help="Gaussian PLY -> textured OBJ")
    p.add_argument("ply")
    p.add_argument("--out", required=True, help="output base path (no extension)")
    _add_config_flags(p, ["grid", "iso", "n_views", "tex_size"])

    p = sub.add_parser("place", help="fit plane in a region and place the mesh")
    p.add_argument("--recon", required=True)
    p.add_argument("--mesh", required=True, help="OBJ path")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--box", type=float, nargs=4, metavar=("U0", "V0", "U1", "V1"))
    p.add_argument("--point", type=float, nargs=2, action="append", metavar=("U", "V"))
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--scale-mult", type=float, default=1.0)
    p.add_argument("--offset", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DZ"))
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p, ["fill_ratio"])

    p = sub.add_parser("render", help="composite the placed mesh over all frames")
    p.add_argument("--recon", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", action="store_true", help="also write object-only layers")
    _add_config_flags(p, ["eps_rel", "jobs"])

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--projects-root", default="projects")

    args = ap.parse_args(argv)
    try:
        return _dispatch(args)
    except (pipeline.MissingInput, FileNotFoundError, MissingField, MalformedHeader) as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return 2
    except SolverDiverged as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return 3
    except (placemod.EmptyRegion, placemod.NoConsensus, placemod.DegenerateInput) as exc:
        print(f"error: region: {exc}", file=sys.stderr)
        return 4


def _dispatch(args) -> int:
    cfg = _config_from_args(args) if args.command != "serve" else None
    if args.command == "reconstruct":
        res = pipeline.reconstruct(args.frames, args.flow, args.out, cfg)
        print(f"reconstructed {len(res.poses)} frames, {len(res.keyframes)} keyframes, "
              f"focal {res.intr.fx:.2f}")
    elif args.command == "extract-mesh":
        mesh = pipeline.extract_mesh(args.ply, args.out, cfg)
        if mesh.warning:
            print(f"warning: {mesh.warning}", file=sys.stderr)
        print(f"wrote {args.out}.obj with {len(mesh.faces)} triangles")
    elif args.command == "place":
        sel_box = tuple(args.box) if args.box else None
        pts = args.point if args.point else None
        _, plane, pl = pipeline.place(
            args.recon, args.mesh, args.frame, box=sel_box, points=pts,
            yaw_deg=args.yaw, scale_mult=args.scale_mult,
            planar_offset=tuple(args.offset), seed=args.seed, config=cfg,
        )
        n = plane.normal
        print(f"plane normal ({n[0]:.3f}, {n[1]:.3f}, {n[2]:.3f}), scale {pl.scale:.4f}")
    elif args.command == "render":
        outs = pipeline.render_video(
            args.recon, args.frames, args.mesh, args.out,
            config=cfg, save_layers=args.layers,
        )
        print(f"rendered {len(outs)} frames to {args.out}")
    elif args.command == "serve":
        import uvicorn

        from placekit.service import create_app

        uvicorn.run(create_app(args.projects_root), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
