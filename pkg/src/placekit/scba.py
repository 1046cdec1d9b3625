"""Self-calibrating weighted bundle adjustment over a keyframe flow graph.

Jointly refines keyframe poses (camera-to-world), per-keyframe inverse
depth grids, and a shared focal length by minimizing weighted
flow-reprojection error with Levenberg-Marquardt damped Gauss-Newton.
Depth variables are eliminated per-cell by a Schur complement (the depth
block is diagonal: each cell couples only to poses/intrinsics through
edges sourced at its keyframe).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from placekit.flow import KeyframeGraph, FlowField
from placekit.geometry import Intrinsics, Pose, exp_update

D_MIN = 1e-4  # inverse-depth floor; also the transformed-depth mask threshold


class InsufficientGraph(ValueError):
    pass


class SolverDiverged(RuntimeError):
    pass


@dataclass
class InverseDepthGrid:
    """Per-cell inverse depth at 1/s image resolution."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.maximum(np.asarray(self.values, dtype=np.float64), D_MIN)

    @property
    def gh(self) -> int:
        return self.values.shape[0]

    @property
    def gw(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def constant(intr: Intrinsics, s: int, value: float = 1.0) -> "InverseDepthGrid":
        gh = int(np.ceil(intr.height / s))
        gw = int(np.ceil(intr.width / s))
        return InverseDepthGrid(np.full((gh, gw), value))


@dataclass
class SolverOptions:
    max_iters: int = 100
    rel_cost_tol: float = 1e-6
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_lambda_max: float = 1e8
    calibrate_focal: bool = True  # shared fx = fy, log-space update
    calibrate_principal: bool = False
    huber_delta: float = 4.0  # grid pixels; 0 disables the robustifier
    grid_factor: int = 8

    def __post_init__(self):
        for name in ("max_iters", "rel_cost_tol", "lm_lambda_init", "lm_lambda_factor", "grid_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.huber_delta < 0:
            raise ValueError("huber_delta must be >= 0")


@dataclass
class BAProblem:
    """Keyframe graph (flows at grid resolution), poses, depths, intrinsics."""

    graph: KeyframeGraph
    poses: list
    depths: list
    intr: Intrinsics
    options: SolverOptions = field(default_factory=SolverOptions)

    def keyframe_slot(self, frame_index: int) -> int:
        return self.graph.keyframes.index(frame_index)


@dataclass
class BAResult:
    poses: list
    depths: list
    intr: Intrinsics
    final_cost: float
    iterations: int
    cost_history: list


@dataclass
class TrackResult:
    pose: Pose
    low_confidence: bool
    final_cost: float
    iterations: int


def _skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])


def _grid_intr(intr: Intrinsics, s: int) -> Intrinsics:
    return intr.scaled(1.0 / s)


def _edge_terms(
    flow: FlowField,
    depth_i: np.ndarray,
    G_i: Pose,
    G_j: Pose,
    gintr: Intrinsics,
    huber_delta: float,
):
    """Residuals and Jacobian blocks for one edge, flattened over cells.

    Returns dict with r (n,2), jacobians w.r.t. the two poses (n,2,6),
    the source inverse depths (n,2), focal log-update (n,2), principal
    point (n,2,2), and the per-cell mask. Masked cells carry zeros.
    """
    gh, gw = depth_i.shape
    gv, gu = np.mgrid[0:gh, 0:gw].astype(np.float64)
    gu = gu.ravel()
    gv = gv.ravel()
    d = depth_i.ravel()
    w_obs = flow.weight.ravel()
    target = np.stack([gu + flow.dx.ravel(), gv + flow.dy.ravel()], axis=-1)

    dirx = (gu - gintr.cx) / gintr.fx
    diry = (gv - gintr.cy) / gintr.fy
    dirs = np.stack([dirx, diry, np.ones_like(dirx)], axis=-1)
    X = dirs / d[:, None]

    Ri = G_i.R
    Rj = G_j.R
    Rji = Rj.T @ Ri
    W = X @ Ri.T + G_i.t  # world points
    Y = (W - G_j.t) @ Rj

    z = Y[:, 2]
    in_front = z > D_MIN
    zs = np.where(in_front, z, 1.0)
    pu = gintr.fx * Y[:, 0] / zs + gintr.cx
    pv = gintr.fy * Y[:, 1] / zs + gintr.cy
    inside = (pu >= 0) & (pu <= gw - 1) & (pv >= 0) & (pv <= gh - 1)
    mask = (w_obs > 0) & in_front & inside

    r = np.where(mask[:, None], target - np.stack([pu, pv], axis=-1), 0.0)

    # total per-cell weight: observation confidence, then Huber on the
    # confidence-weighted residual
    wt = np.where(mask, w_obs, 0.0)
    r = r * wt[:, None]
    if huber_delta > 0:
        rn = np.linalg.norm(r, axis=1)
        hub = np.where(rn > huber_delta, np.sqrt(huber_delta / np.maximum(rn, 1e-12)), 1.0)
        r = r * hub[:, None]
        wt = wt * hub

    # d(pred)/dY, rows scaled by -wt to give d(residual)
    P = np.zeros((len(d), 2, 3))
    P[:, 0, 0] = gintr.fx / zs
    P[:, 0, 2] = -gintr.fx * Y[:, 0] / zs**2
    P[:, 1, 1] = gintr.fy / zs
    P[:, 1, 2] = -gintr.fy * Y[:, 1] / zs**2
    P *= -wt[:, None, None]

    # twist on G_i: dW = [I | -skew(W)] xi, dY = Rj^T dW
    A = np.zeros((len(d), 3, 6))
    A[:, :, :3] = Rj.T[None, :, :]
    SW = np.zeros((len(d), 3, 3))
    SW[:, 0, 1] = -W[:, 2]
    SW[:, 0, 2] = W[:, 1]
    SW[:, 1, 0] = W[:, 2]
    SW[:, 1, 2] = -W[:, 0]
    SW[:, 2, 0] = -W[:, 1]
    SW[:, 2, 1] = W[:, 0]
    A[:, :, 3:] = -np.einsum("ab,nbc->nac", Rj.T, SW)

    J_pose_i = np.einsum("nab,nbc->nac", P, A)
    J_pose_j = -J_pose_i

    dY_dd = -(dirs / d[:, None] ** 2) @ Rji.T
    J_depth = np.einsum("nab,nb->na", P, dY_dd)

    # shared log-focal: through the back-projected ray and the projection
    dX_f = np.stack([-X[:, 0], -X[:, 1], np.zeros_like(z)], axis=-1)
    dY_f = dX_f @ Rji.T
    J_focal = np.einsum("nab,nb->na", P, dY_f)
    J_focal[:, 0] += -wt * gintr.fx * Y[:, 0] / zs
    J_focal[:, 1] += -wt * gintr.fy * Y[:, 1] / zs

    # principal point (grid units): shifts both the ray and the projection
    dX_c = np.zeros((len(d), 3, 2))
    dX_c[:, 0, 0] = -1.0 / (gintr.fx * d)
    dX_c[:, 1, 1] = -1.0 / (gintr.fy * d)
    dY_c = np.einsum("ab,nbc->nac", Rji, dX_c)
    J_pp = np.einsum("nab,nbc->nac", P, dY_c)
    J_pp[:, 0, 0] += -wt
    J_pp[:, 1, 1] += -wt

    zero = ~mask
    for arr in (J_pose_i, J_pose_j, J_depth, J_focal, J_pp):
        arr[zero] = 0.0
    return {
        "r": r,
        "J_pose_i": J_pose_i,
        "J_pose_j": J_pose_j,
        "J_depth": J_depth,
        "J_focal": J_focal,
        "J_pp": J_pp,
        "mask": mask,
    }


def edge_residual(problem: BAProblem, edge) -> np.ndarray:
    """Weighted residual vector (2 per grid cell) for edge (i, j)."""
    i, j = edge
    flow = next(f for a, b, f in problem.graph.edges if (a, b) == (i, j))
    si = problem.keyframe_slot(i)
    sj = problem.keyframe_slot(j)
    gintr = _grid_intr(problem.intr, problem.options.grid_factor)
    terms = _edge_terms(
        flow,
        problem.depths[si].values,
        problem.poses[si],
        problem.poses[sj],
        gintr,
        problem.options.huber_delta,
    )
    return terms["r"]


def _problem_cost(graph, poses, depths, slot, gintr, huber_delta) -> float:
    cost = 0.0
    for i, j, flow in graph.edges:
        t = _edge_terms(flow, depths[slot[i]].values, poses[slot[i]], poses[slot[j]], gintr, huber_delta)
        cost += 0.5 * float((t["r"] ** 2).sum())
    return cost


def solve(problem: BAProblem) -> BAResult:
    """Run damped Gauss-Newton with per-cell Schur depth elimination."""
    opts = problem.options
    graph = problem.graph
    K = len(graph.keyframes)
    if K < 2 or not graph.edges:
        raise InsufficientGraph(f"{K} keyframes, {len(graph.edges)} edges")

    slot = {f: k for k, f in enumerate(graph.keyframes)}
    s = opts.grid_factor
    poses = [Pose(p.q, p.t) for p in problem.poses]
    depths = [InverseDepthGrid(d.values.copy()) for d in problem.depths]
    fx, fy = problem.intr.fx, problem.intr.fy
    cx, cy = problem.intr.cx, problem.intr.cy

    n_pose = 6 * (K - 1)  # pose 0 pinned
    n_f = 1 if opts.calibrate_focal else 0
    n_c = 2 if opts.calibrate_principal else 0
    P_dim = n_pose + n_f + n_c
    ncell = depths[0].values.size
    d0_target = float(depths[0].values.mean())

    def make_intr():
        return Intrinsics(fx, fy, cx, cy, problem.intr.width, problem.intr.height)

    def cost_of(poses_, depths_, intr_):
        return _problem_cost(graph, poses_, depths_, slot, _grid_intr(intr_, s), opts.huber_delta)

    lam = opts.lm_lambda_init
    cost = cost_of(poses, depths, make_intr())
    history = [cost]
    iters = 0

    for _ in range(opts.max_iters):
        if cost < 1e-16:
            break  # already at a numerically exact solution
        iters += 1
        gintr = _grid_intr(make_intr(), s)

        Hpp = np.zeros((P_dim, P_dim))
        bp = np.zeros(P_dim)
        Hdd = [np.zeros(ncell) for _ in range(K)]
        bd = [np.zeros(ncell) for _ in range(K)]
        Wmat = [np.zeros((P_dim, ncell)) for _ in range(K)]

        for i, j, flow in graph.edges:
            si, sj = slot[i], slot[j]
            t = _edge_terms(flow, depths[si].values, poses[si], poses[sj], gintr, opts.huber_delta)
            r = t["r"]

            blocks = []  # (param offset, jacobian (n,2,m))
            if si > 0:
                blocks.append((6 * (si - 1), t["J_pose_i"]))
            if sj > 0:
                blocks.append((6 * (sj - 1), t["J_pose_j"]))
            if n_f:
                blocks.append((n_pose, t["J_focal"][:, :, None]))
            if n_c:
                blocks.append((n_pose + n_f, t["J_pp"]))

            for off_a, Ja in blocks:
                ma = Ja.shape[2]
                bp[off_a : off_a + ma] -= np.einsum("nab,na->b", Ja, r)
                for off_b, Jb in blocks:
                    mb = Jb.shape[2]
                    Hpp[off_a : off_a + ma, off_b : off_b + mb] += np.einsum(
                        "nab,nac->bc", Ja, Jb
                    )

            Jd = t["J_depth"]
            Hdd[si] += np.einsum("na,na->n", Jd, Jd)
            bd[si] -= np.einsum("na,na->n", Jd, r)
            for off_a, Ja in blocks:
                Wmat[si][off_a : off_a + Ja.shape[2]] += np.einsum("nab,na->bn", Ja, Jd)

        grad_inf = max(
            np.abs(bp).max() if P_dim else 0.0, max(np.abs(b).max() for b in bd)
        )
        if grad_inf < 1e-14:
            break

        accepted = False
        while lam <= opts.lm_lambda_max:
            Hpp_d = Hpp + lam * np.diag(np.diag(Hpp)) + 1e-12 * np.eye(P_dim)
            S = Hpp_d.copy()
            rhs = bp.copy()
            Hdd_d = []
            for k in range(K):
                hd = Hdd[k] * (1.0 + lam) + 1e-12
                inv = np.where(Hdd[k] > 1e-12, 1.0 / hd, 0.0)
                Hdd_d.append(inv)
                S -= (Wmat[k] * inv[None, :]) @ Wmat[k].T
                rhs -= Wmat[k] @ (inv * bd[k])
            try:
                dp = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                lam *= opts.lm_lambda_factor
                continue

            new_poses = list(poses)
            for k in range(1, K):
                new_poses[k] = exp_update(poses[k], dp[6 * (k - 1) : 6 * k])
            new_fx, new_fy, new_cx, new_cy = fx, fy, cx, cy
            if n_f:
                scale_f = float(np.exp(dp[n_pose]))
                new_fx, new_fy = fx * scale_f, fy * scale_f
            if n_c:
                new_cx = cx + s * float(dp[n_pose + n_f])
                new_cy = cy + s * float(dp[n_pose + n_f + 1])
            new_depths = []
            for k in range(K):
                dd = Hdd_d[k] * (bd[k] - Wmat[k].T @ dp)
                new_depths.append(
                    InverseDepthGrid(depths[k].values + dd.reshape(depths[k].values.shape))
                )
            new_intr = Intrinsics(new_fx, new_fy, new_cx, new_cy, problem.intr.width, problem.intr.height)
            new_cost = cost_of(new_poses, new_depths, new_intr)

            if new_cost <= cost:
                # gauge: renormalize global scale so keyframe 0 keeps its
                # initial mean inverse depth (residuals are unchanged)
                scale = d0_target / float(new_depths[0].values.mean())
                for k in range(K):
                    new_depths[k] = InverseDepthGrid(new_depths[k].values * scale)
                    if k > 0:
                        new_poses[k] = Pose(new_poses[k].q, new_poses[k].t / scale)
                poses, depths = new_poses, new_depths
                fx, fy, cx, cy = new_fx, new_fy, new_cx, new_cy
                prev = cost
                cost = new_cost
                history.append(cost)
                lam = max(lam / opts.lm_lambda_factor, 1e-10)
                accepted = True
                if prev == 0 or (prev - new_cost) / max(prev, 1e-300) < opts.rel_cost_tol:
                    return BAResult(poses, depths, make_intr(), cost, iters, history)
                break
            lam *= opts.lm_lambda_factor

        if not accepted:
            if len(history) > 1 or cost < 1e-12:
                break  # stalled after progress: treat as converged
            raise SolverDiverged(f"no acceptable step below lambda {opts.lm_lambda_max:g}")

    return BAResult(poses, depths, make_intr(), cost, iters, history)


def track_frame(
    flow_ref_to_frame: FlowField,
    depths_ref: InverseDepthGrid,
    ref_pose: Pose,
    intr: Intrinsics,
    init: Pose,
    options: SolverOptions | None = None,
) -> TrackResult:
    """Pose-only refinement of one frame against a solved reference keyframe.

    Depths and intrinsics stay frozen; same residual, damping, and
    stopping rules as the full solver. With no usable constraints the
    initial pose is returned flagged low_confidence.
    """
    opts = options or SolverOptions()
    gintr = _grid_intr(intr, opts.grid_factor)
    if float(flow_ref_to_frame.weight.sum()) <= 0:
        return TrackResult(init, True, 0.0, 0)

    pose = Pose(init.q, init.t)

    def cost_of(p):
        t = _edge_terms(flow_ref_to_frame, depths_ref.values, ref_pose, p, gintr, opts.huber_delta)
        return 0.5 * float((t["r"] ** 2).sum())

    lam = opts.lm_lambda_init
    cost = cost_of(pose)
    iters = 0
    for _ in range(opts.max_iters):
        iters += 1
        t = _edge_terms(flow_ref_to_frame, depths_ref.values, ref_pose, pose, gintr, opts.huber_delta)
        J = t["J_pose_j"]
        r = t["r"]
        H = np.einsum("nab,nac->bc", J, J)
        b = -np.einsum("nab,na->b", J, r)
        if np.abs(b).max() < 1e-14:
            break
        accepted = False
        while lam <= opts.lm_lambda_max:
            Hd = H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(6)
            try:
                dx = np.linalg.solve(Hd, b)
            except np.linalg.LinAlgError:
                lam *= opts.lm_lambda_factor
                continue
            cand = exp_update(pose, dx)
            new_cost = cost_of(cand)
            if new_cost <= cost:
                prev = cost
                pose, cost = cand, new_cost
                lam = max(lam / opts.lm_lambda_factor, 1e-10)
                accepted = True
                if prev == 0 or (prev - new_cost) / max(prev, 1e-300) < opts.rel_cost_tol:
                    return TrackResult(pose, False, cost, iters)
                break
            lam *= opts.lm_lambda_factor
        if not accepted:
            if iters > 1 or cost < 1e-12:
                break
            raise SolverDiverged("tracking found no acceptable step")
    return TrackResult(pose, False, cost, iters)
