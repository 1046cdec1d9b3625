"""Trajectory evaluation: similarity alignment and absolute trajectory error."""

from __future__ import annotations

import numpy as np


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares similarity aligning src points onto dst.

    Returns (scale, R, t) with dst ~ scale * R @ src + t.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    if with_scale:
        var_s = (xs**2).sum() / len(src)
        scale = float(np.trace(np.diag(D) @ S) / var_s) if var_s > 0 else 1.0
    else:
        scale = 1.0
    t = mu_d - scale * R @ mu_s
    return scale, R, t


def ate_rmse(est_positions, gt_positions, with_scale: bool = True) -> float:
    """RMS position error after optimal similarity (or rigid) alignment."""
    est = np.asarray(est_positions, dtype=np.float64)
    gt = np.asarray(gt_positions, dtype=np.float64)
    scale, R, t = umeyama_alignment(est, gt, with_scale=with_scale)
    aligned = scale * est @ R.T + t
    return float(np.sqrt(((aligned - gt) ** 2).sum(axis=1).mean()))


def trajectory_diameter(positions) -> float:
    """Largest pairwise distance between trajectory positions."""
    p = np.asarray(positions, dtype=np.float64)
    d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
    return float(np.sqrt(d2.max()))
