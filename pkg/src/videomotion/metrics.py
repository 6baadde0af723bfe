"""Motion-capture accuracy and distribution metrics.

Joint/vertex inputs are (T, J, 3) / (T, V, 3) arrays in meters; position
errors are reported in millimeters, acceleration error in m/s^2. Feature
distribution metrics (fid, diversity) operate on (N, D) feature matrices.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .body import StubBody, joints_from_motion

MM = 1000.0


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError(f"expected matching (T, J, 3) arrays, got {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error (mm) after per-frame root alignment."""
    pred, gt = _check_pair(pred, gt)
    pred = pred - pred[:, :1]
    gt = gt - gt[:, :1]
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * MM)


class ProcrustesResult(NamedTuple):
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool


def procrustes_align(points: np.ndarray, target: np.ndarray) -> ProcrustesResult:
    """Closed-form similarity transform minimizing ||s R x + t - y||^2.

    Reflections are corrected to proper rotations. Rank-deficient point sets
    are flagged and mapped to the identity transform.
    """
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3 or x.shape[0] < 3:
        raise ValueError("procrustes needs matching (P>=3, 3) point sets")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = (xc ** 2).sum()
    cov = xc.T @ yc
    u, svals, vt = np.linalg.svd(cov)
    if var_x < 1e-12 or svals[1] < 1e-10 * max(svals[0], 1.0):
        return ProcrustesResult(1.0, np.eye(3), np.zeros(3), True)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = np.array([1.0, 1.0, sign])
    rotation = vt.T @ np.diag(d) @ u.T
    scale = float((svals * d).sum() / var_x)
    translation = mu_y - scale * rotation @ mu_x
    return ProcrustesResult(scale, rotation, translation, False)


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Per-frame Procrustes-aligned MPJPE (mm)."""
    pred, gt = _check_pair(pred, gt)
    errs = []
    for frame_pred, frame_gt in zip(pred, gt):
        fit = procrustes_align(frame_pred, frame_gt)
        aligned = fit.scale * frame_pred @ fit.rotation.T + fit.translation
        errs.append(np.linalg.norm(aligned - frame_gt, axis=-1).mean())
    return float(np.mean(errs) * MM)


def pve(pred_verts: np.ndarray, gt_verts: np.ndarray,
        pred_root: np.ndarray | None = None, gt_root: np.ndarray | None = None) -> float:
    """Mean per-vertex error (mm) after root alignment.

    Root positions are per-frame (T, 3) pelvis locations; when omitted, the
    per-frame vertex centroid is used instead.
    """
    pred, gt = _check_pair(pred_verts, gt_verts)
    pred_root = pred.mean(axis=1) if pred_root is None else np.asarray(pred_root, dtype=np.float64)
    gt_root = gt.mean(axis=1) if gt_root is None else np.asarray(gt_root, dtype=np.float64)
    pred = pred - pred_root[:, None]
    gt = gt - gt_root[:, None]
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * MM)


def accel_error(pred: np.ndarray, gt: np.ndarray, fps: float = 30.0) -> float:
    """Mean acceleration error (m/s^2) from per-joint second differences."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 3:
        raise ValueError("acceleration error needs at least 3 frames")
    acc_pred = (pred[2:] - 2.0 * pred[1:-1] + pred[:-2]) * fps ** 2
    acc_gt = (gt[2:] - 2.0 * gt[1:-1] + gt[:-2]) * fps ** 2
    return float(np.linalg.norm(acc_pred - acc_gt, axis=-1).mean())


# Joint groups for the feature vector (indices into the 22-joint skeleton).
_LEG_JOINTS = np.array([1, 2, 4, 5, 7, 8, 10, 11])
_UPPER_JOINTS = np.array([3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21])

FEATURE_DIM = 16
# Indices that must vanish for a time-constant motion.
VELOCITY_FEATURE_IDX = (0, 1, 2, 3, 4, 5, 11, 12, 13, 14, 15)

FEATURE_NAMES = [
    "speed_mean", "speed_std", "accel_mean", "per_joint_speed_spread",
    "upper_speed_mean", "leg_speed_mean",
    "pelvis_height_mean", "pelvis_height_std",
    "joint_height_mean", "joint_height_std", "pelvis_height_min",
    "root_speed_mean", "root_speed_std",
    "turn_angle_mean", "turn_angle_std", "net_root_speed",
]


def kinematic_features(motion, body: StubBody) -> np.ndarray:
    """Fixed 16-dim kinematic descriptor of a motion (see FEATURE_NAMES).

    Velocity-derived entries (VELOCITY_FEATURE_IDX) are exactly zero for a
    time-constant motion; height statistics are taken from world joints.
    """
    joints = joints_from_motion(body, motion)  # (T, J, 3)
    fps = motion.fps
    vel = (joints[1:] - joints[:-1]) * fps
    speed = np.linalg.norm(vel, axis=-1)  # (T-1, J)
    acc = (joints[2:] - 2.0 * joints[1:-1] + joints[:-2]) * fps ** 2
    heights = joints[..., 1]
    root = joints[:, 0]
    root_v = (root[1:] - root[:-1]) * fps
    horiz = root_v[:, [0, 2]]
    horiz_speed = np.linalg.norm(horiz, axis=-1)
    moving = horiz_speed > 1e-6
    if moving[:-1].any() and moving[1:].any():
        headings = np.arctan2(horiz[:, 1], horiz[:, 0])
        dh = np.abs(np.angle(np.exp(1j * (headings[1:] - headings[:-1]))))
        dh = dh[moving[:-1] & moving[1:]]
        turn_mean, turn_std = float(dh.mean()), float(dh.std())
    else:
        turn_mean, turn_std = 0.0, 0.0
    duration = max(joints.shape[0] - 1, 1) / fps
    net = np.linalg.norm((root[-1] - root[0])[[0, 2]]) / duration
    return np.array([
        speed.mean(), speed.std(),
        np.linalg.norm(acc, axis=-1).mean(),
        speed.mean(axis=0).std(),
        speed[:, _UPPER_JOINTS].mean(),
        speed[:, _LEG_JOINTS].mean(),
        heights[:, 0].mean(), heights[:, 0].std(),
        heights.mean(), heights.std(), heights[:, 0].min(),
        horiz_speed.mean(), horiz_speed.std(),
        turn_mean, turn_std, net,
    ], dtype=np.float64)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = features.mean(axis=0)
    if features.shape[0] > 1:
        cov = np.cov(features, rowvar=False)
        cov = np.atleast_2d(cov)
    else:
        cov = np.zeros((features.shape[1], features.shape[1]))
    # Shrink toward a scaled identity when the sample is too small for a
    # well-conditioned covariance.
    if features.shape[0] <= features.shape[1]:
        cov = cov + np.eye(cov.shape[0]) * (1e-6 + 1e-3 * np.trace(cov) / cov.shape[0])
    return mu, cov


def fid(a: np.ndarray, b: np.ndarray) -> float:
    """Frechet distance between the Gaussian fits of two feature sets."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("fid needs at least 2 samples per set")
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    mu_a, cov_a = _stats(a)
    mu_b, cov_b = _stats(b)
    sqrt_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(sqrt_a @ cov_b @ sqrt_a)
    value = float(((mu_a - mu_b) ** 2).sum()
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    if value < -1e-8:
        raise ValueError(f"fid produced a large negative value ({value}); check inputs")
    return max(value, 0.0)


def diversity(features: np.ndarray) -> float:
    """Mean pairwise Euclidean distance over all unordered pairs."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = feats.shape[0]
    if n < 2:
        raise ValueError("diversity needs at least 2 samples")
    diff = feats[:, None] - feats[None]
    dist = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(n, k=1)
    return float(dist[iu].mean())
