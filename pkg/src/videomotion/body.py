"""Surrogate parametric body: 22-joint skeleton, linear shape space, capsule mesh.

Parameter layout is SMPL-X body compatible (63 joint-rotation channels, 10
shape coefficients, 3 root-orientation channels, 3 translation channels) but
the geometry itself is a procedurally built stand-in, so no licensed asset is
required. Units are meters throughout; metric reporting converts to mm.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorio import load_tensors, save_tensors

JOINT_NAMES = [
    "pelvis",
    "left_hip", "right_hip", "spine1",
    "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3",
    "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
]

PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19],
    dtype=np.int64,
)

# Rest offsets from parent, meters, y-up, roughly adult proportions.
REST_OFFSETS = np.array([
    [0.000, 0.000, 0.000],   # pelvis (root, pinned at origin)
    [-0.090, -0.050, 0.000],  # left_hip
    [0.090, -0.050, 0.000],   # right_hip
    [0.000, 0.110, 0.000],    # spine1
    [0.000, -0.400, 0.000],   # left_knee
    [0.000, -0.400, 0.000],   # right_knee
    [0.000, 0.120, 0.000],    # spine2
    [0.000, -0.410, 0.000],   # left_ankle
    [0.000, -0.410, 0.000],   # right_ankle
    [0.000, 0.120, 0.000],    # spine3
    [0.000, -0.060, 0.110],   # left_foot
    [0.000, -0.060, 0.110],   # right_foot
    [0.000, 0.090, 0.000],    # neck
    [-0.080, 0.050, 0.000],   # left_collar
    [0.080, 0.050, 0.000],    # right_collar
    [0.000, 0.110, 0.000],    # head
    [-0.110, 0.000, 0.000],   # left_shoulder
    [0.110, 0.000, 0.000],    # right_shoulder
    [-0.270, 0.000, 0.000],   # left_elbow
    [0.270, 0.000, 0.000],    # right_elbow
    [-0.250, 0.000, 0.000],   # left_wrist
    [0.250, 0.000, 0.000],    # right_wrist
], dtype=np.float64)

JOINT_COUNT = 22
SHAPE_DIM = 10
POSE_DIM = 3 * (JOINT_COUNT - 1)  # 63
MAX_ABS_SHAPE = 3.0


def axis_angle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for axis-angle vectors; supports (..., 3) batches."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"axis-angle must have last dim 3, got {v.shape}")
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    # Guard the angle->axis division; the small-angle branch below takes over.
    safe = np.where(angle < 1e-12, 1.0, angle)
    axis = v / safe
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    skew = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    a = angle[..., None]
    eye = np.broadcast_to(np.eye(3), skew.shape)
    rot = eye + np.sin(a) * skew + (1.0 - np.cos(a)) * (skew @ skew)
    small = (angle[..., None] < 1e-12)
    # For tiny angles skew is built from the raw vector: R = I + [v]x + [v]x^2/2.
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    skew_raw = np.stack([
        np.stack([zero, -vz, vy], axis=-1),
        np.stack([vz, zero, -vx], axis=-1),
        np.stack([-vy, vx, zero], axis=-1),
    ], axis=-2)
    rot_small = eye + skew_raw + 0.5 * (skew_raw @ skew_raw)
    return np.where(small, rot_small, rot)


def matrix_to_axis_angle(rot: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues (log map) for a single 3x3 rotation matrix."""
    rot = np.asarray(rot, dtype=np.float64)
    cos = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-8:
        return np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]) / 2.0
    if np.pi - angle < 1e-6:
        # Near pi: axis from the diagonal of (R + I) / 2.
        m = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        axis[1] = np.copysign(axis[1], m[0, 1]) if axis[0] > 1e-6 else axis[1]
        axis[2] = np.copysign(axis[2], m[0, 2]) if axis[0] > 1e-6 else np.copysign(axis[2], m[1, 2])
        norm = np.linalg.norm(axis)
        axis = axis / (norm if norm > 0 else 1.0)
        return axis * angle
    axis = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return axis / (2.0 * np.sin(angle)) * angle


def canonicalize_axis_angle(v: np.ndarray) -> np.ndarray:
    """Wrap axis-angle rotations so every vector norm lands in [0, pi]."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    wrapped = np.mod(angle, 2.0 * np.pi)
    # Angles beyond pi flip to the antipodal axis with angle 2*pi - a.
    flip = wrapped > np.pi
    target = np.where(flip, wrapped - 2.0 * np.pi, wrapped)
    scale = np.where(angle < 1e-12, 1.0, target / np.where(angle < 1e-12, 1.0, angle))
    return v * scale


@dataclass(frozen=True)
class FramePose:
    """One frame of body parameters: 63 joint channels, 10 shape, 3+3 root."""

    theta: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray

    def validate(self) -> None:
        if self.theta.shape != (POSE_DIM,) or self.beta.shape != (SHAPE_DIM,):
            raise ValueError("bad pose/shape dimensions")
        if self.phi.shape != (3,) or self.tau.shape != (3,):
            raise ValueError("bad root dimensions")
        for arr in (self.theta, self.beta, self.phi, self.tau):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite pose parameters")
        norms = np.linalg.norm(self.theta.reshape(-1, 3), axis=-1)
        if norms.max(initial=0.0) > np.pi + 1e-6 or np.linalg.norm(self.phi) > np.pi + 1e-6:
            raise ValueError("axis-angle norms exceed pi; canonicalize first")


class StubBody:
    """Immutable surrogate body: skeleton, linear shape basis, skinned capsule mesh."""

    def __init__(
        self,
        parents: np.ndarray,
        rest_offsets: np.ndarray,
        shape_basis: np.ndarray,
        template_vertices: np.ndarray,
        skin_weights: np.ndarray,
    ):
        self.joint_count = len(parents)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.rest_offsets = np.asarray(rest_offsets, dtype=np.float64)
        self.shape_basis = np.asarray(shape_basis, dtype=np.float64)
        self.template_vertices = np.asarray(template_vertices, dtype=np.float64)
        self.skin_weights = np.asarray(skin_weights, dtype=np.float64)
        self._check()
        rest = rest_joints(self, np.zeros(SHAPE_DIM))
        inv = np.tile(np.eye(4), (self.joint_count, 1, 1))
        inv[:, :3, 3] = -rest
        self.rest_transforms_inv = inv  # template-space bind inverse (beta = 0)
        for arr in (self.parents, self.rest_offsets, self.shape_basis,
                    self.template_vertices, self.skin_weights, self.rest_transforms_inv):
            arr.setflags(write=False)

    def _check(self) -> None:
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for k in range(1, self.joint_count):
            if not 0 <= self.parents[k] < k:
                raise ValueError("parents must satisfy parents[k] < k")
        row_sums = self.skin_weights.sum(axis=1)
        if np.any(self.skin_weights < 0) or np.max(np.abs(row_sums - 1.0)) > 1e-6:
            raise ValueError("skin weight rows must be non-negative and sum to 1")

    @property
    def vertex_count(self) -> int:
        return len(self.template_vertices)


def rest_joints(body: StubBody, beta: np.ndarray) -> np.ndarray:
    """Zero-pose joint positions for shape coefficients beta, root at origin."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (SHAPE_DIM,):
        raise ValueError(f"beta must have shape ({SHAPE_DIM},)")
    if np.max(np.abs(beta)) > MAX_ABS_SHAPE + 1e-9:
        raise ValueError(f"|beta| must be <= {MAX_ABS_SHAPE} (bone lengths unbounded otherwise)")
    offsets = body.rest_offsets + np.einsum("i,ikx->kx", beta, body.shape_basis)
    joints = np.zeros((body.joint_count, 3))
    for k in range(1, body.joint_count):
        joints[k] = joints[body.parents[k]] + offsets[k]
    return joints


def forward_kinematics(body: StubBody, pose: FramePose) -> tuple[np.ndarray, np.ndarray]:
    """World joint positions and per-joint 4x4 transforms for one frame."""
    pose.validate()
    offsets = body.rest_offsets + np.einsum("i,ikx->kx", pose.beta, body.shape_basis)
    rots = np.empty((body.joint_count, 3, 3))
    rots[0] = axis_angle_to_matrix(pose.phi)
    rots[1:] = axis_angle_to_matrix(pose.theta.reshape(-1, 3))
    transforms = np.empty((body.joint_count, 4, 4))
    transforms[:] = np.eye(4)
    transforms[0, :3, :3] = rots[0]
    transforms[0, :3, 3] = pose.tau + offsets[0]
    for k in range(1, body.joint_count):
        local = np.eye(4)
        local[:3, :3] = rots[k]
        local[:3, 3] = offsets[k]
        transforms[k] = transforms[body.parents[k]] @ local
    return transforms[:, :3, 3].copy(), transforms


def skin_vertices(body: StubBody, joint_transforms: np.ndarray) -> np.ndarray:
    """Linear blend skinning of the template mesh under the given transforms."""
    rel = joint_transforms @ body.rest_transforms_inv  # (J, 4, 4)
    verts_h = np.concatenate(
        [body.template_vertices, np.ones((body.vertex_count, 1))], axis=1)
    per_joint = np.einsum("jab,vb->jva", rel, verts_h)[..., :3]  # (J, V, 3)
    return np.einsum("vj,jvx->vx", body.skin_weights, per_joint)


def joints_from_motion(body: StubBody, motion) -> np.ndarray:
    """Per-frame forward kinematics over a whole sequence, vectorized over time."""
    theta = np.asarray(motion.theta, dtype=np.float64)
    beta = np.asarray(motion.beta, dtype=np.float64)
    phi = np.asarray(motion.phi, dtype=np.float64)
    tau = np.asarray(motion.tau, dtype=np.float64)
    frames = theta.shape[0]
    offsets = body.rest_offsets[None] + np.einsum("ti,ikx->tkx", beta, body.shape_basis)
    rots = np.empty((frames, body.joint_count, 3, 3))
    rots[:, 0] = axis_angle_to_matrix(phi)
    rots[:, 1:] = axis_angle_to_matrix(theta.reshape(frames, -1, 3))
    world_rot = np.empty_like(rots)
    world_pos = np.empty((frames, body.joint_count, 3))
    world_rot[:, 0] = rots[:, 0]
    world_pos[:, 0] = tau + offsets[:, 0]
    for k in range(1, body.joint_count):
        p = body.parents[k]
        world_rot[:, k] = world_rot[:, p] @ rots[:, k]
        world_pos[:, k] = world_pos[:, p] + np.einsum("tab,tb->ta", world_rot[:, p], offsets[:, k])
    return world_pos


def transforms_from_motion(body: StubBody, motion) -> np.ndarray:
    """Per-frame joint transforms (frames, J, 4, 4) for skinning whole sequences."""
    theta = np.asarray(motion.theta, dtype=np.float64)
    frames = theta.shape[0]
    offsets = body.rest_offsets[None] + np.einsum(
        "ti,ikx->tkx", np.asarray(motion.beta, dtype=np.float64), body.shape_basis)
    rots = np.empty((frames, body.joint_count, 3, 3))
    rots[:, 0] = axis_angle_to_matrix(np.asarray(motion.phi, dtype=np.float64))
    rots[:, 1:] = axis_angle_to_matrix(theta.reshape(frames, -1, 3))
    out = np.empty((frames, body.joint_count, 4, 4))
    out[:] = np.eye(4)
    out[:, 0, :3, :3] = rots[:, 0]
    out[:, 0, :3, 3] = np.asarray(motion.tau, dtype=np.float64) + offsets[:, 0]
    for k in range(1, body.joint_count):
        p = body.parents[k]
        out[:, k, :3, :3] = out[:, p, :3, :3] @ rots[:, k]
        out[:, k, :3, 3] = out[:, p, :3, 3] + np.einsum(
            "tab,tb->ta", out[:, p, :3, :3], offsets[:, k])
    return out


def vertices_from_motion(body: StubBody, motion) -> np.ndarray:
    """Skinned vertices per frame (frames, V, 3)."""
    transforms = transforms_from_motion(body, motion)
    rel = transforms @ body.rest_transforms_inv[None]  # (T, J, 4, 4)
    verts_h = np.concatenate(
        [body.template_vertices, np.ones((body.vertex_count, 1))], axis=1)
    per_joint = np.einsum("tjab,vb->tjva", rel, verts_h)[..., :3]
    return np.einsum("vj,tjvx->tvx", body.skin_weights, per_joint)


def _capsule_radius(bone_length: float) -> float:
    return float(np.clip(0.28 * bone_length, 0.03, 0.08))


def build_default_body(seed: int = 0, ring_segments: int = 8) -> StubBody:
    """Construct the default 22-joint body with a deterministic capsule mesh.

    The shape basis scales bones mostly along their rest direction with small
    lateral components, capped so bone lengths stay positive for |beta| <= 3.
    """
    rng = np.random.default_rng(seed)
    shape_basis = np.zeros((SHAPE_DIM, JOINT_COUNT, 3))
    lengths = np.linalg.norm(REST_OFFSETS, axis=1)
    for i in range(SHAPE_DIM):
        along = rng.uniform(-1.0, 1.0, size=JOINT_COUNT)
        lateral = rng.normal(0.0, 0.3, size=(JOINT_COUNT, 3))
        for k in range(1, JOINT_COUNT):
            direction = REST_OFFSETS[k] / lengths[k]
            vec = along[k] * direction + 0.3 * lateral[k]
            vec = vec / max(np.linalg.norm(vec), 1e-9)
            # Cap per-coefficient contribution at 2% of bone length: the worst
            # case sum over 10 coefficients at |beta|=3 then moves the offset by
            # at most 0.6 * length, keeping it strictly positive.
            shape_basis[i, k] = vec * 0.02 * lengths[k]
    shape_basis[:, 0] = 0.0  # root stays pinned at the origin

    joints = np.zeros((JOINT_COUNT, 3))
    for k in range(1, JOINT_COUNT):
        joints[k] = joints[PARENTS[k]] + REST_OFFSETS[k]

    verts: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    angles = np.linspace(0.0, 2.0 * np.pi, ring_segments, endpoint=False)
    for child in range(1, JOINT_COUNT):
        parent = PARENTS[child]
        a, b = joints[parent], joints[child]
        axis = b - a
        length = np.linalg.norm(axis)
        axis = axis / length
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        radius = _capsule_radius(length)
        for frac, blend in ((0.15, "parent"), (0.5, None), (0.85, "child")):
            center = a + frac * (b - a)
            for ang in angles:
                verts.append(center + radius * (np.cos(ang) * e1 + np.sin(ang) * e2))
                w = np.zeros(JOINT_COUNT)
                if blend == "parent" and PARENTS[parent] >= 0:
                    w[parent] = 0.7
                    w[PARENTS[parent]] = 0.3
                elif blend == "child":
                    w[parent] = 0.7
                    w[child] = 0.3
                else:
                    w[parent] = 1.0
                weights.append(w)
        for endpoint, joint in ((a, parent), (b, parent)):
            verts.append(endpoint + radius * axis * (0.2 if joint == parent else -0.2))
            w = np.zeros(JOINT_COUNT)
            w[parent] = 1.0
            weights.append(w)
    # Quantize through float32 so a body reloaded from its (float32) file is
    # bit-identical to a freshly built one.
    return StubBody(
        parents=PARENTS,
        rest_offsets=REST_OFFSETS.astype(np.float32).astype(np.float64),
        shape_basis=shape_basis.astype(np.float32).astype(np.float64),
        template_vertices=np.array(verts, dtype=np.float32).astype(np.float64),
        skin_weights=np.array(weights, dtype=np.float32).astype(np.float64),
    )


def save_body(path: str | Path, body: StubBody, seed: int | None = None) -> None:
    save_tensors(path, {
        "parents": body.parents.astype(np.int64),
        "rest_offsets": body.rest_offsets.astype(np.float32),
        "shape_basis": body.shape_basis.astype(np.float32),
        "template_vertices": body.template_vertices.astype(np.float32),
        "skin_weights": body.skin_weights.astype(np.float32),
    }, meta={"kind": "stub_body", "seed": seed})


def load_body(path: str | Path) -> StubBody:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "stub_body":
        raise ValueError(f"{path}: not a body file")
    return StubBody(
        parents=tensors["parents"],
        rest_offsets=tensors["rest_offsets"].astype(np.float64),
        shape_basis=tensors["shape_basis"].astype(np.float64),
        template_vertices=tensors["template_vertices"].astype(np.float64),
        skin_weights=tensors["skin_weights"].astype(np.float64),
    )
