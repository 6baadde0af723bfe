"""Motion sequences, the velocity/prefix-sum codec, channel packing, datasets.

A motion is stored as four per-frame parameter blocks (theta 63, beta 10,
phi 3, tau 3 -> 79 channels). The codec keeps frame 0 absolute and replaces
later frames by first differences; decoding restores absolutes by prefix sum
(accumulated in float64 so float32 round trips stay below 1e-5).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import POSE_DIM, SHAPE_DIM, canonicalize_axis_angle
from .tensorio import FormatError

CHANNELS = POSE_DIM + SHAPE_DIM + 3 + 3  # 79
UNIT_FRAMES = 16  # interleaving granularity shared with the video side

FAMILIES = ("walk", "wave", "squat", "smooth_noise")

_DATASET_MAGIC = b"VMDS\x01\x00"


@dataclass
class MotionSequence:
    theta: np.ndarray  # (T, 63) radians
    beta: np.ndarray   # (T, 10)
    phi: np.ndarray    # (T, 3) radians
    tau: np.ndarray    # (T, 3) meters
    fps: float = 30.0

    @property
    def frame_count(self) -> int:
        return self.theta.shape[0]

    def validate(self) -> None:
        frames = self.frame_count
        if frames < 1:
            raise ValueError("motion needs at least one frame")
        expected = {"theta": (frames, POSE_DIM), "beta": (frames, SHAPE_DIM),
                    "phi": (frames, 3), "tau": (frames, 3)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.theta.copy(), self.beta.copy(),
                              self.phi.copy(), self.tau.copy(), self.fps)


@dataclass
class VelocityEncodedMotion:
    """Same layout as MotionSequence; frames > 0 hold per-channel differences."""

    theta: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    fps: float = 30.0

    @property
    def frame_count(self) -> int:
        return self.theta.shape[0]


def velocity_encode(m: MotionSequence) -> VelocityEncodedMotion:
    """Frame 0 stays absolute; frame k>0 becomes m[k] - m[k-1] per channel."""
    def enc(a: np.ndarray) -> np.ndarray:
        out = a.astype(np.float32).copy()
        out[1:] = a[1:].astype(np.float64) - a[:-1].astype(np.float64)
        return out
    return VelocityEncodedMotion(enc(m.theta), enc(m.beta), enc(m.phi), enc(m.tau), m.fps)


def velocity_decode(v: VelocityEncodedMotion) -> MotionSequence:
    """Prefix-sum inverse of velocity_encode (accumulated in float64)."""
    def dec(a: np.ndarray) -> np.ndarray:
        return np.cumsum(a.astype(np.float64), axis=0).astype(np.float32)
    return MotionSequence(dec(v.theta), dec(v.beta), dec(v.phi), dec(v.tau), v.fps)


def channel_concat(m: MotionSequence) -> np.ndarray:
    """Stack parameter blocks along channels in theta|beta|phi|tau order (T, 79)."""
    return np.concatenate(
        [m.theta, m.beta, m.phi, m.tau], axis=1).astype(np.float32)


def channel_split(x: np.ndarray, fps: float = 30.0) -> MotionSequence:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != CHANNELS:
        raise FormatError(f"expected (T, {CHANNELS}) channel matrix, got {x.shape}")
    a, b = POSE_DIM, POSE_DIM + SHAPE_DIM
    return MotionSequence(
        theta=x[:, :a].astype(np.float32),
        beta=x[:, a:b].astype(np.float32),
        phi=x[:, b:b + 3].astype(np.float32),
        tau=x[:, b + 3:].astype(np.float32),
        fps=fps,
    )


def pad_to_unit(m: MotionSequence, unit: int = UNIT_FRAMES) -> MotionSequence:
    """Pad to a multiple of the 16-frame unit by repeating the last frame."""
    frames = m.frame_count
    pad = (-frames) % unit
    if pad == 0:
        return m
    def rep(a):
        return np.concatenate([a, np.repeat(a[-1:], pad, axis=0)], axis=0)
    return MotionSequence(rep(m.theta), rep(m.beta), rep(m.phi), rep(m.tau), m.fps)


# Joint-channel indices into the 21 articulated joints (joint k uses theta
# channels 3*(k-1) .. 3*(k-1)+2). Used by the procedural families.
_J = {name: idx for idx, name in enumerate([
    "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist"], start=1)}


def _theta_slice(theta: np.ndarray, joint: str) -> np.ndarray:
    k = _J[joint] - 1
    return theta[:, 3 * k:3 * k + 3]


def generate_procedural_motion(seed: int, frames: int, family: str,
                               fps: float = 30.0) -> MotionSequence:
    """Deterministic synthetic motion for one of the supported families.

    Per-frame joint angular velocity stays below 4 rad/s and root velocity
    below 2 m/s; beta is constant within a sequence up to <= 0.01 noise.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    if frames < 16:
        raise ValueError("procedural motions need at least 16 frames")
    rng = np.random.default_rng(np.random.SeedSequence([seed, FAMILIES.index(family)]))
    t = np.arange(frames, dtype=np.float64) / fps

    theta = np.zeros((frames, POSE_DIM))
    beta_base = rng.uniform(-1.0, 1.0, size=SHAPE_DIM)
    beta = beta_base[None] + rng.normal(0.0, 0.003, size=(frames, SHAPE_DIM))
    phi = np.zeros((frames, 3))
    tau = np.zeros((frames, 3))
    tau[:, 1] = 0.95  # pelvis resting height above ground

    if family == "walk":
        # amplitude * 2*pi*freq stays below the 4 rad/s joint-velocity cap
        freq = rng.uniform(0.8, 1.3)
        swing = rng.uniform(0.25, 0.45)
        arm = rng.uniform(0.15, 0.35)
        speed = rng.uniform(0.4, 0.9)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        leg = swing * np.sin(2.0 * np.pi * freq * t + phase)
        _theta_slice(theta, "left_hip")[:, 0] = leg
        _theta_slice(theta, "right_hip")[:, 0] = -leg
        _theta_slice(theta, "left_knee")[:, 0] = 0.5 * swing * (1.0 + np.sin(2.0 * np.pi * freq * t + phase + 0.8))
        _theta_slice(theta, "right_knee")[:, 0] = 0.5 * swing * (1.0 + np.sin(2.0 * np.pi * freq * t + phase + np.pi + 0.8))
        _theta_slice(theta, "left_shoulder")[:, 0] = -arm * np.sin(2.0 * np.pi * freq * t + phase)
        _theta_slice(theta, "right_shoulder")[:, 0] = arm * np.sin(2.0 * np.pi * freq * t + phase)
        # Strictly monotone forward progression: bob amplitude is capped well
        # below the ramp slope per frame.
        bob = min(0.02, 0.5 * speed / (2.0 * np.pi * freq))
        tau[:, 0] = speed * t + bob * np.sin(2.0 * np.pi * freq * t + phase)
        tau[:, 1] += 0.02 * np.sin(4.0 * np.pi * freq * t + phase)
    elif family == "wave":
        freq = rng.uniform(0.8, 1.3)
        raise_angle = rng.uniform(1.0, 1.5)
        wave_amp = rng.uniform(0.25, 0.4)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        # start from a random point of the raise so first frames differ
        start = rng.uniform(0.0, 1.0)
        ramp = np.clip(start + t * fps / 15.0, 0.0, 1.0)
        _theta_slice(theta, "right_shoulder")[:, 2] = -raise_angle * ramp
        _theta_slice(theta, "right_elbow")[:, 2] = wave_amp * ramp * np.sin(2.0 * np.pi * freq * t + phase)
        _theta_slice(theta, "head")[:, 2] = 0.05 * np.sin(2.0 * np.pi * 0.5 * t + phase)
    elif family == "squat":
        # ~1 Hz cycles so 64 frames at 30 fps cover >= 2 dips; a random phase
        # keeps first frames distinguishable across records.
        freq = rng.uniform(1.0, 1.2)
        depth = rng.uniform(0.5, 0.8)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        dip = 0.5 * (1.0 - np.cos(2.0 * np.pi * freq * t + phase))  # in [0, 1]
        _theta_slice(theta, "left_knee")[:, 0] = 1.2 * depth * dip
        _theta_slice(theta, "right_knee")[:, 0] = 1.2 * depth * dip
        _theta_slice(theta, "left_hip")[:, 0] = -0.9 * depth * dip
        _theta_slice(theta, "right_hip")[:, 0] = -0.9 * depth * dip
        _theta_slice(theta, "spine1")[:, 0] = 0.3 * depth * dip
        tau[:, 1] -= 0.28 * depth * dip
        _theta_slice(theta, "left_shoulder")[:, 2] = 0.4 * depth * dip
        _theta_slice(theta, "right_shoulder")[:, 2] = -0.4 * depth * dip
    else:  # smooth_noise
        raw = rng.normal(0.0, 1.0, size=(frames + 24, POSE_DIM))
        kernel = np.hanning(25)
        kernel /= kernel.sum()
        smooth = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, raw)
        theta += 0.3 * smooth[:frames]
        phi[:, 1] = 0.2 * np.sin(2.0 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 6.28))
        drift = rng.normal(0.0, 1.0, size=(frames + 24, 3))
        tau += 0.08 * np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, drift)[:frames]

    # Secondary motion: independent slow oscillators on joints the family
    # pattern leaves free. They give every record its own evolving posture
    # while staying far inside the velocity caps (<= 1.3 rad/s each).
    secondary = {
        "walk": ("spine1", "spine2", "spine3", "neck", "head", "left_collar",
                 "right_collar", "left_elbow", "right_elbow", "left_wrist",
                 "right_wrist", "left_ankle", "right_ankle"),
        "wave": ("spine1", "spine2", "spine3", "neck", "left_collar",
                 "left_shoulder", "left_elbow", "left_wrist", "left_hip",
                 "right_hip", "left_ankle", "right_ankle", "left_knee"),
        "squat": ("neck", "head", "left_collar", "right_collar", "left_elbow",
                  "right_elbow", "left_wrist", "right_wrist", "left_ankle",
                  "right_ankle", "spine2", "spine3", "left_foot"),
        "smooth_noise": (),
    }[family]
    for joint in secondary:
        axis = int(rng.integers(0, 3))
        amp = rng.uniform(0.08, 0.18)
        freq = rng.uniform(0.4, 1.1)
        phase0 = rng.uniform(0.0, 2.0 * np.pi)
        _theta_slice(theta, joint)[:, axis] += amp * np.sin(2.0 * np.pi * freq * t + phase0)

    theta = canonicalize_axis_angle(theta.reshape(frames, -1, 3)).reshape(frames, POSE_DIM)
    phi = canonicalize_axis_angle(phi)
    m = MotionSequence(theta.astype(np.float32), beta.astype(np.float32),
                       phi.astype(np.float32), tau.astype(np.float32), fps)
    m.validate()
    return m


@dataclass
class MotionRecord:
    record_id: str
    family: str
    seed: int
    motion: MotionSequence


@dataclass
class MotionDataset:
    records: list[MotionRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def motions(self) -> list[MotionSequence]:
        return [r.motion for r in self.records]


def generate_dataset(count: int, frames: int, seed: int,
                     families: tuple[str, ...] = FAMILIES, fps: float = 30.0,
                     meta: dict | None = None) -> MotionDataset:
    """Round-robin over families, one derived seed per record."""
    records = []
    for i in range(count):
        family = families[i % len(families)]
        rec_seed = seed * 1_000_003 + i
        motion = generate_procedural_motion(rec_seed, frames, family, fps)
        records.append(MotionRecord(f"{family}-{i:05d}", family, rec_seed, motion))
    return MotionDataset(records, meta=dict(meta or {}, count=count, frames=frames, seed=seed))


def motion_checksum(m: MotionSequence) -> str:
    h = hashlib.sha256()
    for arr in (m.theta, m.beta, m.phi, m.tau):
        h.update(np.ascontiguousarray(arr.astype("<f4")).tobytes())
    return h.hexdigest()[:16]


def save_dataset(dataset: MotionDataset, path: str | Path) -> None:
    """JSON manifest + per-record float32 little-endian blocks, one file."""
    blocks = []
    manifest_records = []
    offset = 0
    for rec in dataset.records:
        m = rec.motion
        block = b"".join(
            np.ascontiguousarray(a.astype("<f4")).tobytes()
            for a in (m.theta, m.beta, m.phi, m.tau))
        manifest_records.append({
            "id": rec.record_id, "family": rec.family, "seed": rec.seed,
            "frames": m.frame_count, "fps": m.fps,
            "offset": offset, "nbytes": len(block),
            "checksum": motion_checksum(m),
        })
        blocks.append(block)
        offset += len(block)
    manifest = json.dumps({"meta": dataset.meta, "records": manifest_records}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_DATASET_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for block in blocks:
            f.write(block)


def load_dataset(path: str | Path) -> MotionDataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(_DATASET_MAGIC) + 8 or raw[: len(_DATASET_MAGIC)] != _DATASET_MAGIC:
        raise FormatError(f"{path}: not a motion dataset (bad magic)")
    (manifest_len,) = struct.unpack_from("<Q", raw, len(_DATASET_MAGIC))
    body_start = len(_DATASET_MAGIC) + 8 + manifest_len
    if len(raw) < body_start:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[len(_DATASET_MAGIC) + 8: body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest ({exc})") from exc
    records = []
    for idx, entry in enumerate(manifest["records"]):
        start = body_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise FormatError(f"{path}: truncated data at record {idx} ({entry['id']})")
        frames = entry["frames"]
        sizes = [frames * POSE_DIM, frames * SHAPE_DIM, frames * 3, frames * 3]
        if entry["nbytes"] != 4 * sum(sizes):
            raise FormatError(f"{path}: bad block size at record {idx} ({entry['id']})")
        flat = np.frombuffer(raw[start:end], dtype="<f4")
        cuts = np.cumsum([0] + sizes)
        m = MotionSequence(
            theta=flat[cuts[0]:cuts[1]].reshape(frames, POSE_DIM).copy(),
            beta=flat[cuts[1]:cuts[2]].reshape(frames, SHAPE_DIM).copy(),
            phi=flat[cuts[2]:cuts[3]].reshape(frames, 3).copy(),
            tau=flat[cuts[3]:cuts[4]].reshape(frames, 3).copy(),
            fps=entry["fps"],
        )
        records.append(MotionRecord(entry["id"], entry["family"], entry["seed"], m))
    return MotionDataset(records, meta=manifest.get("meta", {}))
