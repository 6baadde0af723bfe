"""Synthetic video side: capsule rasterizer and a toy patch-VQ video tokenizer.

The renderer projects the stub body orthographically and draws each bone as a
depth-ordered 2D capsule, giving deterministic paired clips for any motion.
The tokenizer quantizes non-overlapping spatiotemporal patches directly in
pixel space against a learned codebook, so token round trips are exact by
construction; defaults compress a 16-frame 64x64 clip into a 2x4x4 grid.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .body import StubBody, joints_from_motion
from .motion import MotionSequence, UNIT_FRAMES
from .tensorio import load_tensors, save_tensors


@dataclass
class RenderConfig:
    height: int = 64
    width: int = 64
    half_extent: float = 1.15        # meters from image center to the top edge
    center: tuple[float, float] = (0.0, 0.85)  # world (x, y) at image center
    background: float = 0.0

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.half_extent / self.height


@dataclass
class VideoClip:
    frames: np.ndarray   # (T, H, W, 3) float32 in [0, 1]
    fps: float = 30.0
    meta: dict = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]


def _bone_palette(count: int) -> np.ndarray:
    colors = []
    for k in range(count):
        hue = (k * 0.61803) % 1.0
        value = 0.55 + 0.4 * ((k % 3) / 2.0)
        colors.append(colorsys.hsv_to_rgb(hue, 0.6, value))
    return np.asarray(colors, dtype=np.float64)


def render_motion(m: MotionSequence, body: StubBody,
                  cfg: RenderConfig | None = None) -> VideoClip:
    """Orthographic capsule rasterization of a motion, deterministic."""
    cfg = cfg or RenderConfig()
    joints = joints_from_motion(body, m)  # (T, J, 3)
    frames_count = joints.shape[0]
    h, w = cfg.height, cfg.width
    palette = _bone_palette(body.joint_count - 1)

    cols = (np.arange(w) + 0.5) / w
    rows = (np.arange(h) + 0.5) / h
    px = cfg.center[0] + (cols - 0.5) * 2.0 * cfg.half_extent * (w / h)
    py = cfg.center[1] + (0.5 - rows) * 2.0 * cfg.half_extent
    grid_x = np.broadcast_to(px[None, :], (h, w))
    grid_y = np.broadcast_to(py[:, None], (h, w))

    bone_children = np.arange(1, body.joint_count)
    bone_parents = body.parents[bone_children]
    bone_radius = np.clip(
        0.28 * np.linalg.norm(body.rest_offsets[bone_children], axis=1), 0.03, 0.08)

    out = np.full((frames_count, h, w, 3), cfg.background, dtype=np.float32)
    foreground_frames = 0
    for t in range(frames_count):
        a = joints[t, bone_parents]  # (B, 3)
        b = joints[t, bone_children]
        ab = b - a
        denom = np.maximum((ab[:, 0] ** 2 + ab[:, 1] ** 2), 1e-12)
        dx = grid_x[None] - a[:, 0, None, None]
        dy = grid_y[None] - a[:, 1, None, None]
        s = np.clip((dx * ab[:, 0, None, None] + dy * ab[:, 1, None, None])
                    / denom[:, None, None], 0.0, 1.0)
        ex = dx - s * ab[:, 0, None, None]
        ey = dy - s * ab[:, 1, None, None]
        dist = np.sqrt(ex ** 2 + ey ** 2)
        depth = a[:, 2, None, None] + s * ab[:, 2, None, None]
        covered = dist <= bone_radius[:, None, None]
        depth = np.where(covered, depth, -np.inf)
        best = depth.argmax(axis=0)
        hit = covered.any(axis=0)
        if hit.any():
            foreground_frames += 1
            shade = 1.0 - 0.5 * np.clip(dist[best, np.arange(h)[:, None], np.arange(w)[None]]
                                        / bone_radius[best], 0.0, 1.0)
            color = palette[best] * shade[..., None]
            out[t][hit] = color[hit].astype(np.float32)
    meta = {
        "out_of_frame_warning": bool(foreground_frames < 0.5 * frames_count),
        "render": asdict(cfg),
    }
    return VideoClip(np.clip(out, 0.0, 1.0), fps=m.fps, meta=meta)


def save_clip(path: str | Path, clip: VideoClip) -> None:
    save_tensors(path, {"frames": clip.frames.astype(np.float32)},
                 meta={"kind": "video_clip", "fps": clip.fps, "clip_meta": clip.meta})


def load_clip(path: str | Path) -> VideoClip:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "video_clip":
        raise ValueError(f"{path}: not a clip file")
    return VideoClip(tensors["frames"], fps=meta["fps"], meta=meta.get("clip_meta", {}))


@dataclass
class VideoTokenizerConfig:
    vocab_size: int = 1024
    f_t: int = 8
    f_s: int = 16
    frame_height: int = 64
    frame_width: int = 64
    commitment: float = 0.25
    lr: float = 5e-3
    batch_size: int = 256          # patches per step
    steps: int = 400
    dead_code_interval: int = 50

    @property
    def patch_dim(self) -> int:
        return self.f_t * self.f_s * self.f_s * 3

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.frame_height % self.f_s or self.frame_width % self.f_s:
            raise ValueError("frame size must be divisible by the spatial factor")
        if UNIT_FRAMES % self.f_t:
            raise ValueError("16-frame units must be divisible by the temporal factor")


@dataclass
class VideoTokens:
    ids: np.ndarray                  # (t', h', w') int64
    factors: tuple[int, int]         # (f_t, f_s)

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(self.ids.shape)

    @property
    def token_count(self) -> int:
        return int(self.ids.size)


def patchify(frames: np.ndarray, f_t: int, f_s: int) -> np.ndarray:
    """(T, H, W, 3) -> (t', h', w', f_t*f_s*f_s*3) non-overlapping patches."""
    t, h, w, c = frames.shape
    if t % f_t or h % f_s or w % f_s:
        raise ValueError(f"clip dims {(t, h, w)} not divisible by factors {(f_t, f_s)}")
    x = frames.reshape(t // f_t, f_t, h // f_s, f_s, w // f_s, f_s, c)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return x.reshape(t // f_t, h // f_s, w // f_s, f_t * f_s * f_s * c)


def unpatchify(patches: np.ndarray, f_t: int, f_s: int) -> np.ndarray:
    tp, hp, wp, _ = patches.shape
    x = patches.reshape(tp, hp, wp, f_t, f_s, f_s, 3)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(tp * f_t, hp * f_s, wp * f_s, 3)


class VideoVQ(nn.Module):
    """Patch-space vector quantizer: the codebook lives in pixel-patch space."""

    def __init__(self, cfg: VideoTokenizerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.codebook = nn.Embedding(cfg.vocab_size, cfg.patch_dim)
        nn.init.uniform_(self.codebook.weight, 0.0, 1.0)
        self.register_buffer("usage_counts", torch.zeros(cfg.vocab_size, dtype=torch.long))

    def nearest(self, patches: torch.Tensor) -> torch.Tensor:
        """Nearest codebook ids for (N, patch_dim) rows; ties to lowest index."""
        book = self.codebook.weight.detach()
        book_sq = book.pow(2).sum(dim=1)
        ids = torch.empty(patches.shape[0], dtype=torch.long)
        for start in range(0, patches.shape[0], 512):
            chunk = patches[start:start + 512]
            dists = chunk.pow(2).sum(dim=1, keepdim=True) - 2.0 * chunk @ book.T + book_sq
            ids[start:start + 512] = dists.argmin(dim=1)
        return ids


def video_encode(model: VideoVQ, clip: VideoClip) -> VideoTokens:
    cfg = model.cfg
    patches = patchify(clip.frames, cfg.f_t, cfg.f_s)
    grid = patches.shape[:3]
    with torch.no_grad():
        ids = model.nearest(torch.from_numpy(
            patches.reshape(-1, cfg.patch_dim).astype(np.float32)))
    return VideoTokens(ids.numpy().reshape(grid).astype(np.int64), (cfg.f_t, cfg.f_s))


def video_decode(model: VideoVQ, tokens: VideoTokens, fps: float = 30.0) -> VideoClip:
    cfg = model.cfg
    ids = np.asarray(tokens.ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= cfg.vocab_size:
        raise ValueError("video token id out of range")
    with torch.no_grad():
        patches = model.codebook(torch.from_numpy(ids.reshape(-1))).numpy()
    patches = patches.reshape(*ids.shape, cfg.patch_dim)
    frames = np.clip(unpatchify(patches, cfg.f_t, cfg.f_s), 0.0, 1.0)
    return VideoClip(frames.astype(np.float32), fps=fps, meta={"decoded": True})


def encode_image(model: VideoVQ, image: np.ndarray) -> np.ndarray:
    """Tokenize a single (H, W, 3) image by tiling it over one temporal patch."""
    tiled = np.repeat(image[None], model.cfg.f_t, axis=0)
    tokens = video_encode(model, VideoClip(tiled.astype(np.float32)))
    return tokens.ids[0]


def train_video_tokenizer(clips: list[VideoClip], cfg: VideoTokenizerConfig,
                          seed: int, log_every: int = 50,
                          log_fn=None) -> tuple["VideoVQ", list[dict]]:
    """Codebook learning on pixel patches with dead-code reinitialization.

    The identity patch embedding means only the codebook trains: the l1
    reconstruction and the quantization pull term both move entries toward
    the patch distribution. Weights stay clamped to [0, 1] so decoded clips
    equal raw codebook lookups and token round trips are exact.
    """
    if not clips:
        raise ValueError("empty clip set")
    cfg.validate()
    torch.manual_seed(seed)
    model = VideoVQ(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed ^ 0x5EED)

    all_patches = np.concatenate([
        patchify(c.frames, cfg.f_t, cfg.f_s).reshape(-1, cfg.patch_dim) for c in clips])
    data = torch.from_numpy(all_patches.astype(np.float32))
    history: list[dict] = []
    window_usage = torch.zeros(cfg.vocab_size, dtype=torch.long)

    for step in range(cfg.steps):
        idx = torch.randint(0, data.shape[0], (min(cfg.batch_size, data.shape[0]),),
                            generator=gen)
        batch = data[idx]
        with torch.no_grad():
            ids = model.nearest(batch)
        quantized = model.codebook(ids)
        rec = (quantized - batch).abs().mean()
        code = (batch - quantized).pow(2).mean()
        commit = cfg.commitment * (batch - quantized.detach()).pow(2).mean()
        loss = rec + code + commit
        if not torch.isfinite(loss):
            raise RuntimeError(f"video tokenizer diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            model.codebook.weight.clamp_(0.0, 1.0)

        counts = torch.bincount(ids, minlength=cfg.vocab_size)
        window_usage += counts
        model.usage_counts += counts
        if cfg.dead_code_interval and (step + 1) % cfg.dead_code_interval == 0:
            dead = (window_usage == 0).nonzero(as_tuple=True)[0]
            if len(dead) > 0:
                with torch.no_grad():
                    pick = torch.randint(0, data.shape[0], (len(dead),), generator=gen)
                    noise = 0.005 * torch.rand(len(dead), cfg.patch_dim, generator=gen)
                    model.codebook.weight[dead] = (data[pick] + noise).clamp_(0.0, 1.0)
            window_usage.zero_()

        if step % log_every == 0 or step == cfg.steps - 1:
            record = {"step": step, "loss": float(loss.item()), "rec": float(rec.item()),
                      "batch_utilization": float((counts > 0).sum().item()) / cfg.vocab_size}
            history.append(record)
            if log_fn is not None:
                log_fn(record)
    return model, history


def save_video_tokenizer(path: str | Path, model: VideoVQ, meta: dict | None = None) -> None:
    tensors = {
        "codebook.weight": model.codebook.weight.detach().numpy().astype(np.float32),
        "usage_counts": model.usage_counts.numpy().astype(np.int64),
    }
    header = {"kind": "video_tokenizer", "config": asdict(model.cfg)}
    header.update(meta or {})
    save_tensors(path, tensors, meta=header)


def load_video_tokenizer(path: str | Path) -> tuple[VideoVQ, dict]:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "video_tokenizer":
        raise ValueError(f"{path}: not a video tokenizer checkpoint")
    cfg = VideoTokenizerConfig(**meta["config"])
    model = VideoVQ(cfg)
    model.load_state_dict({name: torch.from_numpy(arr) for name, arr in tensors.items()})
    return model, meta
