"""VQ motion tokenizer: temporal-expansion encoder, codebook, expert decoders.

Works on the 79-channel velocity representation of a motion. The encoder
expands T frames into T * expansion latent steps (strided transposed convs),
each latent step is snapped to its nearest codebook entry, and four expert
decoder heads (theta/beta/phi/tau) map the quantized latents back to
velocity-space channels at frame rate; prefix summing restores absolutes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F_t

from .motion import (
    CHANNELS,
    UNIT_FRAMES,
    MotionSequence,
    channel_concat,
    channel_split,
    velocity_decode,
    velocity_encode,
)
from .body import POSE_DIM, SHAPE_DIM
from .tensorio import load_tensors, save_tensors

HEAD_WIDTHS = {"theta": POSE_DIM, "beta": SHAPE_DIM, "phi": 3, "tau": 3}


@dataclass
class TokenizerConfig:
    expansion: int = 36          # latent steps per frame (reciprocal scaling factor)
    codebook_size: int = 512
    code_dim: int = 32
    hidden: int = 128
    conv_blocks: int = 4
    kernel_size: int = 3
    commitment: float = 0.25
    recon_weights: tuple[float, float, float] = (1.0, 0.5, 0.25)
    lr: float = 1e-3
    lr_final_fraction: float = 0.05   # cosine decay floor as a fraction of lr
    batch_size: int = 8
    steps: int = 600
    dead_code_interval: int = 200

    def validate(self) -> None:
        if self.expansion < 1 or int(self.expansion) != self.expansion:
            raise ValueError("expansion must be a positive integer")
        if self.codebook_size < 2 or self.code_dim < 2:
            raise ValueError("codebook_size and code_dim must be >= 2")


def expansion_stages(expansion: int) -> list[int]:
    """Factor the temporal expansion into strided stages of at most 6."""
    stages = []
    rest = expansion
    for factor in (6, 5, 4, 3, 2):
        while rest % factor == 0 and rest > 1:
            stages.append(factor)
            rest //= factor
    if rest != 1:
        raise ValueError(f"expansion {expansion} has prime factors above 6")
    return stages


@dataclass
class MotionTokens:
    ids: np.ndarray      # (T',) int64 in [0, codebook_size)
    frame_count: int

    def validate(self, codebook_size: int, expansion: int) -> None:
        if self.ids.min(initial=0) < 0 or self.ids.max(initial=0) >= codebook_size:
            raise ValueError("token id out of range")
        if len(self.ids) != self.frame_count * expansion:
            raise ValueError("token count does not match frame count * expansion")


class MotionVQVAE(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h, k = cfg.hidden, cfg.kernel_size
        pad = k // 2

        layers: list[nn.Module] = [nn.Conv1d(CHANNELS, h, k, padding=pad), nn.ReLU()]
        for _ in range(cfg.conv_blocks - 1):
            layers += [nn.Conv1d(h, h, k, padding=pad), nn.ReLU()]
        for stage in expansion_stages(cfg.expansion):
            layers += [nn.ConvTranspose1d(h, h, stage, stride=stage), nn.ReLU(),
                       nn.Conv1d(h, h, k, padding=pad), nn.ReLU()]
        self.encoder_body = nn.Sequential(*layers)
        self.encoder_out = nn.Conv1d(h, cfg.code_dim, 1)

        self.codebook = nn.Embedding(cfg.codebook_size, cfg.code_dim)
        nn.init.uniform_(self.codebook.weight, -1.0 / cfg.codebook_size,
                         1.0 / cfg.codebook_size)
        self.register_buffer("usage_counts",
                             torch.zeros(cfg.codebook_size, dtype=torch.long))
        # Per-channel standardization of the velocity representation; estimated
        # from the training set once, identity until then.
        self.register_buffer("channel_mean", torch.zeros(CHANNELS))
        self.register_buffer("channel_std", torch.ones(CHANNELS))

        self.experts = nn.ModuleDict()
        for name, width in HEAD_WIDTHS.items():
            layers = [nn.Conv1d(cfg.code_dim, h, k, padding=pad), nn.ReLU()]
            for stage in reversed(expansion_stages(cfg.expansion)):
                layers += [nn.Conv1d(h, h, stage, stride=stage), nn.ReLU()]
            for _ in range(cfg.conv_blocks - 1):
                layers += [nn.Conv1d(h, h, k, padding=pad), nn.ReLU()]
            layers += [nn.Conv1d(h, width, 1)]
            self.experts[name] = nn.Sequential(*layers)

    def set_channel_stats(self, mean: torch.Tensor, std: torch.Tensor) -> None:
        self.channel_mean.copy_(mean)
        self.channel_std.copy_(std.clamp_min(1e-4))

    def encode_features(self, velocity: torch.Tensor) -> torch.Tensor:
        """(batch, T, 79) velocity channels -> (batch, T*expansion, code_dim)."""
        if velocity.shape[1] % UNIT_FRAMES != 0:
            raise ValueError(
                f"frame count {velocity.shape[1]} is not a multiple of {UNIT_FRAMES}")
        normed = (velocity - self.channel_mean) / self.channel_std
        x = self.encoder_body(normed.transpose(1, 2))
        return self.encoder_out(x).transpose(1, 2)

    def quantize(self, feats: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Nearest codebook entry per latent step; ties go to the lowest index.

        Distances are evaluated in float64 so that exact ties (and near-ties
        far beyond float32 resolution) resolve identically to a direct scan.
        """
        if self.codebook.num_embeddings == 0:
            raise ValueError("empty codebook")
        flat = feats.detach().reshape(-1, feats.shape[-1]).double()
        book = self.codebook.weight.detach().double()
        book_sq = book.pow(2).sum(dim=1)
        ids = torch.empty(flat.shape[0], dtype=torch.long)
        for start in range(0, flat.shape[0], 4096):
            chunk = flat[start:start + 4096]
            dists = chunk.pow(2).sum(dim=1, keepdim=True) - 2.0 * chunk @ book.T + book_sq
            ids[start:start + 4096] = dists.argmin(dim=1)
        ids = ids.reshape(feats.shape[:-1])
        return ids, self.codebook(ids)

    def decode_velocity(self, quantized: torch.Tensor) -> torch.Tensor:
        """(batch, T', code_dim) -> (batch, T, 79) velocity channels."""
        x = quantized.transpose(1, 2)
        outs = [self.experts[name](x) for name in HEAD_WIDTHS]
        normed = torch.cat(outs, dim=1).transpose(1, 2)
        return normed * self.channel_std + self.channel_mean

    def forward(self, velocity: torch.Tensor):
        feats = self.encode_features(velocity)
        ids, quantized = self.quantize(feats)
        straight_through = feats + (quantized - feats).detach()
        decoded = self.decode_velocity(straight_through)
        return decoded, feats, quantized, ids


def restore_absolute(velocity: torch.Tensor) -> torch.Tensor:
    """Differentiable prefix sum over time: velocity channels -> absolutes."""
    return torch.cumsum(velocity, dim=-2)


def vqvae_loss(pred_abs: torch.Tensor, gt_abs: torch.Tensor,
               feats: torch.Tensor, quantized: torch.Tensor,
               commitment: float = 0.25,
               recon_weights: tuple[float, float, float] = (1.0, 0.5, 0.25)):
    """Reconstruction + commitment + codebook terms with the stop-gradient split.

    The encoder receives gradient through the reconstruction (straight-through)
    and the commitment term; the codebook only through its own quadratic term.
    Returns (total, parts dict).
    """
    if pred_abs.shape != gt_abs.shape or feats.shape != quantized.shape:
        raise ValueError("shape mismatch in vqvae_loss")
    w_pos, w_vel, w_acc = recon_weights
    l_pos = (pred_abs - gt_abs).abs().mean()
    dv_pred = pred_abs.diff(dim=-2)
    dv_gt = gt_abs.diff(dim=-2)
    l_vel = (dv_pred - dv_gt).abs().mean() if dv_pred.shape[-2] > 0 else pred_abs.new_zeros(())
    da_pred = dv_pred.diff(dim=-2)
    da_gt = dv_gt.diff(dim=-2)
    l_acc = (da_pred - da_gt).abs().mean() if da_pred.shape[-2] > 0 else pred_abs.new_zeros(())
    rec = w_pos * l_pos + w_vel * l_vel + w_acc * l_acc
    commit = (feats - quantized.detach()).pow(2).mean()
    code = (feats.detach() - quantized).pow(2).mean()
    total = rec + commitment * commit + code
    return total, {"rec": rec, "pos": l_pos, "vel": l_vel, "acc": l_acc,
                   "commit": commit, "code": code}


def motion_to_velocity_tensor(m: MotionSequence) -> torch.Tensor:
    enc = velocity_encode(m)
    packed = np.concatenate([enc.theta, enc.beta, enc.phi, enc.tau], axis=1)
    return torch.from_numpy(packed.astype(np.float32))


def velocity_tensor_to_motion(vel: torch.Tensor, fps: float) -> MotionSequence:
    from .motion import VelocityEncodedMotion
    arr = vel.detach().cpu().numpy().astype(np.float32)
    a, b = POSE_DIM, POSE_DIM + SHAPE_DIM
    enc = VelocityEncodedMotion(
        theta=arr[:, :a], beta=arr[:, a:b], phi=arr[:, b:b + 3], tau=arr[:, b + 3:],
        fps=fps)
    return velocity_decode(enc)


@torch.no_grad()
def tokenize(model: MotionVQVAE, m: MotionSequence) -> MotionTokens:
    vel = motion_to_velocity_tensor(m)[None]
    feats = model.encode_features(vel)
    ids, _ = model.quantize(feats)
    return MotionTokens(ids[0].cpu().numpy().astype(np.int64), m.frame_count)


@torch.no_grad()
def detokenize(model: MotionVQVAE, tokens: MotionTokens | np.ndarray,
               fps: float = 30.0) -> MotionSequence:
    ids = tokens.ids if isinstance(tokens, MotionTokens) else np.asarray(tokens)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= model.cfg.codebook_size:
        raise ValueError("token id out of range")
    if len(ids) % model.cfg.expansion != 0:
        raise ValueError("token count not divisible by the expansion factor")
    quantized = model.codebook(torch.from_numpy(np.asarray(ids, dtype=np.int64))[None])
    vel = model.decode_velocity(quantized)[0]
    return velocity_tensor_to_motion(vel, fps)


@torch.no_grad()
def reconstruct(model: MotionVQVAE, m: MotionSequence) -> MotionSequence:
    return detokenize(model, tokenize(model, m), fps=m.fps)


def codebook_utilization(token_samples, codebook_size: int) -> float:
    """Fraction of distinct ids observed over a sample of token sequences."""
    distinct: set[int] = set()
    total = 0
    for sample in token_samples:
        ids = sample.ids if isinstance(sample, MotionTokens) else np.asarray(sample)
        distinct.update(int(i) for i in np.unique(ids))
        total += len(ids)
    if total == 0:
        raise ValueError("utilization needs at least one token")
    return len(distinct) / codebook_size


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


def train_tokenizer(motions: list[MotionSequence], cfg: TokenizerConfig,
                    seed: int, log_every: int = 50,
                    log_fn=None) -> tuple[MotionVQVAE, TrainHistory]:
    """End-to-end VQ training with dead-code reinitialization.

    Deterministic given (motions, cfg, seed). Raises RuntimeError when the
    loss diverges to a non-finite value.
    """
    if not motions:
        raise ValueError("empty training set")
    cfg.validate()
    torch.manual_seed(seed)
    model = MotionVQVAE(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed ^ 0x5EED)

    def lr_at(step: int) -> float:
        floor = cfg.lr * cfg.lr_final_fraction
        cos = 0.5 * (1.0 + math.cos(math.pi * step / max(cfg.steps - 1, 1)))
        return floor + (cfg.lr - floor) * cos

    data = torch.stack([motion_to_velocity_tensor(m) for m in motions])
    flat = data.reshape(-1, CHANNELS)
    model.set_channel_stats(flat.mean(dim=0), flat.std(dim=0))
    gt_abs = restore_absolute(data)
    history = TrainHistory()
    window_usage = torch.zeros(cfg.codebook_size, dtype=torch.long)

    for step in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = lr_at(step)
        idx = torch.randint(0, len(motions), (min(cfg.batch_size, len(motions)),),
                            generator=gen)
        batch = data[idx]
        if step == 0:
            # Seed the codebook from actual encoder outputs so early training
            # starts with a spread of usable entries.
            with torch.no_grad():
                feats0 = model.encode_features(batch).reshape(-1, cfg.code_dim)
                pick = torch.randint(0, feats0.shape[0], (cfg.codebook_size,),
                                     generator=gen)
                jitter = 0.01 * torch.randn(cfg.codebook_size, cfg.code_dim,
                                            generator=gen)
                model.codebook.weight.copy_(feats0[pick] + jitter)
        decoded, feats, quantized, ids = model(batch)
        pred_abs = restore_absolute(decoded)
        loss, parts = vqvae_loss(pred_abs, gt_abs[idx], feats, quantized,
                                 cfg.commitment, cfg.recon_weights)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"tokenizer training diverged at step {step}: loss={loss.item()} "
                f"(rec={parts['rec'].item():.4g}, commit={parts['commit'].item():.4g})")
        opt.zero_grad()
        loss.backward()
        opt.step()

        counts = torch.bincount(ids.reshape(-1), minlength=cfg.codebook_size)
        window_usage += counts
        model.usage_counts += counts

        if cfg.dead_code_interval and (step + 1) % cfg.dead_code_interval == 0:
            dead = (window_usage == 0).nonzero(as_tuple=True)[0]
            if len(dead) > 0:
                with torch.no_grad():
                    flat = feats.reshape(-1, cfg.code_dim)
                    pick = torch.randint(0, flat.shape[0], (len(dead),), generator=gen)
                    noise = 0.01 * torch.randn(len(dead), cfg.code_dim, generator=gen)
                    model.codebook.weight[dead] = flat[pick] + noise
            window_usage.zero_()

        if step % log_every == 0 or step == cfg.steps - 1:
            record = {
                "step": step,
                "loss": float(loss.item()),
                "rec": float(parts["rec"].item()),
                "commit": float(parts["commit"].item()),
                "code": float(parts["code"].item()),
                "batch_utilization": float((counts > 0).sum().item()) / cfg.codebook_size,
            }
            history.records.append(record)
            if log_fn is not None:
                log_fn(record)
    with torch.no_grad():
        distinct = torch.unique(model.codebook.weight, dim=0).shape[0]
    # collisions are diagnosed, not enforced away
    history.records[-1]["distinct_codebook_entries"] = int(distinct)
    return model, history


def save_tokenizer(path: str | Path, model: MotionVQVAE, meta: dict | None = None) -> None:
    tensors = {name: par.detach().cpu().numpy().astype(np.float32)
               for name, par in model.state_dict().items() if par.dtype.is_floating_point}
    tensors["usage_counts"] = model.usage_counts.cpu().numpy().astype(np.int64)
    header = {"kind": "motion_tokenizer", "config": asdict(model.cfg)}
    header.update(meta or {})
    save_tensors(path, tensors, meta=header)


def load_tokenizer(path: str | Path) -> tuple[MotionVQVAE, dict]:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "motion_tokenizer":
        raise ValueError(f"{path}: not a motion tokenizer checkpoint")
    cfg_dict = dict(meta["config"])
    cfg_dict["recon_weights"] = tuple(cfg_dict["recon_weights"])
    cfg = TokenizerConfig(**cfg_dict)
    model = MotionVQVAE(cfg)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    model.load_state_dict(state)
    return model, meta
