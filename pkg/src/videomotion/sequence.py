"""Unified autoregressive model over interleaved visual and motion tokens.

Two tasks share one transformer. A capture sequence (v2m) lays out
[task][visual blocks][separator][motion blocks]; a generation sequence (i2vm)
lays out [task][image block][separator][visual+motion blocks alternating per
16-frame unit]. Everything before the separator is bidirectional condition,
everything after is causal target. Visual and motion ids live in disjoint
vocabulary ranges with separate embedding tables; rotary embeddings are 3D
factorized for visual positions and share the latent-time axis with motion
positions, and a learned absolute table is added to queries and keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F_t

from .motion import UNIT_FRAMES
from .tensorio import load_tensors, save_tensors

MODALITY_VISUAL = 0
MODALITY_MOTION = 1
MODALITY_SPECIAL = 2

TASK_V2M = "v2m"
TASK_I2VM = "i2vm"


@dataclass(frozen=True)
class VocabLayout:
    """Disjoint id ranges: visual, motion, then the four special tokens."""

    visual_size: int
    motion_size: int

    @property
    def t1(self) -> int:
        return self.visual_size + self.motion_size

    @property
    def t2(self) -> int:
        return self.t1 + 1

    @property
    def stg(self) -> int:
        return self.t1 + 2

    @property
    def pad(self) -> int:
        return self.t1 + 3

    @property
    def total(self) -> int:
        return self.visual_size + self.motion_size + 4

    def classify(self, token_id: int) -> int:
        if 0 <= token_id < self.visual_size:
            return MODALITY_VISUAL
        if self.visual_size <= token_id < self.visual_size + self.motion_size:
            return MODALITY_MOTION
        if token_id < self.total:
            return MODALITY_SPECIAL
        raise ValueError(f"token id {token_id} outside vocabulary")

    def special_index(self, token_id: int) -> int:
        return token_id - self.t1


@dataclass(frozen=True)
class SequenceSpec:
    """Block-size constants binding the two tokenizers to the sequence grammar."""

    layout: VocabLayout
    motion_tokens_per_unit: int           # expansion * 16
    visual_grid: tuple[int, int, int]     # (t, h, w) token grid per unit
    image_grid: tuple[int, int]           # reference-image token grid
    temporal_factor: int                  # video temporal compression f_t

    @property
    def visual_tokens_per_unit(self) -> int:
        t, h, w = self.visual_grid
        return t * h * w

    @property
    def image_tokens(self) -> int:
        return self.image_grid[0] * self.image_grid[1]

    @property
    def expansion(self) -> int:
        return self.motion_tokens_per_unit // UNIT_FRAMES


@dataclass
class Block:
    kind: str        # "image" | "visual" | "motion"
    start: int       # absolute position of the first token
    length: int
    unit: int        # unit index (0 for the image block)


@dataclass
class UnifiedSequence:
    """Token ids plus per-position metadata.

    `ids` covers the filled portion only (a condition-only sequence stops at
    the separator); the metadata arrays always describe the full layout so a
    sampler can extend the sequence position by position.
    """

    ids: np.ndarray          # int64 (filled,)
    modality: np.ndarray     # int8 (full_length,)
    rope_t: np.ndarray       # float64, latent-time coordinate (full_length,)
    rope_h: np.ndarray
    rope_w: np.ndarray
    target_start: int
    schedule: list[Block]
    task: str
    full_length: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def condition_only(self) -> bool:
        return len(self.ids) == self.target_start


def _layout_metadata(spec: SequenceSpec, task: str, n_units: int):
    """Modality tags, rope coordinates and schedule for a full sequence."""
    layout = spec.layout
    ids_kind: list[tuple[int, float, float, float]] = []  # (modality, t, h, w)
    schedule: list[Block] = []

    def visual_unit_coords(unit: int):
        t_g, h_g, w_g = spec.visual_grid
        for lt in range(t_g):
            for lh in range(h_g):
                for lw in range(w_g):
                    yield (MODALITY_VISUAL, float(unit * t_g + lt), float(lh), float(lw))

    def motion_unit_coords(unit: int):
        for j in range(spec.motion_tokens_per_unit):
            frame = unit * UNIT_FRAMES + j // spec.expansion
            yield (MODALITY_MOTION, frame / spec.temporal_factor, 0.0, 0.0)

    if task == TASK_V2M:
        ids_kind.append((MODALITY_SPECIAL, 0.0, 0.0, 0.0))  # T1 carries next block t
        for unit in range(n_units):
            start = len(ids_kind)
            ids_kind.extend(visual_unit_coords(unit))
            schedule.append(Block("visual", start, spec.visual_tokens_per_unit, unit))
        ids_kind.append((MODALITY_SPECIAL, 0.0, 0.0, 0.0))  # STG, next block is frame 0
        target_start = len(ids_kind)
        for unit in range(n_units):
            start = len(ids_kind)
            ids_kind.extend(motion_unit_coords(unit))
            schedule.append(Block("motion", start, spec.motion_tokens_per_unit, unit))
    elif task == TASK_I2VM:
        ids_kind.append((MODALITY_SPECIAL, 0.0, 0.0, 0.0))  # T2
        start = len(ids_kind)
        for lh in range(spec.image_grid[0]):
            for lw in range(spec.image_grid[1]):
                ids_kind.append((MODALITY_VISUAL, 0.0, float(lh), float(lw)))
        schedule.append(Block("image", start, spec.image_tokens, 0))
        ids_kind.append((MODALITY_SPECIAL, 0.0, 0.0, 0.0))  # STG
        target_start = len(ids_kind)
        for unit in range(n_units):
            start = len(ids_kind)
            ids_kind.extend(visual_unit_coords(unit))
            schedule.append(Block("visual", start, spec.visual_tokens_per_unit, unit))
            start = len(ids_kind)
            ids_kind.extend(motion_unit_coords(unit))
            schedule.append(Block("motion", start, spec.motion_tokens_per_unit, unit))
    else:
        raise ValueError(f"unknown task {task!r}")

    arr = np.asarray(ids_kind, dtype=np.float64)
    modality = arr[:, 0].astype(np.int8)
    return modality, arr[:, 1], arr[:, 2], arr[:, 3], target_start, schedule


def _flatten_video_unit(tokens) -> np.ndarray:
    ids = tokens.ids if hasattr(tokens, "ids") else np.asarray(tokens)
    return np.asarray(ids, dtype=np.int64).reshape(-1)


def _flatten_motion_unit(tokens) -> np.ndarray:
    ids = tokens.ids if hasattr(tokens, "ids") else np.asarray(tokens)
    return np.asarray(ids, dtype=np.int64).reshape(-1)


def build_v2m_sequence(spec: SequenceSpec, video_units: list, motion_units: list) -> UnifiedSequence:
    """[T1][visual blocks][STG][motion blocks]; empty motion side builds the
    condition-only prefix used at inference."""
    if motion_units and len(motion_units) != len(video_units):
        raise ValueError(
            f"unit count mismatch: {len(video_units)} video vs {len(motion_units)} motion")
    if not video_units:
        raise ValueError("v2m needs at least one video unit")
    n_units = len(video_units)
    modality, rt, rh, rw, target_start, schedule = _layout_metadata(spec, TASK_V2M, n_units)
    full_length = len(modality)
    layout = spec.layout

    ids = [layout.t1]
    for unit in video_units:
        flat = _flatten_video_unit(unit)
        if flat.size != spec.visual_tokens_per_unit:
            raise ValueError("video unit has wrong token count")
        ids.extend(int(i) for i in flat)
    ids.append(layout.stg)
    for unit in motion_units:
        flat = _flatten_motion_unit(unit)
        if flat.size != spec.motion_tokens_per_unit:
            raise ValueError("motion unit has wrong token count")
        ids.extend(int(i) + layout.visual_size for i in flat)
    return UnifiedSequence(
        ids=np.asarray(ids, dtype=np.int64), modality=modality,
        rope_t=rt, rope_h=rh, rope_w=rw,
        target_start=target_start, schedule=schedule, task=TASK_V2M,
        full_length=full_length)


def build_i2vm_sequence(spec: SequenceSpec, image_tokens, video_units: list,
                        motion_units: list, n_units: int | None = None) -> UnifiedSequence:
    """[T2][image][STG][Vt_1][Mt_1][Vt_2][Mt_2]...; strict per-unit alternation."""
    if len(video_units) != len(motion_units):
        raise ValueError(
            f"unit count mismatch: {len(video_units)} video vs {len(motion_units)} motion")
    if n_units is None:
        n_units = len(video_units)
    if n_units < 1 or len(video_units) > n_units:
        raise ValueError("bad unit count")
    modality, rt, rh, rw, target_start, schedule = _layout_metadata(spec, TASK_I2VM, n_units)
    full_length = len(modality)
    layout = spec.layout

    image_flat = _flatten_video_unit(image_tokens)
    if image_flat.size != spec.image_tokens:
        raise ValueError("image block has wrong token count")
    ids = [layout.t2] + [int(i) for i in image_flat] + [layout.stg]
    for v_unit, m_unit in zip(video_units, motion_units):
        v_flat = _flatten_video_unit(v_unit)
        m_flat = _flatten_motion_unit(m_unit)
        if v_flat.size != spec.visual_tokens_per_unit or m_flat.size != spec.motion_tokens_per_unit:
            raise ValueError("unit has wrong token count")
        ids.extend(int(i) for i in v_flat)
        ids.extend(int(i) + layout.visual_size for i in m_flat)
    return UnifiedSequence(
        ids=np.asarray(ids, dtype=np.int64), modality=modality,
        rope_t=rt, rope_h=rh, rope_w=rw,
        target_start=target_start, schedule=schedule, task=TASK_I2VM,
        full_length=full_length)


@dataclass
class ParsedSequence:
    task: str | None
    ok: bool
    violation_index: int | None = None
    message: str = ""
    partial: bool = False
    image_tokens: np.ndarray | None = None
    video_units: list = field(default_factory=list)
    motion_units: list = field(default_factory=list)


def parse_sequence(spec: SequenceSpec, ids: np.ndarray) -> ParsedSequence:
    """Expectation-driven grammar inverse; flags the first violating position."""
    layout = spec.layout
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return ParsedSequence(None, False, 0, "empty sequence")
    if ids.min() < 0 or ids.max() >= layout.total:
        bad = int(np.argmax((ids < 0) | (ids >= layout.total)))
        return ParsedSequence(None, False, bad, "token id outside vocabulary")
    if ids[0] == layout.t1:
        task = TASK_V2M
    elif ids[0] == layout.t2:
        task = TASK_I2VM
    else:
        return ParsedSequence(None, False, 0, "sequence must start with a task token")

    classify = np.empty(len(ids), dtype=np.int8)
    classify[:] = MODALITY_SPECIAL
    classify[ids < layout.visual_size] = MODALITY_VISUAL
    classify[(ids >= layout.visual_size) & (ids < layout.t1)] = MODALITY_MOTION

    result = ParsedSequence(task, True)
    vu, mu = spec.visual_tokens_per_unit, spec.motion_tokens_per_unit

    if task == TASK_V2M:
        pos = 1
        visual: list[int] = []
        while pos < len(ids) and ids[pos] != layout.stg:
            if classify[pos] != MODALITY_VISUAL:
                return ParsedSequence(task, False, pos,
                                      "expected a visual token before the separator")
            visual.append(int(ids[pos]))
            pos += 1
        if pos == len(ids):
            return ParsedSequence(task, False, len(ids), "missing separator token")
        if len(visual) % vu != 0 or len(visual) == 0:
            return ParsedSequence(task, False, pos,
                                  "separator does not fall on a unit boundary")
        stg_pos = pos
        pos += 1
        motion: list[int] = []
        while pos < len(ids):
            if classify[pos] != MODALITY_MOTION:
                return ParsedSequence(task, False, pos,
                                      "expected a motion token after the separator")
            motion.append(int(ids[pos]) - layout.visual_size)
            pos += 1
        n_units = len(visual) // vu
        result.video_units = [np.asarray(visual[i * vu:(i + 1) * vu], dtype=np.int64)
                              for i in range(n_units)]
        complete = len(motion) // mu
        result.motion_units = [np.asarray(motion[i * mu:(i + 1) * mu], dtype=np.int64)
                               for i in range(complete)]
        if len(motion) % mu != 0:
            result.partial = True
            result.motion_units.append(np.asarray(motion[complete * mu:], dtype=np.int64))
        if motion and len(motion) == n_units * mu:
            result.partial = result.partial or False
        return result

    # i2vm
    ni = spec.image_tokens
    if len(ids) < 2 + ni:
        first_bad = min(len(ids), 1 + ni)
        if all(classify[p] == MODALITY_VISUAL for p in range(1, len(ids))):
            return ParsedSequence(task, False, len(ids), "truncated image block")
        for p in range(1, len(ids)):
            if classify[p] != MODALITY_VISUAL:
                return ParsedSequence(task, False, p, "expected an image token")
        return ParsedSequence(task, False, first_bad, "truncated image block")
    for p in range(1, 1 + ni):
        if classify[p] != MODALITY_VISUAL:
            return ParsedSequence(task, False, p, "expected an image token")
    if ids[1 + ni] != layout.stg:
        return ParsedSequence(task, False, 1 + ni,
                              "expected the separator after the image block")
    result.image_tokens = ids[1:1 + ni].copy()
    pos = 2 + ni
    kind = "visual"
    block: list[int] = []
    while pos < len(ids):
        expected = MODALITY_VISUAL if kind == "visual" else MODALITY_MOTION
        if classify[pos] != expected:
            return ParsedSequence(task, False, pos, f"expected a {kind} token")
        block.append(int(ids[pos]) - (0 if kind == "visual" else layout.visual_size))
        pos += 1
        size = vu if kind == "visual" else mu
        if len(block) == size:
            if kind == "visual":
                result.video_units.append(np.asarray(block, dtype=np.int64))
                kind = "motion"
            else:
                result.motion_units.append(np.asarray(block, dtype=np.int64))
                kind = "visual"
            block = []
    if block:
        result.partial = True
        if kind == "visual":
            result.video_units.append(np.asarray(block, dtype=np.int64))
        else:
            result.motion_units.append(np.asarray(block, dtype=np.int64))
    elif kind == "motion" and result.video_units and \
            len(result.video_units) != len(result.motion_units):
        result.partial = True  # ended after a visual block, before its motion block
    return result


@dataclass
class ARConfig:
    layers: int = 4
    heads: int = 4
    width: int = 128
    rope_split: tuple[int, int, int] = (16, 8, 8)
    rope_base: float = 10000.0
    max_len: int = 4096
    lr: float = 3e-4
    lr_final_fraction: float = 0.1
    batch_size: int = 8
    steps: int = 2000

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def validate(self) -> None:
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if sum(self.rope_split) != self.head_dim:
            raise ValueError("rope_split must sum to the head dimension")
        if any(d % 2 for d in self.rope_split):
            raise ValueError("each rope split must be even")


def rotate_slice(x: torch.Tensor, coords: torch.Tensor, base: float) -> torch.Tensor:
    """Apply rotary rotation to the last dim of x using per-position coords.

    x: (..., L, d) with d even; coords: (..., L) broadcastable positions.
    """
    d = x.shape[-1]
    if d == 0:
        return x
    freqs = base ** (-torch.arange(0, d, 2, dtype=x.dtype, device=x.device) / d)
    angles = coords.to(x.dtype)[..., None] * freqs  # (..., L, d/2)
    cos, sin = torch.cos(angles), torch.sin(angles)
    a, b = x[..., : d // 2], x[..., d // 2:]
    return torch.cat([a * cos - b * sin, a * sin + b * cos], dim=-1)


def apply_positional(x: torch.Tensor, rope_t: torch.Tensor, rope_h: torch.Tensor,
                     rope_w: torch.Tensor, split: tuple[int, int, int],
                     base: float, ape: torch.Tensor | None = None) -> torch.Tensor:
    """Factorized rotary rotation plus learned absolute shift for Q or K.

    x: (..., L, head_dim). Motion and special positions carry zero spatial
    coordinates, so their h/w slices rotate by the identity; the shared
    temporal slice aligns both modalities on latent time.
    """
    d_t, d_h, d_w = split
    parts = [
        rotate_slice(x[..., :d_t], rope_t, base),
        rotate_slice(x[..., d_t:d_t + d_h], rope_h, base),
        rotate_slice(x[..., d_t + d_h:], rope_w, base),
    ]
    out = torch.cat(parts, dim=-1)
    if ape is not None:
        out = out + ape
    return out


def build_attention_mask(target_start: int, length: int) -> torch.Tensor:
    """True where attention is allowed: condition rows are bidirectional over
    the condition, target rows add causal access to earlier targets."""
    idx = torch.arange(length)
    cond = idx[None, :] < target_start
    causal = idx[None, :] <= idx[:, None]
    is_target_row = (idx[:, None] >= target_start)
    return cond | (is_target_row & causal)


class _Block(nn.Module):
    def __init__(self, cfg: ARConfig):
        super().__init__()
        w = cfg.width
        self.ln1 = nn.LayerNorm(w)
        self.q_proj = nn.Linear(w, w)
        self.k_proj = nn.Linear(w, w)
        self.v_proj = nn.Linear(w, w)
        self.out_proj = nn.Linear(w, w)
        self.ln2 = nn.LayerNorm(w)
        self.mlp = nn.Sequential(nn.Linear(w, 4 * w), nn.GELU(), nn.Linear(4 * w, w))
        self.cfg = cfg

    def forward(self, x, rope_t, rope_h, rope_w, ape, mask):
        cfg = self.cfg
        bsz, length, _ = x.shape
        h = self.ln1(x)

        def heads(t):
            return t.reshape(bsz, length, cfg.heads, cfg.head_dim).transpose(1, 2)

        q = heads(self.q_proj(h))
        k = heads(self.k_proj(h))
        v = heads(self.v_proj(h))
        rt, rh, rw = (r[:, None, :] for r in (rope_t, rope_h, rope_w))
        q = apply_positional(q, rt, rh, rw, cfg.rope_split, cfg.rope_base, ape)
        k = apply_positional(k, rt, rh, rw, cfg.rope_split, cfg.rope_base, ape)
        scores = q @ k.transpose(-2, -1) / math.sqrt(cfg.head_dim)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bsz, length, cfg.width)
        x = x + self.out_proj(out)
        x = x + self.mlp(self.ln2(x))
        return x


class UnifiedTransformer(nn.Module):
    def __init__(self, cfg: ARConfig, layout: VocabLayout):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.layout = layout
        self.emb_visual = nn.Embedding(layout.visual_size, cfg.width)
        self.emb_motion = nn.Embedding(layout.motion_size, cfg.width)
        self.emb_special = nn.Embedding(4, cfg.width)
        self.ape = nn.Parameter(torch.randn(cfg.max_len, cfg.head_dim) * 0.02)
        self.blocks = nn.ModuleList([_Block(cfg) for _ in range(cfg.layers)])
        self.ln_f = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, layout.total)

    def embed(self, ids: torch.Tensor, modality: torch.Tensor) -> torch.Tensor:
        """Dispatch each position to its own vocabulary table."""
        out = torch.zeros(*ids.shape, self.cfg.width,
                          dtype=self.emb_visual.weight.dtype, device=ids.device)
        vis = modality == MODALITY_VISUAL
        mot = modality == MODALITY_MOTION
        spc = modality == MODALITY_SPECIAL
        if vis.any():
            out[vis] = self.emb_visual(ids[vis])
        if mot.any():
            out[mot] = self.emb_motion(ids[mot] - self.layout.visual_size)
        if spc.any():
            out[spc] = self.emb_special(ids[spc] - self.layout.t1)
        return out


def _meta_tensors(seq: UnifiedSequence, length: int, dtype=torch.float32):
    modality = torch.from_numpy(np.ascontiguousarray(seq.modality[:length])).long()
    rt = torch.from_numpy(np.ascontiguousarray(seq.rope_t[:length])).to(dtype)
    rh = torch.from_numpy(np.ascontiguousarray(seq.rope_h[:length])).to(dtype)
    rw = torch.from_numpy(np.ascontiguousarray(seq.rope_w[:length])).to(dtype)
    return modality, rt, rh, rw


def forward(model: UnifiedTransformer, ids: torch.Tensor, seq: UnifiedSequence,
            length: int | None = None, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Logits over the full vocabulary; ids may be (L,) or (batch, L).

    Sequence metadata (modality, rope coordinates, condition boundary) comes
    from `seq`, which must describe the same layout for every batch row.
    """
    squeeze = ids.dim() == 1
    if squeeze:
        ids = ids[None]
    length = ids.shape[1] if length is None else length
    cfg = model.cfg
    if length > cfg.max_len:
        raise ValueError(f"sequence length {length} exceeds positional capacity {cfg.max_len}")
    dtype = model.emb_visual.weight.dtype
    modality, rt, rh, rw = _meta_tensors(seq, length, dtype)
    modality = modality[None].expand(ids.shape[0], -1)
    rt, rh, rw = (r[None].expand(ids.shape[0], -1) for r in (rt, rh, rw))
    if mask is None:
        mask = build_attention_mask(min(seq.target_start, length), length)
    mask = mask[None, None]
    ape = model.ape[:length].to(dtype)

    x = model.embed(ids, modality)
    for block in model.blocks:
        x = block(x, rt, rh, rw, ape, mask)
    logits = model.head(model.ln_f(x))
    return logits[0] if squeeze else logits


def ar_loss(logits: torch.Tensor, ids: torch.Tensor, target_start: int) -> torch.Tensor:
    """Mean next-token cross-entropy over target positions only."""
    squeeze = logits.dim() == 2
    if squeeze:
        logits, ids = logits[None], ids[None]
    length = ids.shape[1]
    if target_start >= length:
        raise ValueError("sequence has no target positions")
    pred = logits[:, target_start - 1:length - 1]
    gold = ids[:, target_start:]
    return F_t.cross_entropy(pred.reshape(-1, pred.shape[-1]), gold.reshape(-1))


@dataclass
class DecodeConfig:
    mode: str = "greedy"            # "greedy" | "sample"
    temperature: float = 1.0
    top_k: int = 0                  # 0 disables the top-k filter


def _allowed_range(layout: VocabLayout, modality: int) -> tuple[int, int]:
    if modality == MODALITY_VISUAL:
        return 0, layout.visual_size
    if modality == MODALITY_MOTION:
        return layout.visual_size, layout.visual_size + layout.motion_size
    raise ValueError("sampling only fills visual or motion positions")


@torch.no_grad()
def sample(model: UnifiedTransformer, condition: UnifiedSequence,
           decode: DecodeConfig | None = None,
           generator: torch.Generator | None = None) -> UnifiedSequence:
    """Fill the post-separator schedule, masking logits to the slot modality."""
    decode = decode or DecodeConfig()
    if not condition.condition_only:
        raise ValueError("sampling expects a condition-only sequence")
    spec_layout = model.layout
    full = condition.full_length
    ids = torch.full((full,), spec_layout.pad, dtype=torch.long)
    ids[:len(condition.ids)] = torch.from_numpy(condition.ids)

    for pos in range(condition.target_start, full):
        logits = forward(model, ids[:pos], condition, length=pos)[-1]
        lo, hi = _allowed_range(spec_layout, int(condition.modality[pos]))
        masked = torch.full_like(logits, float("-inf"))
        masked[lo:hi] = logits[lo:hi]
        if decode.mode == "greedy":
            pick = int(masked.argmax())
        else:
            scaled = masked / max(decode.temperature, 1e-6)
            if decode.top_k and decode.top_k > 0:
                kth = torch.topk(scaled, min(decode.top_k, hi - lo)).values[-1]
                scaled = torch.where(scaled < kth, torch.full_like(scaled, float("-inf")),
                                     scaled)
            probs = torch.softmax(scaled, dim=-1)
            pick = int(torch.multinomial(probs, 1, generator=generator))
        ids[pos] = pick

    return UnifiedSequence(
        ids=ids.numpy().astype(np.int64), modality=condition.modality,
        rope_t=condition.rope_t, rope_h=condition.rope_h, rope_w=condition.rope_w,
        target_start=condition.target_start, schedule=condition.schedule,
        task=condition.task, full_length=full)


@dataclass
class PairExample:
    """One training pair, already tokenized and unit-aligned."""

    image_tokens: np.ndarray
    video_units: list
    motion_units: list


def train_ar(pairs: list[PairExample], spec: SequenceSpec, cfg: ARConfig, seed: int,
             log_every: int = 50, log_fn=None) -> tuple[UnifiedTransformer, list[dict]]:
    """Two-task training with strict batch alternation (equal proportions).

    The tokenizers are frozen upstream; this consumes their discrete outputs.
    Deterministic given (pairs, cfg, seed).
    """
    if not pairs:
        raise ValueError("no training pairs")
    cfg.validate()
    torch.manual_seed(seed)
    model = UnifiedTransformer(cfg, spec.layout)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed ^ 0xA12)

    v2m_template = build_v2m_sequence(spec, pairs[0].video_units, pairs[0].motion_units)
    i2vm_template = build_i2vm_sequence(spec, pairs[0].image_tokens,
                                        pairs[0].video_units, pairs[0].motion_units)
    v2m_ids = torch.stack([
        torch.from_numpy(build_v2m_sequence(spec, p.video_units, p.motion_units).ids)
        for p in pairs])
    i2vm_ids = torch.stack([
        torch.from_numpy(build_i2vm_sequence(spec, p.image_tokens, p.video_units,
                                             p.motion_units).ids)
        for p in pairs])
    masks = {
        TASK_V2M: build_attention_mask(v2m_template.target_start, len(v2m_template)),
        TASK_I2VM: build_attention_mask(i2vm_template.target_start, len(i2vm_template)),
    }

    def lr_at(step: int) -> float:
        floor = cfg.lr * cfg.lr_final_fraction
        cos = 0.5 * (1.0 + math.cos(math.pi * step / max(cfg.steps - 1, 1)))
        return floor + (cfg.lr - floor) * cos

    history: list[dict] = []
    last = {TASK_V2M: float("nan"), TASK_I2VM: float("nan")}
    for step in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = lr_at(step)
        task = TASK_V2M if step % 2 == 0 else TASK_I2VM
        data = v2m_ids if task == TASK_V2M else i2vm_ids
        template = v2m_template if task == TASK_V2M else i2vm_template
        idx = torch.randint(0, len(pairs), (min(cfg.batch_size, len(pairs)),), generator=gen)
        batch = data[idx]
        logits = forward(model, batch, template, mask=masks[task])
        loss = ar_loss(logits, batch, template.target_start)
        if not torch.isfinite(loss):
            raise RuntimeError(f"ar training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        last[task] = float(loss.item())
        if step % log_every == 0 or step == cfg.steps - 1:
            record = {"step": step, "task": task, "loss": float(loss.item()),
                      "loss_v2m": last[TASK_V2M], "loss_i2vm": last[TASK_I2VM]}
            history.append(record)
            if log_fn is not None:
                log_fn(record)
    return model, history


def save_ar_model(path: str | Path, model: UnifiedTransformer, spec: SequenceSpec,
                  meta: dict | None = None) -> None:
    tensors = {name: par.detach().cpu().numpy().astype(np.float32)
               for name, par in model.state_dict().items()}
    header = {
        "kind": "ar_model",
        "config": asdict(model.cfg),
        "layout": {"visual_size": spec.layout.visual_size,
                   "motion_size": spec.layout.motion_size},
        "sequence_spec": {
            "motion_tokens_per_unit": spec.motion_tokens_per_unit,
            "visual_grid": list(spec.visual_grid),
            "image_grid": list(spec.image_grid),
            "temporal_factor": spec.temporal_factor,
        },
    }
    header.update(meta or {})
    save_tensors(path, tensors, meta=header)


def load_ar_model(path: str | Path) -> tuple[UnifiedTransformer, SequenceSpec, dict]:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "ar_model":
        raise ValueError(f"{path}: not an AR checkpoint")
    cfg_dict = dict(meta["config"])
    cfg_dict["rope_split"] = tuple(cfg_dict["rope_split"])
    cfg = ARConfig(**cfg_dict)
    layout = VocabLayout(**meta["layout"])
    ss = meta["sequence_spec"]
    spec = SequenceSpec(layout, ss["motion_tokens_per_unit"], tuple(ss["visual_grid"]),
                        tuple(ss["image_grid"]), ss["temporal_factor"])
    model = UnifiedTransformer(cfg, layout)
    model.load_state_dict({name: torch.from_numpy(arr) for name, arr in tensors.items()})
    return model, spec, meta
