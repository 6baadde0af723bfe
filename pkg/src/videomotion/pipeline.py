"""End-to-end orchestration shared by the CLI and the acceptance suite.

Covers pairing motions with rendered clips, tokenizing both sides, the two
evaluation protocols (capture accuracy against the tokenizer floor, and the
distribution check for generated motions), and the expansion/codebook sweep.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .body import StubBody, joints_from_motion, vertices_from_motion
from .metrics import (
    accel_error,
    diversity,
    fid,
    kinematic_features,
    mpjpe,
    pa_mpjpe,
    pve,
)
from .motion import CHANNELS, UNIT_FRAMES, MotionDataset, MotionSequence, channel_concat, channel_split
from .sequence import (
    ARConfig,
    DecodeConfig,
    PairExample,
    SequenceSpec,
    UnifiedTransformer,
    VocabLayout,
    build_i2vm_sequence,
    build_v2m_sequence,
    parse_sequence,
    sample,
)
from .tokenizer import (
    MotionTokens,
    MotionVQVAE,
    TokenizerConfig,
    codebook_utilization,
    detokenize,
    reconstruct,
    tokenize,
    train_tokenizer,
)
from .video import (
    RenderConfig,
    VideoClip,
    VideoTokenizerConfig,
    VideoTokens,
    VideoVQ,
    encode_image,
    render_motion,
    video_decode,
    video_encode,
)


def derive_spec(motion_cfg: TokenizerConfig, video_cfg: VideoTokenizerConfig) -> SequenceSpec:
    """Bind the two tokenizers' shapes into one sequence grammar."""
    grid = (UNIT_FRAMES // video_cfg.f_t,
            video_cfg.frame_height // video_cfg.f_s,
            video_cfg.frame_width // video_cfg.f_s)
    return SequenceSpec(
        layout=VocabLayout(visual_size=video_cfg.vocab_size,
                           motion_size=motion_cfg.codebook_size),
        motion_tokens_per_unit=motion_cfg.expansion * UNIT_FRAMES,
        visual_grid=grid,
        image_grid=grid[1:],
        temporal_factor=video_cfg.f_t)


def video_token_units(tokens: VideoTokens, spec: SequenceSpec) -> list[np.ndarray]:
    t_g = spec.visual_grid[0]
    grid_t = tokens.ids.shape[0]
    if grid_t % t_g:
        raise ValueError("video token grid does not split into 16-frame units")
    return [tokens.ids[k * t_g:(k + 1) * t_g].reshape(-1)
            for k in range(grid_t // t_g)]


def motion_token_units(tokens: MotionTokens, spec: SequenceSpec) -> list[np.ndarray]:
    per_unit = spec.motion_tokens_per_unit
    if len(tokens.ids) % per_unit:
        raise ValueError("motion token stream does not split into 16-frame units")
    return [tokens.ids[k * per_unit:(k + 1) * per_unit]
            for k in range(len(tokens.ids) // per_unit)]


def make_pair(motion: MotionSequence, body: StubBody, render_cfg: RenderConfig,
              motion_tok: MotionVQVAE, video_tok: VideoVQ,
              spec: SequenceSpec) -> tuple[PairExample, VideoClip]:
    clip = render_motion(motion, body, render_cfg)
    vid_tokens = video_encode(video_tok, clip)
    mot_tokens = tokenize(motion_tok, motion)
    pair = PairExample(
        image_tokens=encode_image(video_tok, clip.frames[0]).reshape(-1),
        video_units=video_token_units(vid_tokens, spec),
        motion_units=motion_token_units(mot_tokens, spec))
    return pair, clip


def make_pairs(motions: list[MotionSequence], body: StubBody, render_cfg: RenderConfig,
               motion_tok: MotionVQVAE, video_tok: VideoVQ,
               spec: SequenceSpec) -> list[PairExample]:
    return [make_pair(m, body, render_cfg, motion_tok, video_tok, spec)[0]
            for m in motions]


def split_dataset(dataset: MotionDataset, holdout: int):
    if holdout >= len(dataset.records):
        raise ValueError("holdout larger than the dataset")
    train = [r.motion for r in dataset.records[:-holdout]] if holdout else \
        [r.motion for r in dataset.records]
    held = [r.motion for r in dataset.records[-holdout:]] if holdout else []
    return train, held


def evaluate_tokenizer(motion_tok: MotionVQVAE, motions: list[MotionSequence],
                       body: StubBody, utilization_samples: int = 100) -> dict:
    """Reconstruction metrics plus codebook utilization over a sample."""
    errs = {"mpjpe_mm": [], "pa_mpjpe_mm": [], "pve_mm": [], "accel_ms2": []}
    token_sample = []
    for i, motion in enumerate(motions):
        recon = reconstruct(motion_tok, motion)
        gt_j = joints_from_motion(body, motion)
        pr_j = joints_from_motion(body, recon)
        errs["mpjpe_mm"].append(mpjpe(pr_j, gt_j))
        errs["pa_mpjpe_mm"].append(pa_mpjpe(pr_j, gt_j))
        errs["pve_mm"].append(pve(vertices_from_motion(body, recon),
                                  vertices_from_motion(body, motion),
                                  pred_root=pr_j[:, 0], gt_root=gt_j[:, 0]))
        errs["accel_ms2"].append(accel_error(pr_j, gt_j, motion.fps))
        if i < utilization_samples:
            token_sample.append(tokenize(motion_tok, motion).ids)
    report = {name: float(np.mean(vals)) for name, vals in errs.items()}
    report["utilization"] = codebook_utilization(token_sample,
                                                 motion_tok.cfg.codebook_size)
    report["sequences"] = len(motions)
    return report


def mean_pose_baseline(train_motions: list[MotionSequence],
                       eval_motions: list[MotionSequence], body: StubBody) -> float:
    """MPJPE of always predicting the training-set mean channel vector."""
    stacked = np.concatenate([channel_concat(m) for m in train_motions])
    mean_channels = stacked.mean(axis=0)
    errors = []
    for motion in eval_motions:
        frames = motion.frame_count
        pred = channel_split(np.tile(mean_channels, (frames, 1)), fps=motion.fps)
        errors.append(mpjpe(joints_from_motion(body, pred),
                            joints_from_motion(body, motion)))
    return float(np.mean(errors))


def capture_motion(ar: UnifiedTransformer, spec: SequenceSpec,
                   motion_tok: MotionVQVAE, video_tok: VideoVQ, clip: VideoClip,
                   decode: DecodeConfig | None = None) -> MotionSequence:
    """v2m: tokenize the clip, fill the motion schedule, decode the motion."""
    vid_tokens = video_encode(video_tok, clip)
    units = video_token_units(vid_tokens, spec)
    condition = build_v2m_sequence(spec, units, [])
    out = sample(ar, condition, decode or DecodeConfig(mode="greedy"))
    parsed = parse_sequence(spec, out.ids)
    if not parsed.ok or parsed.partial:
        raise RuntimeError(f"sampled v2m sequence failed to parse: {parsed.message}")
    ids = np.concatenate(parsed.motion_units)
    return detokenize(motion_tok, MotionTokens(ids, len(ids) // spec.expansion),
                      fps=clip.fps)


def generate_from_image(ar: UnifiedTransformer, spec: SequenceSpec,
                        motion_tok: MotionVQVAE, video_tok: VideoVQ,
                        image: np.ndarray, units: int, decode: DecodeConfig,
                        generator: torch.Generator | None = None,
                        fps: float = 30.0) -> tuple[MotionSequence, VideoClip]:
    """i2vm: condition on one image, sample interleaved video+motion blocks."""
    image_tokens = encode_image(video_tok, image).reshape(-1)
    condition = build_i2vm_sequence(spec, image_tokens, [], [], n_units=units)
    out = sample(ar, condition, decode, generator=generator)
    parsed = parse_sequence(spec, out.ids)
    if not parsed.ok or parsed.partial:
        raise RuntimeError(f"sampled i2vm sequence failed to parse: {parsed.message}")
    motion_ids = np.concatenate(parsed.motion_units)
    motion = detokenize(motion_tok, MotionTokens(motion_ids,
                                                 len(motion_ids) // spec.expansion), fps=fps)
    t_g, h_g, w_g = spec.visual_grid
    grid = np.concatenate([u.reshape(t_g, h_g, w_g) for u in parsed.video_units], axis=0)
    clip = video_decode(video_tok, VideoTokens(grid, (video_tok.cfg.f_t, video_tok.cfg.f_s)),
                        fps=fps)
    return motion, clip


def evaluate_v2m(ar: UnifiedTransformer, spec: SequenceSpec, motion_tok: MotionVQVAE,
                 video_tok: VideoVQ, motions: list[MotionSequence], body: StubBody,
                 render_cfg: RenderConfig) -> dict:
    """Capture accuracy on held-out pairs, against the tokenizer floor."""
    captured = {"mpjpe_mm": [], "pa_mpjpe_mm": [], "pve_mm": [], "accel_ms2": []}
    floor = []
    for motion in motions:
        clip = render_motion(motion, body, render_cfg)
        pred = capture_motion(ar, spec, motion_tok, video_tok, clip)
        gt_j = joints_from_motion(body, motion)
        pr_j = joints_from_motion(body, pred)
        captured["mpjpe_mm"].append(mpjpe(pr_j, gt_j))
        captured["pa_mpjpe_mm"].append(pa_mpjpe(pr_j, gt_j))
        captured["pve_mm"].append(pve(vertices_from_motion(body, pred),
                                      vertices_from_motion(body, motion),
                                      pred_root=pr_j[:, 0], gt_root=gt_j[:, 0]))
        captured["accel_ms2"].append(accel_error(pr_j, gt_j, motion.fps))
        recon = reconstruct(motion_tok, motion)
        floor.append(mpjpe(joints_from_motion(body, recon), gt_j))
    report = {name: float(np.mean(vals)) for name, vals in captured.items()}
    report["tokenizer_floor_mpjpe_mm"] = float(np.mean(floor))
    report["floor_ratio"] = report["mpjpe_mm"] / max(report["tokenizer_floor_mpjpe_mm"], 1e-9)
    report["sequences"] = len(motions)
    return report


def permuted_channel_motions(motions: list[MotionSequence], seed: int) -> list[MotionSequence]:
    """Baseline for the distribution check: shuffle the 79 channels per motion."""
    rng = np.random.default_rng(seed)
    out = []
    for motion in motions:
        x = channel_concat(motion)
        out.append(channel_split(x[:, rng.permutation(CHANNELS)], fps=motion.fps))
    return out


def evaluate_i2vm(ar: UnifiedTransformer, spec: SequenceSpec, motion_tok: MotionVQVAE,
                  video_tok: VideoVQ, condition_motions: list[MotionSequence],
                  dataset_motions: list[MotionSequence], body: StubBody,
                  render_cfg: RenderConfig, samples: int, units: int,
                  decode: DecodeConfig, seed: int) -> dict:
    """Distribution check: generated motions vs the dataset vs a scrambled baseline."""
    gen = torch.Generator().manual_seed(seed)
    generated = []
    for i in range(samples):
        motion = condition_motions[i % len(condition_motions)]
        clip = render_motion(motion, body, render_cfg)
        sample_motion, _ = generate_from_image(
            ar, spec, motion_tok, video_tok, clip.frames[0], units, decode,
            generator=gen, fps=motion.fps)
        generated.append(sample_motion)
    gen_feats = np.stack([kinematic_features(m, body) for m in generated])
    data_sample = dataset_motions[:max(samples, 2)]
    data_feats = np.stack([kinematic_features(m, body) for m in data_sample])
    permuted = permuted_channel_motions(data_sample[:samples], seed)
    perm_feats = np.stack([kinematic_features(m, body) for m in permuted])
    report = {
        "fid_generated": fid(gen_feats, data_feats),
        "fid_permuted_baseline": fid(perm_feats, data_feats),
        "div_generated": diversity(gen_feats),
        "div_dataset": diversity(data_feats),
        "samples": samples,
    }
    report["div_ratio"] = report["div_generated"] / max(report["div_dataset"], 1e-9)
    return report


@dataclass
class SweepCell:
    expansion: int
    codebook_size: int
    seed: int
    mpjpe_mm: float
    pve_mm: float
    accel_ms2: float
    utilization: float


def sweep_tokenizer(train_motions: list[MotionSequence],
                    held_motions: list[MotionSequence], body: StubBody,
                    base_cfg: TokenizerConfig, expansions: list[int],
                    codebook_sizes: list[int], seeds: list[int],
                    log_fn=None) -> list[dict]:
    """Equal-budget grid over expansion x codebook size, one row per (cell, seed)
    plus per-cell medians (seed = -1)."""
    rows: list[dict] = []
    for codebook_size in codebook_sizes:
        for expansion in expansions:
            cell = []
            for seed in seeds:
                cfg = dataclasses.replace(base_cfg, expansion=expansion,
                                          codebook_size=codebook_size)
                model, _ = train_tokenizer(train_motions, cfg, seed=seed)
                report = evaluate_tokenizer(model, held_motions, body)
                row = SweepCell(expansion, codebook_size, seed,
                                report["mpjpe_mm"], report["pve_mm"],
                                report["accel_ms2"], report["utilization"]).__dict__
                rows.append(row)
                cell.append(row)
                if log_fn is not None:
                    log_fn(row)
            median = {
                "expansion": expansion, "codebook_size": codebook_size, "seed": -1,
                "mpjpe_mm": float(np.median([r["mpjpe_mm"] for r in cell])),
                "pve_mm": float(np.median([r["pve_mm"] for r in cell])),
                "accel_ms2": float(np.median([r["accel_ms2"] for r in cell])),
                "utilization": float(np.median([r["utilization"] for r in cell])),
            }
            rows.append(median)
            if log_fn is not None:
                log_fn(median)
    return rows
