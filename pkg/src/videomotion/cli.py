"""Command-line interface: data generation, two-stage training, evaluation.

Every command resolves one ExperimentConfig (YAML file + --set overrides),
embeds its hash in all outputs, and derives per-component seeds from the root
seed. Report paths write JSON-lines (or CSV for the sweep) plus a rendered
PNG figure next to each delimited file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import pipeline, plots
from .body import build_default_body, load_body, save_body
from .config import (
    ExperimentConfig,
    component_seed,
    config_hash,
    load_config,
    save_config,
)
from .motion import (
    MotionDataset,
    MotionRecord,
    generate_procedural_motion,
    load_dataset,
    save_dataset,
)
from .sequence import DecodeConfig, load_ar_model, save_ar_model, train_ar
from .tokenizer import load_tokenizer, save_tokenizer, train_tokenizer, tokenize
from .video import (
    load_clip,
    load_video_tokenizer,
    render_motion,
    save_clip,
    save_video_tokenizer,
    train_video_tokenizer,
    video_encode,
)


def _resolve_config(args) -> tuple[ExperimentConfig, str]:
    cfg = load_config(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg, config_hash(cfg)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    return out


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def _metric_rows(metrics: dict, units: dict, n: int, cfg_hash: str) -> list[dict]:
    rows = []
    for name, value in metrics.items():
        rows.append({"metric": name, "value": value, "units": units.get(name, ""),
                     "n": n, "config_hash": cfg_hash})
    return rows


def _load_stage1(cfg: ExperimentConfig, out: Path):
    mt_path = out / "motion_tokenizer.vmck"
    vt_path = out / "video_tokenizer.vmck"
    missing = [str(p) for p in (mt_path, vt_path) if not p.exists()]
    if missing:
        raise SystemExit(
            f"stage-1 checkpoints missing: {', '.join(missing)}; "
            "run train-motion-tokenizer and train-video-tokenizer first")
    motion_tok, mt_meta = load_tokenizer(mt_path)
    video_tok, vt_meta = load_video_tokenizer(vt_path)
    if motion_tok.cfg.codebook_size != cfg.motion_tokenizer.codebook_size or \
            video_tok.cfg.vocab_size != cfg.video_tokenizer.vocab_size:
        raise SystemExit(
            "tokenizer checkpoints disagree with the configured vocabulary sizes; "
            "re-run stage 1 or fix the config")
    return motion_tok, video_tok


def _dataset_paths(cfg: ExperimentConfig, out: Path):
    return out / "motions.vmds", out / "body.vmtf"


def _load_world(cfg: ExperimentConfig, out: Path):
    motions_path, body_path = _dataset_paths(cfg, out)
    if not motions_path.exists() or not body_path.exists():
        raise SystemExit(f"dataset not found under {out}; run gen-data first")
    dataset = load_dataset(motions_path)
    body = load_body(body_path)
    train, held = pipeline.split_dataset(dataset, cfg.data.holdout)
    return dataset, body, train, held


def cmd_gen_data(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    if args.count is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, count=args.count))
    if args.frames is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, frames=args.frames))
    if args.family is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(
            cfg.data, families=tuple(args.family)))
    cfg_hash = config_hash(cfg)
    out = _out_dir(cfg)
    save_config(cfg, out / "config.yaml")

    body = build_default_body(seed=cfg.body_seed)
    save_body(out / "body.vmtf", body, seed=cfg.body_seed)

    data_seed = component_seed(cfg.seed, "data")
    records = []
    manifest = []
    clips_dir = out / "clips"
    clips_dir.mkdir(exist_ok=True)
    for i in range(cfg.data.count):
        family = cfg.data.families[i % len(cfg.data.families)]
        rec_seed = data_seed * 1_000_003 + i
        motion = generate_procedural_motion(rec_seed, cfg.data.frames, family,
                                            cfg.data.fps)
        rec = MotionRecord(f"{family}-{i:05d}", family, rec_seed, motion)
        records.append(rec)
        clip = render_motion(motion, body, cfg.render)
        render_hash = hashlib.sha256(clip.frames.tobytes()).hexdigest()[:16]
        manifest.append({"id": rec.record_id, "family": family, "seed": rec_seed,
                         "render_hash": render_hash,
                         "out_of_frame": clip.meta["out_of_frame_warning"]})
        if i < cfg.data.store_clips:
            save_clip(clips_dir / f"clip-{i:05d}.vmtf", clip)
    dataset = MotionDataset(records, meta={
        "config_hash": cfg_hash, "count": cfg.data.count, "frames": cfg.data.frames,
        "holdout": cfg.data.holdout, "seed": cfg.seed})
    save_dataset(dataset, out / "motions.vmds")
    (out / "pairs_manifest.json").write_text(json.dumps({
        "config_hash": cfg_hash, "records": manifest}, indent=1))
    print(f"gen-data: {cfg.data.count} motions ({cfg.data.frames} frames) -> {out} "
          f"[config {cfg_hash}]")


def cmd_train_motion_tokenizer(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, _, train, _ = _load_world(cfg, out)
    log_rows: list[dict] = []

    def log(record):
        log_rows.append(dict(record, config_hash=cfg_hash))

    model, history = train_tokenizer(train, cfg.motion_tokenizer,
                                     seed=component_seed(cfg.seed, "motion_tokenizer"),
                                     log_fn=log)
    save_tokenizer(out / "motion_tokenizer.vmck", model,
                   meta={"config_hash": cfg_hash, "train_sequences": len(train)})
    _write_jsonl(out / "motion_tokenizer_log.jsonl", log_rows)
    plots.save_loss_curve(history.records, out / "motion_tokenizer_loss.png",
                          "motion tokenizer training")
    print(f"train-motion-tokenizer: {len(train)} sequences, "
          f"final loss {history.records[-1]['loss']:.4f} -> {out / 'motion_tokenizer.vmck'}")


def cmd_train_video_tokenizer(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, _ = _load_world(cfg, out)
    clips = [render_motion(m, body, cfg.render)
             for m in train[:cfg.data.video_tokenizer_clips]]
    log_rows: list[dict] = []
    model, history = train_video_tokenizer(
        clips, cfg.video_tokenizer, seed=component_seed(cfg.seed, "video_tokenizer"),
        log_fn=lambda r: log_rows.append(dict(r, config_hash=cfg_hash)))
    save_video_tokenizer(out / "video_tokenizer.vmck", model,
                         meta={"config_hash": cfg_hash, "train_clips": len(clips)})
    _write_jsonl(out / "video_tokenizer_log.jsonl", log_rows)
    plots.save_loss_curve(history, out / "video_tokenizer_loss.png",
                          "video tokenizer training")
    print(f"train-video-tokenizer: {len(clips)} clips, "
          f"final loss {history[-1]['loss']:.4f} -> {out / 'video_tokenizer.vmck'}")


def cmd_train_ar(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, _ = _load_world(cfg, out)
    motion_tok, video_tok = _load_stage1(cfg, out)
    spec = pipeline.derive_spec(motion_tok.cfg, video_tok.cfg)
    pairs = pipeline.make_pairs(train, body, cfg.render, motion_tok, video_tok, spec)
    log_rows: list[dict] = []
    model, history = train_ar(
        pairs, spec, cfg.ar, seed=component_seed(cfg.seed, "ar"),
        log_fn=lambda r: log_rows.append(dict(r, config_hash=cfg_hash)))
    tasks = [h["task"] for h in history]
    save_ar_model(out / "ar_model.vmck", model, spec,
                  meta={"config_hash": cfg_hash, "train_pairs": len(pairs)})
    _write_jsonl(out / "ar_log.jsonl", log_rows)
    plots.save_loss_curve(history, out / "ar_loss.png", "unified AR training")
    print(f"train-ar: {len(pairs)} pairs, tasks {tasks.count('v2m')}:{tasks.count('i2vm')} "
          f"(logged v2m:i2vm), final v2m {history[-1]['loss_v2m']:.4f} "
          f"i2vm {history[-1]['loss_i2vm']:.4f} -> {out / 'ar_model.vmck'}")


def cmd_render_dataset(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, _ = _load_world(cfg, out)
    clips_dir = out / "clips"
    clips_dir.mkdir(exist_ok=True)
    count = min(args.count, len(train))
    for i in range(count):
        clip = render_motion(train[i], body, cfg.render)
        save_clip(clips_dir / f"clip-{i:05d}.vmtf", clip)
    if count:
        plots.save_clip_mosaic(render_motion(train[0], body, cfg.render),
                               clips_dir / "preview.png", "rendered clip 0")
    print(f"render-dataset: {count} clips -> {clips_dir} [config {cfg_hash}]")


def cmd_eval_tokenizer(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    if args.dataset:
        dataset = load_dataset(args.dataset)
        body = load_body(out / "body.vmtf")
        train, held = pipeline.split_dataset(dataset, cfg.data.holdout)
    else:
        dataset, body, train, held = _load_world(cfg, out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "motion_tokenizer.vmck"
    model, _ = load_tokenizer(ckpt)
    report = pipeline.evaluate_tokenizer(model, held or train, body,
                                         cfg.eval.utilization_samples)
    report["mean_pose_baseline_mpjpe_mm"] = pipeline.mean_pose_baseline(
        train, held or train, body)
    units = {"mpjpe_mm": "mm", "pa_mpjpe_mm": "mm", "pve_mm": "mm",
             "accel_ms2": "m/s^2", "utilization": "fraction",
             "mean_pose_baseline_mpjpe_mm": "mm"}
    rows = _metric_rows(report, units, report["sequences"], cfg_hash)
    _write_jsonl(out / "reports" / "eval_tokenizer.jsonl", rows)
    plots.save_metric_bars(
        {k: v for k, v in report.items() if k != "sequences"},
        out / "reports" / "eval_tokenizer.png", "motion tokenizer reconstruction")
    print(json.dumps(report, indent=1))


def cmd_eval_v2m(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, held = _load_world(cfg, out)
    motion_tok, video_tok = _load_stage1(cfg, out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "ar_model.vmck"
    model, spec, _ = load_ar_model(ckpt)
    report = pipeline.evaluate_v2m(model, spec, motion_tok, video_tok,
                                   held or train, body, cfg.render)
    units = {"mpjpe_mm": "mm", "pa_mpjpe_mm": "mm", "pve_mm": "mm",
             "accel_ms2": "m/s^2", "tokenizer_floor_mpjpe_mm": "mm",
             "floor_ratio": "ratio"}
    rows = _metric_rows(report, units, report["sequences"], cfg_hash)
    _write_jsonl(out / "reports" / "eval_v2m.jsonl", rows)
    plots.save_metric_bars({k: v for k, v in report.items() if k != "sequences"},
                           out / "reports" / "eval_v2m.png", "v2m capture accuracy")
    print(json.dumps(report, indent=1))


def cmd_eval_i2vm(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, held = _load_world(cfg, out)
    motion_tok, video_tok = _load_stage1(cfg, out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "ar_model.vmck"
    model, spec, _ = load_ar_model(ckpt)
    decode = DecodeConfig(mode="sample", temperature=cfg.sampling.i2vm_temperature,
                          top_k=cfg.sampling.i2vm_top_k)
    report = pipeline.evaluate_i2vm(
        model, spec, motion_tok, video_tok, held or train, train, body, cfg.render,
        samples=cfg.eval.samples, units=cfg.sampling.units, decode=decode,
        seed=component_seed(cfg.seed, "eval_i2vm"))
    units = {"fid_generated": "fid", "fid_permuted_baseline": "fid",
             "div_generated": "feature distance", "div_dataset": "feature distance",
             "div_ratio": "ratio"}
    rows = _metric_rows(report, units, report["samples"], cfg_hash)
    _write_jsonl(out / "reports" / "eval_i2vm.jsonl", rows)
    plots.save_metric_bars({k: v for k, v in report.items() if k != "samples"},
                           out / "reports" / "eval_i2vm.png", "i2vm distribution check")
    print(json.dumps(report, indent=1))


def cmd_sweep(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, held = _load_world(cfg, out)
    expansions = [int(x) for x in args.expansions.split(",")]
    codebooks = [int(x) for x in args.codebooks.split(",")]
    seeds = [component_seed(cfg.seed, f"sweep:{i}") for i in range(args.sweep_seeds)]
    rows = pipeline.sweep_tokenizer(
        train, held or train, body, cfg.motion_tokenizer, expansions, codebooks,
        seeds, log_fn=lambda r: print(
            f"  expansion={r['expansion']} codebook={r['codebook_size']} "
            f"seed={r['seed']} mpjpe={r['mpjpe_mm']:.2f}mm util={r['utilization']:.3f}"))
    csv_path = out / "reports" / "sweep.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["expansion", "codebook_size", "seed",
                                               "mpjpe_mm", "pve_mm", "accel_ms2",
                                               "utilization", "config_hash"])
        writer.writeheader()
        for row in rows:
            writer.writerow(dict(row, config_hash=cfg_hash))
    plots.save_sweep_figure([r for r in rows if r["seed"] == -1],
                            out / "reports" / "sweep.png")
    print(f"sweep: {len(rows)} rows -> {csv_path}")


def cmd_generate(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, held = _load_world(cfg, out)
    motion_tok, video_tok = _load_stage1(cfg, out)
    model, spec, _ = load_ar_model(out / "ar_model.vmck")
    if args.image:
        image = load_clip(args.image).frames[0]
    else:
        sources = held or train
        image = render_motion(sources[args.index % len(sources)], body,
                              cfg.render).frames[0]
    units = args.units or cfg.sampling.units
    decode = DecodeConfig(mode="sample", temperature=cfg.sampling.i2vm_temperature,
                          top_k=cfg.sampling.i2vm_top_k)
    generator = torch.Generator().manual_seed(component_seed(cfg.seed, "generate"))
    motion, clip = pipeline.generate_from_image(
        model, spec, motion_tok, video_tok, image, units, decode, generator,
        fps=cfg.data.fps)
    gen_dir = out / "generated"
    gen_dir.mkdir(exist_ok=True)
    save_dataset(MotionDataset([MotionRecord("generated-0", "generated", cfg.seed,
                                             motion)],
                               meta={"config_hash": cfg_hash}),
                 gen_dir / "generated_motion.vmds")
    save_clip(gen_dir / "generated_clip.vmtf", clip)
    mot_tokens = tokenize(motion_tok, motion)
    _write_jsonl(gen_dir / "generate_log.jsonl", [{
        "event": "generate", "units": units, "config_hash": cfg_hash,
        "motion_tokens": int(len(mot_tokens.ids)),
        "frames": motion.frame_count}])
    plots.save_motion_overview(motion, body, gen_dir / "generated_motion.png",
                               "generated motion")
    plots.save_clip_mosaic(clip, gen_dir / "generated_clip.png", "generated clip")
    print(f"generate: {units} unit(s) -> {gen_dir}")


def cmd_capture(args) -> None:
    cfg, cfg_hash = _resolve_config(args)
    out = _out_dir(cfg)
    _, body, train, held = _load_world(cfg, out)
    motion_tok, video_tok = _load_stage1(cfg, out)
    model, spec, _ = load_ar_model(out / "ar_model.vmck")
    if args.video:
        clip = load_clip(args.video)
    else:
        sources = held or train
        clip = render_motion(sources[args.index % len(sources)], body, cfg.render)
    motion = pipeline.capture_motion(model, spec, motion_tok, video_tok, clip)
    cap_dir = out / "captured"
    cap_dir.mkdir(exist_ok=True)
    save_dataset(MotionDataset([MotionRecord("captured-0", "captured", cfg.seed,
                                             motion)],
                               meta={"config_hash": cfg_hash}),
                 cap_dir / "captured_motion.vmds")
    tokens = video_encode(video_tok, clip)
    _write_jsonl(cap_dir / "capture_log.jsonl", [{
        "event": "capture", "config_hash": cfg_hash,
        "video_tokens": tokens.token_count, "frames": motion.frame_count}])
    plots.save_motion_overview(motion, body, cap_dir / "captured_motion.png",
                               "captured motion")
    print(f"capture: {clip.frame_count} frames -> {cap_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="videomotion",
        description="Joint autoregressive video+motion modeling at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dot-path config override (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--out", type=str, default=None, help="output directory override")
        return p

    p = common(sub.add_parser("gen-data", help="generate paired synthetic data"))
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--family", action="append", default=None,
                   help="restrict to a family (repeatable)")
    p.set_defaults(fn=cmd_gen_data)

    common(sub.add_parser("train-motion-tokenizer",
                          help="stage 1: train the motion VQ tokenizer")
           ).set_defaults(fn=cmd_train_motion_tokenizer)
    common(sub.add_parser("train-video-tokenizer",
                          help="stage 1: fit the toy video tokenizer")
           ).set_defaults(fn=cmd_train_video_tokenizer)
    common(sub.add_parser("train-ar", help="stage 2: train the unified AR model")
           ).set_defaults(fn=cmd_train_ar)

    p = common(sub.add_parser("render-dataset", help="render clips for dataset records"))
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(fn=cmd_render_dataset)

    p = common(sub.add_parser("eval-tokenizer", help="reconstruction metrics report"))
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--dataset", type=str, default=None,
                   help="motion dataset file (defaults to the run's motions.vmds)")
    p.set_defaults(fn=cmd_eval_tokenizer)
    p = common(sub.add_parser("eval-v2m", help="capture accuracy report"))
    p.add_argument("--checkpoint", type=str, default=None)
    p.set_defaults(fn=cmd_eval_v2m)
    p = common(sub.add_parser("eval-i2vm", help="generation distribution report"))
    p.add_argument("--checkpoint", type=str, default=None)
    p.set_defaults(fn=cmd_eval_i2vm)

    p = common(sub.add_parser("sweep", help="expansion x codebook tokenizer sweep"))
    p.add_argument("--expansions", type=str, default="1,4,36")
    p.add_argument("--codebooks", type=str, default="512")
    p.add_argument("--sweep-seeds", type=int, default=3)
    p.set_defaults(fn=cmd_sweep)

    p = common(sub.add_parser("generate", help="i2vm: image -> video + motion"))
    p.add_argument("--image", type=str, default=None,
                   help="clip file whose first frame conditions the generation")
    p.add_argument("--index", type=int, default=0,
                   help="held-out record to take the reference image from")
    p.add_argument("--units", type=int, default=None, help="16-frame units to generate")
    p.set_defaults(fn=cmd_generate)

    p = common(sub.add_parser("capture", help="v2m: video -> motion"))
    p.add_argument("--video", type=str, default=None, help="input clip file")
    p.add_argument("--index", type=int, default=0,
                   help="held-out record to capture when no clip is given")
    p.set_defaults(fn=cmd_capture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
