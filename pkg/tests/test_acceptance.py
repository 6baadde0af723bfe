"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s`. The end-to-end criteria
(08-11) train real models and dominate the runtime; everything else finishes
in seconds to a couple of minutes.
"""

import dataclasses
import time

import numpy as np
import pytest
import torch

from videomotion.body import build_default_body, joints_from_motion
from videomotion.metrics import (
    accel_error,
    diversity,
    fid,
    kinematic_features,
    mpjpe,
    pa_mpjpe,
    procrustes_align,
    pve,
)
from videomotion.motion import (
    MotionSequence,
    channel_concat,
    channel_split,
    generate_dataset,
    generate_procedural_motion,
    velocity_decode,
    velocity_encode,
)
from videomotion.sequence import (
    ARConfig,
    DecodeConfig,
    PairExample,
    SequenceSpec,
    UnifiedTransformer,
    VocabLayout,
    ar_loss,
    build_i2vm_sequence,
    build_v2m_sequence,
    forward,
    parse_sequence,
    rotate_slice,
    sample,
    train_ar,
)
from videomotion.tokenizer import (
    MotionTokens,
    MotionVQVAE,
    TokenizerConfig,
    codebook_utilization,
    motion_to_velocity_tensor,
    tokenize,
    train_tokenizer,
    vqvae_loss,
)
from videomotion.video import (
    RenderConfig,
    VideoClip,
    VideoTokenizerConfig,
    VideoVQ,
    render_motion,
    train_video_tokenizer,
    video_encode,
)
from videomotion import pipeline

from conftest import random_motion


def report(criterion: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\n[acceptance] {criterion}: {status}  {detail}")
    assert passed, f"{criterion}: {detail}"


# --------------------------------------------------------------------------
# 01 codec exactness


def test_01_codec_exactness():
    rng = np.random.default_rng(11)
    worst_vel = 0.0
    concat_exact = True
    for _ in range(1000):
        frames = int(rng.integers(1, 257))
        m = random_motion(rng, frames=frames)
        back = velocity_decode(velocity_encode(m))
        for name in ("theta", "beta", "phi", "tau"):
            err = float(np.abs(getattr(back, name) - getattr(m, name)).max())
            worst_vel = max(worst_vel, err)
        split = channel_split(channel_concat(m), fps=m.fps)
        for name in ("theta", "beta", "phi", "tau"):
            if not np.array_equal(getattr(split, name), getattr(m, name)):
                concat_exact = False
    report("01 codec exactness", worst_vel < 1e-5 and concat_exact,
           f"velocity round-trip max abs err {worst_vel:.2e} over 1000 motions; "
           f"channel concat/split bit-exact: {concat_exact}")


# --------------------------------------------------------------------------
# 02 token-count law


def test_02_token_count_law():
    rng = np.random.default_rng(12)
    model36 = MotionVQVAE(TokenizerConfig(expansion=36, hidden=16, conv_blocks=1,
                                          codebook_size=8, code_dim=4))
    ok = True
    details = []
    for frames in (16, 32, 64):
        tokens = tokenize(model36, random_motion(rng, frames=frames))
        ok &= len(tokens.ids) == 36 * frames
        details.append(f"T={frames}:{len(tokens.ids)}")
    for expansion in (1, 4):
        model = MotionVQVAE(TokenizerConfig(expansion=expansion, hidden=16,
                                            conv_blocks=1, codebook_size=8, code_dim=4))
        tokens = tokenize(model, random_motion(rng, frames=32))
        ok &= len(tokens.ids) == expansion * 32
    video = VideoVQ(VideoTokenizerConfig(vocab_size=32))
    clip = VideoClip(rng.random((16, 64, 64, 3)).astype(np.float32))
    vt = video_encode(video, clip)
    ok &= vt.grid == (2, 4, 4) and vt.token_count == 32
    report("02 token-count law", ok,
           f"motion tokens {'/'.join(details)} (36*T); "
           f"visual tokens per 16-frame 64x64 unit: {vt.token_count}")


# --------------------------------------------------------------------------
# 03 quantizer oracle equivalence


def test_03_quantizer_oracle():
    rng = np.random.default_rng(13)
    mismatches = 0
    instances = 0
    for _ in range(100):
        size = int(rng.integers(4, 17))
        dim = int(rng.integers(2, 7))
        model = MotionVQVAE(TokenizerConfig(expansion=1, hidden=8, conv_blocks=1,
                                            codebook_size=size, code_dim=dim))
        book = rng.normal(size=(size, dim)).astype(np.float32)
        with torch.no_grad():
            model.codebook.weight.copy_(torch.from_numpy(book))
        queries = rng.normal(size=(100, dim)).astype(np.float32)
        ids, _ = model.quantize(torch.from_numpy(queries)[None])
        ids = ids[0].numpy()
        # independent brute-force scan in float64
        d = ((queries[:, None, :].astype(np.float64)
              - book[None, :, :].astype(np.float64)) ** 2).sum(axis=2)
        oracle = d.argmin(axis=1)
        mismatches += int((ids != oracle).sum())
        instances += len(queries)
    # constructed tie cases: duplicates and symmetric equidistant entries
    tie_ok = True
    model = MotionVQVAE(TokenizerConfig(expansion=1, hidden=8, conv_blocks=1,
                                        codebook_size=6, code_dim=2))
    with torch.no_grad():
        model.codebook.weight.copy_(torch.tensor(
            [[4.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]))
    ids, _ = model.quantize(torch.zeros(1, 4, 2))
    tie_ok &= bool((ids == 1).all())  # entries 1..5 all at distance 1; lowest wins
    ids, _ = model.quantize(torch.tensor([[[1.0, 0.0]]]))
    tie_ok &= ids[0, 0].item() == 1   # exact duplicate of entries 1 and 3
    report("03 quantizer oracle equivalence",
           mismatches == 0 and instances == 10000 and tie_ok,
           f"{instances} random (query, codebook) instances, {mismatches} mismatches; "
           f"tie cases resolve to the lowest index: {tie_ok}")


# --------------------------------------------------------------------------
# 04 gradient correctness


def test_04_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(14)
    # (a) quantization terms of the tokenizer loss, with the stop-gradient
    # side frozen at the base point for the finite-difference oracle.
    lam = 0.25
    feats0 = torch.from_numpy(rng.normal(size=(1, 8, 4))).double()
    book0 = torch.from_numpy(rng.normal(size=(12, 4))).double()
    ids = torch.from_numpy(np.asarray(rng.integers(0, 12, size=(1, 8)))).long()
    x = torch.from_numpy(rng.normal(size=(1, 4, 79))).double()
    feats = feats0.clone().requires_grad_()
    book = book0.clone().requires_grad_()
    total, _ = vqvae_loss(x, x.clone(), feats, book[ids], commitment=lam)
    total.backward()
    eps = 1e-6
    max_rel_a = 0.0

    def commit_value(f):
        return lam * ((f - book0[ids]) ** 2).mean().item()

    def code_value(b):
        return ((feats0 - b[ids]) ** 2).mean().item()

    for base, grad, fn in ((feats0, feats.grad, commit_value),
                           (book0, book.grad, code_value)):
        flat = base.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn(base)
            flat[i] = orig - eps
            down = fn(base)
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            if abs(fd) < 1e-12 and abs(gflat[i].item()) < 1e-12:
                continue
            max_rel_a = max(max_rel_a, abs(fd - gflat[i].item())
                            / max(abs(fd), abs(gflat[i].item())))

    # (b) the full AR cross-entropy on a 2-layer width-16 model in float64
    torch.manual_seed(14)
    spec = SequenceSpec(VocabLayout(16, 12), motion_tokens_per_unit=16,
                        visual_grid=(2, 2, 2), image_grid=(2, 2), temporal_factor=8)
    cfg = ARConfig(layers=2, heads=2, width=16, rope_split=(4, 2, 2), max_len=64)
    model = UnifiedTransformer(cfg, spec.layout).double()
    video = [rng.integers(0, 16, size=8).astype(np.int64)]
    motion = [rng.integers(0, 12, size=16).astype(np.int64)]
    seq = build_v2m_sequence(spec, video, motion)
    ids_t = torch.from_numpy(seq.ids)

    def loss_fn():
        return ar_loss(forward(model, ids_t, seq), ids_t, seq.target_start)

    loss = loss_fn()
    loss.backward()
    params = dict(model.named_parameters())
    max_rel_b = 0.0
    checked = 0
    eps = 1e-5
    for name in sorted(params):
        par = params[name]
        flat = par.detach().reshape(-1)
        for idx in rng.integers(0, flat.numel(), size=2):
            idx = int(idx)
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = loss_fn().item()
            flat[idx] = orig - eps
            down = loss_fn().item()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            auto = par.grad.reshape(-1)[idx].item()
            if abs(fd) < 1e-10 and abs(auto) < 1e-10:
                continue
            max_rel_b = max(max_rel_b, abs(fd - auto) / max(abs(fd), abs(auto)))
            checked += 1
    report("04 gradient correctness", max_rel_a < 1e-3 and max_rel_b < 1e-3,
           f"quantization terms max rel err {max_rel_a:.2e}; "
           f"AR loss max rel err {max_rel_b:.2e} over {checked} sampled coordinates "
           f"({time.time() - start:.0f}s)")


# --------------------------------------------------------------------------
# 05 mask causality


def test_05_mask_causality():
    start = time.time()
    rng = np.random.default_rng(15)
    torch.manual_seed(15)
    spec = SequenceSpec(VocabLayout(24, 16), motion_tokens_per_unit=16,
                        visual_grid=(2, 2, 2), image_grid=(2, 2), temporal_factor=8)
    cfg = ARConfig(layers=2, heads=2, width=32, rope_split=(8, 4, 4), max_len=128)
    model = UnifiedTransformer(cfg, spec.layout)
    model.eval()
    failures = 0
    for trial in range(100):
        n_units = int(rng.integers(1, 3))
        video = [rng.integers(0, 24, size=8).astype(np.int64) for _ in range(n_units)]
        motion = [rng.integers(0, 16, size=16).astype(np.int64) for _ in range(n_units)]
        if trial % 2 == 0:
            seq = build_v2m_sequence(spec, video, motion)
        else:
            image = rng.integers(0, 24, size=4).astype(np.int64)
            seq = build_i2vm_sequence(spec, image, video, motion)
        with torch.no_grad():
            base = forward(model, torch.from_numpy(seq.ids), seq)
        probe = int(rng.integers(seq.target_start, len(seq.ids)))
        ids2 = seq.ids.copy()
        lo = 24 if seq.modality[probe] == 1 else 0
        size = 16 if seq.modality[probe] == 1 else 24
        ids2[probe] = lo + ((ids2[probe] - lo + 1 + int(rng.integers(0, size - 1)))
                            % size)
        with torch.no_grad():
            out = forward(model, torch.from_numpy(ids2), seq)
        delta = (out - base).abs().max(dim=-1).values
        if probe > 0 and delta[:probe].max().item() > 1e-6:
            failures += 1
        if delta[probe:].max().item() <= 1e-6:
            failures += 1
        # condition perturbation reaches every target row
        cond_pos = int(rng.integers(1, seq.target_start - 1))
        ids3 = seq.ids.copy()
        ids3[cond_pos] = (ids3[cond_pos] + 1) % 24 if seq.modality[cond_pos] == 0 \
            else ids3[cond_pos]
        if ids3[cond_pos] != seq.ids[cond_pos]:
            with torch.no_grad():
                out3 = forward(model, torch.from_numpy(ids3), seq)
            delta3 = (out3 - base).abs().max(dim=-1).values
            if delta3[seq.target_start:].min().item() <= 0.0:
                failures += 1
    report("05 mask causality", failures == 0,
           f"100 randomized perturbation trials, {failures} violations "
           f"({time.time() - start:.0f}s)")


# --------------------------------------------------------------------------
# 06 rope relative-offset identity


def test_06_rope_relative_identity():
    rng = np.random.default_rng(16)
    worst = 0.0
    base = 10000.0
    for dim in (16, 8):  # temporal slice and one spatial factor size
        q = torch.from_numpy(rng.normal(size=dim))
        k = torch.from_numpy(rng.normal(size=dim))
        t_grid = np.linspace(0.0, 31.0, 32)
        products = np.empty((32, 32))
        for i, t1 in enumerate(t_grid):
            qr = rotate_slice(q[None], torch.tensor([t1]).double(), base)[0]
            for j, t2 in enumerate(t_grid):
                kr = rotate_slice(k[None], torch.tensor([t2]).double(), base)[0]
                products[i, j] = float(qr @ kr)
        # same offset -> same product: compare all diagonals
        for off in range(-31, 32):
            diag = np.diagonal(products, offset=off)
            if len(diag) > 1:
                worst = max(worst, float(diag.max() - diag.min()))
    report("06 rope relative-offset identity", worst < 1e-6,
           f"max in-diagonal spread over 32x32 offset grids: {worst:.2e}")


# --------------------------------------------------------------------------
# 07 grammar closure


def test_07_grammar_closure():
    start = time.time()
    rng = np.random.default_rng(17)
    spec = SequenceSpec(VocabLayout(24, 16), motion_tokens_per_unit=16,
                        visual_grid=(2, 2, 2), image_grid=(2, 2), temporal_factor=8)
    cfg = ARConfig(layers=1, heads=2, width=32, rope_split=(8, 4, 4), max_len=128)
    parse_failures = 0
    sampled = 0
    for ckpt in range(5):
        torch.manual_seed(1000 + ckpt)
        model = UnifiedTransformer(cfg, spec.layout)
        model.eval()
        gen = torch.Generator().manual_seed(ckpt)
        for i in range(200):
            if i % 2 == 0:
                video = [rng.integers(0, 24, size=8).astype(np.int64)]
                cond = build_v2m_sequence(spec, video, [])
                decode = DecodeConfig(mode="greedy" if i % 4 == 0 else "sample",
                                      temperature=1.0, top_k=8)
            else:
                image = rng.integers(0, 24, size=4).astype(np.int64)
                cond = build_i2vm_sequence(spec, image, [], [], n_units=1)
                decode = DecodeConfig(mode="sample", temperature=0.9, top_k=8)
            out = sample(model, cond, decode, generator=gen)
            parsed = parse_sequence(spec, out.ids)
            sampled += 1
            if not parsed.ok or parsed.partial:
                parse_failures += 1
    # fuzzed corruptions are always rejected
    lay = spec.layout
    fuzz_failures = 0
    for trial in range(300):
        video = [rng.integers(0, 24, size=8).astype(np.int64)]
        motion = [rng.integers(0, 16, size=16).astype(np.int64)]
        if trial % 2 == 0:
            seq = build_v2m_sequence(spec, video, motion)
        else:
            image = rng.integers(0, 24, size=4).astype(np.int64)
            seq = build_i2vm_sequence(spec, image, video, motion)
        ids = seq.ids.copy()
        pos = int(rng.integers(0, len(ids)))
        cls = lay.classify(int(ids[pos]))
        choices = {0: [lay.visual_size, lay.t1, lay.pad],
                   1: [0, lay.stg, lay.pad],
                   2: [lay.visual_size, lay.pad]}[cls]
        ids[pos] = choices[int(rng.integers(0, len(choices)))]
        parsed = parse_sequence(spec, ids)
        if parsed.ok or parsed.violation_index > pos:
            fuzz_failures += 1
    report("07 grammar closure", parse_failures == 0 and fuzz_failures == 0,
           f"{sampled} sampled sequences all parsed ({parse_failures} failures); "
           f"300 corruptions all rejected at/before the corrupted index "
           f"({fuzz_failures} misses) ({time.time() - start:.0f}s)")


# --------------------------------------------------------------------------
# 12 metric oracles


def test_12_metric_oracles():
    rng = np.random.default_rng(22)
    # pa_mpjpe <= mpjpe over 1000 random trials
    pa_violations = 0
    for _ in range(1000):
        gt = rng.normal(0.0, 0.5, size=(2, 8, 3))
        pred = gt + rng.normal(0.0, 0.15, size=gt.shape)
        if pa_mpjpe(pred, gt) > mpjpe(pred, gt) + 1e-9:
            pa_violations += 1
    # procrustes recovers constructed similarity transforms to 1e-8
    from videomotion.body import axis_angle_to_matrix
    proc_worst = 0.0
    for _ in range(50):
        x = rng.normal(size=(10, 3))
        rot0 = axis_angle_to_matrix(rng.normal(0, 0.8, 3))
        scale0 = rng.uniform(0.5, 2.0)
        t0 = rng.normal(0, 1, 3)
        fit = procrustes_align(x, scale0 * x @ rot0.T + t0)
        proc_worst = max(proc_worst,
                         abs(fit.scale - scale0),
                         float(np.abs(fit.rotation - rot0).max()),
                         float(np.abs(fit.translation - t0).max()))
    # fid(A, A) = 0 +- 1e-6
    feats = rng.normal(size=(64, 6))
    fid_self = fid(feats, feats)
    # naive-loop oracles for each metric
    pred = rng.normal(size=(4, 6, 3))
    gt = pred + rng.normal(0, 0.05, size=pred.shape)
    m_loop = np.mean([np.linalg.norm((pred[t, j] - pred[t, 0]) - (gt[t, j] - gt[t, 0]))
                      for t in range(4) for j in range(6)]) * 1000
    mpjpe_ok = abs(mpjpe(pred, gt) - m_loop) < 1e-9
    acc_loop = np.mean([
        np.linalg.norm((pred[t + 1, j] - 2 * pred[t, j] + pred[t - 1, j]) * 900
                       - (gt[t + 1, j] - 2 * gt[t, j] + gt[t - 1, j]) * 900)
        for t in range(1, 3) for j in range(6)])
    accel_ok = abs(accel_error(pred, gt, fps=30.0) - acc_loop) < 1e-9
    feats_small = rng.normal(size=(10, 4))
    div_loop = np.mean([np.linalg.norm(feats_small[i] - feats_small[j])
                        for i in range(10) for j in range(i + 1, 10)])
    div_ok = abs(diversity(feats_small) - div_loop) < 1e-12
    verts_p = rng.normal(size=(3, 30, 3))
    verts_g = rng.normal(size=(3, 30, 3))
    pv_loop = np.mean([
        np.linalg.norm((verts_p[t, v] - verts_p[t].mean(axis=0))
                       - (verts_g[t, v] - verts_g[t].mean(axis=0)))
        for t in range(3) for v in range(30)]) * 1000
    pve_ok = abs(pve(verts_p, verts_g) - pv_loop) < 1e-9
    passed = (pa_violations == 0 and proc_worst < 1e-8 and fid_self < 1e-6
              and mpjpe_ok and accel_ok and div_ok and pve_ok)
    report("12 metric oracles", passed,
           f"pa<=mpjpe violations {pa_violations}/1000; procrustes recovery err "
           f"{proc_worst:.1e}; fid(A,A)={fid_self:.1e}; loop oracles "
           f"mpjpe={mpjpe_ok} accel={accel_ok} div={div_ok} pve={pve_ok}")
