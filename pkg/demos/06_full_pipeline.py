"""The whole pipeline on a shrunken budget: corpus -> tokenizer -> base ->
residual -> generation -> metric protocol.

This is the same path the CLI drives; step counts are cut so it finishes in
roughly two minutes. For the full laptop profile use the CLI:

    reactgen synth-data --out data
    reactgen train-tokenizer --data data --out runs/tokenizer.pt
    reactgen train-base --data data --tokenizer runs/tokenizer.pt --out runs/base.pt
    reactgen train-residual --data data --tokenizer runs/tokenizer.pt --out runs/residual.pt
    reactgen evaluate --data data --tokenizer runs/tokenizer.pt \
        --base runs/base.pt --residual runs/residual.pt --out runs/report.json
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from reactgen.config import RunConfig
from reactgen.dataset import synth_corpus, load_pair
from reactgen.eval_metrics import extract_features, fid, reports_to_table
from reactgen.motion_tokenizer import load_tokenizer
from reactgen.pipeline import (decode_random_tokens, evaluate, fit_extractor,
                               generate_reaction, train_base, train_residual,
                               train_tokenizer, _test_entries)
from reactgen.pose_codec import NormStats
from reactgen.reaction_model import load_reaction_model

torch.set_num_threads(1)
cfg = RunConfig.toy_profile()
cfg.eval.extractor_steps = 150
cfg.eval.mm_videos = 2

with tempfile.TemporaryDirectory() as work:
    work = Path(work)
    data = work / "data"
    print("1) synthesizing the paired corpus...")
    entries = synth_corpus(cfg.data.n_pairs, cfg.data.n_categories, seed=0,
                           out_dir=data, video_frames=cfg.data.video_frames,
                           video_dim=cfg.data.video_dim)
    n_train = sum(e.split == "train" for e in entries)
    print(f"   {len(entries)} pairs, {n_train} train / {len(entries) - n_train} test")

    print("2) training the motion tokenizer (800 quick steps)...")
    train_tokenizer(cfg, data, work / "tok.pt", entries=entries, max_steps=800)

    print("3) training the base transformer (600 steps)...")
    train_base(cfg, data, work / "tok.pt", work / "base.pt", entries=entries,
               max_steps=600)

    print("4) training the residual transformer (400 steps)...")
    train_residual(cfg, data, work / "tok.pt", work / "res.pt", entries=entries,
                   max_steps=400)

    tokenizer, mean, std = load_tokenizer(work / "tok.pt")
    stats = NormStats(mean, std)
    base = load_reaction_model(work / "base.pt")
    residual = load_reaction_model(work / "res.pt")

    print("5) generating a reaction for one held-out video...")
    test = _test_entries(entries)
    feats, gt_motion = load_pair(data, test[0])
    motion = generate_reaction(feats, gt_motion.n_frames, tokenizer, stats,
                               base, residual, seed=7)
    print(f"   generated {motion.n_frames} x {motion.dim} motion for "
          f"'{test[0].subcategory}'")

    print("6) quick quality signal: generated vs random-token decodes...")
    extractor, ex_stats = fit_extractor(cfg, data, entries)
    test_pairs = [load_pair(data, e) for e in test]
    real = extract_features([m for _, m in test_pairs], extractor, ex_stats)
    gens = [generate_reaction(f, m.n_frames, tokenizer, stats, base, residual,
                              seed=100 + i)
            for i, (f, m) in enumerate(test_pairs)]
    rng = np.random.default_rng(0)
    rands = [decode_random_tokens(tokenizer, stats, m.n_frames // 4, rng)
             for _, m in test_pairs]
    gen_fid = fid(real, extract_features(gens, extractor, ex_stats, "generated"))
    rand_fid = fid(real, extract_features(rands, extractor, ex_stats, "generated"))
    print(f"   FID(generated) = {gen_fid:.3f}   FID(random tokens) = {rand_fid:.3f}")

    print("7) the repetition protocol (trimmed to 3 repetitions here):")
    reports = evaluate(cfg, data, work / "tok.pt", work / "base.pt",
                       work / "res.pt", entries=entries, repetitions=3,
                       extractor_and_stats=(extractor, ex_stats))
    print(reports_to_table(reports))
