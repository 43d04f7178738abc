"""End-to-end stages: corpus preparation, training loops, generation, and the
evaluation protocol wiring. The CLI and the demo scripts are thin wrappers
over these functions.
"""

from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np
import torch

from . import eval_metrics, pose_codec
from .config import RunConfig
from .dataset import ManifestEntry, load_manifest, load_pair, synth_corpus
from .eval_metrics import (MetricReport, MotionFeatureExtractor, extract_features,
                           evaluate_protocol, train_extractor)
from .motion_tokenizer import (ResidualVqVae, TokenizerConfig, TokenizerTrainer,
                               load_tokenizer, save_tokenizer)
from .pose_codec import MotionSequence, NormStats, denormalize, normalize
from .reaction_model import (GenerationConfig, MaskedReactionTransformer,
                             ReactionModelConfig, ResidualReactionTransformer,
                             TransformerTrainer, generate_base,
                             load_reaction_model, masked_train_step,
                             residual_predict, residual_train_step,
                             save_reaction_model)
from .skeleton import skeleton_for


# centimetre-scale floor: dimensions varying less than this carry no signal
# worth weighting at full z-score amplification
TRAIN_STD_FLOOR = 0.01


def prepare_corpus(cfg: RunConfig, data_dir=None) -> list[ManifestEntry]:
    data = cfg.data
    return synth_corpus(
        n_pairs=data.n_pairs, n_categories=data.n_categories, seed=cfg.seed,
        out_dir=data_dir or cfg.data_dir, skeleton=skeleton_for(data.n_joints),
        video_frames=data.video_frames, video_dim=data.video_dim,
        min_frames=data.min_frames, max_frames=data.max_frames)


def _train_entries(entries):
    return [e for e in entries if e.split == "train"]


def _test_entries(entries):
    return [e for e in entries if e.split == "test"]


def _load_motions(data_dir, entries) -> list[MotionSequence]:
    return [load_pair(data_dir, e)[1] for e in entries]


def _crop(arr: np.ndarray, window: int, rng: np.random.Generator) -> np.ndarray:
    n = arr.shape[0]
    if n >= window:
        start = int(rng.integers(0, n - window + 1))
        return arr[start:start + window]
    reps = -(-window // n)
    return np.tile(arr, (reps, 1))[:window]


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tokenizer_config(cfg: RunConfig) -> TokenizerConfig:
    t = cfg.tokenizer
    return TokenizerConfig(
        feature_dim=skeleton_for(cfg.data.n_joints).feature_dim,
        codebook_size=t.codebook_size, code_dim=t.code_dim,
        n_residual_layers=t.n_residual_layers, width=t.width, beta=t.beta,
        ema_decay=t.ema_decay, reset_interval=t.reset_interval,
        reset_threshold=t.reset_threshold)


def transformer_config(cfg: RunConfig) -> ReactionModelConfig:
    t = cfg.transformer
    return ReactionModelConfig(
        vocab_size=cfg.tokenizer.codebook_size, video_dim=cfg.data.video_dim,
        latent_dim=t.latent_dim, n_layers=t.n_layers, n_heads=t.n_heads,
        ffn_dim=t.ffn_dim, dropout=t.dropout,
        use_intention_extraction=t.use_intention_extraction,
        use_frame_cross_attention=t.use_frame_cross_attention)


def train_tokenizer(cfg: RunConfig, data_dir, out_path, entries=None,
                    max_steps: int | None = None,
                    time_budget_s: float | None = None,
                    log=None) -> list[float]:
    """Train the motion tokenizer on the corpus's train split and save a
    checkpoint (with the normalization stats). Returns the loss history."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 101])
    entries = entries or load_manifest(Path(data_dir) / "manifest.jsonl")
    motions = _load_motions(data_dir, _train_entries(entries))
    stats = pose_codec.compute_norm_stats(motions, std_floor=TRAIN_STD_FLOOR)
    arrays = [normalize(m, stats).features for m in motions]

    t = cfg.tokenizer
    model = ResidualVqVae(tokenizer_config(cfg))
    steps_per_epoch = max(1, len(arrays) // t.batch_size)
    total = t.epochs * steps_per_epoch if max_steps is None else max_steps
    trainer = TokenizerTrainer(model, lr=t.lr, warmup_iters=t.warmup_iters,
                               total_steps=total, seed=cfg.seed)
    history = []
    start = time.monotonic()
    for step in range(total):
        rows = rng.integers(0, len(arrays), size=t.batch_size)
        batch = np.stack([_crop(arrays[r], t.window, rng) for r in rows])
        terms = trainer.step(torch.from_numpy(batch))
        history.append(terms.reconstruction)
        if log and (step + 1) % 200 == 0:
            log(f"tokenizer step {step + 1}/{total} recon {terms.reconstruction:.5f}")
        if time_budget_s and time.monotonic() - start > time_budget_s:
            break
    model.eval()
    save_tokenizer(out_path, model, stats.mean, stats.std)
    return history


def reconstruction_mse(tokenizer: ResidualVqVae, stats: NormStats,
                       motions: list[MotionSequence]) -> float:
    """Mean squared reconstruction error of the full quantized round trip, in
    normalized feature space, over whole motions."""
    total, count = 0.0, 0
    with torch.no_grad():
        for motion in motions:
            x = torch.from_numpy(normalize(motion, stats).features)[None]
            tokens = tokenizer.tokenize(x)
            recon = tokenizer.detokenize(tokens)
            n = recon.shape[1]
            err = ((recon - x[:, :n]) ** 2).sum()
            total += float(err)
            count += recon.numel()
    return total / count


def _tokenize_corpus(tokenizer: ResidualVqVae, stats: NormStats, data_dir,
                     entries) -> list[dict]:
    """Precompute (tokens, frame features) per pair; the tokenizer is frozen
    while the transformers train."""
    out = []
    for e in entries:
        feats, motion = load_pair(data_dir, e)
        x = torch.from_numpy(normalize(motion, stats).features)[None]
        n_use = (motion.n_frames // 4) * 4
        tokens = tokenizer.tokenize(x[:, :n_use])[0]  # (V+1, n)
        out.append({"entry": e, "tokens": tokens.numpy(),
                    "features": feats.astype(np.float32)})
    return out


def _pad_token_batch(samples, pad_value: int):
    """Stack variable-length token rows into (B, ..., n_max) + pad mask."""
    n_max = max(s["tokens"].shape[-1] for s in samples)
    stacks, pads, feats = [], [], []
    for s in samples:
        tok = s["tokens"]
        n = tok.shape[-1]
        padded = np.full(tok.shape[:-1] + (n_max,), pad_value, dtype=np.int64)
        padded[..., :n] = tok
        mask = np.zeros(n_max, dtype=bool)
        mask[n:] = True
        stacks.append(padded)
        pads.append(mask)
        feats.append(s["features"])
    return (np.stack(stacks), np.stack(pads),
            torch.from_numpy(np.stack(feats)))


def train_base(cfg: RunConfig, data_dir, tokenizer_path, out_path, entries=None,
               max_steps: int | None = None, time_budget_s: float | None = None,
               log=None) -> list[float]:
    """Train the masked base-layer transformer against frozen tokens."""
    torch.manual_seed(cfg.seed + 1)
    rng = np.random.default_rng([cfg.seed, 202])
    tokenizer, mean, std = load_tokenizer(tokenizer_path)
    stats = NormStats(mean=mean, std=std)
    entries = entries or load_manifest(Path(data_dir) / "manifest.jsonl")
    samples = _tokenize_corpus(tokenizer, stats, data_dir, _train_entries(entries))

    t = cfg.transformer
    model = MaskedReactionTransformer(transformer_config(cfg))
    trainer = TransformerTrainer(model, lr=t.lr, warmup_iters=t.warmup_iters)
    steps_per_epoch = max(1, len(samples) // t.batch_size)
    total = t.epochs * steps_per_epoch if max_steps is None else max_steps
    history = []
    start = time.monotonic()
    for step in range(total):
        rows = rng.integers(0, len(samples), size=t.batch_size)
        batch = [samples[r] for r in rows]
        base = [{"tokens": s["tokens"][0], "features": s["features"]} for s in batch]
        tokens, _, feats = _pad_token_batch(base, model.cfg.pad_id)
        loss = masked_train_step(trainer, tokens, feats, rng)
        history.append(loss)
        if log and (step + 1) % 200 == 0:
            log(f"base step {step + 1}/{total} loss {loss:.4f}")
        if time_budget_s and time.monotonic() - start > time_budget_s:
            break
    save_reaction_model(out_path, model,
                        tokenizer_fingerprint=_file_hash(tokenizer_path))
    return history


def train_residual(cfg: RunConfig, data_dir, tokenizer_path, out_path,
                   entries=None, max_steps: int | None = None,
                   time_budget_s: float | None = None, log=None) -> list[float]:
    """Train the residual-layer transformer against frozen tokens."""
    torch.manual_seed(cfg.seed + 2)
    rng = np.random.default_rng([cfg.seed, 303])
    tokenizer, mean, std = load_tokenizer(tokenizer_path)
    stats = NormStats(mean=mean, std=std)
    entries = entries or load_manifest(Path(data_dir) / "manifest.jsonl")
    samples = _tokenize_corpus(tokenizer, stats, data_dir, _train_entries(entries))

    t = cfg.transformer
    code_entries = torch.stack([b.entries for b in tokenizer.codebooks])
    model = ResidualReactionTransformer(
        transformer_config(cfg),
        n_residual_layers=tokenizer.config.n_residual_layers,
        code_entries=code_entries)
    trainer = TransformerTrainer(model, lr=t.lr, warmup_iters=t.warmup_iters)
    steps_per_epoch = max(1, len(samples) // t.batch_size)
    total = t.epochs * steps_per_epoch if max_steps is None else max_steps
    history = []
    start = time.monotonic()
    for step in range(total):
        rows = rng.integers(0, len(samples), size=t.batch_size)
        tokens, pad, feats = _pad_token_batch([samples[r] for r in rows], 0)
        loss = residual_train_step(trainer, torch.from_numpy(tokens), feats,
                                   torch.from_numpy(pad), rng)
        history.append(loss)
        if log and (step + 1) % 200 == 0:
            log(f"residual step {step + 1}/{total} loss {loss:.4f}")
        if time_budget_s and time.monotonic() - start > time_budget_s:
            break
    save_reaction_model(out_path, model,
                        tokenizer_fingerprint=_file_hash(tokenizer_path))
    return history


@torch.no_grad()
def generate_reaction(frame_features: np.ndarray, target_frames: int,
                      tokenizer: ResidualVqVae, stats: NormStats,
                      base_model: MaskedReactionTransformer,
                      residual_model: ResidualReactionTransformer | None,
                      iterations: int = 10, temperature: float = 1.0,
                      seed: int = 0) -> MotionSequence:
    """Full inference path for one video: intention-conditioned base decoding,
    residual layer prediction, code summation, motion decoding, denormalize."""
    motions = generate_reaction_batch(frame_features[None], target_frames,
                                      tokenizer, stats, base_model,
                                      residual_model, iterations=iterations,
                                      temperature=temperature, seed=seed)
    return motions[0]


@torch.no_grad()
def generate_reaction_batch(frame_features: np.ndarray, target_frames: int,
                            tokenizer: ResidualVqVae, stats: NormStats,
                            base_model: MaskedReactionTransformer,
                            residual_model: ResidualReactionTransformer | None,
                            iterations: int = 10, temperature: float = 1.0,
                            seed: int = 0) -> list[MotionSequence]:
    """Batched variant: frame_features (B, T, d_vl) -> B motions of 4n frames."""
    if not 1 <= target_frames <= pose_codec.MAX_MOTION_FRAMES:
        raise ValueError(
            f"target_frames must be in [1, {pose_codec.MAX_MOTION_FRAMES}]")
    n = max(1, int(round(target_frames / 4)))
    gen = GenerationConfig(target_length=n, iterations=iterations,
                           temperature=temperature, seed=seed)
    v_l = torch.from_numpy(np.asarray(frame_features, dtype=np.float32))
    generator = torch.Generator().manual_seed(seed)
    layers = [generate_base(base_model, v_l, gen, generator)]
    if residual_model is not None:
        for target_layer in range(1, residual_model.n_residual_layers + 1):
            stack = torch.stack(layers, dim=1)
            layers.append(residual_predict(residual_model, stack,
                                           target_layer, v_l))
    indices = torch.stack(layers, dim=1)  # (B, layers, n)
    decoded = tokenizer.detokenize(indices).numpy()
    out = []
    n_joints = (stats.dim + 1) // 12
    for row in decoded:
        motion = MotionSequence(row, n_joints=n_joints)
        out.append(denormalize(motion, stats))
    return out


def decode_random_tokens(tokenizer: ResidualVqVae, stats: NormStats,
                         n_tokens: int, rng: np.random.Generator) -> MotionSequence:
    """Unconditioned baseline: decode uniformly random token stacks."""
    shape = (1, tokenizer.n_quantizer_layers, n_tokens)
    indices = torch.from_numpy(
        rng.integers(0, tokenizer.config.codebook_size, size=shape))
    decoded = tokenizer.detokenize(indices).numpy()[0]
    n_joints = (stats.dim + 1) // 12
    return denormalize(MotionSequence(decoded, n_joints=n_joints), stats)


def fit_extractor(cfg: RunConfig, data_dir, entries=None) \
        -> tuple[MotionFeatureExtractor, NormStats]:
    """Train the metric feature extractor on the corpus's real train motions."""
    entries = entries or load_manifest(Path(data_dir) / "manifest.jsonl")
    train_motions = _load_motions(data_dir, _train_entries(entries))
    stats = pose_codec.compute_norm_stats(train_motions, std_floor=TRAIN_STD_FLOOR)
    arrays = [normalize(m, stats).features for m in train_motions]
    extractor = train_extractor(
        arrays, feature_dim=arrays[0].shape[1], embed_dim=cfg.eval.embed_dim,
        width=cfg.eval.extractor_width, steps=cfg.eval.extractor_steps,
        seed=cfg.seed)
    return extractor, stats


def evaluate(cfg: RunConfig, data_dir, tokenizer_path, base_path,
             residual_path=None, entries=None, repetitions=None,
             extractor_and_stats=None, log=None) -> list[MetricReport]:
    """Run the repetition protocol on the test split: FID, Diversity,
    MultiModality, and the real-diversity baseline."""
    entries = entries or load_manifest(Path(data_dir) / "manifest.jsonl")
    test = _test_entries(entries)
    if not test:
        raise ValueError("manifest has no test entries")
    tokenizer, mean, std = load_tokenizer(tokenizer_path)
    stats = NormStats(mean=mean, std=std)
    base_model = load_reaction_model(base_path)
    residual_model = load_reaction_model(residual_path) if residual_path else None

    if extractor_and_stats is None:
        extractor, ex_stats = fit_extractor(cfg, data_dir, entries)
    else:
        extractor, ex_stats = extractor_and_stats

    test_pairs = [load_pair(data_dir, e) for e in test]
    real_motions = [m for _, m in test_pairs]
    real = extract_features(real_motions, extractor, ex_stats, source="real")
    feats_by_len: dict[int, list] = {}
    for i, (f, m) in enumerate(test_pairs):
        feats_by_len.setdefault(m.n_frames, []).append((i, f))

    e = cfg.eval

    def generate_features(seed: int):
        rows = [None] * len(test_pairs)
        for length, group in feats_by_len.items():
            batch = np.stack([f for _, f in group])
            motions = generate_reaction_batch(
                batch, length, tokenizer, stats, base_model, residual_model,
                iterations=cfg.generation.iterations,
                temperature=cfg.generation.temperature, seed=seed)
            embedded = extract_features(motions, extractor, ex_stats, "generated")
            for (i, _), row in zip(group, embedded.features):
                rows[i] = row
        return eval_metrics.MotionFeatureSet(np.stack(rows), source="generated")

    mm_pairs = test_pairs[:e.mm_videos]

    def generate_mm_features(seed: int):
        per_video = []
        for f, m in mm_pairs:
            batch = np.repeat(f[None], e.mm_generations, axis=0)
            motions = generate_reaction_batch(
                batch, m.n_frames, tokenizer, stats, base_model, residual_model,
                iterations=cfg.generation.iterations,
                temperature=cfg.generation.temperature, seed=seed)
            per_video.append(
                extract_features(motions, extractor, ex_stats, "generated").features)
        return np.stack(per_video)

    reports = evaluate_protocol(
        real, generate_features, generate_mm_features,
        repetitions=repetitions or e.repetitions,
        n_diversity_pairs=e.diversity_pairs, n_mm_pairs=e.mm_pairs,
        generations_per_video=e.mm_generations, base_seed=cfg.seed)
    if log:
        log(eval_metrics.reports_to_table(reports))
    return reports
