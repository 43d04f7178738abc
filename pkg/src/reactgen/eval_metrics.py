"""Distribution metrics over motion features, with the repetition/CI protocol.

The metrics are extractor-agnostic: anything that maps a motion to a fixed
F-dimensional vector works. The shipped extractor is a small temporal-conv
autoencoder trained on the corpus's real motions, mean-pooled at the
bottleneck.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .pose_codec import MotionSequence, NormStats, normalize

GENERATIONS_PER_VIDEO = 30
DIVERSITY_PAIRS = 300
MULTIMODALITY_PAIRS = 10
PROTOCOL_REPETITIONS = 20


@dataclass
class MotionFeatureSet:
    """Fixed-width features, one row per motion."""

    features: np.ndarray
    source: str = "real"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got {self.features.shape}")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class MetricReport:
    name: str
    mean: float
    ci95_halfwidth: float
    repetitions: int
    values: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean,
                "ci95_halfwidth": self.ci95_halfwidth,
                "repetitions": self.repetitions}


class MotionFeatureExtractor(nn.Module):
    """Temporal-conv autoencoder; embeddings are the mean-pooled bottleneck."""

    def __init__(self, feature_dim: int, embed_dim: int = 64, width: int = 128):
        super().__init__()
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.encoder = nn.Sequential(
            nn.Conv1d(feature_dim, width, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(width, width, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(width, embed_dim, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(embed_dim, width, 3, padding=1),
            nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, width, 3, padding=1),
            nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, feature_dim, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x.transpose(1, 2))).transpose(1, 2)

    @torch.no_grad()
    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, D) -> (B, embed_dim), temporal mean of the bottleneck."""
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] < 4:
            raise ValueError("motions shorter than 4 frames cannot be embedded")
        return self.encoder(x.transpose(1, 2)).mean(dim=2)


def train_extractor(motions: list[np.ndarray], feature_dim: int,
                    embed_dim: int = 64, width: int = 128, steps: int = 400,
                    batch_size: int = 16, window: int = 64, lr: float = 1e-3,
                    seed: int = 0) -> MotionFeatureExtractor:
    """Fit the autoencoder on (already normalized) motion arrays."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = MotionFeatureExtractor(feature_dim, embed_dim, width)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    model.train()
    for _ in range(steps):
        rows = rng.integers(0, len(motions), size=batch_size)
        batch = np.stack([_crop(motions[r], window, rng) for r in rows])
        x = torch.from_numpy(batch.astype(np.float32))
        loss = F.mse_loss(model(x), x)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    return model


def _crop(motion: np.ndarray, window: int, rng: np.random.Generator) -> np.ndarray:
    n = motion.shape[0]
    if n >= window:
        start = int(rng.integers(0, n - window + 1))
        return motion[start:start + window]
    reps = -(-window // n)
    return np.tile(motion, (reps, 1))[:window]


def extract_features(motions: list[MotionSequence],
                     extractor: MotionFeatureExtractor,
                     stats: NormStats, source: str = "real") -> MotionFeatureSet:
    """One embedding per motion (motions are normalized with the training
    stats before entering the extractor)."""
    rows = []
    for motion in motions:
        if motion.n_frames < 1:
            raise ValueError("cannot embed an empty motion")
        x = torch.from_numpy(normalize(motion, stats).features)
        rows.append(extractor.embed(x)[0].numpy())
    return MotionFeatureSet(np.stack(rows), source=source)


def fid(real: MotionFeatureSet, gen: MotionFeatureSet) -> float:
    """Frechet distance between Gaussian fits of the two feature sets.

    The trace term uses the eigendecomposition of the symmetrized covariance
    product with negative eigenvalues clamped to zero, which keeps the value
    symmetric, non-negative, and invariant under a common rotation.
    """
    a = real.features
    b = gen.features
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("FID needs at least 2 motions per side")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    dim = a.shape[1]
    if min(a.shape[0], b.shape[0]) < dim + 1:
        warnings.warn(
            f"FID with {min(a.shape[0], b.shape[0])} samples in {dim} dims: "
            "covariance is rank-deficient; treat the value as indicative",
            stacklevel=2)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    if not (np.isfinite(cov_a).all() and np.isfinite(cov_b).all()):
        raise ValueError("non-finite covariance")
    product = cov_a @ cov_b
    sym = (product + product.T) / 2.0
    eigvals = np.linalg.eigvalsh(sym)
    trace_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt
    return max(float(value), 0.0)


def _sample_pairs(count: int, n_pairs: int, rng: np.random.Generator):
    """Index pairs with replacement across pairs, never i == j within one."""
    first = rng.integers(0, count, size=n_pairs)
    second = rng.integers(0, count - 1, size=n_pairs)
    second = second + (second >= first)
    return first, second


def diversity(feats: MotionFeatureSet, n_pairs: int = DIVERSITY_PAIRS,
              rng: np.random.Generator | None = None) -> float:
    """Mean Euclidean distance over randomly sampled feature pairs."""
    if feats.count < 2:
        raise ValueError("diversity needs at least 2 motions")
    rng = rng or np.random.default_rng(0)
    i, j = _sample_pairs(feats.count, n_pairs, rng)
    return float(np.linalg.norm(feats.features[i] - feats.features[j], axis=1).mean())


def multimodality(per_video_features, n_pairs: int = MULTIMODALITY_PAIRS,
                  rng: np.random.Generator | None = None,
                  generations_per_video: int = GENERATIONS_PER_VIDEO) -> float:
    """Within-video spread: for each video, mean distance over sampled pairs of
    its repeated generations; averaged over videos."""
    rng = rng or np.random.default_rng(0)
    videos = [np.asarray(v, dtype=np.float64) for v in per_video_features]
    if not videos:
        raise ValueError("need at least one video")
    means = []
    for idx, rows in enumerate(videos):
        if rows.shape[0] != generations_per_video:
            raise ValueError(
                f"video {idx} has {rows.shape[0]} generations, "
                f"expected {generations_per_video}")
        i, j = _sample_pairs(rows.shape[0], n_pairs, rng)
        means.append(np.linalg.norm(rows[i] - rows[j], axis=1).mean())
    return float(np.mean(means))


def summarize(name: str, values: list[float]) -> MetricReport:
    """Mean with a 95% confidence halfwidth (1.96 * sd / sqrt(reps))."""
    arr = np.asarray(values, dtype=np.float64)
    ci = 0.0
    if arr.size >= 2:
        ci = float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))
    return MetricReport(name=name, mean=float(arr.mean()), ci95_halfwidth=ci,
                        repetitions=arr.size, values=[float(v) for v in arr])


def evaluate_protocol(real: MotionFeatureSet, generate_features,
                      generate_mm_features,
                      repetitions: int = PROTOCOL_REPETITIONS,
                      n_diversity_pairs: int = DIVERSITY_PAIRS,
                      n_mm_pairs: int = MULTIMODALITY_PAIRS,
                      generations_per_video: int = GENERATIONS_PER_VIDEO,
                      base_seed: int = 0) -> list[MetricReport]:
    """Repeat the full measurement `repetitions` times with per-repetition
    seeds and summarize each metric as mean +/- 95% CI.

    generate_features(seed) must return a MotionFeatureSet (one generation per
    test video); generate_mm_features(seed) an array (videos, generations, F).
    """
    def sub_seed(rep: int, stream: int) -> int:
        return int(np.random.SeedSequence([base_seed, rep, stream]).generate_state(1)[0])

    fids, divs, real_divs, mms = [], [], [], []
    for rep in range(repetitions):
        gen = generate_features(sub_seed(rep, 0))
        rng_div = np.random.default_rng([base_seed, rep, 1])
        rng_rdiv = np.random.default_rng([base_seed, rep, 2])
        rng_mm = np.random.default_rng([base_seed, rep, 3])
        fids.append(fid(real, gen))
        divs.append(diversity(gen, n_diversity_pairs, rng_div))
        real_divs.append(diversity(real, n_diversity_pairs, rng_rdiv))
        mm_rows = generate_mm_features(sub_seed(rep, 4))
        mms.append(multimodality(mm_rows, n_mm_pairs, rng_mm,
                                 generations_per_video=generations_per_video))
    return [
        summarize("FID", fids),
        summarize("Diversity", divs),
        summarize("MultiModality", mms),
        summarize("RealDiversity", real_divs),
    ]


def reports_to_json(reports: list[MetricReport]) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2)


def reports_to_table(reports: list[MetricReport]) -> str:
    """Plain-text table with the mean^{±ci} layout."""
    width = max(len(r.name) for r in reports) + 2
    lines = [f"{'Metric':<{width}}Value"]
    for r in reports:
        lines.append(f"{r.name:<{width}}{r.mean:.3f}^{{±{r.ci95_halfwidth:.3f}}}")
    return "\n".join(lines)
