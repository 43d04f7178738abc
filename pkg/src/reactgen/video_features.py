"""Frame-level visual representations and their pooled global summary.

The real video encoder is a frozen, external component; this module only
defines the feature contract (a T x d matrix per video), average pooling,
file storage, and a deterministic synthetic generator used by the shipped
corpus. Anything that produces the same contract (e.g. precomputed encoder
outputs on disk) plugs in through FeatureProvider.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .fileio import read_feature_array, write_feature_array

DEFAULT_N_FRAMES = 16
DEFAULT_FEATURE_DIM = 512


@dataclass
class FrameFeatures:
    """Per-frame visual representations, (n_frames, dim) float32."""

    local: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=np.float32)
        if self.local.ndim != 2:
            raise ValueError(f"local features must be 2-D, got {self.local.shape}")
        if self.local.shape[0] < 1:
            raise ValueError("need at least one frame")
        if not np.isfinite(self.local).all():
            raise ValueError("features contain NaN or Inf")

    @property
    def n_frames(self) -> int:
        return self.local.shape[0]

    @property
    def dim(self) -> int:
        return self.local.shape[1]


@dataclass
class GlobalFeature:
    """Video-level representation: the mean of the frame rows."""

    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).ravel()


def global_pool(features: FrameFeatures) -> GlobalFeature:
    """Arithmetic mean over the frame axis."""
    return GlobalFeature(features.local.mean(axis=0))


class FeatureProvider(Protocol):
    """Yields FrameFeatures for a video identifier, deterministically."""

    def fetch(self, video_id: str) -> FrameFeatures: ...


@dataclass
class SyntheticFeatureProvider:
    """Deterministic stand-in for a frozen video encoder.

    Each category c owns two fixed modes drawn once from a category-keyed RNG:
    a base mode mu_c and a key-frame mode nu_c. A video (seed, category) is
    n_frames rows of mu_c + sigma * noise with a seeded number of key frames
    (rows near nu_c) at seeded positions, so frame importance is non-uniform
    and category identity survives pooling.
    """

    n_categories: int
    dim: int = DEFAULT_FEATURE_DIM
    n_frames: int = DEFAULT_N_FRAMES
    sigma: float = 0.1
    key_frame_range: tuple[int, int] = (2, 4)
    mode_scale: float = 1.0
    _modes: dict = field(default_factory=dict, repr=False)

    def _category_modes(self, category: int) -> tuple[np.ndarray, np.ndarray]:
        if category not in self._modes:
            rng = np.random.default_rng([7919, category])
            mu = self.mode_scale * rng.normal(size=self.dim)
            nu = self.mode_scale * rng.normal(size=self.dim)
            self._modes[category] = (mu, nu)
        return self._modes[category]

    def generate(self, seed: int, category: int) -> FrameFeatures:
        if not 0 <= category < self.n_categories:
            raise ValueError(f"category {category} outside [0, {self.n_categories})")
        lo, hi = self.key_frame_range
        if not 0 <= lo <= hi <= self.n_frames:
            raise ValueError(f"key frame range {self.key_frame_range} invalid "
                             f"for {self.n_frames} frames")
        mu, nu = self._category_modes(category)
        rng = np.random.default_rng([seed, category])
        local = mu + self.sigma * rng.normal(size=(self.n_frames, self.dim))
        n_keys = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        if n_keys > 0:
            keys = rng.choice(self.n_frames, size=n_keys, replace=False)
            local[keys] = nu + self.sigma * rng.normal(size=(n_keys, self.dim))
        return FrameFeatures(local.astype(np.float32),
                             source_id=f"syn-c{category}-s{seed}")

    def fetch(self, video_id: str) -> FrameFeatures:
        """Identifier format: "syn-c<category>-s<seed>"."""
        try:
            _, cat, seed = video_id.split("-")
            return self.generate(int(seed[1:]), int(cat[1:]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"bad synthetic video id {video_id!r}") from exc


@dataclass
class FileFeatureProvider:
    """Reads precomputed feature files; video_id is a path relative to root."""

    root: str = "."

    def fetch(self, video_id: str) -> FrameFeatures:
        return load_features(f"{self.root}/{video_id}")


def save_features(path, features: FrameFeatures) -> None:
    write_feature_array(path, features.local)


def load_features(path, expected_frames: int | None = None,
                  expected_dim: int | None = None) -> FrameFeatures:
    local = read_feature_array(path)
    if expected_frames is not None and local.shape[0] != expected_frames:
        raise ValueError(
            f"{path}: manifest expects {expected_frames} frames, file has "
            f"{local.shape[0]}")
    if expected_dim is not None and local.shape[1] != expected_dim:
        raise ValueError(
            f"{path}: manifest expects dim {expected_dim}, file has "
            f"{local.shape[1]}")
    return FrameFeatures(local, source_id=str(path))
