"""Declarative run configuration.

One JSON document drives corpus synthesis, training, generation, and
evaluation. Unknown keys are rejected on load. Path-valued settings
(data_dir, out_dir) may be overridden by environment variables
REACTGEN_DATA_DIR / REACTGEN_OUT_DIR; nothing else reads the environment.

Schema (defaults in parentheses):
  seed (0)            master seed; every random decision derives from it
  data_dir ("data")   corpus root
  out_dir ("runs")    checkpoints and reports
  data:               n_pairs (3500), n_categories (32), n_joints (22),
                      video_frames (16), video_dim (512),
                      min_frames (97), max_frames (200),
                      heel_threshold (2e-3), toe_threshold (1e-3)
  tokenizer:          codebook_size (512), code_dim (512),
                      n_residual_layers (5), width (512), beta (0.02),
                      ema_decay (0.99), reset_interval (256),
                      reset_threshold (1.0), lr (2e-4), warmup_iters (20),
                      batch_size (256), epochs (10), window (64)
  transformer:        latent_dim (384), n_layers (6), n_heads (6),
                      ffn_dim (1024), dropout (0.1),
                      use_intention_extraction (true),
                      use_frame_cross_attention (true), lr (2e-4),
                      warmup_iters (250), batch_size (64), epochs (200)
  generation:         iterations (10), temperature (1.0)
  eval:               embed_dim (64), extractor_width (128),
                      extractor_steps (400), repetitions (20),
                      diversity_pairs (300), mm_pairs (10),
                      mm_generations (30), mm_videos (4)
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    n_pairs: int = 3500
    n_categories: int = 32
    n_joints: int = 22
    video_frames: int = 16
    video_dim: int = 512
    min_frames: int = 97
    max_frames: int = 200
    heel_threshold: float = 2e-3
    toe_threshold: float = 1e-3


@dataclass
class TokenizerSection:
    codebook_size: int = 512
    code_dim: int = 512
    n_residual_layers: int = 5
    width: int = 512
    beta: float = 0.02
    ema_decay: float = 0.99
    reset_interval: int = 256
    reset_threshold: float = 1.0
    lr: float = 2e-4
    warmup_iters: int = 20
    batch_size: int = 256
    epochs: int = 10
    window: int = 64


@dataclass
class TransformerSection:
    latent_dim: int = 384
    n_layers: int = 6
    n_heads: int = 6
    ffn_dim: int = 1024
    dropout: float = 0.1
    use_intention_extraction: bool = True
    use_frame_cross_attention: bool = True
    lr: float = 2e-4
    warmup_iters: int = 250
    batch_size: int = 64
    epochs: int = 200


@dataclass
class GenerationSection:
    iterations: int = 10
    temperature: float = 1.0


@dataclass
class EvalSection:
    embed_dim: int = 64
    extractor_width: int = 128
    extractor_steps: int = 400
    repetitions: int = 20
    diversity_pairs: int = 300
    mm_pairs: int = 10
    mm_generations: int = 30
    mm_videos: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def toy_profile(cls) -> "RunConfig":
        """Laptop-scale profile: trains the whole pipeline in minutes."""
        return cls(
            data=DataSection(n_pairs=96, n_categories=6, n_joints=5,
                             video_frames=16, video_dim=8),
            tokenizer=TokenizerSection(codebook_size=32, code_dim=32,
                                       n_residual_layers=2, width=128,
                                       lr=2e-3, batch_size=32, epochs=1500,
                                       window=64),
            transformer=TransformerSection(latent_dim=64, n_layers=2, n_heads=4,
                                           ffn_dim=192, dropout=0.0,
                                           batch_size=16, epochs=500),
            eval=EvalSection(extractor_steps=300, mm_videos=4),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        return _build(cls, payload, "")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        cfg = cls.from_dict(payload)
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "RunConfig":
        """Apply REACTGEN_DATA_DIR / REACTGEN_OUT_DIR (paths only)."""
        cfg = dataclasses.replace(self)
        if os.environ.get("REACTGEN_DATA_DIR"):
            cfg.data_dir = os.environ["REACTGEN_DATA_DIR"]
        if os.environ.get("REACTGEN_OUT_DIR"):
            cfg.out_dir = os.environ["REACTGEN_OUT_DIR"]
        return cfg


def _build(cls, payload, prefix: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {sorted(unknown)} under {prefix or 'root'}")
    nested = {"data": DataSection, "tokenizer": TokenizerSection,
              "transformer": TransformerSection,
              "generation": GenerationSection, "eval": EvalSection}
    kwargs = {}
    for name, value in payload.items():
        if name in nested:
            kwargs[name] = _build(nested[name], value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config under {prefix or 'root'}: {exc}") from exc
