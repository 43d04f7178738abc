"""Residual vector-quantized autoencoder over pose-feature sequences.

A strided 1-D convolutional encoder maps an (N, D) motion to n = N // 4 latent
vectors; a stack of V+1 codebooks quantizes the latent residually (layer 0
quantizes the latent, layer j the error left by layers < j); the decoder maps
the summed code vectors back to 4n frames. Codebooks learn by exponential
moving averages with periodic re-seeding of unused entries; the encoder and
decoder learn from a smooth-L1 reconstruction plus a commitment term, with
gradients crossing the quantizer by straight-through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

DOWNSAMPLE = 4  # two stride-2 stages; latent length n = N // 4


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message carries the individual terms."""


@dataclass
class TokenizerConfig:
    feature_dim: int
    codebook_size: int = 512
    code_dim: int = 512
    n_residual_layers: int = 5
    width: int = 512
    beta: float = 0.02
    ema_decay: float = 0.99
    reset_interval: int = 256
    reset_threshold: float = 1.0

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least 2 entries")
        if self.n_residual_layers < 0:
            raise ValueError("n_residual_layers must be >= 0")


@dataclass
class MotionTokens:
    """Token index sequences, one row per quantization layer: (V+1, n) int64."""

    layers: np.ndarray

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.int64)
        if self.layers.ndim != 2:
            raise ValueError(f"layers must be (V+1, n), got {self.layers.shape}")

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.layers.shape[1]


@dataclass
class VqLossTerms:
    reconstruction: float
    codebook_term: float
    commitment_term: float
    beta: float

    @property
    def total(self) -> float:
        return self.reconstruction + self.codebook_term + self.beta * self.commitment_term


def pairwise_sqdist(x: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distances (n, K) computed in float64 so that
    nearest-entry decisions cannot flip on float32 rounding."""
    x64 = x.double()
    e64 = entries.double()
    d = (x64 * x64).sum(-1, keepdim=True) - 2.0 * x64 @ e64.t() \
        + (e64 * e64).sum(-1)
    return d


class Codebook(nn.Module):
    """One quantization layer: K entries with EMA statistics.

    ema_sums / ema_counts always satisfy entries = ema_sums / ema_counts, so
    an EMA update with decay 1 is a no-op on the entries.
    """

    def __init__(self, n_codes: int, dim: int):
        super().__init__()
        if n_codes < 2:
            raise ValueError("codebook needs at least 2 entries")
        self.register_buffer("entries", torch.randn(n_codes, dim) * 0.05)
        self.register_buffer("ema_counts", torch.ones(n_codes))
        self.register_buffer("ema_sums", self.entries.clone())

    @classmethod
    def from_entries(cls, entries) -> "Codebook":
        entries = torch.as_tensor(entries, dtype=torch.float32)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise ValueError(f"entries must be (K>=2, d), got {tuple(entries.shape)}")
        book = cls(entries.shape[0], entries.shape[1])
        book.entries.copy_(entries)
        book.ema_sums.copy_(entries)
        book.ema_counts.fill_(1.0)
        return book

    @property
    def n_codes(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return F.embedding(indices, self.entries)

    @torch.no_grad()
    def ema_update(self, vectors: torch.Tensor, indices: torch.Tensor,
                   decay: float) -> None:
        """Move entries toward the mean of the vectors assigned to them."""
        onehot = F.one_hot(indices, self.n_codes).to(vectors.dtype)
        batch_counts = onehot.sum(0)
        batch_sums = onehot.t() @ vectors
        self.ema_counts.mul_(decay).add_(batch_counts, alpha=1.0 - decay)
        self.ema_sums.mul_(decay).add_(batch_sums, alpha=1.0 - decay)
        self.entries.copy_(self.ema_sums / self.ema_counts.clamp(min=1e-12)[:, None])

    @torch.no_grad()
    def seed_from(self, vectors: torch.Tensor) -> None:
        """Initialize entries from data vectors (tiled + jittered if too few)."""
        k = self.n_codes
        if vectors.shape[0] < k:
            reps = -(-k // vectors.shape[0])
            vectors = vectors.repeat(reps, 1)
            vectors = vectors + 0.01 * torch.randn_like(vectors)
        self.entries.copy_(vectors[:k])
        self.ema_sums.copy_(self.entries)
        self.ema_counts.fill_(1.0)


def quantize_layer(residual, codebook: Codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest-entry assignment for each vector; ties go to the lowest index.

    Returns (indices (n,), quantized rows (n, d)).
    """
    residual = torch.as_tensor(residual)
    if not residual.is_floating_point():
        residual = residual.float()
    if residual.shape[-1] != codebook.dim:
        raise ValueError(
            f"vector dim {residual.shape[-1]} != codebook dim {codebook.dim}")
    dists = pairwise_sqdist(residual, codebook.entries)
    indices = dists.argmin(dim=-1)  # argmin returns the first minimal index
    return indices, codebook.lookup(indices)


def rvq_encode(z, codebooks: list[Codebook]) -> tuple[MotionTokens, torch.Tensor]:
    """Residually quantize z through every codebook layer.

    Layer 0 quantizes z itself, layer j the residual left by layers < j; the
    identity z = sum(quantized layers) + final_residual holds to accumulation
    error.
    """
    z = torch.as_tensor(z, dtype=torch.float32)
    if not codebooks:
        raise ValueError("need at least one codebook")
    residual = z
    index_rows = []
    for book in codebooks:
        indices, quantized = quantize_layer(residual, book)
        index_rows.append(indices.numpy())
        residual = residual - quantized
    return MotionTokens(np.stack(index_rows)), residual


@torch.no_grad()
def codebook_reset(codebook: Codebook, candidates: torch.Tensor,
                   threshold: float = 1.0,
                   generator: torch.Generator | None = None) -> int:
    """Re-seed entries whose EMA usage fell below threshold from random rows of
    `candidates` (current encoder outputs). Entries in use are untouched.
    Returns the number of entries replaced."""
    dead = codebook.ema_counts < threshold
    n_dead = int(dead.sum())
    if n_dead == 0:
        return 0
    picks = torch.randint(0, candidates.shape[0], (n_dead,), generator=generator)
    fresh = candidates[picks].to(codebook.entries.dtype)
    codebook.entries[dead] = fresh
    codebook.ema_sums[dead] = fresh
    codebook.ema_counts[dead] = 1.0
    return n_dead


class _ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReLU(),
            nn.Conv1d(width, width, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(width, width, 1),
        )

    def forward(self, x):
        return x + self.block(x)


class MotionEncoder(nn.Module):
    """(B, N, D) -> (B, N // 4, code_dim) via two stride-2 stages."""

    def __init__(self, feature_dim: int, width: int, code_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(feature_dim, width, 3, padding=1),
            nn.Conv1d(width, width, 4, stride=2, padding=1),
            _ResBlock(width),
            nn.Conv1d(width, width, 4, stride=2, padding=1),
            _ResBlock(width),
            nn.ReLU(),
            nn.Conv1d(width, code_dim, 3, padding=1),
        )

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        return self.net(motion.transpose(1, 2)).transpose(1, 2)


class MotionDecoder(nn.Module):
    """(B, n, code_dim) -> (B, 4n, D) via two nearest-neighbour upsamplings."""

    def __init__(self, feature_dim: int, width: int, code_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(code_dim, width, 3, padding=1),
            _ResBlock(width),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, width, 3, padding=1),
            _ResBlock(width),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, width, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(width, feature_dim, 3, padding=1),
        )

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        return self.net(latent.transpose(1, 2)).transpose(1, 2)


class ResidualVqVae(nn.Module):
    """Encoder, V+1 residual codebooks, and decoder, trained as one unit."""

    def __init__(self, config: TokenizerConfig):
        super().__init__()
        self.config = config
        self.encoder = MotionEncoder(config.feature_dim, config.width, config.code_dim)
        self.decoder = MotionDecoder(config.feature_dim, config.width, config.code_dim)
        self.codebooks = nn.ModuleList(
            Codebook(config.codebook_size, config.code_dim)
            for _ in range(config.n_residual_layers + 1))
        self.register_buffer("codebooks_seeded", torch.tensor(False))

    @property
    def n_quantizer_layers(self) -> int:
        return len(self.codebooks)

    def encode(self, motion: torch.Tensor) -> torch.Tensor:
        """Latent sequence (B, n, d_c); requires N >= 4 (one downsampling window)."""
        if motion.ndim == 2:
            motion = motion[None]
        if motion.shape[1] < DOWNSAMPLE:
            raise ValueError(
                f"need at least {DOWNSAMPLE} frames, got {motion.shape[1]}")
        return self.encoder(motion)

    def quantize(self, z: torch.Tensor):
        """Residual quantization of a batched latent (B, n, d_c).

        Returns (indices (B, V+1, n), per-layer quantized vectors
        (V+1, B, n, d_c), per-layer inputs (V+1, B, n, d_c)).
        """
        residual = z
        all_indices, all_quantized, all_inputs = [], [], []
        for book in self.codebooks:
            flat = residual.reshape(-1, residual.shape[-1])
            indices, quantized = quantize_layer(flat, book)
            all_inputs.append(residual)
            all_indices.append(indices.reshape(residual.shape[:-1]))
            quantized = quantized.reshape(residual.shape)
            all_quantized.append(quantized)
            residual = residual - quantized
        return (torch.stack(all_indices, dim=1),
                torch.stack(all_quantized),
                torch.stack(all_inputs))

    def decode_latent(self, quantized_sum: torch.Tensor) -> torch.Tensor:
        if quantized_sum.ndim == 2:
            quantized_sum = quantized_sum[None]
        if quantized_sum.shape[1] < 1:
            raise ValueError("need at least one latent vector")
        return self.decoder(quantized_sum)

    def tokenize(self, motion: torch.Tensor) -> torch.Tensor:
        """Motion (B, N, D) -> token indices (B, V+1, n), gradient-free."""
        with torch.no_grad():
            z = self.encode(motion)
            indices, _, _ = self.quantize(z)
        return indices

    def detokenize(self, indices: torch.Tensor) -> torch.Tensor:
        """Token indices (B, V+1, n) -> motion (B, 4n, D), gradient-free."""
        with torch.no_grad():
            summed = self.sum_code_entries(indices)
            return self.decode_latent(summed)

    def sum_code_entries(self, indices: torch.Tensor) -> torch.Tensor:
        """Sum per-layer code entries: (B, L, n) -> (B, n, d_c). L <= V+1 lets
        callers decode from a base-layer-only prefix."""
        if indices.ndim == 2:
            indices = indices[None]
        total = torch.zeros(indices.shape[0], indices.shape[2],
                            self.config.code_dim,
                            dtype=self.codebooks[0].entries.dtype)
        for layer in range(indices.shape[1]):
            total = total + self.codebooks[layer].lookup(indices[:, layer])
        return total

    def forward(self, motion: torch.Tensor):
        """Full training path: returns (reconstruction, z, quantized_sum, indices,
        per-layer inputs)."""
        z = self.encode(motion)
        if self.training and not bool(self.codebooks_seeded):
            self._seed_codebooks(z)
        indices, quantized, inputs = self.quantize(z)
        quantized_sum = quantized.sum(dim=0)
        decoder_in = z + (quantized_sum - z).detach()  # straight-through
        recon = self.decode_latent(decoder_in)
        return recon, z, quantized_sum, indices, inputs

    @torch.no_grad()
    def _seed_codebooks(self, z: torch.Tensor) -> None:
        flat = z.reshape(-1, z.shape[-1])
        residual = flat
        for book in self.codebooks:
            perm = torch.randperm(residual.shape[0])
            book.seed_from(residual[perm])
            _, quantized = quantize_layer(residual, book)
            residual = residual - quantized
        self.codebooks_seeded.fill_(True)


class TokenizerTrainer:
    """Owns the optimizer, warm-up schedule, EMA updates, and reset cadence.

    With total_steps given, the rate decays on a cosine after the warm-up
    (late-training resets otherwise collide with a full-size learning rate).
    """

    def __init__(self, model: ResidualVqVae, lr: float = 2e-4,
                 warmup_iters: int = 20, total_steps: int | None = None,
                 seed: int = 0):
        self.model = model
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=lr)

        def factor(it: int) -> float:
            warm = min(1.0, (it + 1) / max(1, warmup_iters))
            if total_steps is None or it < warmup_iters:
                return warm
            progress = (it - warmup_iters) / max(1, total_steps - warmup_iters)
            return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))

        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, factor)
        self.step_count = 0
        self.reset_generator = torch.Generator().manual_seed(seed)

    def step(self, batch: torch.Tensor) -> VqLossTerms:
        return vq_train_step(self, batch)


def vq_train_step(trainer: TokenizerTrainer, batch: torch.Tensor) -> VqLossTerms:
    """One optimization step on a batch (B, N, D) of normalized motions.

    The codebook term ||sg[z] - q||^2 is reported but not backpropagated (the
    EMA update owns codebook learning); the commitment term always
    backpropagates into the encoder.
    """
    model = trainer.model
    cfg = model.config
    model.train()
    recon, z, q_sum, indices, inputs = model(batch)

    target = batch[:, :recon.shape[1]]
    reconstruction = F.smooth_l1_loss(recon, target)
    codebook_term = F.mse_loss(q_sum, z.detach())
    commitment_term = F.mse_loss(z, q_sum.detach())
    loss = reconstruction + cfg.beta * commitment_term

    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss at step {trainer.step_count}: "
            f"recon={reconstruction.item()} codebook={codebook_term.item()} "
            f"commit={commitment_term.item()}")

    trainer.optimizer.zero_grad()
    loss.backward()
    trainer.optimizer.step()
    trainer.scheduler.step()

    with torch.no_grad():
        for layer, book in enumerate(model.codebooks):
            flat_in = inputs[layer].reshape(-1, cfg.code_dim)
            flat_idx = indices[:, layer].reshape(-1)
            book.ema_update(flat_in, flat_idx, cfg.ema_decay)
        trainer.step_count += 1
        if trainer.step_count % cfg.reset_interval == 0:
            for layer, book in enumerate(model.codebooks):
                codebook_reset(book, inputs[layer].reshape(-1, cfg.code_dim),
                               threshold=cfg.reset_threshold,
                               generator=trainer.reset_generator)

    return VqLossTerms(reconstruction=float(reconstruction.detach()),
                       codebook_term=float(codebook_term.detach()),
                       commitment_term=float(commitment_term.detach()),
                       beta=cfg.beta)


def save_tokenizer(path, model: ResidualVqVae, norm_mean, norm_std) -> None:
    torch.save({
        "kind": "tokenizer",
        "format_version": 1,
        "config": asdict(model.config),
        "state": model.state_dict(),
        "norm_mean": np.asarray(norm_mean, dtype=np.float64),
        "norm_std": np.asarray(norm_std, dtype=np.float64),
    }, path)


def load_tokenizer(path) -> tuple[ResidualVqVae, np.ndarray, np.ndarray]:
    payload = torch.load(path, weights_only=False)
    if payload.get("kind") != "tokenizer":
        raise ValueError(f"{path} is not a tokenizer checkpoint")
    model = ResidualVqVae(TokenizerConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload["norm_mean"], payload["norm_std"]
