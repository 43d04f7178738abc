"""Video-conditioned masked generation over motion tokens.

Two transformers share one conditioning scheme. The base model predicts
base-layer tokens from a partially masked sequence; the residual model
predicts one residual quantization layer from the layers below it. Both
prepend an interaction-intention embedding (a learned weighting of the frame
features queried by the pooled video representation) to the token stream for
self-attention, and interleave cross-attention from the token stream to the
frame features so per-frame detail stays available at every layer.

Generation starts from an all-masked sequence and fills it in over S steps,
keeping the most confident sampled tokens according to a cosine schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .motion_tokenizer import TrainingDiverged

MAX_TOKENS = 50  # 200 frames / downsample 4


@dataclass
class ReactionModelConfig:
    vocab_size: int              # real motion codes; MASK and PAD are appended
    video_dim: int               # d_vl of the frame features
    latent_dim: int = 384
    n_layers: int = 6
    n_heads: int = 6
    ffn_dim: int = 1024
    dropout: float = 0.1
    max_tokens: int = MAX_TOKENS
    use_intention_extraction: bool = True   # off: intention = pooled feature
    use_frame_cross_attention: bool = True  # off: decoder units skip cross-attn

    def __post_init__(self):
        if self.latent_dim % self.n_heads:
            raise ValueError("latent_dim must be divisible by n_heads")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    @property
    def pad_id(self) -> int:
        return self.vocab_size + 1


@dataclass
class GenerationConfig:
    target_length: int
    iterations: int = 10
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.target_length <= MAX_TOKENS:
            raise ValueError(f"target_length must be in [1, {MAX_TOKENS}]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class CorruptedTokens:
    """A token sequence with MASK holes; PAD may only be a suffix."""

    tokens: np.ndarray
    mask_positions: np.ndarray
    pad_positions: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.mask_positions = np.asarray(self.mask_positions, dtype=bool)
        self.pad_positions = np.asarray(self.pad_positions, dtype=bool)
        if (self.mask_positions & self.pad_positions).any():
            raise ValueError("mask and pad positions must be disjoint")
        pad = self.pad_positions
        if pad.any() and not pad[pad.argmax():].all():
            raise ValueError("PAD must be a contiguous suffix")


def cosine_mask_ratio(tau: float) -> float:
    """Masking ratio schedule cos(pi * tau / 2): 1 at tau=0, 0 at tau=1."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return math.cos(math.pi * tau / 2.0)


def keep_schedule(n: int, iterations: int) -> list[int]:
    """Total tokens kept unmasked after each decoding step s = 1..S:
    n - floor(n * cosine_mask_ratio(s / S)). Non-decreasing, ends at n."""
    return [n - math.floor(n * cosine_mask_ratio(s / iterations))
            for s in range(1, iterations + 1)]


def corrupt(tokens: np.ndarray, tau: float, rng: np.random.Generator,
            pad_id: int, mask_id: int) -> CorruptedTokens:
    """Replace max(1, round(ratio * n_valid)) non-PAD positions with MASK,
    chosen uniformly without replacement; ratio = cosine_mask_ratio(tau)."""
    tokens = np.asarray(tokens, dtype=np.int64).copy()
    pad = tokens == pad_id
    valid = np.flatnonzero(~pad)
    if valid.size == 0:
        raise ValueError("cannot corrupt a fully padded sequence")
    ratio = cosine_mask_ratio(tau)
    n_mask = max(1, int(math.floor(ratio * valid.size + 0.5)))
    chosen = rng.choice(valid, size=n_mask, replace=False)
    mask = np.zeros(tokens.shape, dtype=bool)
    mask[chosen] = True
    tokens[chosen] = mask_id
    return CorruptedTokens(tokens=tokens, mask_positions=mask, pad_positions=pad)


def masked_loss(logits: torch.Tensor, targets: torch.Tensor,
                mask_positions: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of targets at masked positions only."""
    mask = mask_positions.bool()
    if not mask.any():
        raise ValueError("no masked positions to score")
    return F.cross_entropy(logits[mask], targets[mask])


class IntentionExtractor(nn.Module):
    """Single-query cross-attention from the pooled video representation over
    the frame features, refined by a two-layer FFN."""

    def __init__(self, video_dim: int):
        super().__init__()
        self.w_q = nn.Linear(video_dim, video_dim, bias=False)
        self.w_k = nn.Linear(video_dim, video_dim, bias=False)
        self.w_v = nn.Linear(video_dim, video_dim, bias=False)
        self.ffn = nn.Sequential(
            nn.Linear(video_dim, 2 * video_dim),
            nn.GELU(),
            nn.Linear(2 * video_dim, video_dim),
        )

    def forward(self, v_g: torch.Tensor, v_l: torch.Tensor):
        """v_g (B, d), v_l (B, T, d) -> (intention (B, d), weights (B, T))."""
        q = self.w_q(v_g)[:, None]
        k = self.w_k(v_l)
        v = self.w_v(v_l)
        logits = (q @ k.transpose(1, 2)) / math.sqrt(v_l.shape[-1])
        weights = logits.softmax(dim=-1)
        fused = (weights @ v).squeeze(1)
        return self.ffn(fused), weights.squeeze(1)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = kv_dim or d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(kv_dim, d_model, bias=False)
        self.w_v = nn.Linear(kv_dim, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model)

    def forward(self, query: torch.Tensor, keyval: torch.Tensor,
                key_padding_mask: torch.Tensor | None = None):
        """Returns (output (B, Lq, d), weights (B, H, Lq, Lk)). Padded keys get
        exactly zero weight."""
        b, lq, _ = query.shape
        lk = keyval.shape[1]
        q = self.w_q(query).view(b, lq, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.w_k(keyval).view(b, lk, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.w_v(keyval).view(b, lk, self.n_heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_padding_mask is not None:
            logits = logits.masked_fill(
                key_padding_mask[:, None, None, :], float("-inf"))
        weights = logits.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, lq, -1)
        return self.w_o(out), weights


class DecoderUnit(nn.Module):
    """Pre-LN block: conditioned self-attention, optional motion-frame
    cross-attention, FFN."""

    def __init__(self, cfg: ReactionModelConfig):
        super().__init__()
        d = cfg.latent_dim
        self.self_attn = MultiHeadAttention(d, cfg.n_heads)
        self.cross_attn = (MultiHeadAttention(d, cfg.n_heads)
                           if cfg.use_frame_cross_attention else None)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d) if self.cross_attn is not None else None
        self.norm3 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ffn_dim, d),
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, frames, key_padding_mask, stash=None):
        h = self.norm1(x)
        attn, w_self = self.self_attn(h, h, key_padding_mask)
        x = x + self.dropout(attn)
        w_cross = None
        if self.cross_attn is not None:
            attn, w_cross = self.cross_attn(self.norm2(x), frames)
            x = x + self.dropout(attn)
        x = x + self.dropout(self.ffn(self.norm3(x)))
        if stash is not None:
            stash["self"].append(w_self)
            if w_cross is not None:
                stash["cross"].append(w_cross)
        return x


class _ConditionedTransformer(nn.Module):
    """Shared trunk: intention slot + token stream through decoder units."""

    def __init__(self, cfg: ReactionModelConfig):
        super().__init__()
        self.cfg = cfg
        self.intention = (IntentionExtractor(cfg.video_dim)
                          if cfg.use_intention_extraction else None)
        self.intent_proj = nn.Linear(cfg.video_dim, cfg.latent_dim)
        self.frame_proj = nn.Linear(cfg.video_dim, cfg.latent_dim)
        self.pos_emb = nn.Embedding(cfg.max_tokens, cfg.latent_dim)
        self.units = nn.ModuleList(DecoderUnit(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.latent_dim)
        self.head = nn.Linear(cfg.latent_dim, cfg.vocab_size)

    def compute_intention(self, v_l: torch.Tensor, stash=None) -> torch.Tensor:
        v_g = v_l.mean(dim=1)
        if self.intention is None:
            return v_g
        e, weights = self.intention(v_g, v_l)
        if stash is not None:
            stash["intention"] = weights
        return e

    def run(self, token_emb: torch.Tensor, v_l: torch.Tensor,
            pad_mask: torch.Tensor | None, stash=None) -> torch.Tensor:
        """token_emb (B, n, d_l) -> logits (B, n, vocab)."""
        b, n, _ = token_emb.shape
        if n > self.cfg.max_tokens:
            raise ValueError(f"{n} tokens exceeds model maximum {self.cfg.max_tokens}")
        e = self.compute_intention(v_l, stash)
        pos = self.pos_emb(torch.arange(n))
        x = torch.cat([self.intent_proj(e)[:, None], token_emb + pos], dim=1)
        if pad_mask is None:
            key_mask = None
        else:
            never = torch.zeros(b, 1, dtype=torch.bool)
            key_mask = torch.cat([never, pad_mask], dim=1)
        frames = self.frame_proj(v_l)
        for unit in self.units:
            x = unit(x, frames, key_mask, stash)
        return self.head(self.final_norm(x[:, 1:]))  # intention slot emits no logits


class MaskedReactionTransformer(nn.Module):
    """Predicts base-layer motion tokens at masked positions."""

    def __init__(self, cfg: ReactionModelConfig):
        super().__init__()
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size + 2, cfg.latent_dim)
        self.trunk = _ConditionedTransformer(cfg)

    def forward(self, tokens: torch.Tensor, v_l: torch.Tensor,
                return_attention: bool = False):
        """tokens (B, n) over codes + MASK/PAD, v_l (B, T, d_vl) ->
        logits (B, n, vocab)."""
        if tokens.ndim == 1:
            tokens = tokens[None]
        if v_l.ndim == 2:
            v_l = v_l[None]
        stash = {"self": [], "cross": []} if return_attention else None
        pad_mask = tokens == self.cfg.pad_id
        logits = self.trunk.run(self.token_emb(tokens), v_l, pad_mask, stash)
        return (logits, stash) if return_attention else logits


class ResidualReactionTransformer(nn.Module):
    """Predicts one residual quantization layer from the layers below it.

    Tokens are embedded through the (frozen) tokenizer code entries and a
    learned projection; a layer embedding tells the model which layer it is
    predicting.
    """

    def __init__(self, cfg: ReactionModelConfig, n_residual_layers: int,
                 code_entries: torch.Tensor):
        super().__init__()
        if n_residual_layers < 1:
            raise ValueError("residual model needs at least one residual layer")
        expected = (n_residual_layers + 1, cfg.vocab_size)
        if tuple(code_entries.shape[:2]) != expected:
            raise ValueError(
                f"code entries must be (V+1={expected[0]}, K={expected[1]}, d_c), "
                f"got {tuple(code_entries.shape)}")
        self.cfg = cfg
        self.n_residual_layers = n_residual_layers
        self.register_buffer("code_entries", code_entries.float())
        self.code_proj = nn.Linear(code_entries.shape[-1], cfg.latent_dim)
        self.layer_emb = nn.Embedding(n_residual_layers, cfg.latent_dim)
        self.trunk = _ConditionedTransformer(cfg)

    def forward(self, layer_tokens: torch.Tensor, target_layer: torch.Tensor,
                v_l: torch.Tensor, pad_mask: torch.Tensor | None = None,
                return_attention: bool = False):
        """layer_tokens (B, L, n) holds layers 0..L-1; per-sample target_layer
        t means layers 0..t-1 are summed as input and layer t is predicted.
        Returns logits (B, n, vocab)."""
        if layer_tokens.ndim == 2:
            layer_tokens = layer_tokens[None]
        if v_l.ndim == 2:
            v_l = v_l[None]
        b, n_layers, n = layer_tokens.shape
        target_layer = torch.as_tensor(target_layer, dtype=torch.long)
        if target_layer.ndim == 0:
            target_layer = target_layer.expand(b)
        if (target_layer < 1).any() or (target_layer > self.n_residual_layers).any():
            raise ValueError("target_layer must be in [1, V]")
        if n_layers < int(target_layer.max()):
            raise ValueError(
                f"need layers 0..{int(target_layer.max()) - 1} as input, "
                f"got {n_layers} layers")

        safe = layer_tokens.clamp(0, self.cfg.vocab_size - 1)
        summed = torch.zeros(b, n, self.code_entries.shape[-1],
                             dtype=self.code_entries.dtype)
        for layer in range(n_layers):
            active = (target_layer > layer).float()[:, None, None]
            summed = summed + active * self.code_entries[layer][safe[:, layer]]
        if pad_mask is not None:
            summed = summed * (~pad_mask)[:, :, None]

        x = self.code_proj(summed) + self.layer_emb(target_layer - 1)[:, None]
        stash = {"self": [], "cross": []} if return_attention else None
        logits = self.trunk.run(x, v_l, pad_mask, stash)
        return (logits, stash) if return_attention else logits


@torch.no_grad()
def generate_base(model: MaskedReactionTransformer, v_l: torch.Tensor,
                  gen: GenerationConfig,
                  generator: torch.Generator | None = None) -> torch.Tensor:
    """Iterative parallel decoding from an all-MASK canvas.

    At step s, masked positions are sampled (temperature 0 = argmax) and the
    most confident tokens are kept so the unmasked total reaches the cosine
    schedule; kept tokens are frozen for the remaining steps. Confidence is
    the sampled token's probability; ties break toward lower positions.
    Returns (B, n) token indices with no MASK left.
    """
    model.eval()
    if v_l.ndim == 2:
        v_l = v_l[None]
    if generator is None:
        generator = torch.Generator().manual_seed(gen.seed)
    b, n = v_l.shape[0], gen.target_length
    mask_id = model.cfg.mask_id
    tokens = torch.full((b, n), mask_id, dtype=torch.long)
    schedule = keep_schedule(n, gen.iterations)

    for keep_total in schedule:
        logits = model(tokens, v_l)
        if gen.temperature == 0:
            probs = torch.zeros_like(logits)
            probs.scatter_(-1, logits.argmax(-1, keepdim=True), 1.0)
        else:
            probs = (logits / gen.temperature).softmax(dim=-1)
        sampled = torch.multinomial(
            probs.reshape(b * n, -1), 1, generator=generator).reshape(b, n)
        confidence = probs.gather(-1, sampled[..., None]).squeeze(-1)

        still_masked = tokens == mask_id
        candidate = torch.where(still_masked, sampled, tokens)
        # Frozen tokens rank above any sample; stable sort keeps position order
        # on ties so equal confidences resolve toward the lower index.
        confidence = torch.where(still_masked, confidence,
                                 torch.full_like(confidence, torch.inf))
        order = torch.argsort(confidence, dim=-1, descending=True, stable=True)
        keep = torch.zeros_like(still_masked)
        keep.scatter_(1, order[:, :keep_total], True)
        tokens = torch.where(keep, candidate, torch.full_like(tokens, mask_id))
    return tokens


@torch.no_grad()
def residual_predict(model: ResidualReactionTransformer,
                     layer_tokens: torch.Tensor, target_layer: int,
                     v_l: torch.Tensor) -> torch.Tensor:
    """Greedy one-pass prediction of layer `target_layer` (1..V) given layers
    0..target_layer-1. Returns (B, n) indices."""
    model.eval()
    logits = model(layer_tokens, target_layer, v_l)
    return logits.argmax(dim=-1)


class TransformerTrainer:
    """AdamW with a linear warm-up to the base learning rate."""

    def __init__(self, model: nn.Module, lr: float = 2e-4,
                 warmup_iters: int = 250):
        self.model = model
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda it: min(1.0, (it + 1) / max(1, warmup_iters)))
        self.step_count = 0

    def apply(self, loss: torch.Tensor) -> None:
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {self.step_count}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.step_count += 1


def masked_train_step(trainer: TransformerTrainer,
                      base_tokens: np.ndarray, v_l: torch.Tensor,
                      rng: np.random.Generator) -> float:
    """One step on a batch of base-layer token rows (B, n) that may carry a
    PAD suffix: per-row tau ~ U(0,1), corrupt, NLL at masked positions."""
    model = trainer.model
    model.train()
    cfg = model.cfg
    base_tokens = np.asarray(base_tokens, dtype=np.int64)
    corrupted = np.empty_like(base_tokens)
    masks = np.zeros(base_tokens.shape, dtype=bool)
    for row in range(base_tokens.shape[0]):
        c = corrupt(base_tokens[row], rng.uniform(), rng,
                    pad_id=cfg.pad_id, mask_id=cfg.mask_id)
        corrupted[row] = c.tokens
        masks[row] = c.mask_positions
    logits = model(torch.from_numpy(corrupted), v_l)
    loss = masked_loss(logits, torch.from_numpy(base_tokens),
                       torch.from_numpy(masks))
    trainer.apply(loss)
    return float(loss.detach())


def residual_train_step(trainer: TransformerTrainer,
                        all_tokens: torch.Tensor, v_l: torch.Tensor,
                        pad_mask: torch.Tensor | None,
                        rng: np.random.Generator) -> float:
    """One step on full token stacks (B, V+1, n): a target layer ~ U(1, V) is
    drawn per sample and scored on every non-PAD position."""
    model = trainer.model
    model.train()
    b, _, n = all_tokens.shape
    target = torch.from_numpy(
        rng.integers(1, model.n_residual_layers + 1, size=b))
    logits = model(all_tokens, target, v_l, pad_mask)
    gt = all_tokens[torch.arange(b), target]
    valid = torch.ones(b, n, dtype=torch.bool) if pad_mask is None else ~pad_mask
    loss = F.cross_entropy(logits[valid], gt[valid])
    trainer.apply(loss)
    return float(loss.detach())


def save_reaction_model(path, model: nn.Module, tokenizer_fingerprint: str = "") -> None:
    payload = {
        "format_version": 1,
        "config": asdict(model.cfg),
        "state": model.state_dict(),
        "tokenizer_fingerprint": tokenizer_fingerprint,
    }
    if isinstance(model, ResidualReactionTransformer):
        payload["kind"] = "residual"
        payload["n_residual_layers"] = model.n_residual_layers
    else:
        payload["kind"] = "base"
    torch.save(payload, path)


def load_reaction_model(path) -> nn.Module:
    payload = torch.load(path, weights_only=False)
    cfg = ReactionModelConfig(**payload["config"])
    if payload["kind"] == "base":
        model = MaskedReactionTransformer(cfg)
    elif payload["kind"] == "residual":
        v = payload["n_residual_layers"]
        entries = payload["state"]["code_entries"]
        model = ResidualReactionTransformer(cfg, v, entries)
    else:
        raise ValueError(f"{path}: unknown checkpoint kind {payload['kind']!r}")
    model.load_state_dict(payload["state"])
    model.eval()
    return model
