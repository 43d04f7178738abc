"""Iterative parallel decoding, step by step.

Uses an untrained model (the schedule mechanics are independent of training)
to show the cosine keep schedule, how the canvas fills in over the
iterations, and that a fixed seed reproduces the sequence exactly.
"""

import torch

from reactgen.reaction_model import (GenerationConfig, MaskedReactionTransformer,
                                     ReactionModelConfig, cosine_mask_ratio,
                                     generate_base, keep_schedule)

torch.manual_seed(0)
cfg = ReactionModelConfig(vocab_size=32, video_dim=8, latent_dim=64,
                          n_layers=2, n_heads=4, ffn_dim=128, dropout=0.0)
model = MaskedReactionTransformer(cfg)
v_l = torch.randn(1, 16, 8)

n, steps = 20, 5
print("cosine masking ratio: ",
      [f"{cosine_mask_ratio(s / steps):.3f}" for s in range(steps + 1)])
print(f"keep schedule (n={n}, S={steps}):", keep_schedule(n, steps))

gen = GenerationConfig(target_length=n, iterations=steps, seed=11)
generator = torch.Generator().manual_seed(gen.seed)
tokens = torch.full((1, n), cfg.mask_id)
print("\ncanvas per step ('.' = still masked):")
with torch.no_grad():
    for keep_total in keep_schedule(n, steps):
        logits = model(tokens, v_l)
        probs = logits.softmax(-1)
        sampled = torch.multinomial(probs.reshape(n, -1), 1,
                                    generator=generator).reshape(1, n)
        conf = probs.gather(-1, sampled[..., None]).squeeze(-1)
        masked = tokens == cfg.mask_id
        candidate = torch.where(masked, sampled, tokens)
        conf = torch.where(masked, conf, torch.full_like(conf, torch.inf))
        order = torch.argsort(conf, dim=-1, descending=True, stable=True)
        keep = torch.zeros_like(masked)
        keep.scatter_(1, order[:, :keep_total], True)
        tokens = torch.where(keep, candidate,
                             torch.full_like(tokens, cfg.mask_id))
        row = " ".join("." if t == cfg.mask_id else f"{t:2d}"
                       for t in tokens[0].tolist())
        print(f"  kept {keep_total:2d}/{n}: {row}")

final = generate_base(model, v_l, gen)
print("\npublic decoder, same seed:", final[0].tolist())
print("matches the traced loop:", bool(torch.equal(final, tokens)))
