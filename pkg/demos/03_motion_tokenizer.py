"""Motion tokens: residual quantization of pose-feature sequences.

Trains the tokenizer briefly on a small synthetic corpus, then shows
the discrete token stacks, the exact residual decomposition, and how
reconstruction error falls with each residual layer.
"""

import tempfile

import numpy as np
import torch

from reactgen.config import RunConfig
from reactgen.dataset import synth_corpus
from reactgen.motion_tokenizer import load_tokenizer
from reactgen.pipeline import (train_tokenizer, _load_motions, _train_entries)
from reactgen.pose_codec import NormStats, normalize

torch.set_num_threads(1)
cfg = RunConfig.toy_profile()

with tempfile.TemporaryDirectory() as data_dir:
    print("synthesizing a 48-pair corpus and training for 400 steps "
          "(a few minutes of the full schedule)...")
    entries = synth_corpus(48, 6, seed=0, out_dir=data_dir,
                           video_frames=16, video_dim=8)
    train_tokenizer(cfg, data_dir, data_dir + "/tok.pt", entries=entries,
                    max_steps=400)
    tokenizer, mean, std = load_tokenizer(data_dir + "/tok.pt")
    stats = NormStats(mean, std)
    motion = _load_motions(data_dir, _train_entries(entries))[0]

x = torch.from_numpy(normalize(motion, stats).features)[None]
n_use = (motion.n_frames // 4) * 4
tokens = tokenizer.tokenize(x[:, :n_use])
print(f"\nmotion of {motion.n_frames} frames -> token stack {tuple(tokens.shape[1:])} "
      f"(layers x tokens); one token covers 4 frames")
print("base layer:    ", tokens[0, 0, :16].tolist(), "...")
print("residual 1:    ", tokens[0, 1, :16].tolist(), "...")
print("residual 2:    ", tokens[0, 2, :16].tolist(), "...")

# the latent equals the sum of per-layer code vectors plus a final residual;
# what the codes fail to carry is the leftover quantization error
with torch.no_grad():
    z = tokenizer.encode(x[:, :n_use])
    _, quantized, _ = tokenizer.quantize(z)
leftover = z - quantized.sum(dim=0)
print(f"\nrelative quantization error after all layers: "
      f"{float(leftover.norm() / z.norm()):.2e}")

# reconstruction improves as residual layers are added
with torch.no_grad():
    for layers in range(1, tokens.shape[1] + 1):
        partial = tokenizer.decode_latent(tokenizer.sum_code_entries(tokens[:, :layers]))
        mse = float(((partial - x[:, :n_use]) ** 2).mean())
        print(f"reconstruction MSE with {layers} layer(s): {mse:.5f}")
