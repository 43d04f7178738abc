import numpy as np
import pytest
import torch
import torch.nn.functional as F

from reactgen.motion_tokenizer import (Codebook, ResidualVqVae, TokenizerConfig,
                                       TokenizerTrainer, codebook_reset,
                                       load_tokenizer, quantize_layer,
                                       rvq_encode, save_tokenizer, vq_train_step)

TOY = TokenizerConfig(feature_dim=59, codebook_size=32, code_dim=16,
                      n_residual_layers=2, width=64)


def exhaustive_nearest(vectors: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Brute-force oracle: per-pair distances, first minimum wins."""
    out = np.empty(len(vectors), dtype=np.int64)
    for i, v in enumerate(vectors):
        best, best_d = 0, np.inf
        for k, c in enumerate(entries):
            d = float(((v - c) ** 2).sum())
            if d < best_d:
                best, best_d = k, d
        out[i] = best
    return out


class TestEncodeDecodeShapes:
    def test_downsampling_ratio(self):
        torch.manual_seed(0)
        model = ResidualVqVae(TOY)
        for n, expected in [(64, 16), (196, 49)]:
            z = model.encode(torch.randn(1, n, 59))
            assert z.shape == (1, expected, 16)

    def test_token_count_for_all_valid_lengths(self):
        torch.manual_seed(0)
        model = ResidualVqVae(TOY)
        for n in range(4, 41):
            z = model.encode(torch.randn(1, n, 59))
            assert z.shape[1] == n // 4

    def test_too_short_rejected(self):
        model = ResidualVqVae(TOY)
        with pytest.raises(ValueError, match="at least 4"):
            model.encode(torch.randn(1, 3, 59))

    def test_encode_deterministic_for_fixed_seed(self):
        torch.manual_seed(123)
        a = ResidualVqVae(TOY)
        torch.manual_seed(123)
        b = ResidualVqVae(TOY)
        x = torch.randn(2, 32, 59, generator=torch.Generator().manual_seed(5))
        za, zb = a.encode(x), b.encode(x)
        assert torch.equal(za, zb)

    def test_decode_upsamples_by_four(self):
        torch.manual_seed(0)
        model = ResidualVqVae(TOY)
        out = model.decode_latent(torch.randn(1, 16, 16))
        assert out.shape == (1, 64, 59)

    def test_zero_latent_with_zeroed_final_layer_is_constant(self):
        torch.manual_seed(0)
        model = ResidualVqVae(TOY)
        final = model.decoder.net[-1]
        torch.nn.init.zeros_(final.weight)
        torch.nn.init.zeros_(final.bias)
        out = model.decode_latent(torch.zeros(1, 8, 16))
        assert torch.allclose(out, out[:, :1])


class TestQuantizeLayer:
    def test_two_entry_example(self):
        book = Codebook.from_entries([[0.0, 0.0], [1.0, 1.0]])
        idx, quantized = quantize_layer(torch.tensor([[0.9, 0.8]]), book)
        # brute-force scan: d0 = 0.81+0.64 = 1.45, d1 = 0.01+0.04 = 0.05
        assert idx.tolist() == [1]
        assert torch.allclose(quantized, torch.tensor([[1.0, 1.0]]))

    def test_exact_entry_gives_zero_residual(self):
        rng = np.random.default_rng(0)
        entries = rng.normal(size=(5, 3)).astype(np.float32)
        book = Codebook.from_entries(entries)
        idx, quantized = quantize_layer(torch.tensor(entries[3])[None], book)
        assert idx.tolist() == [3]
        assert torch.allclose(quantized[0], torch.tensor(entries[3]))

    def test_hundred_random_vectors_match_exhaustive_loop(self):
        rng = np.random.default_rng(1)
        entries = rng.normal(size=(7, 4)).astype(np.float32)
        vectors = rng.normal(size=(100, 4)).astype(np.float32)
        book = Codebook.from_entries(entries)
        idx, _ = quantize_layer(torch.tensor(vectors), book)
        np.testing.assert_array_equal(idx.numpy(),
                                      exhaustive_nearest(vectors, entries))

    def test_tie_breaks_to_lowest_index(self):
        book = Codebook.from_entries([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        idx, _ = quantize_layer(torch.tensor([[0.0, 5.0], [1.0, 0.0]]), book)
        assert idx.tolist() == [0, 0]  # equidistant / duplicate: lowest wins

    def test_dim_mismatch_rejected(self):
        book = Codebook.from_entries([[0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(ValueError, match="dim"):
            quantize_layer(torch.zeros(4, 3), book)

    def test_codebook_requires_two_entries(self):
        with pytest.raises(ValueError):
            Codebook.from_entries([[1.0, 2.0]])


class TestRvqEncode:
    def test_single_layer_degenerates_to_plain_quantization(self):
        rng = np.random.default_rng(2)
        entries = rng.normal(size=(6, 3)).astype(np.float32)
        z = rng.normal(size=(10, 3)).astype(np.float32)
        book = Codebook.from_entries(entries)
        tokens, residual = rvq_encode(torch.tensor(z), [book])
        idx, quantized = quantize_layer(torch.tensor(z), book)
        np.testing.assert_array_equal(tokens.layers[0], idx.numpy())
        assert torch.allclose(residual, torch.tensor(z) - quantized)

    def test_constructed_sum_has_zero_final_residual(self):
        rng = np.random.default_rng(3)
        books = [Codebook.from_entries(rng.normal(size=(4, 3)).astype(np.float32) * s)
                 for s in (4.0, 1.0, 0.25)]
        picks = [1, 3, 0]
        z = sum(b.entries[p] for b, p in zip(books, picks))[None]
        tokens, residual = rvq_encode(z, books)
        assert tokens.layers[:, 0].tolist() == picks
        assert float(residual.abs().max()) < 1e-6

    def test_residual_decomposition_identity(self):
        rng = np.random.default_rng(4)
        books = [Codebook.from_entries(rng.normal(size=(8, 5)).astype(np.float32))
                 for _ in range(4)]
        z = torch.tensor(rng.normal(size=(20, 5)).astype(np.float32))
        tokens, residual = rvq_encode(z, books)
        total = residual.clone()
        for layer, book in enumerate(books):
            total = total + book.lookup(torch.tensor(tokens.layers[layer]))
        rel = float((z - total).norm() / z.norm())
        assert rel <= 1e-5

    def test_residual_norms_non_increasing_with_zero_entry(self):
        rng = np.random.default_rng(5)
        books = []
        for _ in range(4):
            entries = rng.normal(size=(6, 4)).astype(np.float32)
            entries[0] = 0.0  # zero entry guarantees non-expansion
            books.append(Codebook.from_entries(entries))
        z = torch.tensor(rng.normal(size=(30, 4)).astype(np.float32))
        residual = z
        norms = [float(residual.norm())]
        for book in books:
            _, quantized = quantize_layer(residual, book)
            residual = residual - quantized
            norms.append(float(residual.norm()))
        assert all(b <= a + 1e-6 for a, b in zip(norms, norms[1:]))


class TestTrainStep:
    def _exact_fit_model(self):
        """Model whose layer-0 codebook contains the exact encoder outputs and
        whose residual layers contain the zero vector, so z == q."""
        torch.manual_seed(7)
        model = ResidualVqVae(TOY)
        model.codebooks_seeded.fill_(True)
        x = torch.randn(1, 64, 59, generator=torch.Generator().manual_seed(8))
        with torch.no_grad():
            z = model.encode(x).reshape(-1, 16)
        far = torch.full((16, 16), 1e4)
        entries0 = torch.cat([z, far])
        model.codebooks[0].entries.copy_(entries0)
        model.codebooks[0].ema_sums.copy_(entries0)
        for book in list(model.codebooks)[1:]:
            entries = torch.cat([torch.zeros(1, 16), torch.full((31, 16), 1e4)])
            book.entries.copy_(entries)
            book.ema_sums.copy_(entries)
        return model, x

    def test_exact_codebook_zeroes_quantization_terms(self):
        model, x = self._exact_fit_model()
        trainer = TokenizerTrainer(model, lr=0.0)
        terms = vq_train_step(trainer, x)
        assert terms.codebook_term == 0.0
        assert terms.commitment_term == 0.0
        assert terms.total == terms.reconstruction

    def test_smooth_l1_closed_form(self):
        pred = torch.full((10,), 0.5)
        target = torch.zeros(10)
        loss = F.smooth_l1_loss(pred, target)
        assert abs(float(loss) - 0.125) < 1e-7  # 0.5 * 0.5^2

    def test_autoencoder_path_overfits_four_motions(self, toy_train_motions):
        # decode(encode(M)) without quantization, after brief training on a
        # 4-motion set, reconstructs below 1e-3 per-feature MSE
        from reactgen import pose_codec
        from reactgen.pipeline import TRAIN_STD_FLOOR
        four = toy_train_motions[:4]
        stats = pose_codec.compute_norm_stats(four, std_floor=TRAIN_STD_FLOOR)
        arrays = [pose_codec.normalize(m, stats).features for m in four]
        torch.manual_seed(30)
        cfg = TokenizerConfig(feature_dim=59, codebook_size=32, code_dim=32,
                              n_residual_layers=2, width=128)
        model = ResidualVqVae(cfg)
        trainer = TokenizerTrainer(model, lr=2e-3, warmup_iters=20,
                                   total_steps=2000)
        rng = np.random.default_rng(31)
        for _ in range(2000):
            rows = rng.integers(0, 4, size=8)
            batch = []
            for r in rows:
                start = int(rng.integers(0, arrays[r].shape[0] - 64 + 1))
                batch.append(arrays[r][start:start + 64])
            trainer.step(torch.from_numpy(np.stack(batch)))
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for a in arrays:
                n_use = (a.shape[0] // 4) * 4
                x = torch.from_numpy(a[:n_use])[None]
                recon = model.decode_latent(model.encode(x))
                total += float(((recon - x) ** 2).sum())
                count += recon.numel()
        assert total / count < 1e-3

    def test_overfit_single_motion_reduces_loss_tenfold(self):
        torch.manual_seed(9)
        model = ResidualVqVae(TOY)
        trainer = TokenizerTrainer(model, lr=2e-3, warmup_iters=5, total_steps=200)
        x = torch.randn(4, 32, 59, generator=torch.Generator().manual_seed(10))
        first = vq_train_step(trainer, x).reconstruction
        last = first
        for _ in range(199):
            last = vq_train_step(trainer, x).reconstruction
        assert last <= first / 10

    def test_straight_through_gradient_matches_identity_bypass(self):
        # gradient of the reconstruction loss w.r.t. the encoder output must
        # equal the gradient on a twin graph fed the quantized values directly
        torch.manual_seed(11)
        model = ResidualVqVae(TOY).double()
        model.codebooks_seeded.fill_(True)
        x = torch.randn(2, 16, 59, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(12))
        z = model.encode(x)
        z.retain_grad()
        with torch.no_grad():
            flat = z.reshape(-1, z.shape[-1]).float()
            _, q0 = quantize_layer(flat, model.codebooks[0])
            q_sum = q0.double().reshape(z.shape)
        dec_in = z + (q_sum - z).detach()
        loss = F.smooth_l1_loss(model.decode_latent(dec_in), x)
        loss.backward()

        twin = q_sum.clone().requires_grad_(True)
        loss2 = F.smooth_l1_loss(model.decode_latent(twin), x)
        loss2.backward()
        rel = float((z.grad - twin.grad).norm() / twin.grad.norm())
        assert rel < 1e-6


class TestEmaAndReset:
    def test_ema_decay_one_is_identity(self):
        rng = np.random.default_rng(6)
        entries = rng.normal(size=(4, 3)).astype(np.float32)
        book = Codebook.from_entries(entries)
        before = book.entries.clone()
        vectors = torch.tensor(rng.normal(size=(50, 3)).astype(np.float32))
        idx, _ = quantize_layer(vectors, book)
        book.ema_update(vectors, idx, decay=1.0)
        assert torch.equal(book.entries, before)

    def test_ema_moves_entries_toward_assigned_mean(self):
        book = Codebook.from_entries([[0.0, 0.0], [10.0, 10.0]])
        vectors = torch.tensor([[1.0, 1.0], [1.0, 1.0]])
        idx, _ = quantize_layer(vectors, book)
        book.ema_update(vectors, idx, decay=0.5)
        # counts: 0.5*1 + 0.5*2 = 1.5; sums: 0.5*(0,0) + 0.5*(2,2) = (1,1)
        np.testing.assert_allclose(book.entries[0].numpy(), [1 / 1.5, 1 / 1.5],
                                   atol=1e-6)
        np.testing.assert_allclose(book.entries[1].numpy(), [10, 10], atol=1e-6)

    def test_all_codes_used_reset_is_noop(self):
        rng = np.random.default_rng(7)
        book = Codebook.from_entries(rng.normal(size=(4, 3)).astype(np.float32))
        before = book.entries.clone()
        replaced = codebook_reset(book, torch.randn(10, 3))
        assert replaced == 0
        assert torch.equal(book.entries, before)

    def test_unused_code_replaced_others_untouched(self):
        rng = np.random.default_rng(8)
        book = Codebook.from_entries(rng.normal(size=(4, 3)).astype(np.float32))
        book.ema_counts[2] = 0.01  # never selected over the window
        before = book.entries.clone()
        candidates = torch.full((6, 3), 7.0)
        replaced = codebook_reset(book, candidates,
                                  generator=torch.Generator().manual_seed(0))
        assert replaced == 1
        assert torch.equal(book.entries[[0, 1, 3]], before[[0, 1, 3]])
        assert torch.allclose(book.entries[2], torch.full((3,), 7.0))
        assert float(book.ema_counts[2]) == 1.0

    def test_usage_fraction_after_training(self, toy_train_motions):
        # K = 64 on diverse toy data: resets keep most codes live
        from reactgen import pose_codec
        from reactgen.pipeline import TRAIN_STD_FLOOR
        stats = pose_codec.compute_norm_stats(toy_train_motions,
                                              std_floor=TRAIN_STD_FLOOR)
        arrays = [pose_codec.normalize(m, stats).features
                  for m in toy_train_motions]
        torch.manual_seed(13)
        cfg = TokenizerConfig(feature_dim=59, codebook_size=64, code_dim=16,
                              n_residual_layers=1, width=64)
        model = ResidualVqVae(cfg)
        trainer = TokenizerTrainer(model, lr=1e-3, warmup_iters=20,
                                   total_steps=1000)
        rng = np.random.default_rng(14)
        for _ in range(1000):
            rows = rng.integers(0, len(arrays), size=16)
            batch = np.stack([a[:64] if len(a) >= 64 else
                              np.tile(a, (2, 1))[:64] for a in
                              (arrays[r] for r in rows)])
            trainer.step(torch.from_numpy(batch))
        model.eval()
        used = set()
        with torch.no_grad():
            for a in arrays:
                n_use = (a.shape[0] // 4) * 4
                tokens = model.tokenize(torch.from_numpy(a[:n_use])[None])
                used.update(tokens[0, 0].reshape(-1).tolist())
        assert len(used) / 64 >= 0.7


class TestCheckpoint:
    def test_round_trip_preserves_behavior(self, tmp_path):
        torch.manual_seed(15)
        model = ResidualVqVae(TOY)
        x = torch.randn(1, 32, 59, generator=torch.Generator().manual_seed(16))
        trainer = TokenizerTrainer(model, lr=1e-3)
        for _ in range(5):
            trainer.step(x)
        model.eval()
        mean, std = np.zeros(59), np.ones(59)
        path = tmp_path / "tok.pt"
        save_tokenizer(path, model, mean, std)
        loaded, lmean, lstd = load_tokenizer(path)
        np.testing.assert_array_equal(lmean, mean)
        tokens_a = model.tokenize(x)
        tokens_b = loaded.tokenize(x)
        assert torch.equal(tokens_a, tokens_b)
        assert torch.allclose(model.detokenize(tokens_a),
                              loaded.detokenize(tokens_b))

    def test_wrong_kind_rejected(self, tmp_path):
        torch.save({"kind": "other"}, tmp_path / "x.pt")
        with pytest.raises(ValueError, match="tokenizer"):
            load_tokenizer(tmp_path / "x.pt")
