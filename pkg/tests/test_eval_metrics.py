import json

import numpy as np
import pytest
import torch

from reactgen import pose_codec
from reactgen.eval_metrics import (MotionFeatureSet, diversity, evaluate_protocol,
                                   extract_features, fid, multimodality,
                                   reports_to_json, reports_to_table, summarize,
                                   train_extractor)
from reactgen.pose_codec import MotionSequence


def featset(arr, source="real"):
    return MotionFeatureSet(np.asarray(arr, dtype=np.float64), source=source)


class TestFid:
    def test_identical_sets_give_zero(self):
        rng = np.random.default_rng(0)
        x = featset(rng.normal(size=(50, 6)))
        assert fid(x, x) < 1e-6

    def test_shifted_copy_measures_mean_distance_squared(self):
        # identical covariances by construction: the trace term vanishes
        rng = np.random.default_rng(1)
        base = rng.normal(size=(40, 5))
        shift = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        value = fid(featset(base), featset(base + shift))
        assert abs(value - shift @ shift) < 1e-8

    def test_one_dimensional_gaussian_closed_form(self):
        # sample stats exactly mean 0 var 1 vs mean 1 var 4:
        # (0-1)^2 + (1 + 4 - 2*2) = 2
        a = featset(np.array([[-1.0], [1.0]]) / np.sqrt(2))
        b = featset(np.array([[1.0 - np.sqrt(2)], [1.0 + np.sqrt(2)]]))
        assert abs(fid(a, b) - 2.0) < 1e-3

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(2)
        a = featset(rng.normal(size=(30, 4)))
        b = featset(rng.normal(size=(25, 4)) * 2 + 1)
        assert fid(a, b) >= 0
        assert abs(fid(a, b) - fid(b, a)) < 1e-9

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(40, 5))
        b = rng.normal(size=(40, 5)) * 1.5 + 0.3
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        plain = fid(featset(a), featset(b))
        rotated = fid(featset(a @ q.T), featset(b @ q.T))
        assert abs(plain - rotated) < 1e-5

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            fid(featset(np.zeros((1, 3))), featset(np.zeros((5, 3))))

    def test_low_count_warns(self):
        rng = np.random.default_rng(4)
        with pytest.warns(UserWarning, match="rank-deficient"):
            fid(featset(rng.normal(size=(4, 8))), featset(rng.normal(size=(4, 8))))


class TestDiversity:
    def test_identical_features_have_zero_diversity(self):
        feats = featset(np.tile(np.arange(5.0), (10, 1)))
        assert diversity(feats, 100, np.random.default_rng(0)) == 0.0

    def test_two_points_give_their_distance(self):
        a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        feats = featset(np.stack([a, b]))
        value = diversity(feats, 50, np.random.default_rng(1))
        assert value == pytest.approx(5.0)

    def test_sampled_estimate_matches_exhaustive_mean(self):
        rng = np.random.default_rng(2)
        rows = rng.normal(size=(10, 3))
        # exhaustive all-ordered-pairs oracle (i != j)
        dists = []
        for i in range(10):
            for j in range(10):
                if i != j:
                    dists.append(np.linalg.norm(rows[i] - rows[j]))
        exact = np.mean(dists)
        estimate = diversity(featset(rows), 100_000, np.random.default_rng(3))
        assert abs(estimate - exact) / exact < 0.02

    def test_translation_invariance_and_homogeneity(self):
        rng = np.random.default_rng(4)
        rows = rng.normal(size=(12, 4))
        d0 = diversity(featset(rows), 500, np.random.default_rng(7))
        d1 = diversity(featset(rows + 5.0), 500, np.random.default_rng(7))
        d2 = diversity(featset(rows * 3.0), 500, np.random.default_rng(7))
        assert d1 == pytest.approx(d0)
        assert d2 == pytest.approx(3.0 * d0)

    def test_single_feature_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            diversity(featset(np.zeros((1, 3))), 10, np.random.default_rng(0))


class TestMultimodality:
    def test_deterministic_generator_scores_zero(self):
        rows = np.tile(np.arange(4.0), (30, 1))
        value = multimodality([rows, rows], 10, np.random.default_rng(0))
        assert value == 0.0

    def test_alternating_generations_match_exhaustive_enumeration(self):
        a = np.zeros(3)
        b = np.array([2.0, 1.0, -2.0])
        rows = np.stack([a if i % 2 == 0 else b for i in range(30)])
        # exhaustive oracle over ordered pairs i != j
        dists = []
        for i in range(30):
            for j in range(30):
                if i != j:
                    dists.append(np.linalg.norm(rows[i] - rows[j]))
        exact = np.mean(dists)  # = |a-b| * (2*15*15)/(30*29)
        estimate = multimodality([rows], 100_000, np.random.default_rng(1))
        assert abs(estimate - exact) / exact < 0.02
        assert exact == pytest.approx(np.linalg.norm(a - b) * 450 / 870)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(2)
        rows = rng.normal(size=(2, 30, 5))
        m0 = multimodality(list(rows), 10, np.random.default_rng(3))
        m1 = multimodality(list(rows * 4.0), 10, np.random.default_rng(3))
        assert m1 == pytest.approx(4.0 * m0)

    def test_wrong_generation_count_rejected(self):
        with pytest.raises(ValueError, match="generations"):
            multimodality([np.zeros((29, 3))], 10, np.random.default_rng(0))


class TestExtractor:
    def test_identical_motions_embed_identically(self):
        torch.manual_seed(0)
        rng = np.random.default_rng(1)
        arrays = [rng.normal(size=(40, 59)).astype(np.float32) for _ in range(3)]
        extractor = train_extractor(arrays, feature_dim=59, embed_dim=16,
                                    width=32, steps=5)
        stats = pose_codec.NormStats(np.zeros(59), np.ones(59))
        motion = MotionSequence(arrays[0], n_joints=5)
        feats = extract_features([motion, motion], extractor, stats)
        np.testing.assert_array_equal(feats.features[0], feats.features[1])
        assert feats.dim == 16

    def test_nearest_centroid_category_accuracy(self, toy_corpus):
        from reactgen.config import RunConfig
        from reactgen.dataset import load_pair
        from reactgen.pipeline import fit_extractor
        root, entries = toy_corpus
        cfg = RunConfig.toy_profile()
        extractor, stats = fit_extractor(cfg, root, entries)
        by_cat = {}
        feats, labels = [], []
        for e in entries:
            _, motion = load_pair(root, e)
            feats.append(extract_features([motion], extractor, stats).features[0])
            labels.append(e.subcategory)
        feats = np.stack(feats)
        labels = np.array(labels)
        train_mask = np.array([e.split == "train" for e in entries])
        cats = sorted(set(labels))
        centroids = np.stack([feats[train_mask & (labels == c)].mean(axis=0)
                              for c in cats])
        test_feats = feats[~train_mask]
        test_labels = labels[~train_mask]
        pred = [cats[int(np.linalg.norm(centroids - f, axis=1).argmin())]
                for f in test_feats]
        accuracy = np.mean([p == t for p, t in zip(pred, test_labels)])
        assert accuracy > 0.8


class TestProtocol:
    def test_zero_variance_metric_has_zero_ci(self):
        report = summarize("FID", [1.5] * 20)
        assert report.ci95_halfwidth == 0.0
        assert report.mean == 1.5
        assert report.repetitions == 20

    def test_report_names_and_determinism(self):
        rng_pool = np.random.default_rng(5)
        real = featset(rng_pool.normal(size=(25, 6)))

        def generate_features(seed):
            r = np.random.default_rng(seed)
            return featset(r.normal(size=(25, 6)) + 0.1, source="generated")

        def generate_mm(seed):
            r = np.random.default_rng(seed)
            return r.normal(size=(3, 30, 6))

        a = evaluate_protocol(real, generate_features, generate_mm,
                              repetitions=20, base_seed=42)
        b = evaluate_protocol(real, generate_features, generate_mm,
                              repetitions=20, base_seed=42)
        assert [r.name for r in a] == ["FID", "Diversity", "MultiModality",
                                       "RealDiversity"]
        for ra, rb in zip(a, b):
            assert ra.mean == rb.mean
            assert ra.ci95_halfwidth == rb.ci95_halfwidth
            assert ra.repetitions == 20

    def test_json_and_table_rendering(self):
        reports = [summarize("FID", [0.4, 0.5]), summarize("Diversity", [7.0, 7.2])]
        payload = json.loads(reports_to_json(reports))
        assert payload[0]["name"] == "FID"
        table = reports_to_table(reports)
        assert "FID" in table and "±" in table
