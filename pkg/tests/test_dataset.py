import json

import numpy as np
import pytest

from reactgen import pose_codec
from reactgen.dataset import (BROAD_CATEGORIES, SUBCATEGORY_TO_BROAD, TAXONOMY,
                              ManifestEntry, interleaved_subcategories,
                              load_manifest, load_pair, procedural_motion,
                              save_manifest, seen_unseen_split, split_manifest,
                              synth_corpus)
from reactgen.skeleton import TOY_5


def make_entries(per_subcategory: dict[str, int]):
    entries = []
    i = 0
    for sub, count in per_subcategory.items():
        for _ in range(count):
            entries.append(ManifestEntry(
                pair_id=f"p{i:04d}", feature_path=f"f{i}.vf",
                motion_path=f"m{i}.mo",
                broad_category=SUBCATEGORY_TO_BROAD[sub], subcategory=sub))
            i += 1
    return entries


class TestTaxonomy:
    def test_32_subcategories_across_3_broads(self):
        assert len(SUBCATEGORY_TO_BROAD) == 32
        assert set(TAXONOMY) == set(BROAD_CATEGORIES)

    def test_interleaving_mirrors_broad_structure(self):
        subs = interleaved_subcategories(6)
        broads = [SUBCATEGORY_TO_BROAD[s] for s in subs]
        assert broads == list(BROAD_CATEGORIES) * 2

    def test_inconsistent_mapping_rejected(self):
        with pytest.raises(ValueError, match="belongs"):
            ManifestEntry(pair_id="x", feature_path="f", motion_path="m",
                          broad_category="scene-human", subcategory="handshake")


class TestSplit:
    def test_ten_entries_split_eight_two(self):
        entries = make_entries({"hug": 10})
        out = split_manifest(entries, seed=0)
        assert sum(e.split == "train" for e in out) == 8
        assert sum(e.split == "test" for e in out) == 2

    def test_same_seed_gives_identical_split(self):
        entries = make_entries({"hug": 10, "wave": 15})
        a = split_manifest(entries, seed=3)
        b = split_manifest(entries, seed=3)
        assert [e.split for e in a] == [e.split for e in b]
        c = split_manifest(entries, seed=4)
        assert [e.split for e in c] != [e.split for e in a]

    def test_32_by_20_counting_check(self):
        entries = make_entries({s: 20 for s in SUBCATEGORY_TO_BROAD})
        out = split_manifest(entries, seed=1)
        assert sum(e.split == "train" for e in out) == 512
        assert sum(e.split == "test" for e in out) == 128
        for sub in SUBCATEGORY_TO_BROAD:
            group = [e for e in out if e.subcategory == sub]
            assert sum(e.split == "train" for e in group) == 16
            assert sum(e.split == "test" for e in group) == 4

    def test_small_subcategory_warns_but_splits(self):
        entries = make_entries({"hug": 3})
        with pytest.warns(UserWarning, match="best-effort"):
            out = split_manifest(entries, seed=0)
        assert sum(e.split == "test" for e in out) == 1

    def test_preserves_entry_order(self):
        entries = make_entries({"hug": 6, "wave": 6})
        out = split_manifest(entries, seed=0)
        assert [e.pair_id for e in out] == [e.pair_id for e in entries]


class TestSeenUnseen:
    def test_empty_held_out_gives_empty_unseen(self):
        entries = make_entries({"hug": 4, "wave": 4})
        seen, unseen = seen_unseen_split(entries, [])
        assert unseen == [] and len(seen) == 8

    def test_six_of_32_held_out_with_uniform_counts(self):
        entries = make_entries({s: 5 for s in SUBCATEGORY_TO_BROAD})
        held = list(SUBCATEGORY_TO_BROAD)[:6]
        seen, unseen = seen_unseen_split(entries, held)
        assert len(unseen) == 6 * 5
        assert len(seen) == 26 * 5

    def test_partition_property(self):
        entries = make_entries({"hug": 3, "wave": 2, "dog-jump": 4})
        seen, unseen = seen_unseen_split(entries, ["wave"])
        ids = {e.pair_id for e in entries}
        assert {e.pair_id for e in seen} | {e.pair_id for e in unseen} == ids
        assert not ({e.pair_id for e in seen} & {e.pair_id for e in unseen})

    def test_unknown_subcategory_rejected(self):
        entries = make_entries({"hug": 3})
        with pytest.raises(ValueError, match="not in manifest"):
            seen_unseen_split(entries, ["wave"])


class TestManifestIO:
    def test_round_trip_lossless(self, tmp_path):
        entries = split_manifest(make_entries({"hug": 5, "cat-rub": 5}), seed=0)
        path = tmp_path / "manifest.jsonl"
        save_manifest(path, entries)
        loaded = load_manifest(path)
        assert loaded == entries

    def test_jsonl_one_object_per_line(self, tmp_path):
        entries = make_entries({"hug": 3})
        path = tmp_path / "manifest.jsonl"
        save_manifest(path, entries)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        assert all(json.loads(line)["subcategory"] == "hug" for line in lines)

    def test_repeated_feature_paths_supported(self, tmp_path):
        # one video paired with several motions: feature_path repeats
        entries = [
            ManifestEntry(pair_id="a", feature_path="shared.vf",
                          motion_path="m0.mo", broad_category="human-human",
                          subcategory="hug"),
            ManifestEntry(pair_id="b", feature_path="shared.vf",
                          motion_path="m1.mo", broad_category="human-human",
                          subcategory="hug"),
        ]
        path = tmp_path / "manifest.jsonl"
        save_manifest(path, entries)
        assert load_manifest(path) == entries


class TestProceduralMotion:
    def test_deterministic(self):
        a = procedural_motion(2, 7, TOY_5)
        b = procedural_motion(2, 7, TOY_5)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_heading_matches_turn_parameter(self):
        joints = procedural_motion(0, 1, TOY_5)  # category 0: turn = 0
        motion = pose_codec.encode_pose_sequence(
            pose_codec.canonicalize_start(joints, TOY_5), TOY_5)
        # zero turn category: yaw velocity stays ~0
        assert np.abs(motion.features[:, 0]).max() < 1e-5


class TestSynthCorpus:
    def test_byte_identical_for_same_seed(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        synth_corpus(12, 3, seed=5, out_dir=a_dir)
        synth_corpus(12, 3, seed=5, out_dir=b_dir)
        for sub in ("manifest.jsonl", "features/p0003.vf", "motions/p0007.mo"):
            assert (a_dir / sub).read_bytes() == (b_dir / sub).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        synth_corpus(6, 3, seed=5, out_dir=a_dir)
        synth_corpus(6, 3, seed=6, out_dir=b_dir)
        assert (a_dir / "motions/p0001.mo").read_bytes() != \
               (b_dir / "motions/p0001.mo").read_bytes()

    def test_emitted_motions_satisfy_invariants(self, toy_corpus):
        root, entries = toy_corpus
        assert len(entries) == 96
        for e in entries[::7]:
            _, motion = load_pair(root, e)
            assert motion.n_frames <= pose_codec.MAX_MOTION_FRAMES
            assert motion.dim == TOY_5.feature_dim
            assert np.isfinite(motion.features).all()

    def test_categories_separable_on_raw_pooled_features(self, toy_corpus):
        # nearest-centroid on pooled raw motion features, no learned extractor
        root, entries = toy_corpus
        pooled, labels, split = [], [], []
        for e in entries:
            _, motion = load_pair(root, e)
            pooled.append(motion.features.mean(axis=0))
            labels.append(e.subcategory)
            split.append(e.split)
        pooled = np.stack(pooled)
        scale = pooled.std(axis=0) + 1e-8
        pooled = pooled / scale
        labels = np.array(labels)
        train = np.array([s == "train" for s in split])
        cats = sorted(set(labels))
        centroids = np.stack([pooled[train & (labels == c)].mean(axis=0)
                              for c in cats])
        correct = 0
        for row, label in zip(pooled[~train], labels[~train]):
            pred = cats[int(np.linalg.norm(centroids - row, axis=1).argmin())]
            correct += pred == label
        assert correct / (~train).sum() > 0.9
