"""Corpus manifests, per-subcategory splitting, and the synthetic stand-in
corpus of paired video features and reactive motions.

A manifest is JSON-lines: one pair per line with its file paths, subcategory,
broad category, and split. Splits are stratified 4:1 per subcategory with a
deterministic per-subcategory shuffle.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import pose_codec
from .pose_codec import JointSequence, MotionSequence
from .skeleton import SkeletonSpec, TOY_5
from .video_features import SyntheticFeatureProvider, load_features, save_features

BROAD_CATEGORIES = ("human-human", "animal-human", "scene-human")

# 32 interaction subcategories across the three broad groups.
TAXONOMY: dict[str, tuple[str, ...]] = {
    "human-human": (
        "handshake", "wave", "hug", "high-five", "bow", "walk-towards",
        "hand-object", "push", "punch", "kick", "throw-catch",
        "dance-invite", "argue", "point",
    ),
    "animal-human": (
        "dog-approach", "dog-jump", "cat-rub", "horse-charge", "bird-swoop",
        "snake-strike", "tiger-roar", "bee-swarm", "bear-stand",
    ),
    "scene-human": (
        "ball-incoming", "car-approach", "door-opens", "object-falls",
        "water-splash", "fire-flare", "drone-hover", "swing-moving",
        "stairs-descend",
    ),
}

SUBCATEGORY_TO_BROAD = {sub: broad for broad, subs in TAXONOMY.items()
                        for sub in subs}


def interleaved_subcategories(n: int) -> list[str]:
    """First n subcategories taken round-robin across the broad groups, so a
    small corpus still mirrors the three-way structure."""
    if not 1 <= n <= len(SUBCATEGORY_TO_BROAD):
        raise ValueError(f"n must be in [1, {len(SUBCATEGORY_TO_BROAD)}]")
    pools = [list(TAXONOMY[b]) for b in BROAD_CATEGORIES]
    out = []
    idx = 0
    while len(out) < n:
        pool = pools[idx % len(pools)]
        if pool:
            out.append(pool.pop(0))
        idx += 1
    return out


@dataclass
class ManifestEntry:
    pair_id: str
    feature_path: str
    motion_path: str
    broad_category: str
    subcategory: str
    split: str = "train"

    def __post_init__(self):
        if self.broad_category not in BROAD_CATEGORIES:
            raise ValueError(f"unknown broad category {self.broad_category!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        expected = SUBCATEGORY_TO_BROAD.get(self.subcategory)
        if expected is not None and expected != self.broad_category:
            raise ValueError(
                f"subcategory {self.subcategory!r} belongs to {expected}, "
                f"not {self.broad_category}")


def save_manifest(path, entries: list[ManifestEntry]) -> None:
    lines = [json.dumps(asdict(e)) for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(ManifestEntry(**json.loads(line)))
    return entries


def split_manifest(entries: list[ManifestEntry], seed: int,
                   ratio: tuple[int, int] = (4, 1)) -> list[ManifestEntry]:
    """Assign train/test per subcategory at the given ratio (deterministic
    shuffle per subcategory). Subcategories with fewer than ratio-sum entries
    get a best-effort split and a warning."""
    test_frac = ratio[1] / (ratio[0] + ratio[1])
    groups: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        groups.setdefault(e.subcategory, []).append(e)
    out = []
    for sub, group in groups.items():
        n = len(group)
        if n < ratio[0] + ratio[1]:
            warnings.warn(f"subcategory {sub!r} has only {n} entries; "
                          "best-effort split", stacklevel=2)
        rng = np.random.default_rng([seed, zlib.crc32(sub.encode())])
        order = rng.permutation(n)
        n_test = int(round(n * test_frac))
        if n >= 2:
            n_test = min(max(n_test, 1), n - 1)
        else:
            n_test = 0
        test_idx = set(order[:n_test].tolist())
        for i, e in enumerate(group):
            out.append(ManifestEntry(**{**asdict(e),
                                        "split": "test" if i in test_idx else "train"}))
    # keep the caller's ordering
    by_id = {e.pair_id: e for e in out}
    return [by_id[e.pair_id] for e in entries]


def seen_unseen_split(entries: list[ManifestEntry],
                      held_out_subcategories) -> tuple[list[ManifestEntry],
                                                       list[ManifestEntry]]:
    """Partition a manifest by subcategory membership (generalization splits)."""
    held = set(held_out_subcategories)
    present = {e.subcategory for e in entries}
    unknown = held - present
    if unknown:
        raise ValueError(f"held-out subcategories not in manifest: {sorted(unknown)}")
    seen = [e for e in entries if e.subcategory not in held]
    unseen = [e for e in entries if e.subcategory in held]
    return seen, unseen


def _category_params(category: int, rng_cat: np.random.Generator) -> dict:
    """Well-separated archetype parameters: a factor grid on speed, turn rate,
    and root height keeps any two of up to 36 categories apart, with the
    remaining parameters adding texture."""
    # Oscillation frequencies stay well below the token-rate Nyquist
    # (pi/4 rad/frame at the x4 downsampling) so motions are compressible.
    return {
        "speed": 0.010 + 0.012 * (category % 4),
        "turn": ((-1) ** category) * 0.010 * ((category // 4) % 3),
        "height": 0.85 + 0.12 * ((category // 12) % 3),
        "limb_freq": 0.12 + 0.08 * (category % 3),       # rad/frame
        "limb_amp": 0.05 + 0.04 * ((category // 3) % 3),
        "bob_amp": 0.01 + 0.01 * (category % 2),
        "phases": rng_cat.uniform(0, 2 * np.pi, size=64),
        "axes": rng_cat.normal(size=(64, 3)),
    }


def procedural_motion(category: int, seed: int, skeleton: SkeletonSpec,
                      min_frames: int = 97, max_frames: int = 200,
                      jitter: float = 0.03) -> JointSequence:
    """Deterministic, category-consistent joint trajectory at 20 FPS: the root
    follows a parameterized walk (speed/turn/height per category), limbs
    oscillate with category-specific frequency and amplitude. The facing pair
    is kept rigid in XZ so the heading equals the trajectory yaw."""
    params = _category_params(category, np.random.default_rng([8675309, category]))
    rng = np.random.default_rng([seed, category, 17])
    n = int(rng.integers(min_frames, max_frames + 1))
    scale = 1.0 + jitter * rng.standard_normal()

    t = np.arange(n)
    theta = params["turn"] * t
    speed = params["speed"] * scale
    steps = speed * np.stack([np.sin(theta), np.cos(theta)], axis=1)
    root_xz = np.concatenate([np.zeros((1, 2)), np.cumsum(steps[:-1], axis=0)])
    height = params["height"] + params["bob_amp"] * np.sin(
        2 * params["limb_freq"] * t + params["phases"][0])

    j = skeleton.n_joints
    base_rng = np.random.default_rng([4242, category])
    base = base_rng.uniform([-0.3, -0.6, -0.2], [0.3, 0.6, 0.3], size=(j, 3))
    base[0] = 0.0
    left, right = skeleton.facing_pair
    half_width = 0.12 * (1.0 + 0.2 * base_rng.uniform())
    base[left] = (half_width, -0.1, 0.05)
    base[right] = (-half_width, -0.1, 0.05)

    amp = params["limb_amp"] * scale
    freq = params["limb_freq"]
    local = np.tile(base, (n, 1, 1))
    # Heading-pair joints stay rigid in XZ so the yaw equals the trajectory;
    # contact joints oscillate vertically only, so their per-frame displacement
    # never falls below the contact thresholds (root speed floors it).
    vertical_only = set(skeleton.facing_pair) | set(skeleton.contact_joints)
    for joint in range(1, j):
        phase = params["phases"][joint % 64]
        osc = amp * np.sin(freq * t + phase)
        if joint in vertical_only:
            local[:, joint, 1] += osc
        else:
            axis = params["axes"][joint % 64]
            axis = axis / np.linalg.norm(axis)
            local[:, joint] += osc[:, None] * axis

    c, s = np.cos(theta), np.sin(theta)
    world = np.empty((n, j, 3))
    world[..., 0] = c[:, None] * local[..., 0] + s[:, None] * local[..., 2]
    world[..., 2] = -s[:, None] * local[..., 0] + c[:, None] * local[..., 2]
    world[..., 1] = local[..., 1] + height[:, None]
    world[..., 0] += root_xz[:, None, 0]
    world[..., 2] += root_xz[:, None, 1]
    return JointSequence(world, fps=pose_codec.TARGET_FPS)


def synth_corpus(n_pairs: int, n_categories: int, seed: int, out_dir,
                 skeleton: SkeletonSpec = TOY_5, video_frames: int = 16,
                 video_dim: int = 8, min_frames: int = 97,
                 max_frames: int = 200) -> list[ManifestEntry]:
    """Generate a paired corpus on disk and return its split manifest.

    Layout under out_dir: features/*.vf, motions/*.mo, manifest.jsonl.
    Byte-identical for identical arguments.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "motions").mkdir(parents=True, exist_ok=True)
    subcats = interleaved_subcategories(n_categories)
    provider = SyntheticFeatureProvider(n_categories=n_categories, dim=video_dim,
                                        n_frames=video_frames)
    entries = []
    for i in range(n_pairs):
        category = i % n_categories
        pair_seed = seed * 1_000_003 + i
        feats = provider.generate(pair_seed, category)
        joints = procedural_motion(category, pair_seed, skeleton,
                                   min_frames=min_frames, max_frames=max_frames)
        motion = pose_codec.encode_pose_sequence(
            pose_codec.canonicalize_start(joints, skeleton), skeleton)
        feature_path = f"features/p{i:04d}.vf"
        motion_path = f"motions/p{i:04d}.mo"
        save_features(out_dir / feature_path, feats)
        pose_codec.save_motion(out_dir / motion_path, motion)
        entries.append(ManifestEntry(
            pair_id=f"p{i:04d}",
            feature_path=feature_path,
            motion_path=motion_path,
            broad_category=SUBCATEGORY_TO_BROAD[subcats[category]],
            subcategory=subcats[category],
        ))
    entries = split_manifest(entries, seed=seed)
    save_manifest(out_dir / "manifest.jsonl", entries)
    return entries


def load_pair(out_dir, entry: ManifestEntry) -> tuple[np.ndarray, MotionSequence]:
    """Load (frame features (T, d_vl), motion) for one manifest entry."""
    out_dir = Path(out_dir)
    feats = load_features(out_dir / entry.feature_path)
    motion = pose_codec.load_motion(out_dir / entry.motion_path)
    return feats.local, motion
