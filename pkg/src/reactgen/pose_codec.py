"""Conversion between 3-D joint-position sequences and the per-frame pose features
the rest of the pipeline operates on.

A pose frame is the concatenation of (in order): root yaw velocity, root linear
velocity on the XZ plane expressed in the heading-local frame (2), root height,
local positions of the non-root joints (3(J-1)), heading-local velocities of all
joints (3J), 6-D bone-frame rotations of the non-root joints (6(J-1)), and four
foot-contact bits. Feature width D = 12J - 1 (263 for the 22-joint template).

Sequences are Y-up, metric, and 20 FPS. Encoding frame i pairs input frames
(i, i+1): velocities describe the step i -> i+1, static quantities belong to
frame i+1. Decoding therefore integrates from an origin-rooted, Z+-facing start
and reproduces input frames 1..N-1 exactly (up to float32 storage).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import read_motion_array, write_motion_array
from .skeleton import SkeletonSpec, skeleton_for

TARGET_FPS = 20.0
MAX_MOTION_FRAMES = 200  # 10 s at 20 FPS
STD_FLOOR = 1e-6

DEFAULT_HEEL_THRESHOLD = 2e-3  # metres per frame
DEFAULT_TOE_THRESHOLD = 1e-3


@dataclass
class JointSequence:
    """World-frame joint positions, (n_frames, n_joints, 3) metres, Y-up."""

    positions: np.ndarray
    fps: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"positions must be (N, J, 3), got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one frame")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain NaN or Inf")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps


@dataclass
class MotionSequence:
    """Encoded pose features, (n_frames, 12J-1) float32 at 20 FPS."""

    features: np.ndarray
    n_joints: int
    fps: float = TARGET_FPS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        expected = 12 * self.n_joints - 1
        if self.features.shape[1] != expected:
            raise ValueError(
                f"feature dim {self.features.shape[1]} does not match "
                f"{expected} for {self.n_joints} joints")
        if self.features.shape[0] < 1:
            raise ValueError("need at least one frame")
        if self.features.shape[0] > MAX_MOTION_FRAMES:
            raise ValueError(
                f"{self.features.shape[0]} frames exceeds the "
                f"{MAX_MOTION_FRAMES}-frame (10 s) cap")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain NaN or Inf")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class FeatureLayout:
    """Column slices of the pose-feature blocks for a given joint count."""

    n_joints: int

    @property
    def root_yaw_vel(self):
        return slice(0, 1)

    @property
    def root_lin_vel(self):
        return slice(1, 3)

    @property
    def root_height(self):
        return slice(3, 4)

    @property
    def joint_positions(self):
        return slice(4, 4 + 3 * (self.n_joints - 1))

    @property
    def joint_velocities(self):
        start = 4 + 3 * (self.n_joints - 1)
        return slice(start, start + 3 * self.n_joints)

    @property
    def joint_rotations(self):
        start = 4 + 3 * (self.n_joints - 1) + 3 * self.n_joints
        return slice(start, start + 6 * (self.n_joints - 1))

    @property
    def foot_contacts(self):
        return slice(12 * self.n_joints - 5, 12 * self.n_joints - 1)


@dataclass
class NormStats:
    """Per-dimension mean/std for z-scoring pose features."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.std = np.asarray(self.std, dtype=np.float64).ravel()
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if not (self.std > 0).all():
            raise ValueError("std entries must be positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def _heading_angle(positions: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """Per-frame yaw of the body facing direction; 0 means facing Z+.

    facing = cross(left - right, up) projected onto XZ.
    """
    left, right = skeleton.facing_pair
    across = positions[:, left] - positions[:, right]
    fx, fz = -across[:, 2], across[:, 0]
    norm = np.hypot(fx, fz)
    # Degenerate frames (facing joints vertically aligned) keep yaw 0.
    safe = norm > 1e-12
    theta = np.zeros(positions.shape[0])
    theta[safe] = np.arctan2(fx[safe], fz[safe])
    return theta


def _yaw_rotate(theta: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Rotate vectors about the Y axis; theta broadcasts against vecs[..., 0]."""
    c, s = np.cos(theta), np.sin(theta)
    x, y, z = vecs[..., 0], vecs[..., 1], vecs[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def _rotate_xz(theta: np.ndarray, xz: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    x, z = xz[..., 0], xz[..., 1]
    return np.stack([c * x + s * z, -s * x + c * z], axis=-1)


def _bone_rotations_6d(local_pos: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """6-D orthonormal frames from root-space bone directions, (M, 6(J-1)).

    Column 1 is the unit bone vector, column 2 the up axis orthogonalized
    against it (x axis when the bone is near vertical). No inverse kinematics:
    these are derived quantities, never used to reconstruct positions.
    """
    m, j = local_pos.shape[0], skeleton.n_joints
    out = np.empty((m, j - 1, 6))
    up = np.array([0.0, 1.0, 0.0])
    xhat = np.array([1.0, 0.0, 0.0])
    for child in range(1, j):
        bone = local_pos[:, child] - local_pos[:, skeleton.parents[child]]
        bone = bone / (np.linalg.norm(bone, axis=1, keepdims=True) + 1e-8)
        near_vertical = np.abs(bone[:, 1]) > 0.99
        helper = np.where(near_vertical[:, None], xhat, up)
        second = helper - (helper * bone).sum(axis=1, keepdims=True) * bone
        second = second / (np.linalg.norm(second, axis=1, keepdims=True) + 1e-8)
        out[:, child - 1, :3] = bone
        out[:, child - 1, 3:] = second
    return out.reshape(m, 6 * (j - 1))


def encode_pose_sequence(
    joints: JointSequence,
    skeleton: SkeletonSpec | None = None,
    contact_thresholds: tuple[float, float] = (DEFAULT_HEEL_THRESHOLD,
                                               DEFAULT_TOE_THRESHOLD),
) -> MotionSequence:
    """Encode an N-frame joint sequence into N-1 pose-feature frames.

    The input must already be at 20 FPS (resample first) and, for exact
    decodability, start at the origin facing Z+ (see canonicalize_start).
    """
    if abs(joints.fps - TARGET_FPS) > 1e-6:
        raise ValueError(f"expected {TARGET_FPS} FPS input, got {joints.fps}")
    if joints.n_frames < 2:
        raise ValueError("need at least 2 frames to compute velocities")
    skeleton = skeleton or skeleton_for(joints.n_joints)
    if skeleton.n_joints != joints.n_joints:
        raise ValueError(
            f"skeleton has {skeleton.n_joints} joints, sequence has {joints.n_joints}")

    pos = joints.positions
    theta = _heading_angle(pos, skeleton)
    root_xz = pos[:, 0, [0, 2]]

    rel = pos.copy()
    rel[:, :, 0] -= root_xz[:, None, 0]
    rel[:, :, 2] -= root_xz[:, None, 1]
    local = _yaw_rotate(-theta[:, None], rel)

    yaw_vel = _wrap_angle(theta[1:] - theta[:-1])
    lin_vel = _rotate_xz(-theta[:-1], root_xz[1:] - root_xz[:-1])
    root_height = pos[1:, 0, 1]

    joint_pos = local[1:, 1:].reshape(joints.n_frames - 1, -1)
    joint_vel = _yaw_rotate(-theta[:-1, None], pos[1:] - pos[:-1])
    joint_vel = joint_vel.reshape(joints.n_frames - 1, -1)
    joint_rot = _bone_rotations_6d(local[1:], skeleton)

    heel_thr, toe_thr = contact_thresholds
    thresholds = (heel_thr, toe_thr, heel_thr, toe_thr)
    contacts = np.empty((joints.n_frames - 1, 4))
    for slot, (jid, thr) in enumerate(zip(skeleton.contact_joints, thresholds)):
        disp = np.linalg.norm(pos[1:, jid] - pos[:-1, jid], axis=1)
        contacts[:, slot] = (disp < thr).astype(np.float64)

    features = np.concatenate([
        yaw_vel[:, None], lin_vel, root_height[:, None],
        joint_pos, joint_vel, joint_rot, contacts,
    ], axis=1)
    return MotionSequence(features, n_joints=joints.n_joints)


def decode_pose_sequence(
    motion: MotionSequence,
    skeleton: SkeletonSpec | None = None,
) -> JointSequence:
    """Recover world joint positions by integrating the root track from an
    origin-rooted, Z+-facing start. Only the root channels and local joint
    positions participate; rotation and contact blocks are ignored.
    """
    skeleton = skeleton or skeleton_for(motion.n_joints)
    if skeleton.feature_dim != motion.dim:
        raise ValueError(
            f"feature dim {motion.dim} does not match skeleton dim "
            f"{skeleton.feature_dim}")
    layout = FeatureLayout(motion.n_joints)
    f = motion.features.astype(np.float64)
    m, j = motion.n_frames, motion.n_joints

    yaw_vel = f[:, 0]
    theta = np.cumsum(yaw_vel)
    theta_prev = theta - yaw_vel
    steps = _rotate_xz(theta_prev, f[:, layout.root_lin_vel])
    root_xz = np.cumsum(steps, axis=0)

    local = np.zeros((m, j, 3))
    local[:, 0, 1] = f[:, 3]
    local[:, 1:] = f[:, layout.joint_positions].reshape(m, j - 1, 3)

    world = _yaw_rotate(theta[:, None], local)
    world[:, :, 0] += root_xz[:, None, 0]
    world[:, :, 2] += root_xz[:, None, 1]
    return JointSequence(world, fps=TARGET_FPS)


def canonicalize_start(joints: JointSequence,
                       skeleton: SkeletonSpec | None = None) -> JointSequence:
    """Rigidly move a sequence so frame 0 has its root above the origin and
    faces Z+ (heights untouched)."""
    skeleton = skeleton or skeleton_for(joints.n_joints)
    pos = joints.positions.copy()
    theta0 = _heading_angle(pos[:1], skeleton)[0]
    pos[:, :, 0] -= pos[0, 0, 0]
    pos[:, :, 2] -= pos[0, 0, 2]
    pos = _yaw_rotate(-theta0, pos)
    return JointSequence(pos, fps=joints.fps)


def resample_fps(joints: JointSequence, target_fps: float = TARGET_FPS) -> JointSequence:
    """Linearly interpolate joint positions onto the target frame rate.

    The output frame count is round(N * target / source), preserving the
    clip duration to within one frame.
    """
    if not target_fps > 0:
        raise ValueError("target fps must be positive")
    n = joints.n_frames
    m = int(round(n * target_fps / joints.fps))
    if m < 2:
        raise ValueError(
            f"resampling {n} frames at {joints.fps} FPS to {target_fps} FPS "
            f"leaves {m} frames; need at least 2")
    src_idx = np.minimum(np.arange(m) * (joints.fps / target_fps), n - 1)
    i0 = np.floor(src_idx).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = (src_idx - i0)[:, None, None]
    pos = joints.positions[i0] * (1.0 - frac) + joints.positions[i1] * frac
    return JointSequence(pos, fps=target_fps)


def compute_norm_stats(motions: list[MotionSequence],
                       std_floor: float = STD_FLOOR) -> NormStats:
    """Per-dimension mean/std over all frames of a corpus (train split only).

    std_floor keeps constant dimensions invertible; training passes a larger,
    scale-aware floor so near-constant dimensions do not dominate normalized
    reconstruction errors.
    """
    if not motions:
        raise ValueError("need at least one motion")
    stacked = np.concatenate([m.features.astype(np.float64) for m in motions])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), std_floor)
    return NormStats(mean=mean, std=std)


def normalize(motion: MotionSequence, stats: NormStats) -> MotionSequence:
    if stats.dim != motion.dim:
        raise ValueError(f"stats dim {stats.dim} != feature dim {motion.dim}")
    features = (motion.features - stats.mean) / stats.std
    return MotionSequence(features, n_joints=motion.n_joints, fps=motion.fps)


def denormalize(motion: MotionSequence, stats: NormStats) -> MotionSequence:
    if stats.dim != motion.dim:
        raise ValueError(f"stats dim {stats.dim} != feature dim {motion.dim}")
    features = motion.features * stats.std + stats.mean
    return MotionSequence(features, n_joints=motion.n_joints, fps=motion.fps)


def save_motion(path, motion: MotionSequence) -> None:
    write_motion_array(path, motion.features, motion.n_joints, motion.fps)


def load_motion(path) -> MotionSequence:
    features, n_joints, fps = read_motion_array(path)
    return MotionSequence(features, n_joints=n_joints, fps=fps)


def save_norm_stats(path, stats: NormStats) -> None:
    payload = {"mean": stats.mean.tolist(), "std": stats.std.tolist()}
    Path(path).write_text(json.dumps(payload))


def load_norm_stats(path) -> NormStats:
    payload = json.loads(Path(path).read_text())
    return NormStats(mean=np.array(payload["mean"]), std=np.array(payload["std"]))
