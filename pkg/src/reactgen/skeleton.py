"""Skeleton topology descriptions used by the pose codec and the synthetic corpus."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SkeletonSpec:
    """Kinematic tree plus the joints the codec needs to single out.

    parents[j] is the parent joint of j, -1 for the root (joint 0).
    facing_pair = (left, right): the across vector left-right defines the
    body heading (facing = cross(across, up), projected onto the XZ plane).
    contact_joints = (heel_l, toe_l, heel_r, toe_r): joints thresholded for
    the four foot-contact bits.
    """

    parents: tuple[int, ...]
    facing_pair: tuple[int, int] = (1, 2)
    contact_joints: tuple[int, int, int, int] = field(default=(1, 2, 1, 2))

    def __post_init__(self):
        if len(self.parents) < 2:
            raise ValueError("skeleton needs at least a root and one child")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"parent of joint {j} must precede it, got {p}")
        for j in (*self.facing_pair, *self.contact_joints):
            if not 0 <= j < len(self.parents):
                raise ValueError(f"special joint {j} outside skeleton")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def feature_dim(self) -> int:
        """Width of one encoded pose frame: 4 + 3(J-1) + 3J + 6(J-1) + 4."""
        return 12 * self.n_joints - 1


# 22-joint humanoid template (pelvis root, SMPL-style ordering). Heels/toes
# are the ankle and foot joints of each leg.
HUMANOID_22 = SkeletonSpec(
    parents=(-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19),
    facing_pair=(1, 2),
    contact_joints=(7, 10, 8, 11),
)

# Minimal 5-joint star skeleton for fast tests and the laptop corpus:
# 0 root, 1 left hip, 2 right hip, 3 head, 4 foot.
TOY_5 = SkeletonSpec(
    parents=(-1, 0, 0, 0, 0),
    facing_pair=(1, 2),
    contact_joints=(1, 4, 2, 4),
)


def skeleton_for(n_joints: int) -> SkeletonSpec:
    """Default topology for a joint count (22 and 5 are shipped; others chain)."""
    if n_joints == 22:
        return HUMANOID_22
    if n_joints == 5:
        return TOY_5
    if n_joints < 2:
        raise ValueError("need at least 2 joints")
    parents = (-1,) + tuple(range(n_joints - 1))
    pair = (1, min(2, n_joints - 1))
    last = n_joints - 1
    return SkeletonSpec(parents=parents, facing_pair=pair,
                        contact_joints=(pair[0], last, pair[1], last))
