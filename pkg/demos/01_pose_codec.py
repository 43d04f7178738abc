"""Pose features in and out: what a motion looks like to the models.

Builds a little walking trajectory on the 5-joint toy skeleton, encodes it to
the per-frame feature representation, prints the block layout, and decodes it
back to joint positions to show the round trip is tight.
"""

import numpy as np

from reactgen import pose_codec as pc
from reactgen.dataset import procedural_motion
from reactgen.skeleton import TOY_5

joints = procedural_motion(category=1, seed=7, skeleton=TOY_5)
print(f"raw trajectory: {joints.n_frames} frames x {joints.n_joints} joints "
      f"at {joints.fps:.0f} FPS ({joints.duration:.1f} s)")

# the codec assumes the clip starts at the origin facing Z+
joints = pc.canonicalize_start(joints, TOY_5)
motion = pc.encode_pose_sequence(joints, TOY_5)
layout = pc.FeatureLayout(TOY_5.n_joints)
print(f"encoded: {motion.n_frames} frames x {motion.dim} features")
for name in ("root_yaw_vel", "root_lin_vel", "root_height", "joint_positions",
             "joint_velocities", "joint_rotations", "foot_contacts"):
    sl = getattr(layout, name)
    print(f"  {name:17s} cols {sl.start:3d}:{sl.stop:3d}")

recovered = pc.decode_pose_sequence(motion, TOY_5)
err = np.abs(recovered.positions - joints.positions[1:]).max()
print(f"decode(encode(x)) max position error: {err:.2e} m")

# resampling: a 60 FPS version of the same motion lands back on 20 FPS
at60 = pc.JointSequence(np.repeat(joints.positions, 3, axis=0), fps=60.0)
back = pc.resample_fps(at60, 20.0)
print(f"resampled 60 -> 20 FPS: {at60.n_frames} -> {back.n_frames} frames")

# normalization: z-scored features, exactly invertible
stats = pc.compute_norm_stats([motion])
z = pc.normalize(motion, stats)
round_trip = pc.denormalize(z, stats)
print(f"normalize/denormalize max error: "
      f"{np.abs(round_trip.features - motion.features).max():.2e}")
