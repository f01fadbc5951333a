"""Recursive 263-channel motion features and initial-pose normalization.

Per-frame channel layout (documented bit-exactly in the README):

    [0]       root angular velocity about vertical (rad/frame)
    [1:3]     root planar velocity (x, y) expressed in the heading frame
    [3]       root height (absolute z, meters)
    [4:67]    joints 1..21 local positions: heading frame, planar offset
              relative to the root, absolute z (3 each)
    [67:193]  joints 1..21 bone rotations vs. rest, heading frame, as the
              continuous 6D representation (6 each)
    [193:259] joints 0..21 velocities in the heading frame (3 each)
    [259:263] foot-contact flags (l_ankle, l_foot, r_ankle, r_foot)

Velocities are forward differences; the last frame copies the one before it
so the channel count stays T. Root x/y and heading are stored only as
velocities (recursive form), so decoding integrates them from an anchor
state. Everything else is frame-local.
"""

from __future__ import annotations

import numpy as np

from . import quat
from .errors import WrongJointCount, WrongWidth
from .motion import FEATURE_DIM, JOINT, MotionSequence, RootState, wrap_angle
from .skeleton import LEFT_HIP, RIGHT_HIP, FOOT_JOINTS, Skeleton, canonical_skeleton

ROT_VEL = slice(0, 1)
LIN_VEL = slice(1, 3)
HEIGHT = slice(3, 4)
LOCAL_POS = slice(4, 67)
ROT6D = slice(67, 193)
JOINT_VEL = slice(193, 259)
CONTACTS = slice(259, 263)

CONTACT_SPEED = 0.02  # m/frame; below this a foot counts as planted

_Z = np.array([0.0, 0.0, 1.0])


def facing_normal(positions: np.ndarray) -> np.ndarray:
    """Cross product of the root-to-left-hip and root-to-right-hip vectors.

    For an upright body this points along the planar facing direction.
    """
    positions = np.asarray(positions, dtype=float)
    a = positions[..., LEFT_HIP, :] - positions[..., 0, :]
    b = positions[..., RIGHT_HIP, :] - positions[..., 0, :]
    return np.cross(a, b)


def heading_from_positions(positions: np.ndarray) -> np.ndarray:
    """Heading angle (rotation about vertical; 0 faces +y) per frame."""
    n = facing_normal(positions)
    fx, fy = n[..., 0], n[..., 1]
    return np.arctan2(-fx, fy)


def yaw_matrix(angle) -> np.ndarray:
    """(..., 3, 3) rotation about the vertical axis."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack(
        [
            np.stack([c, -s, zero], axis=-1),
            np.stack([s, c, zero], axis=-1),
            np.stack([zero, zero, one], axis=-1),
        ],
        axis=-2,
    )


def rotate_planar(vectors: np.ndarray, angle) -> np.ndarray:
    """Rotate (..., 3) vectors about vertical by per-frame angles."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle)[..., None], np.sin(angle)[..., None]
    x, y, z = vectors[..., :1], vectors[..., 1:2], vectors[..., 2:]
    return np.concatenate([c * x - s * y, s * x + c * y, z], axis=-1)


def rigid_yaw_transform(positions: np.ndarray, yaw: float, pivot: np.ndarray, target: np.ndarray) -> np.ndarray:
    """p -> Rz(yaw) . (p - pivot) + target, applied to every joint/frame."""
    rel = np.asarray(positions, dtype=float) - np.asarray(pivot, dtype=float)
    return rotate_planar(rel, yaw) + np.asarray(target, dtype=float)


def _copy_last(values: np.ndarray) -> np.ndarray:
    """Forward difference padded by repeating the final entry."""
    return np.concatenate([values, values[-1:]], axis=0)


def encode_features(seq: MotionSequence, root: RootState | None = None) -> MotionSequence:
    """Joint-space sequence on the canonical skeleton -> feature space."""
    if seq.layout != JOINT:
        raise WrongJointCount("encode_features expects a joint-space sequence")
    sk = canonical_skeleton()
    if seq.joint_count != sk.joint_count:
        raise WrongJointCount(f"expected {sk.joint_count} joints, got {seq.joint_count}")
    pos = seq.data
    frames = seq.frames

    if root is None:
        heading = heading_from_positions(pos)
        root_pos = pos[:, 0]
    else:
        heading = np.atleast_1d(np.asarray(root.heading, dtype=float))
        root_pos = np.atleast_2d(np.asarray(root.position, dtype=float))

    out = np.zeros((frames, FEATURE_DIM))

    dheading = wrap_angle(heading[1:] - heading[:-1]) if frames > 1 else np.zeros((0,))
    out[:, ROT_VEL] = _copy_last(dheading)[:, None] if frames > 1 else 0.0

    world_v = root_pos[1:] - root_pos[:-1] if frames > 1 else np.zeros((0, 3))
    local_v = rotate_planar(world_v, -heading[:-1]) if frames > 1 else world_v
    out[:, LIN_VEL] = _copy_last(local_v)[:, :2] if frames > 1 else 0.0
    out[:, HEIGHT] = root_pos[:, 2:3]

    planar_root = np.concatenate([root_pos[:, :2], np.zeros((frames, 1))], axis=-1)
    local = rotate_planar(pos[:, 1:] - planar_root[:, None, :], -heading[:, None])
    out[:, LOCAL_POS] = local.reshape(frames, -1)

    # Bone rotation vs. rest, measured in the heading frame.
    bones = pos[:, 1:] - pos[:, sk.parents[1:]]
    bones_local = rotate_planar(bones, -heading[:, None])
    rest_dirs = sk.offsets[1:] / np.linalg.norm(sk.offsets[1:], axis=-1, keepdims=True)
    lengths = np.linalg.norm(bones_local, axis=-1, keepdims=True)
    dirs = bones_local / np.maximum(lengths, 1e-12)
    q = quat.quat_between(np.broadcast_to(rest_dirs, dirs.shape), dirs)
    out[:, ROT6D] = quat.rot_to_cont6d(quat.quat_to_rot(q)).reshape(frames, -1)

    joint_world_v = pos[1:] - pos[:-1] if frames > 1 else np.zeros((0,) + pos.shape[1:])
    joint_local_v = rotate_planar(joint_world_v, -heading[:-1, None]) if frames > 1 else joint_world_v
    padded = _copy_last(joint_local_v) if frames > 1 else np.zeros_like(pos)
    out[:, JOINT_VEL] = padded.reshape(frames, -1)

    foot_speed = np.linalg.norm(pos[1:, FOOT_JOINTS] - pos[:-1, FOOT_JOINTS], axis=-1) if frames > 1 else None
    if foot_speed is None:
        out[:, CONTACTS] = 1.0
    else:
        out[:, CONTACTS] = _copy_last((foot_speed < CONTACT_SPEED).astype(float))
    return MotionSequence.feature_space(out, fps=seq.fps)


def decode_features(seq: MotionSequence, initial: RootState | None = None):
    """Feature space -> (joint-space sequence, per-frame RootState).

    The anchor `initial` supplies the planar position and heading of frame 0
    (height comes from the height channel); by default the trajectory starts
    at the origin facing +y. On encoded data anchored with the source's
    frame-0 state this is the exact inverse of encode_features for the root
    trajectory and all joint positions.
    """
    if seq.layout != "feature":
        raise WrongWidth("decode_features expects a feature-space sequence")
    f = seq.data
    frames = seq.frames

    theta0 = 0.0
    xy0 = np.zeros(2)
    if initial is not None:
        theta0 = float(np.atleast_1d(initial.heading)[0])
        xy0 = np.atleast_2d(initial.position)[0, :2]

    rot_vel = f[:, 0]
    heading = theta0 + np.concatenate([[0.0], np.cumsum(rot_vel[:-1])])

    local_v = np.concatenate([f[:, LIN_VEL], np.zeros((frames, 1))], axis=-1)
    world_v = rotate_planar(local_v, heading)
    xy = xy0 + np.concatenate([np.zeros((1, 2)), np.cumsum(world_v[:-1, :2], axis=0)])

    root_pos = np.concatenate([xy, f[:, HEIGHT]], axis=-1)
    planar_root = np.concatenate([xy, np.zeros((frames, 1))], axis=-1)
    local = f[:, LOCAL_POS].reshape(frames, -1, 3)
    joints = rotate_planar(local, heading[:, None]) + planar_root[:, None, :]

    positions = np.concatenate([root_pos[:, None, :], joints], axis=1)
    root = RootState(root_pos, wrap_angle(heading))
    return MotionSequence.joint_space(positions, fps=seq.fps), root


def normalize_initial(seq, mode: str = "single"):
    """Rigidly move a sequence (or pair) into the canonical start frame.

    single: frame-0 root is placed at the planar origin facing +y.
    pair:   the two frame-0 roots get their planar centroid at the origin
            and the x-to-y axis turned to +y; one shared rigid transform,
            so relative geometry is preserved exactly.
    """
    if mode == "single":
        pos = seq.data
        theta0 = float(heading_from_positions(pos[0:1])[0])
        pivot = np.array([pos[0, 0, 0], pos[0, 0, 1], 0.0])
        out = rigid_yaw_transform(pos, -theta0, pivot, np.zeros(3))
        return MotionSequence.joint_space(out, fps=seq.fps)
    if mode == "pair":
        sx, sy = seq
        r0x, r0y = sx.data[0, 0], sy.data[0, 0]
        centroid = np.array([(r0x[0] + r0y[0]) / 2.0, (r0x[1] + r0y[1]) / 2.0, 0.0])
        axis = r0y[:2] - r0x[:2]
        if np.linalg.norm(axis) > 1e-9:
            yaw = -float(np.arctan2(-axis[0], axis[1]))
        else:
            # Coincident roots: fall back to character x's facing.
            yaw = -float(heading_from_positions(sx.data[0:1])[0])
        ox = rigid_yaw_transform(sx.data, yaw, centroid, np.zeros(3))
        oy = rigid_yaw_transform(sy.data, yaw, centroid, np.zeros(3))
        return (
            MotionSequence.joint_space(ox, fps=sx.fps),
            MotionSequence.joint_space(oy, fps=sy.fps),
        )
    raise ValueError(f"unknown mode {mode!r}")


def root_state_of(seq: MotionSequence) -> RootState:
    """Per-frame RootState read off a joint-space sequence."""
    return RootState(seq.data[:, 0], heading_from_positions(seq.data))
