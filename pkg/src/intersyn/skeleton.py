"""Skeleton model and forward kinematics.

The world frame is z-up: x lateral, y forward, z vertical. The canonical
skeleton is the 22-joint body used by common motion corpora, rooted at the
pelvis, with rest offsets in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import ShapeMismatch
from .motion import MotionSequence, RootState

ROOT_PARENT = -1

CANONICAL_JOINT_NAMES = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
]

CANONICAL_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]

# Rest offsets from the parent joint, meters, z-up, character facing +y.
CANONICAL_OFFSETS = [
    [0.00, 0.00, 0.00],
    [0.10, 0.00, -0.06],
    [-0.10, 0.00, -0.06],
    [0.00, 0.00, 0.11],
    [0.00, 0.00, -0.43],
    [0.00, 0.00, -0.43],
    [0.00, 0.00, 0.13],
    [0.00, 0.00, -0.42],
    [0.00, 0.00, -0.42],
    [0.00, 0.00, 0.05],
    [0.00, 0.13, -0.07],
    [0.00, 0.13, -0.07],
    [0.00, 0.00, 0.21],
    [0.07, 0.00, 0.12],
    [-0.07, 0.00, 0.12],
    [0.00, 0.00, 0.09],
    [0.09, 0.00, 0.02],
    [-0.09, 0.00, 0.02],
    [0.26, 0.00, 0.00],
    [-0.26, 0.00, 0.00],
    [0.25, 0.00, 0.00],
    [-0.25, 0.00, 0.00],
]

LEFT_HIP, RIGHT_HIP = 1, 2
LEFT_SHOULDER, RIGHT_SHOULDER = 16, 17
# Ankle + toe joints used for foot-contact flags (left pair, right pair).
FOOT_JOINTS = [7, 10, 8, 11]

# Rest pelvis height that puts the feet on the ground plane.
REST_ROOT_HEIGHT = 0.98


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy: parent indices plus rest offsets from each parent.

    Joint 0 is the root (parent -1) and every other joint's parent index is
    smaller than its own, so arrays are already in topological order.
    """

    parents: np.ndarray
    offsets: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=int)
        offsets = np.asarray(self.offsets, dtype=float)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        if offsets.shape != (parents.shape[0], 3):
            raise ShapeMismatch(f"offsets shape {offsets.shape} does not match {parents.shape[0]} joints")
        if parents[0] != ROOT_PARENT:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, len(parents)):
            if not 0 <= parents[j] < j:
                raise ValueError(f"parent[{j}]={parents[j]} breaks topological order")
        lengths = np.linalg.norm(offsets[1:], axis=-1)
        if np.any(lengths <= 0.0):
            raise ValueError("every non-root joint needs a positive bone length")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    def bone_lengths(self) -> np.ndarray:
        """Rest length per joint; entry 0 (root) is zero."""
        return np.linalg.norm(self.offsets, axis=-1)

    def same_topology(self, other: "Skeleton") -> bool:
        return self.joint_count == other.joint_count and bool(np.all(self.parents == other.parents))

    def scaled(self, factor) -> "Skeleton":
        """New skeleton with offsets scaled per joint (scalar or per-joint)."""
        factor = np.asarray(factor, dtype=float)
        if factor.ndim == 1:
            factor = factor[:, None]
        return Skeleton(self.parents.copy(), self.offsets * factor, list(self.names))


def canonical_skeleton() -> Skeleton:
    return Skeleton(
        np.array(CANONICAL_PARENTS),
        np.array(CANONICAL_OFFSETS),
        list(CANONICAL_JOINT_NAMES),
    )


def fk_positions(sk: Skeleton, local_rotations: np.ndarray, root: RootState) -> MotionSequence:
    """Forward kinematics: per-frame local rotations -> global joint positions.

    `local_rotations` is (T, K, 4); `root` carries per-frame position (T, 3)
    and heading (T,). The root's global orientation is the heading rotation
    about the vertical axis composed with its local rotation; each child is
    placed at parent + R_global(parent) . offset.
    """
    rot = np.asarray(local_rotations, dtype=float)
    if rot.ndim != 3 or rot.shape[1] != sk.joint_count or rot.shape[2] != 4:
        raise ShapeMismatch(f"local_rotations must be (T, {sk.joint_count}, 4), got {rot.shape}")
    pos = np.atleast_2d(np.asarray(root.position, dtype=float))
    heading = np.atleast_1d(np.asarray(root.heading, dtype=float))
    frames = rot.shape[0]
    if pos.shape != (frames, 3) or heading.shape != (frames,):
        raise ShapeMismatch("root state frame count does not match rotations")

    z_axis = np.array([0.0, 0.0, 1.0])
    heading_q = quat.quat_from_axis_angle(np.broadcast_to(z_axis, (frames, 3)), heading)

    global_q = np.empty((frames, sk.joint_count, 4))
    joints = np.empty((frames, sk.joint_count, 3))
    global_q[:, 0] = quat.quat_mul(heading_q, rot[:, 0])
    joints[:, 0] = pos
    for k in range(1, sk.joint_count):
        p = sk.parents[k]
        joints[:, k] = joints[:, p] + quat.rotate_vec(global_q[:, p], sk.offsets[k])
        global_q[:, k] = quat.quat_mul(global_q[:, p], rot[:, k])
    return MotionSequence.joint_space(joints, fps=20.0)


def bone_vectors(positions: np.ndarray, sk: Skeleton) -> np.ndarray:
    """(T, K, 3) parent-relative bone vectors; root entry is zero."""
    positions = np.asarray(positions, dtype=float)
    out = np.zeros_like(positions)
    out[:, 1:] = positions[:, 1:] - positions[:, sk.parents[1:]]
    return out


def accumulate_bones(root_positions: np.ndarray, bones: np.ndarray, sk: Skeleton) -> np.ndarray:
    """Inverse of bone_vectors: rebuild joint positions from bone vectors."""
    out = np.empty_like(bones)
    out[:, 0] = root_positions
    for k in range(1, sk.joint_count):
        out[:, k] = out[:, sk.parents[k]] + bones[:, k]
    return out
