"""BVH export (and a small parser used to verify round trips).

Joint rotations are recovered from positions hierarchically: each joint
with children gets the global rotation that best maps its children's rest
offsets onto the current bone vectors (exact for motion produced by
forward kinematics, least-squares otherwise); leaves inherit the parent
rotation. Channels are written in Zrotation Xrotation Yrotation order,
degrees; coordinates stay in this package's z-up meters convention.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, ShapeMismatch
from .motion import JOINT, MotionSequence
from .skeleton import Skeleton


def _children_table(sk: Skeleton) -> list:
    children = [[] for _ in range(sk.joint_count)]
    for j in range(1, sk.joint_count):
        children[sk.parents[j]].append(j)
    return children


def _kabsch(rest: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Rotation R minimizing sum ||R rest_i - current_i||^2 (proper)."""
    h = current.T @ rest
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.diag([1.0, 1.0, d])
    return u @ fix @ vt


def _single_rotation(rest: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Minimal rotation taking one rest direction to a current direction."""
    from .quat import quat_between, quat_to_rot

    return quat_to_rot(quat_between(rest, current))


def _global_rotations(positions: np.ndarray, sk: Skeleton) -> np.ndarray:
    frames = positions.shape[0]
    children = _children_table(sk)
    rots = np.tile(np.eye(3), (frames, sk.joint_count, 1, 1))
    for j in range(sk.joint_count):
        childs = children[j]
        if not childs:
            rots[:, j] = rots[:, sk.parents[j]]
            continue
        rest = sk.offsets[childs]
        for f in range(frames):
            bones = positions[f, childs] - positions[f, j]
            if len(childs) == 1:
                rots[f, j] = _single_rotation(rest[0], bones[0])
            else:
                rots[f, j] = _kabsch(rest, bones)
    return rots


def _euler_zxy_deg(rot: np.ndarray) -> np.ndarray:
    """Decompose R = Rz(g) Rx(a) Ry(b); returns (g, a, b) in degrees."""
    sa = np.clip(rot[2, 1], -1.0, 1.0)
    a = np.arcsin(sa)
    ca = np.cos(a)
    if abs(ca) < 1e-7:
        b = 0.0
        g = np.arctan2(rot[1, 0], rot[0, 0])
    else:
        b = np.arctan2(-rot[2, 0], rot[2, 2])
        g = np.arctan2(-rot[0, 1], rot[1, 1])
    return np.degrees([g, a, b])


def _rot_zxy(g: float, a: float, b: float) -> np.ndarray:
    cg, sg = np.cos(g), np.sin(g)
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1.0]])
    rx = np.array([[1.0, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1.0, 0], [-sb, 0, cb]])
    return rz @ rx @ ry


def export_bvh(seq: MotionSequence, sk: Skeleton) -> str:
    """Serialize a joint-space sequence as BVH text."""
    if seq.layout != JOINT or seq.joint_count != sk.joint_count:
        raise ShapeMismatch("export_bvh needs a joint-space sequence matching the skeleton")
    positions = seq.data
    frames = seq.frames
    children = _children_table(sk)
    names = sk.names if sk.names else [f"joint{j}" for j in range(sk.joint_count)]

    order = []  # depth-first traversal order (defines the channel order)

    def emit(j: int, depth: int, lines: list) -> None:
        pad = "  " * depth
        tag = "ROOT" if j == 0 else "JOINT"
        lines.append(f"{pad}{tag} {names[j]}")
        lines.append(pad + "{")
        ox, oy, oz = sk.offsets[j]
        lines.append(f"{pad}  OFFSET {ox:.6f} {oy:.6f} {oz:.6f}")
        if j == 0:
            lines.append(
                f"{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation"
            )
        else:
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        order.append(j)
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1, lines)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    lines = ["HIERARCHY"]
    emit(0, 0, lines)
    lines.append("MOTION")
    lines.append(f"Frames: {frames}")
    lines.append(f"Frame Time: {1.0 / seq.fps:.8f}")

    global_rots = _global_rotations(positions, sk)
    for f in range(frames):
        row = list(positions[f, 0])
        for j in order:
            if j == 0:
                local = global_rots[f, 0]
            else:
                local = global_rots[f, sk.parents[j]].T @ global_rots[f, j]
            row.extend(_euler_zxy_deg(local))
        lines.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


# -- parsing (round-trip verification) -----------------------------------------


def parse_bvh(text: str):
    """Parse BVH into (parents, offsets, channel specs, frames array, fps)."""
    tokens = text.replace("{", " { ").replace("}", " } ").split()
    pos = 0

    def take():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    def expect(value):
        tok = take()
        if tok != value:
            raise FormatError(f"expected {value!r}, got {tok!r}")

    expect("HIERARCHY")
    parents, offsets, channels, names = [], [], [], []

    def parse_joint(parent: int):
        kind = take()
        if kind not in ("ROOT", "JOINT"):
            raise FormatError(f"unexpected token {kind!r}")
        name = take()
        expect("{")
        index = len(parents)
        parents.append(parent)
        names.append(name)
        offsets.append([0.0, 0.0, 0.0])
        channels.append([])
        while True:
            tok = take()
            if tok == "OFFSET":
                offsets[index] = [float(take()) for _ in range(3)]
            elif tok == "CHANNELS":
                n = int(take())
                channels[index] = [take() for _ in range(n)]
            elif tok in ("JOINT",):
                pos_rewind()
                parse_joint(index)
            elif tok == "End":
                expect("Site")
                expect("{")
                expect("OFFSET")
                [take() for _ in range(3)]
                expect("}")
            elif tok == "}":
                return
            else:
                raise FormatError(f"unexpected token {tok!r} in joint block")

    def pos_rewind():
        nonlocal pos
        pos -= 1

    parse_joint(-1)
    expect("MOTION")
    expect("Frames:")
    n_frames = int(take())
    expect("Frame")
    expect("Time:")
    frame_time = float(take())
    values = np.array([float(t) for t in tokens[pos:]], dtype=float)
    per_frame = sum(len(c) for c in channels)
    if values.size != n_frames * per_frame:
        raise FormatError(f"expected {n_frames * per_frame} motion values, got {values.size}")
    return (
        np.array(parents),
        np.array(offsets),
        channels,
        values.reshape(n_frames, per_frame),
        1.0 / frame_time,
    )


def bvh_fk(parents: np.ndarray, offsets: np.ndarray, channels: list, rows: np.ndarray) -> np.ndarray:
    """Forward kinematics over parsed BVH channels -> (T, K, 3) positions."""
    frames = rows.shape[0]
    k = len(parents)
    out = np.zeros((frames, k, 3))
    basis = {
        "Xrotation": lambda a: np.array(
            [[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]]
        ),
        "Yrotation": lambda a: np.array(
            [[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]]
        ),
        "Zrotation": lambda a: np.array(
            [[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]]
        ),
    }
    col_of = []
    start = 0
    for ch in channels:
        col_of.append(start)
        start += len(ch)

    for f in range(frames):
        globals_r = [np.eye(3)] * k
        for j in range(k):
            local = np.eye(3)
            translation = np.zeros(3)
            for ci, ch in enumerate(channels[j]):
                val = rows[f, col_of[j] + ci]
                if ch.endswith("position"):
                    translation["XYZ".index(ch[0])] = val
                else:
                    local = local @ basis[ch](np.radians(val))
            if parents[j] < 0:
                globals_r[j] = local
                out[f, j] = translation
            else:
                p = parents[j]
                globals_r[j] = globals_r[p] @ local
                out[f, j] = out[f, p] + globals_r[p] @ offsets[j]
    return out
