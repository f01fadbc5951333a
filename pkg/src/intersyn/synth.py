"""Procedural synthetic motion corpus.

Generates walk cycles, waves and stretches for solo entries, plus
approach-and-handshake / high-five pairs, all via forward kinematics on the
canonical skeleton (so every geometric invariant holds by construction).
Texts are templated; everything is deterministic per seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quat
from .motion import DEFAULT_FPS, JOINT, MotionSequence, RootState, mseq_load, mseq_save
from .skeleton import REST_ROOT_HEIGHT, Skeleton, canonical_skeleton, fk_positions

L_HIP, R_HIP = 1, 2
L_KNEE, R_KNEE = 4, 5
L_SHOULDER, R_SHOULDER = 16, 17
L_ELBOW, R_ELBOW = 18, 19
SPINE1 = 3

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])

MANIFEST_NAME = "corpus.json"


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    text: str
    kind: str  # "solo" | "pair"


@dataclass(frozen=True)
class Corpus:
    root: Path
    entries: list
    checksum: str

    def solo_entries(self):
        return [e for e in self.entries if e.kind == "solo"]

    def pair_entries(self):
        return [e for e in self.entries if e.kind == "pair"]


def _identity_rotations(frames: int, joints: int) -> np.ndarray:
    rots = np.zeros((frames, joints, 4))
    rots[..., 0] = 1.0
    return rots


def _set_axis_angle(rots: np.ndarray, joint: int, axis: np.ndarray, angles: np.ndarray) -> None:
    rots[:, joint] = quat.quat_from_axis_angle(np.broadcast_to(axis, (len(angles), 3)), angles)


def _walk_rotations(frames: int, phase: np.ndarray, leg_amp: float, arm_amp: float, joints: int) -> np.ndarray:
    """Leg swing about the lateral axis with knee flexion and arm counter-swing."""
    rots = _identity_rotations(frames, joints)
    swing = leg_amp * np.sin(phase)
    _set_axis_angle(rots, L_HIP, X_AXIS, swing)
    _set_axis_angle(rots, R_HIP, X_AXIS, -swing)
    # Knees only bend one way; flex when the same-side leg swings back.
    _set_axis_angle(rots, L_KNEE, X_AXIS, -leg_amp * np.clip(np.sin(phase + 0.6), 0.0, None) * 1.4)
    _set_axis_angle(rots, R_KNEE, X_AXIS, -leg_amp * np.clip(np.sin(phase + np.pi + 0.6), 0.0, None) * 1.4)
    _set_axis_angle(rots, L_SHOULDER, X_AXIS, -arm_amp * np.sin(phase))
    _set_axis_angle(rots, R_SHOULDER, X_AXIS, arm_amp * np.sin(phase))
    return rots


def make_walk(frames: int, seed: int, fps: float = DEFAULT_FPS) -> tuple:
    """Forward walk with per-seed speed, cadence and gentle turning."""
    rng = np.random.default_rng(seed)
    sk = canonical_skeleton()
    speed = rng.uniform(0.6, 1.4)  # m/s
    cadence = rng.uniform(1.5, 2.1)  # steps/s
    turn_rate = rng.uniform(-0.25, 0.25)  # rad/s
    t = np.arange(frames) / fps
    phase = 2.0 * np.pi * cadence * t + rng.uniform(0.0, 2.0 * np.pi)

    heading = turn_rate * t
    step = speed / fps
    dirs = np.stack([-np.sin(heading), np.cos(heading)], axis=-1)
    xy = np.concatenate([np.zeros((1, 2)), np.cumsum(step * dirs[:-1], axis=0)])
    bob = 0.015 * np.sin(2.0 * phase)
    pos = np.concatenate([xy, (REST_ROOT_HEIGHT + bob)[:, None]], axis=-1)

    rots = _walk_rotations(frames, phase, leg_amp=0.55 * min(speed, 1.2), arm_amp=0.35, joints=sk.joint_count)
    seq = fk_positions(sk, rots, RootState(pos, heading))
    seq = MotionSequence.joint_space(seq.data, fps=fps)

    pace = "slowly" if speed < 0.85 else ("briskly" if speed > 1.15 else "at a steady pace")
    side = "curving left" if turn_rate > 0.12 else ("curving right" if turn_rate < -0.12 else "in a straight line")
    return seq, f"a person walks forward {pace} {side}"


def make_wave(frames: int, seed: int, fps: float = DEFAULT_FPS) -> tuple:
    """Standing wave with the right arm; slight torso sway."""
    rng = np.random.default_rng(seed)
    sk = canonical_skeleton()
    t = np.arange(frames) / fps
    wave_hz = rng.uniform(1.2, 2.0)
    sway = 0.05 * np.sin(2.0 * np.pi * 0.4 * t + rng.uniform(0, 2 * np.pi))

    rots = _identity_rotations(frames, sk.joint_count)
    raise_angle = np.full(frames, 2.4)  # arm up overhead (rotation about y for the -x arm)
    ramp = np.clip(t * 2.5, 0.0, 1.0)
    _set_axis_angle(rots, R_SHOULDER, Y_AXIS, -raise_angle * ramp)
    _set_axis_angle(rots, R_ELBOW, Z_AXIS, 0.5 * np.sin(2.0 * np.pi * wave_hz * t) * ramp)
    _set_axis_angle(rots, SPINE1, Y_AXIS, sway)

    pos = np.broadcast_to([0.0, 0.0, REST_ROOT_HEIGHT], (frames, 3)).copy()
    seq = fk_positions(sk, rots, RootState(pos, np.zeros(frames)))
    return MotionSequence.joint_space(seq.data, fps=fps), "a person stands and waves with their right hand"


def make_stretch(frames: int, seed: int, fps: float = DEFAULT_FPS) -> tuple:
    """Both arms raise overhead and the torso twists gently."""
    rng = np.random.default_rng(seed)
    sk = canonical_skeleton()
    t = np.arange(frames) / fps
    ramp = 0.5 - 0.5 * np.cos(np.clip(t / max(t[-1], 1e-9), 0, 1) * 2 * np.pi)
    twist = rng.uniform(0.15, 0.35) * np.sin(2.0 * np.pi * 0.5 * t)

    rots = _identity_rotations(frames, sk.joint_count)
    _set_axis_angle(rots, L_SHOULDER, Y_AXIS, 2.6 * ramp)
    _set_axis_angle(rots, R_SHOULDER, Y_AXIS, -2.6 * ramp)
    _set_axis_angle(rots, SPINE1, Z_AXIS, twist)
    pos = np.broadcast_to([0.0, 0.0, REST_ROOT_HEIGHT], (frames, 3)).copy()
    seq = fk_positions(sk, rots, RootState(pos, np.zeros(frames)))
    return MotionSequence.joint_space(seq.data, fps=fps), "a person raises both arms and stretches"


def _approach_pair(frames: int, seed: int, fps: float, shake: bool) -> tuple:
    """Two characters walk toward each other, stop, and shake or high-five."""
    rng = np.random.default_rng(seed)
    sk = canonical_skeleton()
    t = np.arange(frames) / fps
    gap0 = rng.uniform(2.2, 2.8)
    stop_gap = 0.75
    approach_frac = rng.uniform(0.35, 0.5)
    n_walk = max(int(frames * approach_frac), 2)

    # Ease-out approach: each walks half of (gap0 - stop_gap).
    travel = (gap0 - stop_gap) / 2.0
    s = np.zeros(frames)
    ramp = np.linspace(0.0, 1.0, n_walk)
    s[:n_walk] = travel * (1.0 - np.cos(ramp * np.pi)) / 2.0
    s[n_walk:] = travel

    cadence = rng.uniform(1.6, 2.0)
    phase = 2.0 * np.pi * cadence * t
    move = np.zeros(frames)
    move[:n_walk] = 1.0

    def build(sign: float, arm_joint_s: int, arm_joint_e: int, axis_sign: float):
        # sign=+1: starts at -gap0/2 on y facing +y; sign=-1 mirrored.
        y = sign * (-gap0 / 2.0 + s)
        pos = np.stack([np.zeros(frames), y, np.full(frames, REST_ROOT_HEIGHT)], axis=-1)
        heading = np.zeros(frames) if sign > 0 else np.full(frames, np.pi)
        rots = _walk_rotations(frames, phase, leg_amp=0.45, arm_amp=0.3, joints=sk.joint_count)
        damp = np.where(move > 0, 1.0, 0.15)
        for j in (L_HIP, R_HIP, L_KNEE, R_KNEE, L_SHOULDER, R_SHOULDER):
            ang = 2.0 * np.arccos(np.clip(rots[:, j, 0], -1.0, 1.0))
            axis = rots[:, j, 1:]
            norm = np.linalg.norm(axis, axis=-1, keepdims=True)
            axis = np.where(norm > 1e-12, axis / np.maximum(norm, 1e-12), [1.0, 0.0, 0.0])
            rots[:, j] = quat.quat_from_axis_angle(axis, ang * damp)
        # Reach forward with the greeting arm once close.
        reach = np.clip((np.arange(frames) - n_walk) / (0.15 * frames), 0.0, 1.0)
        lift = 1.1 if shake else 2.0
        _set_axis_angle(rots, arm_joint_s, X_AXIS, axis_sign * lift * reach)
        wiggle = 0.35 * np.sin(2 * np.pi * 2.2 * t) * reach if shake else 0.15 * np.sin(2 * np.pi * 3.0 * t) * reach
        _set_axis_angle(rots, arm_joint_e, X_AXIS, axis_sign * 0.3 * reach + wiggle)
        seq = fk_positions(sk, rots, RootState(pos, heading))
        return MotionSequence.joint_space(seq.data, fps=fps)

    a = build(+1.0, R_SHOULDER, R_ELBOW, 1.0)
    b = build(-1.0, R_SHOULDER, R_ELBOW, 1.0)
    action = "shake hands" if shake else "exchange a high five"
    return (a, b), f"two people walk toward each other and {action}"


def make_pair(frames: int, seed: int, fps: float = DEFAULT_FPS) -> tuple:
    shake = seed % 2 == 0
    return _approach_pair(frames, seed, fps, shake)


def _entry_digest(paths: list, root: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update((root / p).read_bytes())
    return h.hexdigest()


def synth_corpus(out_dir, n_solo: int, n_pair: int, frames: int, seed: int, fps: float = DEFAULT_FPS) -> Corpus:
    """Write a deterministic corpus of MSEQ-JSON files plus a manifest.

    A third of the solo motions are generated on a uniformly rescaled
    skeleton so downstream retargeting has real work to do.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    sk = canonical_skeleton()
    entries = []

    solo_makers = [make_walk, make_wave, make_stretch]
    for i in range(n_solo):
        maker = solo_makers[i % len(solo_makers)]
        seq, text = maker(frames, seed * 100003 + i, fps)
        if i % 3 == 2:
            scale = 0.9 + 0.25 * ((seed * 31 + i) % 5) / 4.0
            variant = sk.scaled(scale)
            from .interleave import retarget  # local import: interleave imports nothing from here

            seq = retarget(seq, sk, variant)
            out_sk = variant
        else:
            out_sk = sk
        name = f"solo_{i:04d}.mseq.json"
        mseq_save(root / name, seq.data, JOINT, out_sk, fps)
        entries.append(CorpusEntry(name, text, "solo"))

    for i in range(n_pair):
        (a, b), text = make_pair(frames, seed * 100019 + i, fps)
        name = f"pair_{i:04d}.mseq.json"
        mseq_save(root / name, np.stack([a.data, b.data]), JOINT, sk, fps)
        entries.append(CorpusEntry(name, text, "pair"))

    checksum = _entry_digest([e.path for e in entries], root)
    manifest = {
        "version": 1,
        "seed": seed,
        "frames": frames,
        "fps": fps,
        "entries": [{"path": e.path, "text": e.text, "kind": e.kind} for e in entries],
        "checksum": checksum,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return Corpus(root, entries, checksum)


def load_corpus(path) -> Corpus:
    root = Path(path)
    doc = json.loads((root / MANIFEST_NAME).read_text())
    entries = [CorpusEntry(e["path"], e["text"], e["kind"]) for e in doc["entries"]]
    return Corpus(root, entries, doc["checksum"])


def load_entry(corpus: Corpus, entry: CorpusEntry):
    """Returns (sequence or (x, y) pair, skeleton)."""
    data, layout, sk, fps = mseq_load(corpus.root / entry.path)
    if entry.kind == "pair":
        if data.ndim != 4:
            raise ValueError(f"{entry.path}: pair entry without pair data")
        return (
            MotionSequence.joint_space(data[0], fps=fps),
            MotionSequence.joint_space(data[1], fps=fps),
        ), sk
    return MotionSequence.joint_space(data, fps=fps), sk
