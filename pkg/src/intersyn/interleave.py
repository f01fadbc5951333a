"""Interleaving of solo and interaction motions into paired buckets.

A bucket holds two characters (u_x, u_y) over a shared timeline that tiles
solo and interaction segments. The composer retargets everything onto the
canonical skeleton, rigidly aligns each joining segment so its first-frame
root state continues the previous segment, holds the partner character in
place during solo segments, and smooths each boundary window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import quat
from .errors import (
    DegenerateBone,
    PatternTooLong,
    ScheduleError,
    ScheduleOverflow,
    SkeletonMismatch,
    TopologyMismatch,
)
from .features import (
    facing_normal,
    heading_from_positions,
    rigid_yaw_transform,
    root_state_of,
)
from .motion import JOINT, MotionSequence, RootState, wrap_angle
from .skeleton import Skeleton, accumulate_bones, bone_vectors, canonical_skeleton

TEXT_DIM = 512
BOUNDARY_WINDOW = 5
MIN_SEGMENT_FRAMES = 20

SOLO = "s"
INTERACTION = "i"


@dataclass(frozen=True)
class TextEmbedding:
    """A 512-dim text vector together with the string it came from."""

    vector: np.ndarray
    source_text: str = ""

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", v)
        if v.shape != (TEXT_DIM,):
            raise ValueError(f"text embedding must be ({TEXT_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("text embedding contains non-finite values")

    @classmethod
    def empty(cls) -> "TextEmbedding":
        return cls(np.zeros(TEXT_DIM), "")


def combine_text(first: TextEmbedding, second: TextEmbedding) -> TextEmbedding:
    """Join two descriptions in timeline order; vectors are merged as the
    length-normalized mean."""
    mean = (first.vector + second.vector) / 2.0
    norm = np.linalg.norm(mean)
    vec = mean / norm if norm > 1e-12 else mean
    text = f"{first.source_text} then {second.source_text}".strip()
    return TextEmbedding(vec, text)


@dataclass(frozen=True)
class SegmentSchedule:
    """Tiling of [0, T) into alternating solo/interaction segments.

    `pattern` tags each segment, `starts` gives each segment's first frame
    (starts[0] is always 0). Exactly one of the first solo/interaction
    starts is zero, which is the constraint the constructor enforces.
    """

    pattern: tuple
    starts: tuple
    total: int

    def __post_init__(self):
        pattern = tuple(self.pattern)
        starts = tuple(int(s) for s in self.starts)
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "starts", starts)
        if len(pattern) != len(starts) or not pattern:
            raise ScheduleError("pattern and starts must be non-empty and equal length")
        if any(tag not in (SOLO, INTERACTION) for tag in pattern):
            raise ScheduleError(f"unknown segment tags in {pattern}")
        if starts[0] != 0:
            raise ScheduleError("the first segment must start at frame 0")
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= self.total:
            raise ScheduleError("segment starts must increase and stay inside [0, T)")
        if any(a == b for a, b in zip(pattern, pattern[1:])):
            raise ScheduleError("segments must alternate between solo and interaction")
        t_i, t_s = self.t_i, self.t_s
        if t_i is not None and t_s is not None:
            if t_i + t_s <= 0 or t_i * t_s != 0:
                raise ScheduleError(
                    f"schedule requires t_i + t_s > 0 and t_i * t_s = 0, got t_i={t_i}, t_s={t_s}"
                )

    @classmethod
    def from_starts(cls, t_i, t_s, total: int) -> "SegmentSchedule":
        """Two-segment (or degenerate single-segment) schedule from the
        interaction/solo start frames. Exactly one must be zero."""
        if t_i is None and t_s is None:
            raise ScheduleError("at least one of t_i, t_s must be given")
        if t_s is None:
            if t_i != 0:
                raise ScheduleError("an interaction-only schedule must have t_i = 0")
            return cls((INTERACTION,), (0,), total)
        if t_i is None:
            if t_s != 0:
                raise ScheduleError("a solo-only schedule must have t_s = 0")
            return cls((SOLO,), (0,), total)
        if t_i + t_s <= 0 or t_i * t_s != 0:
            raise ScheduleError(
                f"schedule requires t_i + t_s > 0 and t_i * t_s = 0, got t_i={t_i}, t_s={t_s}"
            )
        if t_i == 0:
            return cls((INTERACTION, SOLO), (0, int(t_s)), total)
        return cls((SOLO, INTERACTION), (0, int(t_i)), total)

    @classmethod
    def from_pattern(cls, pattern, total: int, first_boundary: int | None = None) -> "SegmentSchedule":
        """Equal-share tiling of `total` frames (remainder to the last
        segment). `first_boundary` overrides the first split point; the
        remaining frames are re-shared equally."""
        tags = tuple(pattern.split("-")) if isinstance(pattern, str) else tuple(pattern)
        n = len(tags)
        share = total // n
        if share < MIN_SEGMENT_FRAMES:
            raise PatternTooLong(
                f"{n} segments over {total} frames leaves {share} frames each; "
                f"minimum is {MIN_SEGMENT_FRAMES}"
            )
        if n > 3:
            warnings.warn(
                f"pattern {'-'.join(tags)} has {n} segments; short shares degrade quality",
                UserWarning,
                stacklevel=2,
            )
        if first_boundary is None or n == 1:
            starts = tuple(share * k for k in range(n))
        else:
            rest = total - first_boundary
            rest_share = rest // (n - 1)
            if first_boundary < MIN_SEGMENT_FRAMES or rest_share < MIN_SEGMENT_FRAMES:
                raise PatternTooLong(
                    f"first boundary {first_boundary} leaves a segment below {MIN_SEGMENT_FRAMES} frames"
                )
            starts = (0,) + tuple(first_boundary + rest_share * k for k in range(n - 1))
        return cls(tags, starts, total)

    @property
    def t_i(self):
        """Start frame of the first interaction segment (None if absent)."""
        for tag, start in zip(self.pattern, self.starts):
            if tag == INTERACTION:
                return start
        return None

    @property
    def t_s(self):
        for tag, start in zip(self.pattern, self.starts):
            if tag == SOLO:
                return start
        return None

    @property
    def boundaries(self) -> tuple:
        return self.starts[1:]

    def segments(self):
        """Yield (tag, start, stop) triples tiling [0, total)."""
        stops = list(self.starts[1:]) + [self.total]
        for tag, start, stop in zip(self.pattern, self.starts, stops):
            yield tag, start, stop

    def boundary_mask(self) -> np.ndarray:
        """True on frames within +/-5 of a segment boundary (clipped)."""
        mask = np.zeros(self.total, dtype=bool)
        for b in self.boundaries:
            mask[max(b - BOUNDARY_WINDOW, 0) : min(b + BOUNDARY_WINDOW + 1, self.total)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "pattern": "-".join(self.pattern),
            "starts": list(self.starts),
            "T": self.total,
            "t_i": self.t_i,
            "t_s": self.t_s,
        }


@dataclass(frozen=True)
class MotionBucket:
    """Paired interleaved sequence plus its schedule, text and mask.

    `anchors` carries each character's frame-0 planar root state
    (x, y, heading); it is what re-anchors recursive feature data into the
    shared world frame after encoding.
    """

    u_x: MotionSequence
    u_y: MotionSequence
    schedule: SegmentSchedule
    text: TextEmbedding
    boundary_mask: np.ndarray
    anchors: tuple = field(default=None)

    def __post_init__(self):
        if self.u_x.frames != self.u_y.frames or self.u_x.layout != self.u_y.layout:
            raise SkeletonMismatch("bucket channels must share frame count and layout")
        if self.u_x.fps != self.u_y.fps:
            raise SkeletonMismatch("bucket channels must share fps")
        if self.u_x.frames != self.schedule.total:
            raise ScheduleError("bucket frame count must equal the schedule length")
        mask = np.asarray(self.boundary_mask, dtype=bool)
        object.__setattr__(self, "boundary_mask", mask)
        if mask.shape != (self.schedule.total,):
            raise ScheduleError("boundary mask must have one entry per frame")

    @property
    def frames(self) -> int:
        return self.u_x.frames


def retarget(src_seq: MotionSequence, src_sk: Skeleton, dst_sk: Skeleton) -> MotionSequence:
    """Transfer a joint-space motion from src_sk onto dst_sk.

    Per joint, the new bone vector is the old one rotated by the rest-pose
    rotation difference between the skeletons and scaled by the bone-length
    ratio; positions are re-accumulated from the unchanged root trajectory.
    """
    if not src_sk.same_topology(dst_sk):
        raise TopologyMismatch("retarget requires identical parent arrays")
    if src_seq.layout != JOINT or src_seq.joint_count != src_sk.joint_count:
        raise SkeletonMismatch("sequence does not match the source skeleton")
    src_len = src_sk.bone_lengths()[1:]
    dst_len = dst_sk.bone_lengths()[1:]
    if np.any(src_len < 1e-9):
        raise DegenerateBone("source skeleton has a bone shorter than 1e-9")

    ref = np.broadcast_to([0.0, 0.0, 1.0], (src_sk.joint_count - 1, 3))
    q_src = quat.quat_between(ref, src_sk.offsets[1:] / src_len[:, None])
    q_dst = quat.quat_between(ref, dst_sk.offsets[1:] / dst_len[:, None])
    rot = quat.quat_mul(q_dst, quat.quat_inverse(q_src))
    scale = (dst_len / src_len)[:, None]

    bones = bone_vectors(src_seq.data, src_sk)
    new_bones = np.zeros_like(bones)
    new_bones[:, 1:] = scale * quat.rotate_vec(rot[None, :, :], bones[:, 1:])
    out = accumulate_bones(src_seq.data[:, 0], new_bones, dst_sk)
    return MotionSequence.joint_space(out, fps=src_seq.fps)


def _facing_flipped(prev_last_frame: np.ndarray, next_first_frame: np.ndarray) -> bool:
    n_prev = facing_normal(np.asarray(prev_last_frame)[None])[0]
    n_next = facing_normal(np.asarray(next_first_frame)[None])[0]
    return float(np.dot(n_prev, n_next)) < 0.0


def _flip_about_first_root(data: np.ndarray, first_frame: np.ndarray) -> np.ndarray:
    pivot = np.array([first_frame[0, 0], first_frame[0, 1], 0.0])
    return rigid_yaw_transform(data, np.pi, pivot, pivot)


def fix_orientation(prev_last_frame: np.ndarray, next_first_frame: np.ndarray, next_seq: MotionSequence) -> MotionSequence:
    """Undo the 180-degree facing ambiguity at a segment join.

    Compares the hip-cross facing normals of the two join frames; when their
    dot product is negative the joining sequence is rotated half a turn
    about the vertical axis around its first-frame root.
    """
    if not _facing_flipped(prev_last_frame, next_first_frame):
        return next_seq
    out = _flip_about_first_root(next_seq.data, next_seq.data[0])
    return MotionSequence.joint_space(out, fps=next_seq.fps)


def _check_canonical(seq: MotionSequence, fps: float | None) -> float:
    sk = canonical_skeleton()
    if seq.layout != JOINT or seq.joint_count != sk.joint_count:
        raise SkeletonMismatch("composition requires canonical-skeleton joint-space sequences")
    if fps is not None and seq.fps != fps:
        raise SkeletonMismatch("all sequences must share fps")
    return seq.fps


def _first_frame_state(data: np.ndarray) -> tuple:
    return data[0, 0].copy(), float(heading_from_positions(data[0:1])[0])


def _assemble(chunks: list, schedule: SegmentSchedule, fps: float, text: TextEmbedding) -> MotionBucket:
    """Align per-segment chunks into a continuous pair of channels.

    `chunks` is one entry per segment: (tag, x_data, y_data_or_None) with
    x/y of exactly the segment's length. Each joining segment is rigidly
    moved so its first-frame root state matches the previous segment's
    last composed frame; interaction pairs move together. During solo
    segments the partner holds the adjoining interaction edge pose.
    """
    total = schedule.total
    k = chunks[0][1].shape[1]
    u_x = np.empty((total, k, 3))
    u_y = np.empty((total, k, 3))
    pending_hold = []  # leading solo stretches waiting for a partner pose
    held_pose = None

    for (tag, x_data, y_data), (_, start, stop) in zip(chunks, schedule.segments()):
        if start > 0:
            target_pos, target_heading = _first_frame_state(u_x[start - 1 : start])
            first_pos, first_heading = _first_frame_state(x_data)
            yaw = wrap_angle(target_heading - first_heading)
            x_data = rigid_yaw_transform(x_data, yaw, first_pos, target_pos)
            if y_data is not None:
                y_data = rigid_yaw_transform(y_data, yaw, first_pos, target_pos)
            if _facing_flipped(u_x[start - 1], x_data[0]):
                first = x_data[0]
                x_data = _flip_about_first_root(x_data, first)
                if y_data is not None:
                    y_data = _flip_about_first_root(y_data, first)
        u_x[start:stop] = x_data
        if tag == INTERACTION:
            u_y[start:stop] = y_data
            for lo, hi in pending_hold:
                u_y[lo:hi] = y_data[0]
            pending_hold.clear()
            held_pose = y_data[-1]
        else:
            if held_pose is None:
                pending_hold.append((start, stop))
            else:
                u_y[start:stop] = held_pose
    if pending_hold:
        # Solo-only schedule: the partner idles in the rest configuration.
        rest = rest_pose_frame()
        for lo, hi in pending_hold:
            u_y[lo:hi] = rest

    return MotionBucket(
        MotionSequence.joint_space(u_x, fps=fps),
        MotionSequence.joint_space(u_y, fps=fps),
        schedule,
        text,
        schedule.boundary_mask(),
    )


def rest_pose_frame() -> np.ndarray:
    """Canonical standing pose, feet on the ground, facing +y."""
    from .skeleton import REST_ROOT_HEIGHT, fk_positions

    sk = canonical_skeleton()
    rots = np.broadcast_to(quat.IDENTITY, (1, sk.joint_count, 4)).copy()
    root = RootState(np.array([[0.0, 0.0, REST_ROOT_HEIGHT]]), np.zeros(1))
    return fk_positions(sk, rots, root).data[0]


def compose(
    p_x: MotionSequence,
    p_y: MotionSequence,
    p_s: MotionSequence,
    schedule: SegmentSchedule,
    text_solo: TextEmbedding | None = None,
    text_pair: TextEmbedding | None = None,
) -> MotionBucket:
    """Interleave an interaction pair with a solo motion per the schedule.

    Solo segments consume successive chunks of p_s, interaction segments
    successive chunks of (p_x, p_y), so a motion interrupted by the other
    kind resumes where it left off.
    """
    fps = _check_canonical(p_x, None)
    for seq in (p_y, p_s):
        _check_canonical(seq, fps)
    if p_x.frames != p_y.frames:
        raise SkeletonMismatch("interaction pair must share frame count")

    cursors = {SOLO: 0, INTERACTION: 0}
    sources = {SOLO: p_s, INTERACTION: p_x}
    chunks = []
    for tag, start, stop in schedule.segments():
        need = stop - start
        at = cursors[tag]
        if at + need > sources[tag].frames:
            raise ScheduleOverflow(
                f"{'solo' if tag == SOLO else 'interaction'} source has "
                f"{sources[tag].frames} frames, needs {at + need}"
            )
        x_chunk = sources[tag].data[at : at + need]
        y_chunk = p_y.data[at : at + need] if tag == INTERACTION else None
        chunks.append((tag, x_chunk, y_chunk))
        cursors[tag] = at + need

    texts = {SOLO: text_solo or TextEmbedding.empty(), INTERACTION: text_pair or TextEmbedding.empty()}
    if len(schedule.pattern) == 1:
        text = texts[schedule.pattern[0]]
    else:
        text = combine_text(texts[schedule.pattern[0]], texts[schedule.pattern[1]])
    return _assemble(chunks, schedule, fps, text)


def compose_pattern(segments: list, pattern, total: int, texts: list | None = None) -> MotionBucket:
    """Generalized composition over an explicit segment list.

    `segments` holds one source per pattern tag: a MotionSequence for solo
    tags, an (x, y) pair for interaction tags. Each segment contributes an
    equal share of `total` frames (remainder to the last).
    """
    schedule = SegmentSchedule.from_pattern(pattern, total)
    if len(segments) != len(schedule.pattern):
        raise ScheduleError("one source per pattern segment required")

    fps = None
    chunks = []
    for (tag, start, stop), source in zip(schedule.segments(), segments):
        need = stop - start
        if tag == INTERACTION:
            if not isinstance(source, (tuple, list)) or len(source) != 2:
                raise SkeletonMismatch("interaction segments need an (x, y) pair")
            sx, sy = source
            fps = _check_canonical(sx, fps)
            _check_canonical(sy, fps)
            if sx.frames < need or sy.frames < need:
                raise ScheduleOverflow(f"interaction segment needs {need} frames")
            chunks.append((tag, sx.data[:need], sy.data[:need]))
        else:
            if isinstance(source, (tuple, list)):
                raise SkeletonMismatch("solo segments take a single sequence")
            fps = _check_canonical(source, fps)
            if source.frames < need:
                raise ScheduleOverflow(f"solo segment needs {need} frames")
            chunks.append((tag, source.data[:need], None))

    if texts:
        text = texts[0]
        for extra in texts[1:]:
            text = combine_text(text, extra)
    else:
        text = TextEmbedding.empty()
    return _assemble(chunks, schedule, fps, text)


def smooth_boundary(bucket: MotionBucket) -> MotionBucket:
    """Replace each boundary window with interpolated frames.

    Within [b-5, b+5] (clipped to the sequence), root positions are lerped
    between the window edges and each bone direction follows the geodesic
    between its edge directions with linearly spaced parameters; frames
    outside the windows are untouched. Applying it twice is a no-op.
    """
    sk = canonical_skeleton()
    new_channels = []
    for seq in (bucket.u_x, bucket.u_y):
        data = seq.data.copy()
        total = seq.frames
        for b in bucket.schedule.boundaries:
            lo = max(b - BOUNDARY_WINDOW, 0)
            hi = min(b + BOUNDARY_WINDOW, total - 1)
            if hi - lo < 2:
                continue
            t = (np.arange(lo + 1, hi) - lo) / (hi - lo)
            root = (1.0 - t)[:, None] * data[lo, 0] + t[:, None] * data[hi, 0]

            b0 = bone_vectors(data[lo : lo + 1], sk)[0, 1:]
            b1 = bone_vectors(data[hi : hi + 1], sk)[0, 1:]
            len0 = np.linalg.norm(b0, axis=-1)
            len1 = np.linalg.norm(b1, axis=-1)
            d0 = b0 / np.maximum(len0, 1e-12)[:, None]
            d1 = b1 / np.maximum(len1, 1e-12)[:, None]
            arc = quat.quat_between(d0, d1)
            ident = np.broadcast_to(quat.IDENTITY, arc.shape)
            n_mid = len(t)
            q_t = quat.slerp(
                np.broadcast_to(ident, (n_mid,) + arc.shape),
                np.broadcast_to(arc, (n_mid,) + arc.shape),
                np.broadcast_to(t[:, None], (n_mid, arc.shape[0])),
            )
            dirs = quat.rotate_vec(q_t, d0)
            lengths = (1.0 - t)[:, None] * len0 + t[:, None] * len1
            bones = np.zeros((n_mid, sk.joint_count, 3))
            bones[:, 1:] = dirs * lengths[:, :, None]
            data[lo + 1 : hi] = accumulate_bones(root, bones, sk)
        new_channels.append(MotionSequence.joint_space(data, fps=seq.fps))
    return replace(bucket, u_x=new_channels[0], u_y=new_channels[1])
