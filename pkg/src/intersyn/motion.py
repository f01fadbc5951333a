"""Motion containers and the MSEQ-JSON file format.

A MotionSequence is either joint-space (T x K x 3 global positions, meters)
or feature-space (T x 263 per-frame vectors). MSEQ-JSON is the on-disk
format: a single JSON object carrying fps, the skeleton, the layout tag and
the row-major data. Pair files stack two characters on a leading axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeMismatch, WrongWidth

FEATURE_DIM = 263
MSEQ_VERSION = "1"
DEFAULT_FPS = 20.0

JOINT = "joint"
FEATURE = "feature"


@dataclass(frozen=True)
class RootState:
    """Per-frame (or single-frame) root position plus heading about vertical.

    Heading is wrapped to (-pi, pi]; position is (..., 3) in meters.
    """

    position: np.ndarray
    heading: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        heading = wrap_angle(np.asarray(self.heading, dtype=float))
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", heading)


def wrap_angle(a):
    """Wrap radians into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MotionSequence:
    """Dense per-frame motion data tagged with its layout."""

    data: np.ndarray
    layout: str
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        if self.layout == JOINT:
            if data.ndim != 3 or data.shape[2] != 3:
                raise ShapeMismatch(f"joint-space data must be (T, K, 3), got {data.shape}")
        elif self.layout == FEATURE:
            if data.ndim != 2 or data.shape[1] != FEATURE_DIM:
                raise WrongWidth(f"feature-space data must be (T, {FEATURE_DIM}), got {data.shape}")
        else:
            raise ValueError(f"unknown layout {self.layout!r}")
        if data.shape[0] < 1:
            raise ShapeMismatch("a sequence needs at least one frame")
        if not np.all(np.isfinite(data)):
            raise ValueError("sequence contains non-finite values")

    @classmethod
    def joint_space(cls, data, fps: float = DEFAULT_FPS) -> "MotionSequence":
        return cls(np.asarray(data, dtype=float), JOINT, fps)

    @classmethod
    def feature_space(cls, data, fps: float = DEFAULT_FPS) -> "MotionSequence":
        return cls(np.asarray(data, dtype=float), FEATURE, fps)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joint_count(self) -> int:
        if self.layout != JOINT:
            raise ShapeMismatch("joint_count is only defined for joint-space sequences")
        return self.data.shape[1]

    def slice_frames(self, start: int, stop: int) -> "MotionSequence":
        return MotionSequence(self.data[start:stop].copy(), self.layout, self.fps)


def mseq_save(path, data: np.ndarray, layout: str, skeleton, fps: float = DEFAULT_FPS) -> None:
    """Write MSEQ-JSON. `data` may be (T,K,3), (T,263) or a pair with a
    leading axis of 2."""
    data = np.asarray(data, dtype=float)
    doc = {
        "version": MSEQ_VERSION,
        "fps": float(fps),
        "skeleton": {
            "parents": [int(p) for p in skeleton.parents],
            "offsets": [[float(v) for v in row] for row in skeleton.offsets],
        },
        "layout": layout,
        "data": data.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def mseq_load(path):
    """Read MSEQ-JSON; returns (data, layout, skeleton, fps).

    Unknown versions are rejected. `data` keeps the on-disk rank, so pair
    files come back with the leading axis of 2.
    """
    from .skeleton import Skeleton  # local import to avoid a module cycle

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != MSEQ_VERSION:
        raise FormatError(f"{path}: unknown MSEQ version {doc.get('version')!r}")
    for key in ("fps", "skeleton", "layout", "data"):
        if key not in doc:
            raise FormatError(f"{path}: missing field {key!r}")
    layout = doc["layout"]
    if layout not in (JOINT, FEATURE):
        raise FormatError(f"{path}: unknown layout {layout!r}")
    sk = Skeleton(np.array(doc["skeleton"]["parents"]), np.array(doc["skeleton"]["offsets"]))
    data = np.asarray(doc["data"], dtype=float)
    expect_rank = 3 if layout == JOINT else 2
    if data.ndim not in (expect_rank, expect_rank + 1):
        raise FormatError(f"{path}: data rank {data.ndim} does not fit layout {layout!r}")
    if data.ndim == expect_rank + 1 and data.shape[0] != 2:
        raise FormatError(f"{path}: pair files must have a leading axis of 2")
    return data, layout, sk, float(doc["fps"])
