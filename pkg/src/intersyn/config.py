"""Run configuration: JSON schema validation plus schedule resolution.

Configs are strict: unknown keys are rejected everywhere, and the segment
start constraint (exactly one of t_i / t_s is zero, "random" counting as
nonzero) is enforced with a message citing the rule.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ConfigError
from .interleave import MIN_SEGMENT_FRAMES, SegmentSchedule

_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number", "minimum": 0}
_START = {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "random"}, {"type": "null"}]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _INT,
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pattern": {"type": "string", "pattern": "^[si](-[si])*$"},
                "t_i": _START,
                "t_s": _START,
                "T": _POS_INT,
                "seed": _INT,
            },
        },
        "interleave": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_buckets": _POS_INT},
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": _NUM,
                "epochs": _POS_INT,
                "batch_size": _POS_INT,
                "seed": _INT,
                "alternation": {"type": "string", "pattern": "^[0-9]+:[0-9]+$"},
            },
        },
        "loss_weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"l1": _NUM, "l2": _NUM, "l3": _NUM, "l4": _NUM},
        },
        "arch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "denoiser": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"layers": _POS_INT, "width": _POS_INT, "heads": _POS_INT},
                },
                "coordinator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"layers": _POS_INT, "width": _POS_INT, "heads": _POS_INT},
                },
            },
        },
        "diffusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["cosine", "linear"]},
                "steps": {"type": "integer", "minimum": 2},
            },
        },
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"substeps": _POS_INT, "eta": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_samples": _POS_INT, "diversity_pairs": _POS_INT, "extractor_seed": _INT},
        },
    },
}


def default_config() -> dict:
    return {
        "seed": 0,
        "schedule": {"pattern": "i-s", "t_i": 0, "t_s": "random", "T": 196, "seed": 0},
        "interleave": {"n_buckets": 16},
        "train": {
            "learning_rate": 1e-5,
            "epochs": 200,
            "batch_size": 8,
            "seed": 0,
            "alternation": "1:1",
        },
        "loss_weights": {"l1": 1.0, "l2": 0.1, "l3": 1.0, "l4": 0.5},
        "arch": {
            "denoiser": {"layers": 4, "width": 128, "heads": 4},
            "coordinator": {"layers": 2, "width": 128, "heads": 4},
        },
        "diffusion": {"kind": "cosine", "steps": 1000},
        "sampling": {"substeps": 50, "eta": 0.0},
        "eval": {"n_samples": 130, "diversity_pairs": 300, "extractor_seed": 0},
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _deep_merge(base[key], value)
        else:
            out[key] = value
    return out


def validate_config(doc: dict) -> dict:
    """Validate against the schema, then merge over defaults."""
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(doc), key=str)
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {first.message}")
    merged = _deep_merge(default_config(), doc)
    _check_schedule_block(merged["schedule"])
    return merged


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(doc)


def _is_zero(v) -> bool:
    return v == 0 and v != "random"


def _check_schedule_block(block: dict) -> None:
    t_i, t_s = block.get("t_i"), block.get("t_s")
    pattern = block["pattern"].split("-")
    if len(pattern) == 1:
        return  # degenerate single-segment schedules carry no boundary
    zeros = sum(1 for v in (t_i, t_s) if _is_zero(v))
    if zeros != 1:
        raise ConfigError(
            f"schedule violates the constraint t_i + t_s > 0 and t_i * t_s = 0 "
            f"(exactly one segment kind starts at frame 0): t_i={t_i!r}, t_s={t_s!r}"
        )
    first_tag = pattern[0]
    if _is_zero(t_i) and first_tag != "i":
        raise ConfigError(f"t_i = 0 requires the pattern to start with 'i', got {block['pattern']!r}")
    if _is_zero(t_s) and first_tag != "s":
        raise ConfigError(f"t_s = 0 requires the pattern to start with 's', got {block['pattern']!r}")


def resolve_schedule(block: dict, rng: np.random.Generator | None = None) -> SegmentSchedule:
    """Turn a config schedule block into a concrete SegmentSchedule.

    "random" draws the first boundary uniformly from the valid range; later
    boundaries split the remainder equally.
    """
    _check_schedule_block(block)
    pattern = block["pattern"].split("-")
    total = block["T"]
    if rng is None:
        rng = np.random.default_rng(block.get("seed", 0))
    if len(pattern) == 1:
        return SegmentSchedule.from_starts(
            0 if pattern[0] == "i" else None, 0 if pattern[0] == "s" else None, total
        )
    nonzero = block["t_s"] if _is_zero(block["t_i"]) else block["t_i"]
    if nonzero == "random":
        k = len(pattern)
        lo = MIN_SEGMENT_FRAMES
        hi = total - (k - 1) * MIN_SEGMENT_FRAMES
        if hi <= lo:
            raise ConfigError(f"no valid random boundary for {block['pattern']!r} over {total} frames")
        first_boundary = int(rng.integers(lo, hi + 1))
    else:
        first_boundary = int(nonzero)
    if len(pattern) == 2:
        if pattern[0] == "i":
            return SegmentSchedule.from_starts(0, first_boundary, total)
        return SegmentSchedule.from_starts(first_boundary, 0, total)
    return SegmentSchedule.from_pattern(pattern, total, first_boundary=first_boundary)
