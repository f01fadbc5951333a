"""Desk-scale evaluation: deterministic feature extractor, distributional
and retrieval metrics, and the segment-weighted hybrid scorer.

The extractor replaces the benchmark suites' learned evaluators with a
seeded random projection of temporal statistics, so none of the published
metric magnitudes are reproduction targets; the structural properties
(zero self-distance, retrieval consistency, symmetries) are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllMasked, ShapeMismatch, TooFewSamples
from .interleave import INTERACTION, MotionBucket, TextEmbedding
from .motion import FEATURE_DIM

EXTRACT_DIM = 128
MIN_FID_SAMPLES = 130  # covariance rank guard for 128-dim features
RPRECISION_DECOYS = 31


@dataclass(frozen=True)
class GaussianStats:
    """First two moments of a feature set."""

    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "GaussianStats":
        feats = np.asarray(feats, dtype=float)
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False))


def _projection(seed: int, rows: int, cols: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def extract(features: np.ndarray, extractor_seed: int = 0) -> np.ndarray:
    """Motion feature sequence (T, 263) -> a 128-dim descriptor.

    Statistics are the per-channel temporal mean plus the per-channel
    variance of the frame-to-frame differences (so frame order matters to
    the second half but not the first), passed through a seeded projection
    and tanh squashing.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"extract expects (T, {FEATURE_DIM}), got {f.shape}")
    mean = f.mean(axis=0)
    if f.shape[0] < 2:
        diff_var = np.zeros(FEATURE_DIM)
    else:
        diff_var = np.diff(f, axis=0).var(axis=0)
    stats = np.concatenate([mean, diff_var])
    w = _projection(extractor_seed, EXTRACT_DIM, 2 * FEATURE_DIM)
    return np.tanh(w @ stats)


def extract_text(text: TextEmbedding, extractor_seed: int = 0) -> np.ndarray:
    """Project a 512-dim text embedding into the same 128-dim space."""
    vec = text.vector if isinstance(text, TextEmbedding) else np.asarray(text, dtype=float)
    w = _projection(extractor_seed ^ 0x9E3779B9, EXTRACT_DIM, vec.shape[0])
    return np.tanh(w @ vec)


def _sqrt_trace_of_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """tr((Sa Sb)^(1/2)) via the symmetric form Sa^(1/2) Sb Sa^(1/2)."""
    vals_a, vecs_a = np.linalg.eigh((cov_a + cov_a.T) / 2.0)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ ((cov_b + cov_b.T) / 2.0) @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def fid(a: np.ndarray, b: np.ndarray) -> float:
    """Frechet distance between the Gaussian fits of two feature sets."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < MIN_FID_SAMPLES or len(b) < MIN_FID_SAMPLES:
        raise TooFewSamples(f"fid needs at least {MIN_FID_SAMPLES} samples per set")
    ga = GaussianStats.from_features(a)
    gb = GaussianStats.from_features(b)
    mean_term = float(np.sum((ga.mean - gb.mean) ** 2))
    trace_term = float(np.trace(ga.covariance) + np.trace(gb.covariance))
    return mean_term + trace_term - 2.0 * _sqrt_trace_of_product(ga.covariance, gb.covariance)


def r_precision(motion_feats, text_feats, k: int = 1, rng_seed: int = 0) -> float:
    """Fraction of samples whose true text ranks in the top k against 31
    seeded decoy texts (Euclidean distance ranking)."""
    motion = np.asarray(motion_feats, dtype=float)
    text = np.asarray(text_feats, dtype=float)
    if len(motion) != len(text) or len(motion) < RPRECISION_DECOYS + 1:
        raise TooFewSamples(f"r_precision needs >= {RPRECISION_DECOYS + 1} paired samples")
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    rng = np.random.default_rng(rng_seed)
    n = len(motion)
    hits = 0
    for i in range(n):
        decoys = rng.choice(np.delete(np.arange(n), i), size=RPRECISION_DECOYS, replace=False)
        pool = np.concatenate([[i], decoys])
        dists = np.linalg.norm(text[pool] - motion[i], axis=1)
        rank = int(np.argsort(dists, kind="stable").tolist().index(0))
        if rank < k:
            hits += 1
    return hits / n


def mm_dist(motion_feats, text_feats) -> float:
    """Mean Euclidean distance between paired motion and text features."""
    motion = np.asarray(motion_feats, dtype=float)
    text = np.asarray(text_feats, dtype=float)
    if motion.shape != text.shape:
        raise ShapeMismatch("mm_dist needs paired equally-shaped feature lists")
    return float(np.linalg.norm(motion - text, axis=1).mean())


def diversity(feats, pairs: int = 300, rng_seed: int = 0) -> float:
    """Mean distance over seeded disjoint random pairs."""
    feats = np.asarray(feats, dtype=float)
    n = len(feats)
    if n < 2:
        raise TooFewSamples("diversity needs at least two features")
    use = min(pairs, n // 2)
    perm = np.random.default_rng(rng_seed).permutation(n)
    first = feats[perm[:use]]
    second = feats[perm[use : 2 * use]]
    return float(np.linalg.norm(first - second, axis=1).mean())


def mmodality(per_text_samples: dict, rng_seed: int = 0, pairs_per_text: int = 10) -> float:
    """Within-prompt spread: mean distance over independently drawn sample
    pairs (with replacement) inside each text group, averaged over texts."""
    if not per_text_samples:
        raise TooFewSamples("mmodality needs at least one text group")
    rng = np.random.default_rng(rng_seed)
    totals = []
    for text in sorted(per_text_samples):
        feats = np.asarray(per_text_samples[text], dtype=float)
        if len(feats) < 10:
            raise TooFewSamples(f"text {text!r} has {len(feats)} samples; needs >= 10")
        i = rng.integers(0, len(feats), size=pairs_per_text)
        j = rng.integers(0, len(feats), size=pairs_per_text)
        totals.append(float(np.linalg.norm(feats[i] - feats[j], axis=1).mean()))
    return float(np.mean(totals))


def hybrid_score(bucket: MotionBucket, solo_scorer, pair_scorer) -> float:
    """Frame-weighted mix of the per-segment matching scores.

    Each segment is scored by the evaluator for its kind and weighted by
    its count of unmasked frames; boundary-window frames carry no weight.
    Scorers receive the segment's feature slices: pair_scorer(x, y) on
    interaction segments, solo_scorer(x) on solo segments.
    """
    mask = bucket.boundary_mask
    total_weight = 0.0
    total = 0.0
    for tag, start, stop in bucket.schedule.segments():
        weight = int((~mask[start:stop]).sum())
        if weight == 0:
            continue
        x = bucket.u_x.data[start:stop]
        if tag == INTERACTION:
            score = float(pair_scorer(x, bucket.u_y.data[start:stop]))
        else:
            score = float(solo_scorer(x))
        total += weight * score
        total_weight += weight
    if total_weight == 0:
        raise AllMasked("every frame of the bucket is boundary-masked")
    return total / total_weight
