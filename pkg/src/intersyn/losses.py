"""Loss terms: masked reconstruction, boundary smoothness, relative
coordination, and the masked inter-character joint distance map.

All four are built from autodiff primitives so their exact gradients flow
into whichever network produced the inputs. The distance-map loss decodes
recursive features to world-space joints differentiably; each character is
re-anchored at its stored frame-0 planar state so the pair shares a frame.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, stack
from .errors import AllMasked, DecodeFailure, ShapeMismatch
from .features import HEIGHT, LIN_VEL, LOCAL_POS, ROT_VEL
from .motion import FEATURE_DIM

DM_THRESHOLD = 1.0  # meters; target joint pairs closer than this are scored


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def loss_rec(pred, target, mask=None) -> Tensor:
    """Mean squared error over unmasked frames (mask True = excluded)."""
    pred = _lift(pred)
    target = _lift(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    frames_axis = pred.ndim - 2
    if mask is None:
        keep = np.ones(pred.shape[: frames_axis + 1], dtype=bool)
    else:
        keep = ~np.asarray(mask, dtype=bool)
        if keep.shape != pred.shape[: frames_axis + 1]:
            keep = np.broadcast_to(keep, pred.shape[: frames_axis + 1])
    kept = int(keep.sum())
    if kept == 0:
        raise AllMasked("every frame is masked; the reconstruction loss is undefined")
    diff = pred - target
    weighted = diff * diff * keep[..., None].astype(float)
    return weighted.sum() * (1.0 / (kept * pred.shape[-1]))


def loss_smooth(u, boundaries) -> Tensor:
    """Summed L1 forward difference inside each boundary window.

    Windows span [b-5, b+5] clipped so the forward difference stays inside
    the sequence; the total is normalized by the channel count only.
    """
    u = _lift(u)
    if u.ndim != 2:
        raise ShapeMismatch("loss_smooth expects a single (T, C) sequence")
    frames, channels = u.shape
    total = Tensor(0.0)
    for b in boundaries:
        lo = max(b - 5, 0)
        hi = min(b + 5, frames - 2)
        if hi < lo:
            continue
        diff = u[lo + 1 : hi + 2] - u[lo : hi + 1]
        total = total + diff.abs().sum()
    return total * (1.0 / channels)


def loss_rela(phi_y, u_y_hat) -> Tensor:
    """Root-mean-square deviation between the refined and raw partner."""
    phi_y = _lift(phi_y)
    u_y_hat = _lift(u_y_hat)
    if phi_y.shape != u_y_hat.shape:
        raise ShapeMismatch(f"phi_y {phi_y.shape} vs u_y_hat {u_y_hat.shape}")
    diff = phi_y - u_y_hat
    return (diff * diff).mean().sqrt()


def decode_joints(features, anchor=(0.0, 0.0, 0.0)) -> Tensor:
    """Differentiable feature -> world joint positions decode.

    Mirrors decode_features for positions only: integrates heading and
    planar velocity from the (x, y, heading) anchor, then re-anchors the
    frame-local joint offsets. Returns (T, 22, 3).
    """
    f = _lift(features)
    if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
        raise DecodeFailure(f"expected (T, {FEATURE_DIM}) features, got {f.shape}")
    frames = f.shape[0]
    x0, y0, theta0 = (float(v) for v in anchor)

    rot_vel = f[:, ROT_VEL].reshape(frames)
    inc = rot_vel.cumsum(0)
    heading = concat([Tensor(np.zeros(1)), inc[: frames - 1]], axis=0) + theta0
    c = heading.cos()
    s = heading.sin()

    vel = f[:, LIN_VEL]
    vx, vy = vel[:, 0], vel[:, 1]
    wx = c * vx - s * vy
    wy = s * vx + c * vy
    px = concat([Tensor(np.zeros(1)), wx.cumsum(0)[: frames - 1]], axis=0) + x0
    py = concat([Tensor(np.zeros(1)), wy.cumsum(0)[: frames - 1]], axis=0) + y0

    height = f[:, HEIGHT].reshape(frames)
    root = stack([px, py, height], axis=1).reshape(frames, 1, 3)

    local = f[:, LOCAL_POS].reshape(frames, 21, 3)
    lx, ly, lz = local[:, :, 0], local[:, :, 1], local[:, :, 2]
    gx = c.reshape(frames, 1) * lx - s.reshape(frames, 1) * ly + px.reshape(frames, 1)
    gy = s.reshape(frames, 1) * lx + c.reshape(frames, 1) * ly + py.reshape(frames, 1)
    joints = stack([gx, gy, lz], axis=2)
    out = concat([root, joints], axis=1)
    if not np.all(np.isfinite(out.data)):
        raise DecodeFailure("decoded joint positions are non-finite")
    return out


def _cross_distances(a: Tensor, b: Tensor) -> Tensor:
    """(T, K, K) distances between every joint of a and every joint of b."""
    frames, k, _ = a.shape
    diff = a.reshape(frames, k, 1, 3) - b.reshape(frames, 1, k, 3)
    return (diff * diff).sum(axis=-1).sqrt()


def loss_dm(phi_x, u_y_hat, target_pair, threshold: float = DM_THRESHOLD, anchors=None) -> Tensor:
    """Masked joint distance-map loss against the ground-truth pair.

    Builds the per-frame inter-character distance matrix for the predicted
    pair and for the target pair; entries where the target distance is
    below `threshold` are compared by absolute difference. Anchors give
    each character's frame-0 planar state (defaults to the origin).
    """
    if anchors is None:
        anchors = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    ax, ay = anchors
    joints_x = decode_joints(phi_x, ax)
    joints_y = decode_joints(u_y_hat, ay)
    gt_x, gt_y = target_pair
    gt_jx = decode_joints(_lift(gt_x), ax)
    gt_jy = decode_joints(_lift(gt_y), ay)

    pred_d = _cross_distances(joints_x, joints_y)
    target_d = _cross_distances(gt_jx, gt_jy)
    mask = (target_d.data < threshold).astype(float)
    count = float(mask.sum())
    if count == 0.0:
        return Tensor(0.0)
    return ((pred_d - target_d).abs() * mask).sum() * (1.0 / count)
