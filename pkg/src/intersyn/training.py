"""Two-stage optimization: the denoiser first, then the frozen-denoiser
coordinator.

Stage 1 trains the denoiser with weighted reconstruction + boundary
smoothness on noised buckets, alternating interleaved batches with
solo-only batches (which contribute reconstruction only, having no
boundaries). Stage 2 freezes the denoiser, runs it on noised ground truth
to get predicted buckets, refines them with the coordinator, and steps the
coordinator on the relative-coordination and distance-map terms; the
stage-1 objective is still evaluated for reporting.
"""

from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .diffusion import DiffusionSchedule, make_schedule
from .errors import DivergenceDetected, FormatError, ShapeMismatch
from .features import encode_features, root_state_of
from .interleave import MotionBucket, SegmentSchedule, TextEmbedding, rest_pose_frame
from .losses import loss_dm, loss_rec, loss_rela, loss_smooth
from .motion import FEATURE_DIM, MotionSequence
from .networks import (
    BUCKET_DIM,
    Conditioning,
    CoordinatorArch,
    CoordinatorParams,
    DenoiserArch,
    DenoiserParams,
    denoise,
    init_coordinator,
    init_denoiser,
    refine_pair,
)

CHECKPOINT_MAGIC = b"ISYN"
STD_FLOOR = 1e-3


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    l2: float = 0.1
    l3: float = 1.0
    l4: float = 0.5

    def __post_init__(self):
        if min(self.l1, self.l2, self.l3, self.l4) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 200  # desk default; the full-scale preset is 2000
    batch_size: int = 8
    seed: int = 0
    alternation: tuple = (1, 1)  # interleaved : solo batches per cycle

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        object.__setattr__(self, "alternation", tuple(int(v) for v in self.alternation))
        if min(self.alternation) < 0 or sum(self.alternation) == 0:
            raise ValueError("alternation ratio needs at least one positive entry")


@dataclass(frozen=True)
class TrainingSample:
    """One bucket flattened for the denoiser, plus everything the losses need."""

    x0: np.ndarray  # (T, 526) raw (un-normalized) features
    mask: np.ndarray  # (T,) True = excluded from reconstruction
    boundaries: tuple
    text: np.ndarray  # (512,)
    t_i: int | None
    t_s: int | None
    anchors: tuple  # ((x, y, heading), (x, y, heading))
    kind: str  # "interleaved" | "solo"


def bucket_to_sample(bucket: MotionBucket) -> TrainingSample:
    """Encode a joint-space bucket into a training sample."""
    fx = encode_features(bucket.u_x)
    fy = encode_features(bucket.u_y)
    ax = _anchor_of(bucket.u_x)
    ay = _anchor_of(bucket.u_y)
    x0 = np.concatenate([fx.data, fy.data], axis=-1)
    return TrainingSample(
        x0,
        bucket.boundary_mask.copy(),
        tuple(bucket.schedule.boundaries),
        bucket.text.vector.copy(),
        bucket.schedule.t_i,
        bucket.schedule.t_s,
        (ax, ay),
        "interleaved" if len(bucket.schedule.pattern) > 1 else "solo",
    )


def solo_to_sample(seq: MotionSequence, text: TextEmbedding) -> TrainingSample:
    """A solo clip as a degenerate bucket: the partner idles in rest pose."""
    frames = seq.frames
    partner = MotionSequence.joint_space(np.tile(rest_pose_frame()[None], (frames, 1, 1)), fps=seq.fps)
    fx = encode_features(seq)
    fy = encode_features(partner)
    return TrainingSample(
        np.concatenate([fx.data, fy.data], axis=-1),
        np.zeros(frames, dtype=bool),
        (),
        text.vector.copy(),
        None,
        0,
        (_anchor_of(seq), _anchor_of(partner)),
        "solo",
    )


def _anchor_of(seq: MotionSequence) -> tuple:
    rs = root_state_of(seq)
    return (float(seq.data[0, 0, 0]), float(seq.data[0, 0, 1]), float(np.atleast_1d(rs.heading)[0]))


@dataclass(frozen=True)
class FeatureStats:
    """Per-channel normalization, shared by both characters."""

    mean: np.ndarray  # (263,)
    std: np.ndarray  # (263,)

    @classmethod
    def from_samples(cls, samples: list) -> "FeatureStats":
        stacked = np.concatenate(
            [s.x0[:, :FEATURE_DIM] for s in samples] + [s.x0[:, FEATURE_DIM:] for s in samples]
        )
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), STD_FLOOR)
        return cls(mean, std)

    @property
    def bucket_mean(self) -> np.ndarray:
        return np.concatenate([self.mean, self.mean])

    @property
    def bucket_std(self) -> np.ndarray:
        return np.concatenate([self.std, self.std])

    def normalize(self, x: np.ndarray) -> np.ndarray:
        wide = x.shape[-1] == BUCKET_DIM
        return (x - (self.bucket_mean if wide else self.mean)) / (self.bucket_std if wide else self.std)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        wide = x.shape[-1] == BUCKET_DIM
        return x * (self.bucket_std if wide else self.std) + (self.bucket_mean if wide else self.mean)


# -- optimizer -----------------------------------------------------------------


class Adam:
    """Plain Adam with bias correction; fully deterministic."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- stage losses ---------------------------------------------------------------


def loss_stage1(pred: Tensor, batch: list, weights: LossWeights) -> tuple:
    """Weighted reconstruction + boundary smoothness on a denoised batch.

    `pred` is (B, T, 526); targets and masks come from the (normalized)
    batch samples. Returns (total, rec_value, smooth_value).
    """
    x0 = np.stack([s.x0 for s in batch])
    mask = np.stack([s.mask for s in batch])
    rec = loss_rec(pred, x0, mask)
    smooth = Tensor(0.0)
    n_windows = 0
    for i, s in enumerate(batch):
        if s.boundaries:
            smooth = smooth + loss_smooth(pred[i], s.boundaries)
            n_windows += 1
    if n_windows:
        smooth = smooth * (1.0 / n_windows)
    total = weights.l1 * rec + weights.l2 * smooth
    return total, float(rec.data), float(smooth.data)


def loss_stage2(phi_x: Tensor, phi_y: Tensor, u_hat: np.ndarray, batch: list, stats: FeatureStats, weights: LossWeights) -> tuple:
    """Coordination objective: lambda3 * rela + lambda4 * dm (vs ground truth).

    `u_hat` is the frozen denoiser's normalized output; the distance-map
    term runs in de-normalized feature space with per-sample anchors.
    """
    rela = loss_rela(phi_y, u_hat[..., FEATURE_DIM:])
    dm = Tensor(0.0)
    for i, s in enumerate(batch):
        phi_x_raw = phi_x[i] * stats.std + stats.mean
        uy_raw = u_hat[i, :, FEATURE_DIM:] * stats.std + stats.mean
        dm = dm + loss_dm(
            phi_x_raw,
            uy_raw,
            (s.x0[:, :FEATURE_DIM], s.x0[:, FEATURE_DIM:]),
            anchors=s.anchors,
        )
    dm = dm * (1.0 / len(batch))
    total = weights.l3 * rela + weights.l4 * dm
    return total, float(rela.data), float(dm.data)


# -- training loops -------------------------------------------------------------


def _batches(order: np.ndarray, size: int):
    for lo in range(0, len(order), size):
        yield order[lo : lo + size]


def _conditioning(batch: list) -> Conditioning:
    return Conditioning.create(
        [s.text for s in batch], [s.t_i for s in batch], [s.t_s for s in batch]
    )


def _noise_batch(batch: list, stats: FeatureStats, sched: DiffusionSchedule, rng) -> tuple:
    x0 = np.stack([stats.normalize(s.x0) for s in batch])
    t = rng.integers(0, sched.steps, size=len(batch))
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bar[t][:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x0, x_t, t


def train_stage1(
    samples: list,
    config: TrainConfig,
    arch: DenoiserArch,
    sched: DiffusionSchedule,
    weights: LossWeights,
    log=None,
) -> tuple:
    """Returns (params, stats, loss_history)."""
    interleaved = [s for s in samples if s.kind == "interleaved"]
    solo = [s for s in samples if s.kind == "solo"]
    if not interleaved and not solo:
        raise ValueError("no training samples")
    stats = FeatureStats.from_samples(samples)
    params = init_denoiser(arch, config.seed)
    vector = params.vector.copy()
    optimizer = Adam(vector.size, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = []

    n_int, n_solo = config.alternation
    for epoch in range(config.epochs):
        plan = []
        if interleaved:
            order = rng.permutation(len(interleaved))
            plan += [("interleaved", idx) for idx in _batches(order, config.batch_size)]
        if solo and n_solo > 0:
            order = rng.permutation(len(solo))
            solo_batches = [("solo", idx) for idx in _batches(order, config.batch_size)]
            merged = []
            si = 0
            for i, entry in enumerate(plan):
                merged.append(entry)
                if n_int and (i + 1) % n_int == 0:
                    merged += solo_batches[si : si + n_solo]
                    si += n_solo
            merged += solo_batches[si:]
            plan = merged or solo_batches
        elif not plan:
            plan = [("solo", idx) for idx in _batches(rng.permutation(len(solo)), config.batch_size)]

        epoch_logs = []
        t_start = time.perf_counter()
        for kind, idx in plan:
            batch = [interleaved[i] if kind == "interleaved" else solo[i] for i in idx]
            x0_norm, x_t, t = _noise_batch(batch, stats, sched, rng)
            cond = _conditioning(batch)
            norm_batch = [
                TrainingSample(x0_norm[i], b.mask, b.boundaries, b.text, b.t_i, b.t_s, b.anchors, b.kind)
                for i, b in enumerate(batch)
            ]

            def loss_fn(leaf):
                pred = denoise(DenoiserParams(leaf, arch), x_t, cond, t)
                total, rec, smooth = loss_stage1(pred, norm_batch, weights)
                loss_fn.parts = (rec, smooth)
                return total

            leaf = Tensor(vector, requires_grad=True)
            loss = loss_fn(leaf)
            loss.backward()
            if not np.isfinite(loss.data) or not np.all(np.isfinite(leaf.grad)):
                raise DivergenceDetected(f"non-finite stage-1 loss at epoch {epoch}")
            vector = optimizer.step(vector, leaf.grad)
            epoch_logs.append((float(loss.data),) + loss_fn.parts)

        wall_ms = (time.perf_counter() - t_start) * 1000.0
        avg = np.mean(np.array(epoch_logs), axis=0)
        record = {
            "stage": 1,
            "epoch": epoch,
            "loss_total": float(avg[0]),
            "loss_rec": float(avg[1]),
            "loss_smooth": float(avg[2]),
            "loss_rela": None,
            "loss_dm": None,
            "wall_ms": wall_ms,
        }
        history.append(record)
        if log is not None:
            log(record)
    return DenoiserParams(vector, arch), stats, history


def train_stage2(
    samples: list,
    config: TrainConfig,
    ms_params: DenoiserParams,
    stats: FeatureStats,
    arch: CoordinatorArch,
    sched: DiffusionSchedule,
    weights: LossWeights,
    log=None,
) -> tuple:
    """Frozen-denoiser coordinator training; returns (params, history)."""
    pairs = [s for s in samples if s.kind == "interleaved"]
    if not pairs:
        raise ValueError("stage 2 needs interleaved pair samples")
    params = init_coordinator(arch, config.seed + 1)
    vector = params.vector.copy()
    optimizer = Adam(vector.size, config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)
    history = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        epoch_logs = []
        t_start = time.perf_counter()
        for idx in _batches(order, config.batch_size):
            batch = [pairs[i] for i in idx]
            x0_norm, x_t, t = _noise_batch(batch, stats, sched, rng)
            cond = _conditioning(batch)
            u_hat = denoise(ms_params, x_t, cond, t).data  # frozen: plain numpy out
            texts = np.stack([s.text for s in batch])

            def loss_fn(leaf):
                mc = CoordinatorParams(leaf, arch)
                phi_x, phi_y = refine_pair(
                    Tensor(u_hat[..., :FEATURE_DIM]), Tensor(u_hat[..., FEATURE_DIM:]), mc, texts
                )
                total, rela, dm = loss_stage2(phi_x, phi_y, u_hat, batch, stats, weights)
                loss_fn.parts = (rela, dm)
                return total

            leaf = Tensor(vector, requires_grad=True)
            loss = loss_fn(leaf)
            loss.backward()
            if not np.isfinite(loss.data) or not np.all(np.isfinite(leaf.grad)):
                raise DivergenceDetected(f"non-finite stage-2 loss at epoch {epoch}")
            vector = optimizer.step(vector, leaf.grad)

            # Stage-1 objective on the frozen prediction, for reporting only.
            norm_batch = [
                TrainingSample(x0_norm[i], b.mask, b.boundaries, b.text, b.t_i, b.t_s, b.anchors, b.kind)
                for i, b in enumerate(batch)
            ]
            _, rec_rep, smooth_rep = loss_stage1(Tensor(u_hat), norm_batch, weights)
            epoch_logs.append((float(loss.data),) + loss_fn.parts + (rec_rep, smooth_rep))

        wall_ms = (time.perf_counter() - t_start) * 1000.0
        avg = np.mean(np.array(epoch_logs), axis=0)
        record = {
            "stage": 2,
            "epoch": epoch,
            "loss_total": float(avg[0]),
            "loss_rec": float(avg[3]),
            "loss_smooth": float(avg[4]),
            "loss_rela": float(avg[1]),
            "loss_dm": float(avg[2]),
            "wall_ms": wall_ms,
        }
        history.append(record)
        if log is not None:
            log(record)
    return CoordinatorParams(vector, arch), history


def train(stage: int, config: TrainConfig, data: dict, log=None):
    """Stage dispatcher working on a dict of prepared pieces.

    Stage 1 needs data = {samples, arch, schedule, weights}; stage 2 adds
    {ms_params, stats, coordinator_arch}. Returns a Checkpoint.
    """
    sched = data["schedule"]
    weights = data.get("weights", LossWeights())
    if stage == 1:
        params, stats, history = train_stage1(data["samples"], config, data["arch"], sched, weights, log)
        return Checkpoint(
            stage=1,
            seed=config.seed,
            schedule=sched.to_dict(),
            denoiser_arch=params.arch.to_dict(),
            coordinator_arch=None,
            mean=stats.mean,
            std=stats.std,
            frames=int(data["samples"][0].x0.shape[0]),
            fps=float(data.get("fps", 20.0)),
            denoiser_vector=params.vector,
            coordinator_vector=None,
            history=history,
        )
    if stage == 2:
        ms = data["ms_params"]
        params, history = train_stage2(
            data["samples"], config, ms, data["stats"], data["coordinator_arch"], sched, weights, log
        )
        return Checkpoint(
            stage=2,
            seed=config.seed,
            schedule=sched.to_dict(),
            denoiser_arch=ms.arch.to_dict(),
            coordinator_arch=params.arch.to_dict(),
            mean=data["stats"].mean,
            std=data["stats"].std,
            frames=int(data["samples"][0].x0.shape[0]),
            fps=float(data.get("fps", 20.0)),
            denoiser_vector=ms.vector,
            coordinator_vector=params.vector,
            history=history,
        )
    raise ValueError("stage must be 1 or 2")


# -- checkpoints ----------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    stage: int
    seed: int
    schedule: dict
    denoiser_arch: dict
    coordinator_arch: dict | None
    mean: np.ndarray
    std: np.ndarray
    frames: int
    fps: float
    denoiser_vector: np.ndarray
    coordinator_vector: np.ndarray | None
    history: list = field(default_factory=list, compare=False)

    def denoiser_params(self) -> DenoiserParams:
        return DenoiserParams(self.denoiser_vector, DenoiserArch(**self.denoiser_arch))

    def coordinator_params(self) -> CoordinatorParams | None:
        if self.coordinator_vector is None:
            return None
        return CoordinatorParams(self.coordinator_vector, CoordinatorArch(**self.coordinator_arch))

    def stats(self) -> FeatureStats:
        return FeatureStats(self.mean, self.std)

    def diffusion_schedule(self) -> DiffusionSchedule:
        return make_schedule(self.schedule["kind"], self.schedule["steps"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Header JSON + little-endian float32 payload + trailing CRC32."""
    header = {
        "format": 1,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "schedule": ckpt.schedule,
        "denoiser_arch": ckpt.denoiser_arch,
        "coordinator_arch": ckpt.coordinator_arch,
        "mean": [float(v) for v in ckpt.mean],
        "std": [float(v) for v in ckpt.std],
        "frames": ckpt.frames,
        "fps": ckpt.fps,
        "denoiser_size": int(ckpt.denoiser_vector.size),
        "coordinator_size": int(ckpt.coordinator_vector.size) if ckpt.coordinator_vector is not None else 0,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = ckpt.denoiser_vector.astype("<f4").tobytes()
    if ckpt.coordinator_vector is not None:
        payload += ckpt.coordinator_vector.astype("<f4").tobytes()
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_bytes = blob[8 : 8 + header_len]
    payload = blob[8 + header_len : -4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc_stored:
        raise FormatError(f"{path}: CRC mismatch, checkpoint is corrupt")
    header = json.loads(header_bytes.decode("utf-8"))
    if header.get("format") != 1:
        raise FormatError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    values = np.frombuffer(payload, dtype="<f4").astype(float)
    d_size = header["denoiser_size"]
    c_size = header["coordinator_size"]
    if values.size != d_size + c_size:
        raise FormatError(f"{path}: payload size mismatch")
    return Checkpoint(
        stage=header["stage"],
        seed=header["seed"],
        schedule=header["schedule"],
        denoiser_arch=header["denoiser_arch"],
        coordinator_arch=header["coordinator_arch"],
        mean=np.array(header["mean"]),
        std=np.array(header["std"]),
        frames=header["frames"],
        fps=header["fps"],
        denoiser_vector=values[:d_size],
        coordinator_vector=values[d_size:] if c_size else None,
    )
