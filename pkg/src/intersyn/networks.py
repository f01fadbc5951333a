"""Toy transformer denoiser and coordinator with exact gradients.

Both networks live in flat parameter vectors with deterministic seeded
initialization. The denoiser consumes a noised bucket laid out as
(T, 526), the two characters' 263-channel features concatenated along
channels, plus prepended conditioning tokens (text, both segment starts,
diffusion step). The coordinator refines one character's stream against a
reference stream through cross-attention; its output head and cross-
attention output projections start at zero, so the freshly initialized
coordinator is exactly the identity map on its primary input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, layer_norm
from .errors import NonFinite, ShapeMismatch
from .interleave import TEXT_DIM, TextEmbedding
from .motion import FEATURE_DIM

BUCKET_DIM = 2 * FEATURE_DIM  # both characters, channel-concatenated
EMBED_DIM = 64  # sinusoidal embedding width for integer conditions
MLP_RATIO = 4

# Sinusoidal input for a segment kind that never starts (degenerate
# schedules); far outside any real frame index.
ABSENT_SEGMENT = 4096


def sinusoidal_embedding(values, dim: int = EMBED_DIM) -> np.ndarray:
    """Classic fixed sin/cos embedding of integers (or floats)."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = values[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def positional_encoding(length: int, dim: int) -> np.ndarray:
    return sinusoidal_embedding(np.arange(length), dim)


@dataclass(frozen=True)
class Conditioning:
    """Batched conditioning: text vectors plus segment-start embeddings."""

    text: np.ndarray  # (B, 512)
    ti_embed: np.ndarray  # (B, 64)
    ts_embed: np.ndarray  # (B, 64)

    @classmethod
    def create(cls, texts, t_i, t_s) -> "Conditioning":
        """Build from per-sample texts and (possibly None) segment starts."""
        if isinstance(texts, TextEmbedding):
            texts = [texts]
        vecs = np.stack([t.vector if isinstance(t, TextEmbedding) else np.asarray(t, float) for t in texts])
        t_i = [t_i] if np.isscalar(t_i) or t_i is None else list(t_i)
        t_s = [t_s] if np.isscalar(t_s) or t_s is None else list(t_s)
        ti = np.array([ABSENT_SEGMENT if v is None else v for v in t_i], dtype=float)
        ts = np.array([ABSENT_SEGMENT if v is None else v for v in t_s], dtype=float)
        if not (len(ti) == len(ts) == len(vecs)):
            raise ShapeMismatch("conditioning fields must share the batch size")
        return cls(vecs, sinusoidal_embedding(ti), sinusoidal_embedding(ts))

    @property
    def batch(self) -> int:
        return self.text.shape[0]


# -- parameter layout ---------------------------------------------------------


@dataclass(frozen=True)
class DenoiserArch:
    layers: int = 4
    width: int = 128
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")

    def to_dict(self):
        return {"layers": self.layers, "width": self.width, "heads": self.heads}


@dataclass(frozen=True)
class CoordinatorArch:
    layers: int = 2
    width: int = 128
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")

    def to_dict(self):
        return {"layers": self.layers, "width": self.width, "heads": self.heads}


def _attn_block(prefix: str, w: int) -> list:
    return [
        (f"{prefix}.q_w", (w, w)),
        (f"{prefix}.q_b", (w,)),
        (f"{prefix}.k_w", (w, w)),
        (f"{prefix}.k_b", (w,)),
        (f"{prefix}.v_w", (w, w)),
        (f"{prefix}.v_b", (w,)),
        (f"{prefix}.o_w", (w, w)),
        (f"{prefix}.o_b", (w,)),
    ]


def _mlp_block(prefix: str, w: int) -> list:
    return [
        (f"{prefix}.w1", (w, MLP_RATIO * w)),
        (f"{prefix}.b1", (MLP_RATIO * w,)),
        (f"{prefix}.w2", (MLP_RATIO * w, w)),
        (f"{prefix}.b2", (w,)),
    ]


def _ln(prefix: str, w: int) -> list:
    return [(f"{prefix}.g", (w,)), (f"{prefix}.b", (w,))]


def denoiser_layout(arch: DenoiserArch) -> list:
    w = arch.width
    layout = [
        ("in_w", (BUCKET_DIM, w)),
        ("in_b", (w,)),
        ("text_w", (TEXT_DIM, w)),
        ("text_b", (w,)),
        ("ti_w", (EMBED_DIM, w)),
        ("ti_b", (w,)),
        ("ts_w", (EMBED_DIM, w)),
        ("ts_b", (w,)),
        ("step_w", (EMBED_DIM, w)),
        ("step_b", (w,)),
    ]
    for l in range(arch.layers):
        layout += _ln(f"l{l}.ln1", w) + _attn_block(f"l{l}.attn", w)
        layout += _ln(f"l{l}.ln2", w) + _mlp_block(f"l{l}.mlp", w)
    layout += _ln("out_ln", w) + [("out_w", (w, BUCKET_DIM)), ("out_b", (BUCKET_DIM,))]
    return layout


def coordinator_layout(arch: CoordinatorArch) -> list:
    w = arch.width
    layout = [
        ("prim_w", (FEATURE_DIM, w)),
        ("prim_b", (w,)),
        ("ref_w", (FEATURE_DIM, w)),
        ("ref_b", (w,)),
        ("text_w", (TEXT_DIM, w)),
        ("text_b", (w,)),
    ]
    for l in range(arch.layers):
        layout += _ln(f"l{l}.ln1", w) + _attn_block(f"l{l}.self", w)
        layout += _ln(f"l{l}.ln2", w) + _ln(f"l{l}.lnr", w) + _attn_block(f"l{l}.cross", w)
        layout += _ln(f"l{l}.ln3", w) + _mlp_block(f"l{l}.mlp", w)
    layout += _ln("out_ln", w) + [("out_w", (w, FEATURE_DIM)), ("out_b", (FEATURE_DIM,))]
    return layout


def layout_size(layout: list) -> int:
    return sum(int(np.prod(shape)) for _, shape in layout)


def _init_vector(layout: list, seed: int, zero_names: tuple) -> np.ndarray:
    """Fan-in scaled Gaussian init; norms gamma=1/beta=0; listed heads zero."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in layout:
        leaf = name.rsplit(".", 1)[-1]
        if any(name.startswith(z) or name.endswith(z) for z in zero_names):
            parts.append(np.zeros(int(np.prod(shape))))
        elif leaf == "g":
            parts.append(np.ones(int(np.prod(shape))))
        elif len(shape) == 1:
            parts.append(np.zeros(shape[0]))
        else:
            fan_in = shape[0]
            parts.append(rng.standard_normal(int(np.prod(shape))) / np.sqrt(fan_in))
    return np.concatenate(parts)


@dataclass(frozen=True)
class DenoiserParams:
    vector: np.ndarray
    arch: DenoiserArch

    def __post_init__(self):
        expect = layout_size(denoiser_layout(self.arch))
        if self.vector.shape != (expect,):
            raise ShapeMismatch(f"denoiser expects {expect} parameters, got {self.vector.shape}")


@dataclass(frozen=True)
class CoordinatorParams:
    vector: np.ndarray
    arch: CoordinatorArch

    def __post_init__(self):
        expect = layout_size(coordinator_layout(self.arch))
        if self.vector.shape != (expect,):
            raise ShapeMismatch(f"coordinator expects {expect} parameters, got {self.vector.shape}")


def init_denoiser(arch: DenoiserArch, seed: int) -> DenoiserParams:
    return DenoiserParams(_init_vector(denoiser_layout(arch), seed, ("out_w", "out_b")), arch)


def init_coordinator(arch: CoordinatorArch, seed: int) -> CoordinatorParams:
    zero = ("out_w", "out_b", "cross.o_w", "cross.o_b")
    return CoordinatorParams(_init_vector(coordinator_layout(arch), seed, zero), arch)


def unpack(vector, layout: list) -> dict:
    """Slice a flat vector (ndarray or Tensor) into named tensors."""
    out = {}
    offset = 0
    is_tensor = isinstance(vector, Tensor)
    for name, shape in layout:
        size = int(np.prod(shape))
        if is_tensor:
            out[name] = vector[offset : offset + size].reshape(shape)
        else:
            out[name] = Tensor(vector[offset : offset + size].reshape(shape))
        offset += size
    return out


# -- forward passes -----------------------------------------------------------


def _attention(p: dict, prefix: str, query: Tensor, context: Tensor, heads: int) -> Tensor:
    b, s_q, w = query.shape
    s_k = context.shape[1]
    dh = w // heads
    q = (query @ p[f"{prefix}.q_w"] + p[f"{prefix}.q_b"]).reshape(b, s_q, heads, dh).transpose((0, 2, 1, 3))
    k = (context @ p[f"{prefix}.k_w"] + p[f"{prefix}.k_b"]).reshape(b, s_k, heads, dh).transpose((0, 2, 1, 3))
    v = (context @ p[f"{prefix}.v_w"] + p[f"{prefix}.v_b"]).reshape(b, s_k, heads, dh).transpose((0, 2, 1, 3))
    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    mixed = scores.softmax(-1) @ v
    merged = mixed.transpose((0, 2, 1, 3)).reshape(b, s_q, w)
    return merged @ p[f"{prefix}.o_w"] + p[f"{prefix}.o_b"]


def _mlp(p: dict, prefix: str, x: Tensor) -> Tensor:
    return (x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]).gelu() @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _as_batched(x, width: int, name: str) -> tuple:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))
    squeezed = False
    if t.ndim == 2:
        t = t.reshape(1, *t.shape)
        squeezed = True
    if t.ndim != 3 or t.shape[-1] != width:
        raise ShapeMismatch(f"{name} must be (T, {width}) or (B, T, {width}), got {t.shape}")
    return t, squeezed


def denoise(params: DenoiserParams, x_t, cond: Conditioning, t) -> Tensor:
    """Predict the clean bucket from a noised one.

    `x_t` is (B, T, 526) or (T, 526); `t` is the per-sample diffusion step.
    Conditioning tokens (text, t_i, t_s, step) are prepended to the token
    stream; attention is full, with no causal mask.
    """
    arch = params.arch
    p = unpack(params.vector, denoiser_layout(arch))
    x, squeezed = _as_batched(x_t, BUCKET_DIM, "x_t")
    b, frames, _ = x.shape
    if cond.batch != b:
        raise ShapeMismatch(f"conditioning batch {cond.batch} != input batch {b}")

    step = sinusoidal_embedding(np.broadcast_to(np.asarray(t, dtype=float), (b,)))
    tokens = x @ p["in_w"] + p["in_b"]
    tokens = tokens + positional_encoding(frames, arch.width)[None]
    cond_tokens = concat(
        [
            (Tensor(cond.text) @ p["text_w"] + p["text_b"]).reshape(b, 1, arch.width),
            (Tensor(cond.ti_embed) @ p["ti_w"] + p["ti_b"]).reshape(b, 1, arch.width),
            (Tensor(cond.ts_embed) @ p["ts_w"] + p["ts_b"]).reshape(b, 1, arch.width),
            (Tensor(step) @ p["step_w"] + p["step_b"]).reshape(b, 1, arch.width),
        ],
        axis=1,
    )
    h = concat([cond_tokens, tokens], axis=1)
    for l in range(arch.layers):
        n = layer_norm(h, p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
        h = h + _attention(p, f"l{l}.attn", n, n, arch.heads)
        n = layer_norm(h, p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
        h = h + _mlp(p, f"l{l}.mlp", n)
    h = layer_norm(h, p["out_ln.g"], p["out_ln.b"])
    out = h[:, 4:, :] @ p["out_w"] + p["out_b"]
    if not np.all(np.isfinite(out.data)):
        raise NonFinite("denoiser forward produced non-finite values")
    return out.reshape(frames, BUCKET_DIM) if squeezed else out


def coordinate(params: CoordinatorParams, primary, reference, text: TextEmbedding) -> Tensor:
    """Refine `primary` against `reference`; identical shapes in and out.

    The primary stream is the residual path: the reference only enters
    through cross-attention, and both the cross-attention output projection
    and the final head are zero at init, making the initial map an exact
    identity.
    """
    arch = params.arch
    p = unpack(params.vector, coordinator_layout(arch))
    prim, squeezed = _as_batched(primary, FEATURE_DIM, "primary")
    ref, _ = _as_batched(reference, FEATURE_DIM, "reference")
    if prim.shape[0] != ref.shape[0]:
        raise ShapeMismatch("primary and reference must share the batch size")
    b, frames, _ = prim.shape

    text_vec = np.broadcast_to(
        text.vector if isinstance(text, TextEmbedding) else np.asarray(text, float), (b, TEXT_DIM)
    )
    h = prim @ p["prim_w"] + p["prim_b"]
    h = h + positional_encoding(frames, arch.width)[None]
    r = ref @ p["ref_w"] + p["ref_b"]
    r = r + positional_encoding(ref.shape[1], arch.width)[None]
    r = concat([(Tensor(np.array(text_vec)) @ p["text_w"] + p["text_b"]).reshape(b, 1, arch.width), r], axis=1)

    for l in range(arch.layers):
        n = layer_norm(h, p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
        h = h + _attention(p, f"l{l}.self", n, n, arch.heads)
        nq = layer_norm(h, p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
        nr = layer_norm(r, p[f"l{l}.lnr.g"], p[f"l{l}.lnr.b"])
        h = h + _attention(p, f"l{l}.cross", nq, nr, arch.heads)
        n = layer_norm(h, p[f"l{l}.ln3.g"], p[f"l{l}.ln3.b"])
        h = h + _mlp(p, f"l{l}.mlp", n)
    h = layer_norm(h, p["out_ln.g"], p["out_ln.b"])
    out = prim + (h @ p["out_w"] + p["out_b"])
    if not np.all(np.isfinite(out.data)):
        raise NonFinite("coordinator forward produced non-finite values")
    return out.reshape(frames, FEATURE_DIM) if squeezed else out


def refine_pair(u_x, u_y, params: CoordinatorParams, text: TextEmbedding) -> tuple:
    """The asymmetric two-character refinement order.

    phi_x is refined against the raw partner; phi_y is then refined against
    the already-refined phi_x.
    """
    phi_x = coordinate(params, u_x, u_y, text)
    phi_y = coordinate(params, u_y, phi_x, text)
    return phi_x, phi_y


def refine_multi(sequences: list, params: CoordinatorParams, text: TextEmbedding, iterations: int = 1) -> list:
    """Round-robin refinement for two or more characters.

    Each sequence is refined against the mean of the other characters'
    current streams; with two sequences and one iteration this reduces to
    refine_pair.
    """
    if len(sequences) < 2:
        raise ShapeMismatch("refine_multi needs at least two sequences")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    current = [s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=float)) for s in sequences]
    for _ in range(iterations):
        for i in range(len(current)):
            others = [c for j, c in enumerate(current) if j != i]
            if len(others) == 1:
                reference = others[0]
            else:
                acc = others[0]
                for o in others[1:]:
                    acc = acc + o
                reference = acc * (1.0 / len(others))
            current[i] = coordinate(params, current[i], reference, text)
    return current


def grad(params: np.ndarray, loss_fn) -> np.ndarray:
    """Exact gradient of `loss_fn(flat_param_tensor) -> scalar Tensor`."""
    leaf = Tensor(np.asarray(params, dtype=float).copy(), requires_grad=True)
    loss = loss_fn(leaf)
    loss.backward()
    g = leaf.grad
    if g is None:
        g = np.zeros_like(leaf.data)
    if not np.all(np.isfinite(g)):
        raise NonFinite("gradient contains non-finite values")
    return g


def value_and_grad(params: np.ndarray, loss_fn) -> tuple:
    leaf = Tensor(np.asarray(params, dtype=float).copy(), requires_grad=True)
    loss = loss_fn(leaf)
    loss.backward()
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    if not np.all(np.isfinite(g)) or not np.isfinite(loss.data):
        raise NonFinite("loss or gradient contains non-finite values")
    return float(loss.data), g
