"""Two-branch transformer classifier with prior-enhanced attention.

Each branch embeds its tokens together with a time-series-information record
(binary variable code, normalized start/end, prior), runs an encoder whose
attention is reweighted by the pairwise prior matrix, and mean-pools the
token outputs. A gated decision layer mixes the two branches' logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from vsformer.numerics import (
    BatchNorm,
    FeedForward,
    Linear,
    Module,
    Parameter,
    Tensor,
    attention,
    concat,
    matmul,
    sigmoid,
    softmax,
)
from vsformer.numerics.nn import uniform_init
from vsformer.numerics.tensor import dropout, transpose

MODES = ("full", "shape-only", "value-only", "vanilla-attn", "learnable-pe")
N_KINDS = 3


# ---------------------------------------------------------------------------
# time series information encoding


def bit_width(V: int) -> int:
    return max(1, math.ceil(math.log2(max(V, 2))))


def variable_bits(v, V: int) -> np.ndarray:
    """Binary code of variable index ``v`` (MSB first)."""
    v = np.asarray(v, dtype=np.int64)
    if np.any(v < 0) or np.any(v >= V):
        raise ValueError(f"variable index out of range [0, {V})")
    width = bit_width(V)
    shifts = np.arange(width - 1, -1, -1)
    return ((v[..., None] >> shifts) & 1).astype(np.float64)


def tsi_width(V: int, with_kind: bool = False) -> int:
    return bit_width(V) + 3 + (N_KINDS if with_kind else 0)


def tsi_encode(variable, t_start, t_end, prior, V: int, T: int, kind=None) -> np.ndarray:
    """TSI records ``[bits..., t_start / T, t_end / T, prior]``.

    Arguments broadcast against each other; the record is the last axis. When
    ``kind`` is given, a one-hot statistic code is appended.
    """
    t_start = np.asarray(t_start, dtype=np.float64)
    t_end = np.asarray(t_end, dtype=np.float64)
    if np.any(t_start < 0) or np.any(t_end > T) or np.any(t_start >= t_end):
        raise ValueError("timestamps must satisfy 0 <= t_start < t_end <= T")
    bits = variable_bits(variable, V)
    variable, t_start, t_end, prior = np.broadcast_arrays(
        np.asarray(variable), t_start, t_end, np.asarray(prior, dtype=np.float64)
    )
    bits = np.broadcast_to(bits, variable.shape + (bits.shape[-1],))
    cols = [bits, (t_start / T)[..., None], (t_end / T)[..., None], prior[..., None]]
    if kind is not None:
        onehot = np.eye(N_KINDS)[np.broadcast_to(np.asarray(kind), variable.shape)]
        cols.append(onehot)
    return np.concatenate(cols, axis=-1)


def embed_tokens(tokens, tsi, W_I: Tensor, W_S: Tensor) -> Tensor:
    """``tsi @ W_I + tokens @ W_S^T``: the encoder input for every token."""
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    tsi = tsi if isinstance(tsi, Tensor) else Tensor(tsi)
    if tsi.shape[-1] != W_I.shape[0] or tokens.shape[-1] != W_S.shape[1] or W_I.shape[1] != W_S.shape[0]:
        raise ValueError(
            f"shape mismatch: tsi {tsi.shape}, W_I {W_I.shape}, tokens {tokens.shape}, W_S {W_S.shape}"
        )
    return matmul(tsi, W_I) + matmul(tokens, transpose(W_S))


def prior_matrix(p) -> np.ndarray:
    """Pairwise prior products with a unit diagonal; batched over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("priors must be finite and non-negative")
    P = p[..., :, None] * p[..., None, :]
    n = p.shape[-1]
    P[..., np.arange(n), np.arange(n)] = 1.0
    return P


def pesa_attention(Q, K, V_mat, P, d_head: int | None = None) -> np.ndarray:
    """Single-head prior-enhanced attention on plain matrices.

    ``softmax(softmax(Q K^T / sqrt(d)) * P) V`` with ``d`` defaulting to the
    key width.
    """
    Q, K, V_mat, P = (np.asarray(a, dtype=np.float64) for a in (Q, K, V_mat, P))
    n = Q.shape[0]
    if K.shape != Q.shape or V_mat.shape[0] != n or P.shape != (n, n):
        raise ValueError("pesa_attention shape mismatch")
    d = Q.shape[1] if d_head is None else d_head
    out, _ = attention(
        Tensor(Q[None, None]), Tensor(K[None, None]), Tensor(V_mat[None, None]), P[None], 1.0 / math.sqrt(d)
    )
    return out.data[0, 0]


# ---------------------------------------------------------------------------
# layers


@dataclass
class BranchInput:
    """Tokens of one branch for a batch: (B, n, d_token), (B, n, d_I), (B, n)."""

    tokens: np.ndarray
    tsi: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        B, n = self.prior.shape
        if self.tokens.shape[:2] != (B, n) or self.tsi.shape[:2] != (B, n):
            raise ValueError("branch input arrays disagree on batch or token count")

    def take(self, idx) -> "BranchInput":
        return BranchInput(self.tokens[idx], self.tsi[idx], self.prior[idx])


class EncoderLayer(Module):
    def __init__(self, d_model, d_ff, n_heads, rng, use_prior=True, dropout_rate=0.0):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.use_prior = use_prior
        self.dropout_rate = dropout_rate
        # projections feeding a residual + batch norm carry no bias
        self.q_proj = Linear(d_model, d_model, rng, bias=False)
        self.k_proj = Linear(d_model, d_model, rng, bias=False)
        self.v_proj = Linear(d_model, d_model, rng, bias=False)
        self.out_proj = Linear(d_model, d_model, rng, bias=False)
        self.norm1 = BatchNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm2 = BatchNorm(d_model)

    def _heads(self, x: Tensor) -> Tensor:
        B, n, d = x.shape
        return transpose(x.reshape(B, n, self.n_heads, d // self.n_heads), (0, 2, 1, 3))

    def __call__(self, x: Tensor, P: np.ndarray | None, rng=None):
        B, n, d = x.shape
        dh = d // self.n_heads
        q, k, v = (self._heads(proj(x)) for proj in (self.q_proj, self.k_proj, self.v_proj))
        heads, received = attention(q, k, v, P, 1.0 / math.sqrt(dh), self.use_prior,
                                    want_received=not self.training)
        merged = transpose(heads, (0, 2, 1, 3)).reshape(B, n, d)
        rate = self.dropout_rate if self.training else 0.0
        x = self.norm1(x + dropout(self.out_proj(merged), rate, rng))
        x = self.norm2(x + dropout(self.ffn(x), rate, rng))
        return x, received


class Branch(Module):
    """Token embedding, encoder stack and mean pooling for one token family."""

    def __init__(self, n_tokens, d_token, d_tsi, d_model, d_ff, n_heads, n_layers, rng,
                 use_prior=True, learnable_pe=False, dropout_rate=0.0):
        self.n_tokens = n_tokens
        self.d_token = d_token
        self.d_tsi = d_tsi
        self.d_model = d_model
        if learnable_pe:
            self.W_pos = Parameter(uniform_init(rng, (n_tokens, d_model), d_model))
        else:
            self.W_I = Parameter(uniform_init(rng, (d_tsi, d_model), d_tsi))
        self.W_S = Parameter(uniform_init(rng, (d_model, d_token), d_token))
        self.layers = [EncoderLayer(d_model, d_ff, n_heads, rng, use_prior, dropout_rate) for _ in range(n_layers)]

    def __call__(self, inp: BranchInput, rng=None):
        B, n, _ = inp.tokens.shape
        if n != self.n_tokens or inp.tokens.shape[-1] != self.d_token or inp.tsi.shape[-1] != self.d_tsi:
            raise ValueError(
                f"branch expects {self.n_tokens} tokens of width {self.d_token} with TSI width {self.d_tsi}, "
                f"got tokens {inp.tokens.shape} and TSI {inp.tsi.shape}"
            )
        tokens = Tensor(inp.tokens)
        if hasattr(self, "W_pos"):
            x = self.W_pos + matmul(tokens, transpose(self.W_S))
        else:
            x = embed_tokens(tokens, inp.tsi, self.W_I, self.W_S)
        P = prior_matrix(inp.prior) if self.layers[0].use_prior else None
        received = None
        for layer in self.layers:
            x, received = layer(x, P, rng)
        return x.mean(axis=1), received


def decision_forward(R_shape: Tensor, R_value: Tensor, W_shape, W_value, W_lambda, b_lambda):
    """Gated fusion of the two branch representations.

    Returns (class probabilities, lambda), both as tensors of shape (B, C) and
    (B, 1).
    """
    if R_shape.shape[-1] != W_shape.shape[1] or R_value.shape[-1] != W_value.shape[1]:
        raise ValueError("representation width does not match the decision weights")
    G = matmul(R_shape, transpose(W_shape))
    H = matmul(R_value, transpose(W_value))
    lam = sigmoid(matmul(concat([R_shape, R_value], axis=-1), transpose(W_lambda)) + b_lambda)
    return softmax(lam * G + (1.0 - lam) * H, axis=-1), lam


@dataclass
class ModelOutput:
    probs: Tensor
    lam: np.ndarray
    attention: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class ModelSpec:
    """Sizes fixed by the tokenization plus the architecture choices."""

    n_classes: int
    n_shape_tokens: int
    shape_token_width: int
    n_value_tokens: int
    tsi_width: int
    d_model: int = 8
    d_ff: int = 64
    value_d_model: int = 8
    value_d_ff: int = 16
    n_heads: int = 8
    n_layers: int = 1
    mode: str = "full"
    dropout: float = 0.0


class VSFormer(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        if spec.mode not in MODES:
            raise ValueError(f"unknown mode {spec.mode!r}; expected one of {MODES}")
        self.spec = spec
        rng = np.random.default_rng(seed)
        use_prior = spec.mode != "vanilla-attn"
        learnable_pe = spec.mode == "learnable-pe"
        kw = dict(rng=rng, use_prior=use_prior, learnable_pe=learnable_pe, dropout_rate=spec.dropout)
        C = spec.n_classes
        if spec.mode != "value-only":
            self.shape_branch = Branch(spec.n_shape_tokens, spec.shape_token_width, spec.tsi_width,
                                       spec.d_model, spec.d_ff, spec.n_heads, spec.n_layers, **kw)
            self.W_shape = Parameter(uniform_init(rng, (C, spec.d_model), spec.d_model))
        if spec.mode != "shape-only":
            self.value_branch = Branch(spec.n_value_tokens, 1, spec.tsi_width,
                                       spec.value_d_model, spec.value_d_ff, spec.n_heads, spec.n_layers, **kw)
            self.W_value = Parameter(uniform_init(rng, (C, spec.value_d_model), spec.value_d_model))
        if spec.mode not in ("shape-only", "value-only"):
            width = spec.d_model + spec.value_d_model
            self.W_lambda = Parameter(uniform_init(rng, (1, width), width))
            self.b_lambda = Parameter(np.zeros(1))

    @property
    def branches(self) -> tuple[str, ...]:
        return tuple(b for b in ("shape", "value") if hasattr(self, f"{b}_branch"))

    def __call__(self, shape_in: BranchInput | None, value_in: BranchInput | None, rng=None) -> ModelOutput:
        maps = {}
        if self.spec.mode == "shape-only":
            R, maps["shape"] = self.shape_branch(shape_in, rng)
            probs = softmax(matmul(R, transpose(self.W_shape)), axis=-1)
            lam = np.ones(probs.shape[0])
        elif self.spec.mode == "value-only":
            R, maps["value"] = self.value_branch(value_in, rng)
            probs = softmax(matmul(R, transpose(self.W_value)), axis=-1)
            lam = np.zeros(probs.shape[0])
        else:
            R_s, maps["shape"] = self.shape_branch(shape_in, rng)
            R_v, maps["value"] = self.value_branch(value_in, rng)
            probs, lam_t = decision_forward(R_s, R_v, self.W_shape, self.W_value, self.W_lambda, self.b_lambda)
            lam = lam_t.data[:, 0].copy()
        # attention maps are only collected in eval mode
        return ModelOutput(probs, lam, {k: m for k, m in maps.items() if m is not None})
