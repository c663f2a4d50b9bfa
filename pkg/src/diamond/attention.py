"""Multi-head self-attention and thresholded cross-modal (bi-)attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .module import Module
from .tensor import Parameter, Tensor, masked_scale, matmul, softmax


@dataclass(frozen=True)
class AttentionParams:
    """Projection matrices for one attention call (all ``[f_e, f_e]``).

    ``w_q`` comes from the query modality and ``w_k`` / ``w_v`` from the
    key/value modality; for self-attention they belong to the same one.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int
    scaling: str = "per_head"

    def __post_init__(self):
        f = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (f, f):
                raise DimensionError(f"{name} must be square [{f}, {f}], got {getattr(self, name).shape}")
        if f % self.n_heads:
            raise ConfigError(f"embed dim {f} is not divisible by {self.n_heads} heads")

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def scale(self) -> float:
        d = self.head_dim if self.scaling == "per_head" else self.embed_dim
        return 1.0 / np.sqrt(d)


@dataclass(frozen=True)
class BiAttentionConfig:
    tau: float = 0.01
    direction: tuple[str, str] = ("M", "P")
    renormalize: bool = False

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError(f"bi-attention threshold tau must be >= 0, got {self.tau}")


class QKVProjection(Module):
    """Query/key/value matrices belonging to one modality."""

    def __init__(self, embed_dim: int, rng: np.random.Generator, dtype=np.float64):
        bound = 1.0 / np.sqrt(embed_dim)
        shape = (embed_dim, embed_dim)
        self.w_q = Parameter(rng.uniform(-bound, bound, shape), dtype=dtype)
        self.w_k = Parameter(rng.uniform(-bound, bound, shape), dtype=dtype)
        self.w_v = Parameter(rng.uniform(-bound, bound, shape), dtype=dtype)


class SelfAttentionWeights(Module):
    def __init__(self, embed_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.qkv = QKVProjection(embed_dim, rng, dtype)
        # zero output projection: each residual branch starts as the identity
        self.w_o = Parameter(np.zeros((embed_dim, embed_dim)), dtype=dtype)

    def params(self, n_heads: int, scaling: str) -> AttentionParams:
        return AttentionParams(self.qkv.w_q, self.qkv.w_k, self.qkv.w_v, self.w_o, n_heads, scaling)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, f = x.shape
    return x.reshape(*lead, n, n_heads, f // n_heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * d)


def _check_tokens(x: Tensor, params: AttentionParams, role: str) -> None:
    if x.ndim < 2 or x.shape[-1] != params.embed_dim:
        raise DimensionError(f"{role} tokens {x.shape} do not end in embed dim {params.embed_dim}")
    if x.shape[-2] < 1:
        raise DimensionError(f"{role} tokens are empty")


def attention_weights(x_q: Tensor, x_kv: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Return ``(Z, V)``: per-head softmax maps ``[..., h, n, n']`` and values ``[..., h, n', d]``."""
    _check_tokens(x_q, params, "query")
    _check_tokens(x_kv, params, "key/value")
    q = _split_heads(matmul(x_q, params.w_q), params.n_heads)
    k = _split_heads(matmul(x_kv, params.w_k), params.n_heads)
    v = _split_heads(matmul(x_kv, params.w_v), params.n_heads)
    z = softmax(matmul(q, k.swapaxes(-1, -2)) * params.scale)
    return z, v


def self_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Multi-head softmax attention of a token set ``[..., n, f_e]`` onto itself."""
    z, v = attention_weights(x, x, params)
    return matmul(_merge_heads(matmul(z, v)), params.w_o)


def threshold_mask(z: Tensor | np.ndarray, tau: float) -> np.ndarray:
    """Indicator ``z >= tau`` as a constant 0/1 array."""
    data = z.data if isinstance(z, Tensor) else np.asarray(z)
    return (data >= tau).astype(data.dtype)


def bi_attention(
    x_q: Tensor,
    x_kv: Tensor,
    params: AttentionParams,
    cfg: BiAttentionConfig,
    return_weights: bool = False,
):
    """Cross-modal attention keeping only softmax entries at or above ``cfg.tau``.

    The threshold applies per head; the mask is recomputed on every call and
    treated as a constant in the backward pass. Masked rows are left
    unnormalised unless ``cfg.renormalize`` is set.
    """
    z, v = attention_weights(x_q, x_kv, params)
    mask = threshold_mask(z, cfg.tau)
    kept = masked_scale(z, mask)
    if cfg.renormalize:
        denom = kept.sum(axis=-1, keepdims=True)
        kept = kept / (denom + (denom.data == 0).astype(denom.dtype))
    out = matmul(_merge_heads(matmul(kept, v)), params.w_o)
    if return_weights:
        return out, z
    return out


def mask_sparsity(z: Tensor | np.ndarray, tau: float) -> float:
    """Fraction of attention entries the threshold zeroes (``z < tau``)."""
    data = z.data if isinstance(z, Tensor) else np.asarray(z)
    if data.size == 0:
        return 0.0
    return float(np.count_nonzero(data < tau)) / data.size
