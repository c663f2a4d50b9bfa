"""Volume tokenisation and pre-norm Transformer layers (multiple-instance backbone).

A volume is cut into ``N_b`` non-overlapping cubic blocks of side ``b``; each
block is an independent instance, cut again into ``(b/p)^3`` patches of side
``p`` that become its tokens, plus one learned class token per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import (
    AttentionParams,
    BiAttentionConfig,
    QKVProjection,
    SelfAttentionWeights,
    bi_attention,
    self_attention,
)
from .config import ModelConfig
from .errors import ConfigError, DimensionError, VolumeRangeError
from .module import LayerNorm, Linear, Module
from .tensor import Parameter, Tensor, concat, dropout, gelu


@dataclass
class Volume:
    """One modality of one subject: an ``[H, W, D]`` field with values in [0, 1]."""

    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise DimensionError(f"volume must be 3-D, got shape {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise VolumeRangeError("volume contains non-finite voxels")
        if self.voxels.size and (self.voxels.min() < 0.0 or self.voxels.max() > 1.0):
            raise VolumeRangeError("volume voxels must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)


@dataclass
class TokenSequence:
    """Token embeddings for a batch of volumes, blocks flattened into the batch axis.

    ``embed`` has shape ``[batch * n_blocks, tokens_per_block + 1, f_e]``;
    row 0 of every block is its class token.
    """

    embed: Tensor
    batch: int
    n_blocks: int
    tokens_per_block: int

    def with_embed(self, embed: Tensor) -> "TokenSequence":
        return TokenSequence(embed, self.batch, self.n_blocks, self.tokens_per_block)


def check_geometry(dims: tuple, block_size: int, patch_size: int) -> None:
    for axis, extent in zip("HWD", dims):
        if extent % block_size:
            raise ConfigError(f"volume extent {axis}={extent} is not divisible by block size {block_size}")
    if block_size % patch_size:
        raise ConfigError(f"block size {block_size} is not divisible by patch size {patch_size}")


def extract_patches(voxels: np.ndarray, block_size: int, patch_size: int) -> np.ndarray:
    """Raw patches ``[B, N_b, (b/p)^3, p^3]`` from volumes ``[B, H, W, D]``.

    Blocks and the patches inside a block are both in lexicographic
    (x, y, z) order; each patch is flattened row-major.
    """
    if voxels.ndim == 3:
        voxels = voxels[None]
    n, h, w, d = voxels.shape
    check_geometry((h, w, d), block_size, patch_size)
    b, p = block_size, patch_size
    blocks = voxels.reshape(n, h // b, b, w // b, b, d // b, b).transpose(0, 1, 3, 5, 2, 4, 6)
    n_blocks = (h // b) * (w // b) * (d // b)
    k = b // p
    patches = blocks.reshape(n, n_blocks, k, p, k, p, k, p).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    return patches.reshape(n, n_blocks, k**3, p**3)


class Tokenizer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dtype, f = cfg.dtype, cfg.embed_dim
        p3 = cfg.patch_size**3
        self.patch_projection = Linear(p3, f, rng, dtype, bound=1.0 / np.sqrt(p3))
        self.patch_pos_embed = Parameter(rng.normal(0.0, 0.02, (cfg.tokens_per_block + 1, f)), dtype=dtype)
        self.block_pos_embed = Parameter(rng.normal(0.0, 0.02, (cfg.n_blocks, f)), dtype=dtype)
        self.class_token = Parameter(rng.normal(0.0, 0.02, (f,)), dtype=dtype)
        self._cfg = cfg

    def __call__(self, voxels: np.ndarray) -> TokenSequence:
        return tokenize(voxels, self._cfg, self)


def tokenize(voxels: np.ndarray, cfg: ModelConfig, params: Tokenizer) -> TokenSequence:
    """Project patches to ``f_e``, prepend class tokens, add patch and block position embeddings."""
    voxels = np.asarray(voxels, dtype=cfg.dtype)
    if voxels.ndim == 3:
        voxels = voxels[None]
    if tuple(voxels.shape[1:]) != cfg.dims:
        raise ConfigError(f"volume dims {tuple(voxels.shape[1:])} do not match configured {cfg.dims}")
    batch, f = voxels.shape[0], cfg.embed_dim
    patches = extract_patches(voxels, cfg.block_size, cfg.patch_size)
    n_blocks, t = patches.shape[1], patches.shape[2]
    flat = Tensor._wrap(patches.reshape(batch * n_blocks, t, -1).copy(), False)
    tokens = params.patch_projection(flat)
    cls = params.class_token.reshape(1, 1, f) + np.zeros((batch * n_blocks, 1, f), dtype=cfg.dtype)
    x = concat([cls, tokens], axis=1) + params.patch_pos_embed
    x = x.reshape(batch, n_blocks, t + 1, f) + params.block_pos_embed.reshape(1, n_blocks, 1, f)
    return TokenSequence(x.reshape(batch * n_blocks, t + 1, f), batch, n_blocks, t)


def pool(x: TokenSequence) -> Tensor:
    """Branch latent ``[B, f_e]``: mean of the class tokens over blocks."""
    f = x.embed.shape[-1]
    cls = x.embed[:, 0, :].reshape(x.batch, x.n_blocks, f)
    return cls.mean(axis=1)


class FeedForward(Module):
    def __init__(self, embed_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.inner = Linear(embed_dim, hidden, rng, dtype)
        self.outer = Linear(hidden, embed_dim, rng, dtype)

    def __call__(self, x: Tensor, rate: float = 0.0, rng=None, training: bool = False) -> Tensor:
        return self.outer(dropout(gelu(self.inner(x)), rate, rng, training))


def transformer_layer(
    x: Tensor,
    attn: Callable[[Tensor], Tensor],
    ln1: LayerNorm,
    ln2: LayerNorm,
    ffn: FeedForward,
    rate: float = 0.0,
    rng=None,
    training: bool = False,
) -> Tensor:
    """``y = x + attn(LN(x))``, ``out = y + FFN(LN(y))``."""
    y = x + dropout(attn(ln1(x)), rate, rng, training)
    return y + ffn(ln2(y), rate, rng, training)


class SelfAttentionLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        f, dtype = cfg.embed_dim, cfg.dtype
        self.ln1 = LayerNorm(f, dtype)
        self.attn = SelfAttentionWeights(f, rng, dtype)
        self.ln2 = LayerNorm(f, dtype)
        self.ffn = FeedForward(f, cfg.mlp_ratio * f, rng, dtype)
        self._cfg = cfg

    def __call__(self, x: Tensor, rng=None, training: bool = False) -> Tensor:
        cfg = self._cfg
        params = self.attn.params(cfg.n_heads, cfg.scaling)
        return transformer_layer(
            x, lambda t: self_attention(t, params), self.ln1, self.ln2, self.ffn, cfg.dropout, rng, training
        )


class BiAttentionLayer(Module):
    """One layer of the cross-modal branch, advancing the M and P streams together.

    Query/key/value matrices and layer norms belong to a modality; the output
    projection and feed-forward network are shared by both streams.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        f, dtype = cfg.embed_dim, cfg.dtype
        self.ln1_m = LayerNorm(f, dtype)
        self.ln1_p = LayerNorm(f, dtype)
        self.qkv_m = QKVProjection(f, rng, dtype)
        self.qkv_p = QKVProjection(f, rng, dtype)
        self.w_o = Parameter(np.zeros((f, f)), dtype=dtype)
        self.ln2_m = LayerNorm(f, dtype)
        self.ln2_p = LayerNorm(f, dtype)
        self.ffn = FeedForward(f, cfg.mlp_ratio * f, rng, dtype)
        self._cfg = cfg

    def direction_params(self, query: str) -> AttentionParams:
        """Parameters for queries from modality ``query`` attending to the other one."""
        q, kv = (self.qkv_m, self.qkv_p) if query == "M" else (self.qkv_p, self.qkv_m)
        return AttentionParams(q.w_q, kv.w_k, kv.w_v, self.w_o, self._cfg.n_heads, self._cfg.scaling)

    def __call__(self, xm: Tensor, xp: Tensor, rng=None, training: bool = False) -> tuple[Tensor, Tensor]:
        cfg = self._cfg
        m_from_p = self.direction_params("M")
        p_from_m = self.direction_params("P")
        bi_m = BiAttentionConfig(cfg.tau, ("M", "P"), cfg.bi_renormalize)
        bi_p = BiAttentionConfig(cfg.tau, ("P", "M"), cfg.bi_renormalize)
        # both directions read the pre-update streams
        nm, np_ = self.ln1_m(xm), self.ln1_p(xp)
        ym = xm + dropout(bi_attention(nm, np_, m_from_p, bi_m), cfg.dropout, rng, training)
        yp = xp + dropout(bi_attention(np_, nm, p_from_m, bi_p), cfg.dropout, rng, training)
        out_m = ym + self.ffn(self.ln2_m(ym), cfg.dropout, rng, training)
        out_p = yp + self.ffn(self.ln2_p(yp), cfg.dropout, rng, training)
        return out_m, out_p
