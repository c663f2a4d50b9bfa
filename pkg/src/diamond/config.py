"""Model architecture configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCALING_MODES = ("per_head", "embedding")
PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class BranchSet:
    """Which of the three encoder branches take part in the model."""

    use_m: bool = True
    use_p: bool = True
    use_mp: bool = True

    def validate(self) -> None:
        if not (self.use_m or self.use_p or self.use_mp):
            raise ConfigError("at least one branch must be enabled")

    @property
    def label(self) -> str:
        parts = [name for name, on in (("M", self.use_m), ("P", self.use_p), ("MP", self.use_mp)) if on]
        return "+".join(parts)


@dataclass(frozen=True)
class ModelConfig:
    """Full architectural description of a model instance.

    ``block_size`` cuts the volume into independent Transformer instances;
    ``patch_size`` cuts each block into tokens. ``mlp_ratio`` sets the
    feed-forward hidden width as a multiple of ``embed_dim``.
    """

    dims: tuple[int, int, int] = (16, 16, 16)
    block_size: int = 16
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 2
    n_heads: int = 4
    tau: float = 0.01
    dropout: float = 0.0
    n_classes: int = 2
    branches: BranchSet = field(default_factory=BranchSet)
    regbn_enabled: bool = True
    regbn_symmetric: bool = False
    regbn_ema_decay: float = 0.99
    regbn_lr: float = 1e-2
    scaling: str = "per_head"
    bi_renormalize: bool = False
    mlp_ratio: int = 4
    precision: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if isinstance(self.branches, dict):
            object.__setattr__(self, "branches", BranchSet(**self.branches))

    def validate(self) -> "ModelConfig":
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive extents, got {self.dims}")
        b, p = self.block_size, self.patch_size
        if p < 1 or b < 1:
            raise ConfigError("block_size and patch_size must be positive")
        for axis, extent in zip("HWD", self.dims):
            if extent % b:
                raise ConfigError(f"volume extent {axis}={extent} is not divisible by block size {b}")
        if b % p:
            raise ConfigError(f"block size {b} is not divisible by patch size {p}")
        if self.embed_dim < 1 or self.n_heads < 1 or self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.tau < 0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.scaling not in SCALING_MODES:
            raise ConfigError(f"scaling must be one of {SCALING_MODES}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")
        if not 0.0 <= self.regbn_ema_decay < 1.0:
            raise ConfigError("regbn_ema_decay must lie in [0, 1)")
        self.branches.validate()
        return self

    @property
    def n_blocks(self) -> int:
        b = self.block_size
        return (self.dims[0] // b) * (self.dims[1] // b) * (self.dims[2] // b)

    @property
    def tokens_per_block(self) -> int:
        return (self.block_size // self.patch_size) ** 3

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["dims"] = list(self.dims)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def full_size_config(**overrides) -> ModelConfig:
    """Full-scale geometry and widths used for the reported ~30M-parameter model.

    The feed-forward width is 2x the embedding; with 4x the three branches
    alone exceed 39M parameters.
    """
    base = ModelConfig(
        dims=(128, 128, 128),
        block_size=32,
        patch_size=8,
        embed_dim=512,
        depth=4,
        n_heads=8,
        tau=0.01,
        n_classes=2,
        mlp_ratio=2,
    )
    return base.replace(**overrides)
