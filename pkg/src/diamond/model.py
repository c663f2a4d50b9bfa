"""Three-branch multi-modal classifier: MRI self-attention, PET self-attention,
and MRI/PET bi-attention, fused by latent summation and an MLP head."""

from __future__ import annotations

import numpy as np

from .backbone import BiAttentionLayer, SelfAttentionLayer, Tokenizer, pool
from .config import BranchSet, ModelConfig, full_size_config
from .errors import ConfigError, DimensionError
from .module import Linear, Module
from .regbn import RegBNState, regbn_apply, regbn_fit_step
from .tensor import Tensor, gelu, no_grad, softmax

__all__ = [
    "DiaMond",
    "BranchSet",
    "ModelConfig",
    "full_size_config",
    "count_parameters",
    "ablation_variants",
    "branch_variants",
    "regbn_variants",
    "tau_variants",
    "param_variants",
    "TAU_GRID",
    "PARAM_GRID",
]

# Bi-attention threshold sweep.
TAU_GRID = (0.0, 0.005, 0.01, 0.05, 0.1)

# Network-parameter ablation rows: (patch size, embed dim, heads, depth, dropout).
PARAM_GRID = (
    (4, 128, 8, 2, 0.0),
    (4, 128, 8, 4, 0.0),
    (8, 128, 8, 4, 0.0),
    (8, 256, 8, 4, 0.0),
    (8, 512, 8, 4, 0.0),
    (8, 1024, 8, 4, 0.0),
    (8, 512, 16, 4, 0.0),
    (8, 512, 8, 1, 0.0),
    (8, 512, 8, 2, 0.0),
    (8, 512, 8, 8, 0.0),
    (8, 512, 8, 4, 0.2),
    (8, 512, 8, 4, 0.5),
    (8, 128, 8, 2, 0.0),
    (8, 256, 8, 2, 0.0),
    (8, 256, 16, 4, 0.0),
    (8, 128, 16, 2, 0.0),
    (8, 256, 16, 2, 0.0),
    (8, 512, 16, 2, 0.0),
)

# Branch ablation rows in table order: M, P, MP, M+P, M+MP, P+MP, all three.
BRANCH_GRID = (
    BranchSet(True, False, False),
    BranchSet(False, True, False),
    BranchSet(False, False, True),
    BranchSet(True, True, False),
    BranchSet(True, False, True),
    BranchSet(False, True, True),
    BranchSet(True, True, True),
)


class SelfBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.tokenizer = Tokenizer(cfg, rng)
        self.layers = [SelfAttentionLayer(cfg, rng) for _ in range(cfg.depth)]

    def __call__(self, voxels: np.ndarray, rng=None, training: bool = False) -> Tensor:
        seq = self.tokenizer(voxels)
        x = seq.embed
        for layer in self.layers:
            x = layer(x, rng, training)
        return pool(seq.with_embed(x))


class BiBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.tokenizer_m = Tokenizer(cfg, rng)
        self.tokenizer_p = Tokenizer(cfg, rng)
        self.layers = [BiAttentionLayer(cfg, rng) for _ in range(cfg.depth)]

    def __call__(self, mri: np.ndarray, pet: np.ndarray, rng=None, training: bool = False) -> Tensor:
        seq_m, seq_p = self.tokenizer_m(mri), self.tokenizer_p(pet)
        xm, xp = seq_m.embed, seq_p.embed
        for layer in self.layers:
            xm, xp = layer(xm, xp, rng, training)
        return (pool(seq_m.with_embed(xm)) + pool(seq_p.with_embed(xp))) * 0.5


class MLPHead(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.hidden = Linear(cfg.embed_dim, cfg.embed_dim, rng, cfg.dtype)
        self.out = Linear(cfg.embed_dim, cfg.n_classes, rng, cfg.dtype)

    def __call__(self, z: Tensor) -> Tensor:
        return self.out(gelu(self.hidden(z)))


class DiaMond(Module):
    """The full model. Disabled branches are not constructed at all."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        rng = np.random.default_rng(seed)
        if cfg.branches.use_m:
            self.m_branch = SelfBranch(cfg, rng)
        if cfg.branches.use_p:
            self.p_branch = SelfBranch(cfg, rng)
        if cfg.branches.use_mp:
            self.mp_branch = BiBranch(cfg, rng)
        self.head = MLPHead(cfg, rng)
        self.cfg = cfg
        self.regbn = RegBNState.initial(cfg.embed_dim, cfg.regbn_ema_decay, cfg.regbn_lr, cfg.dtype)
        # reverse direction (z_p on z_m); only used in symmetric mode
        self.regbn_reverse = RegBNState.initial(cfg.embed_dim, cfg.regbn_ema_decay, cfg.regbn_lr, cfg.dtype)
        self.assign_names()

    @property
    def regbn_active(self) -> bool:
        b = self.cfg.branches
        return self.cfg.regbn_enabled and b.use_m and b.use_p

    def _inputs(self, mri, pet) -> tuple[np.ndarray, np.ndarray]:
        mri = np.asarray(mri, dtype=self.cfg.dtype)
        pet = np.asarray(pet, dtype=self.cfg.dtype)
        if mri.ndim == 3:
            mri, pet = mri[None], pet[None]
        if mri.shape != pet.shape:
            raise DimensionError(f"MRI batch {mri.shape} and PET batch {pet.shape} differ")
        if tuple(mri.shape[1:]) != self.cfg.dims:
            raise ConfigError(f"volume dims {tuple(mri.shape[1:])} do not match model geometry {self.cfg.dims}")
        return mri, pet

    def latents(self, mri, pet, rng=None, training: bool = False) -> dict[str, Tensor]:
        """Per-branch pooled latents ``[B, f]`` keyed ``m``, ``p``, ``mp`` (before RegBN)."""
        mri, pet = self._inputs(mri, pet)
        out = {}
        if self.cfg.branches.use_m:
            out["m"] = self.m_branch(mri, rng, training)
        if self.cfg.branches.use_p:
            out["p"] = self.p_branch(pet, rng, training)
        if self.cfg.branches.use_mp:
            out["mp"] = self.mp_branch(mri, pet, rng, training)
        return out

    def fit_regbn(self, latents: dict[str, Tensor]) -> None:
        """One online update of omega from detached latents (no-op when RegBN is inactive)."""
        if not self.regbn_active:
            return
        z_m, z_p = latents["m"].data, latents["p"].data
        self.regbn = regbn_fit_step(self.regbn, z_m, z_p)
        if self.cfg.regbn_symmetric:
            self.regbn_reverse = regbn_fit_step(self.regbn_reverse, z_p, z_m)

    def fuse(self, latents: dict[str, Tensor]) -> Tensor:
        """Sum the enabled branch latents, replacing ``z_m`` by its RegBN residual."""
        z = dict(latents)
        if self.regbn_active:
            z["m"] = regbn_apply(self.regbn, latents["m"], latents["p"])
            if self.cfg.regbn_symmetric:
                z["p"] = regbn_apply(self.regbn_reverse, latents["p"], latents["m"])
        total = None
        for key in ("m", "p", "mp"):
            if key in z:
                total = z[key] if total is None else total + z[key]
        return total

    def forward(self, mri, pet, rng=None, training: bool = False, fit_regbn: bool = False) -> Tensor:
        """Logits ``[B, L]``; with ``fit_regbn`` omega is updated from this batch first."""
        lat = self.latents(mri, pet, rng, training)
        if fit_regbn:
            self.fit_regbn(lat)
        return self.head(self.fuse(lat))

    __call__ = forward

    def predict_proba(self, mri, pet, batch_size: int = 16) -> np.ndarray:
        mri, pet = self._inputs(mri, pet)
        chunks = []
        with no_grad():
            for start in range(0, len(mri), batch_size):
                logits = self.forward(mri[start : start + batch_size], pet[start : start + batch_size])
                chunks.append(softmax(logits).data)
        return np.concatenate(chunks, axis=0)

    # -- state -------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state["regbn.omega"] = self.regbn.omega.copy()
        if self.cfg.regbn_symmetric:
            state["regbn.omega_reverse"] = self.regbn_reverse.omega.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], fitted: bool = True) -> None:
        params = dict(self.named_parameters())
        expected = set(params) | {"regbn.omega"}
        if self.cfg.regbn_symmetric:
            expected.add("regbn.omega_reverse")
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise ConfigError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            p.assign(state[name])
        f = self.cfg.embed_dim
        for key, attr in (("regbn.omega", "regbn"), ("regbn.omega_reverse", "regbn_reverse")):
            if key in state:
                omega = np.asarray(state[key], dtype=self.cfg.dtype)
                if omega.shape != (f, f):
                    raise ConfigError(f"{key} has shape {omega.shape}, expected {(f, f)}")
                current = getattr(self, attr)
                setattr(self, attr, RegBNState(omega.copy(), fitted, current.ema_decay, current.update_lr))


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form scalar parameter count for ``cfg`` (enabled branches + head)."""
    f, p3 = cfg.embed_dim, cfg.patch_size**3
    hidden = cfg.mlp_ratio * f
    tokenizer = (p3 * f + f) + (cfg.tokens_per_block + 1) * f + cfg.n_blocks * f + f
    ffn = (f * hidden + hidden) + (hidden * f + f)
    self_layer = 2 * (2 * f) + 4 * f * f + ffn
    bi_layer = 4 * (2 * f) + 6 * f * f + f * f + ffn
    total = 0
    if cfg.branches.use_m:
        total += tokenizer + cfg.depth * self_layer
    if cfg.branches.use_p:
        total += tokenizer + cfg.depth * self_layer
    if cfg.branches.use_mp:
        total += 2 * tokenizer + cfg.depth * bi_layer
    total += (f * f + f) + (f * cfg.n_classes + cfg.n_classes)
    return total


def branch_variants(base: ModelConfig) -> list[ModelConfig]:
    return [base.replace(branches=b) for b in BRANCH_GRID]


def regbn_variants(base: ModelConfig) -> list[ModelConfig]:
    full = base.replace(branches=BranchSet())
    return [full.replace(regbn_enabled=False), full.replace(regbn_enabled=True)]


def tau_variants(base: ModelConfig, grid=TAU_GRID) -> list[ModelConfig]:
    return [base.replace(tau=float(t)) for t in grid]


def param_variants(base: ModelConfig) -> list[ModelConfig]:
    return [
        base.replace(patch_size=p, embed_dim=f, n_heads=h, depth=d, dropout=r) for p, f, h, d, r in PARAM_GRID
    ]


def ablation_variants(base: ModelConfig, axis: str | None = None) -> list[ModelConfig]:
    """Variant configs for one ablation axis; ``None`` gives branches + RegBN."""
    makers = {
        "branches": branch_variants,
        "regbn": regbn_variants,
        "tau": tau_variants,
        "params": param_variants,
    }
    if axis is None:
        variants = branch_variants(base) + regbn_variants(base)
    elif axis in makers:
        variants = makers[axis](base)
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(makers)}")
    for v in variants:
        v.validate()
    return variants
