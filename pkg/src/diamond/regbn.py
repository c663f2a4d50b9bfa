"""Regression-residual removal of one branch latent's linear dependence on another.

The MRI latent is modelled as ``z_m = omega @ z_p + z_r`` and only the
residual ``z_r`` is passed on. ``omega`` is learned online from detached
latents (one gradient step per training batch, smoothed by an EMA) and is a
constant inside the main loss graph.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .tensor import Tensor, matmul


@dataclass(frozen=True)
class RegBNState:
    omega: np.ndarray
    fitted: bool = False
    ema_decay: float = 0.99
    update_lr: float = 1e-2

    @classmethod
    def initial(cls, features: int, ema_decay: float = 0.99, update_lr: float = 1e-2, dtype=np.float64) -> "RegBNState":
        return cls(np.zeros((features, features), dtype=dtype), False, ema_decay, update_lr)

    @property
    def features(self) -> int:
        return self.omega.shape[0]


def _latent_array(z) -> np.ndarray:
    return np.asarray(z.data if isinstance(z, Tensor) else z)


def _check_pair(state: RegBNState, z_m: np.ndarray, z_p: np.ndarray) -> None:
    f = state.features
    if z_m.ndim != 2 or z_p.ndim != 2 or z_m.shape != z_p.shape or z_m.shape[1] != f:
        raise DimensionError(f"regbn: latents {z_m.shape} / {z_p.shape} do not match omega [{f}, {f}]")
    if z_m.shape[0] < 1:
        raise DimensionError("regbn: empty batch")


def regbn_objective(omega: np.ndarray, z_m, z_p) -> float:
    """``||Z_m - Z_p omega^T||_F^2 / B``."""
    z_m, z_p = _latent_array(z_m), _latent_array(z_p)
    r = z_m - z_p @ omega.T
    return float(np.sum(r * r) / z_m.shape[0])


def regbn_fit_step(state: RegBNState, z_m, z_p) -> RegBNState:
    """One EMA-smoothed gradient step on the batch regression objective.

    Latents are read as plain arrays, so nothing flows back into the encoders.
    """
    z_m, z_p = _latent_array(z_m), _latent_array(z_p)
    _check_pair(state, z_m, z_p)
    if not (np.isfinite(z_m).all() and np.isfinite(z_p).all()):
        raise NumericError("regbn: non-finite latents in fit step")
    batch = z_m.shape[0]
    residual = z_m - z_p @ state.omega.T
    grad = (-2.0 / batch) * residual.T @ z_p
    proposal = state.omega - state.update_lr * grad
    omega = state.ema_decay * state.omega + (1.0 - state.ema_decay) * proposal
    if not np.isfinite(omega).all():
        raise NumericError("regbn: omega diverged")
    return dataclasses.replace(state, omega=omega.astype(state.omega.dtype), fitted=True)


def regbn_apply(state: RegBNState, z_m: Tensor, z_p: Tensor) -> Tensor:
    """Residual ``z_m - z_p omega^T``; gradients reach both latents, not omega."""
    if z_m.ndim != 2 or z_m.shape != z_p.shape or z_m.shape[1] != state.features:
        raise DimensionError(f"regbn: latents {z_m.shape} / {z_p.shape} do not match omega {state.omega.shape}")
    omega_t = Tensor._wrap(np.ascontiguousarray(state.omega.T, dtype=z_p.dtype), False)
    return z_m - matmul(z_p, omega_t)
