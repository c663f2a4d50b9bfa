"""Central finite-difference checks for the autodiff core."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dividing
    round-off noise by nothing.
    """
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(loss: Callable[[], float], target: Parameter | Tensor, index: tuple, step: float = STEP) -> float:
    """``d loss / d target[index]`` by central differences (``target`` is restored)."""
    original = target.data.copy()
    try:
        bumped = original.copy()
        bumped[index] += step
        _set(target, bumped)
        plus = loss()
        bumped[index] = original[index] - step
        _set(target, bumped)
        minus = loss()
    finally:
        _set(target, original)
    return (plus - minus) / (2.0 * step)


def _set(target, value: np.ndarray) -> None:
    if isinstance(target, Parameter):
        target.assign(value)
    else:
        value = np.array(value)
        value.flags.writeable = False
        target.data = value


def check_gradients(
    build: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    samples: int | None = None,
    rng: np.random.Generator | None = None,
    step: float = STEP,
    floor: float = 1e-6,
) -> dict[int, float]:
    """Compare backprop against central differences for every tensor in ``tensors``.

    ``build`` must return a scalar loss. With ``samples`` set, that many
    random entries per tensor are probed instead of all of them. Returns the
    relative error per tensor position.
    """
    for t in tensors:
        t.grad = None
    out = build()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def loss() -> float:
        return float(build().data)

    rng = rng or np.random.default_rng(0)
    errors = {}
    for i, t in enumerate(tensors):
        if samples is None or samples >= t.data.size:
            flat = np.arange(t.data.size)
        else:
            flat = rng.choice(t.data.size, size=samples, replace=False)
        idx = [np.unravel_index(j, t.data.shape) for j in flat]
        num = np.array([numeric_grad(loss, t, k, step) for k in idx])
        ana = np.array([analytic[i][k] for k in idx])
        errors[i] = relative_error(ana, num, floor)
    return errors
