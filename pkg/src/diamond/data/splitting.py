"""Confounder-balanced train/val/test partitioning by propensity-score imbalance.

Many random diagnosis-stratified partitions are drawn. For each, a logistic
model predicts train membership from age, sex and diagnosis; the imbalance
is the largest gap between decile propensity scores of any two sets. The
partition with the smallest imbalance wins (ties go to the earliest).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .manifest import SPLITS, SubjectRecord

DECILES = np.arange(10, 100, 10)
SET_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, float, float]
    imbalance: float
    candidate_index: int = 0
    candidate_imbalances: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def ids(self, split: str) -> list[str]:
        return [sid for sid, s in self.assignment.items() if s == split]

    def sizes(self) -> dict[str, int]:
        return {s: len(self.ids(s)) for s in SPLITS}

    def report(self) -> str:
        sizes = self.sizes()
        lines = [f"subjects = {len(self.assignment)}"]
        lines += [f"{s}_size = {sizes[s]}" for s in SPLITS]
        lines += [f"{s}_ratio = {r:.4f}" for s, r in zip(SPLITS, self.ratios)]
        lines.append(f"imbalance = {self.imbalance:.6g}")
        lines.append(f"candidate_index = {self.candidate_index}")
        lines.append(f"candidates = {len(self.candidate_imbalances)}")
        return "\n".join(lines) + "\n"


def allocate(class_sizes: np.ndarray, ratios) -> np.ndarray:
    """Integer quotas ``[n_classes, 3]`` whose class rows and set totals both
    stay within one subject of the exact fractional targets."""
    ratios = np.asarray(ratios, dtype=float)
    class_sizes = np.asarray(class_sizes, dtype=int)
    n = int(class_sizes.sum())
    exact_totals = ratios * n
    totals = np.floor(exact_totals).astype(int)
    totals[np.argsort(-(exact_totals - totals), kind="stable")[: n - totals.sum()]] += 1

    exact = class_sizes[:, None] * ratios[None, :]
    quota = np.floor(exact).astype(int)
    spare_class = class_sizes - quota.sum(axis=1)
    spare_set = totals - quota.sum(axis=0)
    order = np.argsort(-(exact - quota), axis=None, kind="stable")
    for flat in order:
        c, s = divmod(int(flat), 3)
        if spare_class[c] > 0 and spare_set[s] > 0 and exact[c, s] - quota[c, s] > 0:
            quota[c, s] += 1
            spare_class[c] -= 1
            spare_set[s] -= 1
    # leftovers only occur when fractional parts could not be matched exactly
    for c in range(len(class_sizes)):
        while spare_class[c] > 0:
            s = int(np.argmax(spare_set))
            quota[c, s] += 1
            spare_class[c] -= 1
            spare_set[s] -= 1
    return quota


def confounder_matrix(records: list[SubjectRecord], n_classes: int | None = None) -> np.ndarray:
    """Standardised ``[age, female, diagnosis one-hot]``; constant columns become 0."""
    if n_classes is None:
        n_classes = max(r.diagnosis for r in records) + 1
    age = np.array([r.age for r in records], dtype=float)
    female = np.array([r.sex == "F" for r in records], dtype=float)
    onehot = np.eye(n_classes)[[r.diagnosis for r in records]]
    x = np.column_stack([age, female, onehot])
    sd = x.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (x - x.mean(axis=0)) / safe, 0.0)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def fit_propensity(
    x: np.ndarray, y: np.ndarray, iterations: int = 500, lr: float = 0.1, l2: float = 0.0
) -> np.ndarray:
    """Batch gradient descent on the mean logistic loss.

    ``y`` may hold several targets as columns ``[n, C]``; each column gets its
    own model. Returns propensity scores of the same shape as ``y``.
    """
    single = y.ndim == 1
    y = y[:, None] if single else y
    n, k = x.shape
    w = np.zeros((k, y.shape[1]))
    b = np.zeros(y.shape[1])
    for _ in range(iterations):
        r = _sigmoid(x @ w + b) - y
        w -= lr * (x.T @ r / n + l2 * w)
        b -= lr * r.mean(axis=0)
    p = _sigmoid(x @ w + b)
    return p[:, 0] if single else p


def separated(scores: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per column: is every positive scored strictly above every negative?"""
    y = y.astype(bool)
    hi = np.where(y, scores, np.inf).min(axis=0)
    lo = np.where(~y, scores, -np.inf).max(axis=0)
    return hi > lo


def imbalance(scores: np.ndarray, membership: np.ndarray) -> float:
    """Max |decile difference| of ``scores`` over all pairs of the three sets."""
    pct = [np.percentile(scores[membership == s], DECILES) for s in range(3)]
    return float(max(np.max(np.abs(pct[a] - pct[b])) for a, b in SET_PAIRS))


def candidate_memberships(
    labels: np.ndarray, quota: np.ndarray, n_candidates: int, seed: int
) -> np.ndarray:
    """``[n_candidates, n]`` set indices (0 train, 1 val, 2 test), one stratified draw per row."""
    children = np.random.SeedSequence(seed).spawn(n_candidates)
    out = np.empty((n_candidates, len(labels)), dtype=np.int8)
    members = [np.flatnonzero(labels == c) for c in range(quota.shape[0])]
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        for c, idx in enumerate(members):
            perm = rng.permutation(idx)
            t, v = quota[c, 0], quota[c, 1]
            out[i, perm[:t]] = 0
            out[i, perm[t : t + v]] = 1
            out[i, perm[t + v :]] = 2
    return out


def propensity_split(
    records: list[SubjectRecord],
    ratios=(0.65, 0.15, 0.20),
    n_candidates: int = 1000,
    seed: int = 0,
    iterations: int = 500,
    lr: float = 0.1,
) -> SplitAssignment:
    if len(records) < 10:
        raise ConfigError(f"propensity split needs at least 10 subjects, got {len(records)}")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    if n_candidates < 1:
        raise ConfigError("n_candidates must be >= 1")
    labels = np.array([r.diagnosis for r in records])
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.count_nonzero(counts) < 2:
        raise ConfigError("propensity split needs at least two diagnosis classes")

    quota = allocate(counts, ratios)
    memberships = candidate_memberships(labels, quota, n_candidates, seed)
    x = confounder_matrix(records, n_classes)
    targets = (memberships == 0).T.astype(float)  # [n, C]
    scores = fit_propensity(x, targets, iterations, lr)
    sep = separated(scores, targets)
    if sep.any():
        scores[:, sep] = fit_propensity(x, targets[:, sep], iterations, lr, l2=1e-3)
    scores_by_candidate = [scores[:, i] for i in range(n_candidates)]
    imbalances = np.array([imbalance(s, m) for s, m in zip(scores_by_candidate, memberships)])
    best = int(np.argmin(imbalances))
    winner = memberships[best]
    assignment = {r.id: SPLITS[int(s)] for r, s in zip(records, winner)}
    achieved = tuple(float(np.mean(winner == s)) for s in range(3))
    return SplitAssignment(assignment, achieved, float(imbalances[best]), best, imbalances)


def kfold_splits(
    records: list[SubjectRecord], k: int = 5, val_fraction: float = 0.1875, seed: int = 0
) -> list[SplitAssignment]:
    """Diagnosis-stratified k-fold: fold ``i`` is the test set, validation is carved from the rest."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    labels = np.array([r.diagnosis for r in records])
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(records), dtype=int)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold_of[idx] = np.arange(len(idx)) % k
    out = []
    for i in range(k):
        membership = np.where(fold_of == i, 2, 0)
        rest = np.flatnonzero(fold_of != i)
        for c in np.unique(labels[rest]):
            idx = rng.permutation(rest[labels[rest] == c])
            membership[idx[: int(round(val_fraction * len(idx)))]] = 1
        assignment = {r.id: SPLITS[int(s)] for r, s in zip(records, membership)}
        ratios = tuple(float(np.mean(membership == s)) for s in range(3))
        out.append(SplitAssignment(assignment, ratios, float("nan"), i))
    return out
