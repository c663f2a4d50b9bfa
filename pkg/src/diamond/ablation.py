"""Ablation harness: train every variant along one axis over several seeds."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError
from .model import DiaMond, ablation_variants
from .training import Dataset, TrainConfig, evaluate, train

AXES = ("branches", "tau", "regbn", "params")
METRICS = ("bacc", "auc", "f1", "precision", "recall")


@dataclass
class AblationRow:
    variant: str
    config: ModelConfig
    seeds: tuple[int, ...]
    values: dict[str, list[float | None]]

    def summary(self, metric: str) -> tuple[float | None, float | None]:
        """Mean and population std over seeds; ``None`` if any seed lacked the metric."""
        vals = self.values[metric]
        if not vals or any(v is None for v in vals):
            return None, None
        arr = np.asarray(vals, dtype=float)
        return float(arr.mean()), float(arr.std())


def variant_label(cfg: ModelConfig, axis: str) -> str:
    if axis == "branches":
        return cfg.branches.label
    if axis == "regbn":
        return "with_regbn" if cfg.regbn_enabled else "without_regbn"
    if axis == "tau":
        return f"tau={cfg.tau:g}"
    return f"p{cfg.patch_size}_f{cfg.embed_dim}_h{cfg.n_heads}_d{cfg.depth}_do{cfg.dropout:g}"


def _run_one(args) -> dict[str, float | None]:
    cfg, train_cfg, seed, train_data, val_data, test_data = args
    model = DiaMond(cfg, seed=seed)
    train(model, train_data, val_data, train_cfg.replace(seed=seed))
    return evaluate(model, test_data, train_cfg.eval_batch_size).as_dict()


def run_ablation(
    base: ModelConfig,
    train_cfg: TrainConfig,
    train_data: Dataset,
    val_data: Dataset | None,
    test_data: Dataset,
    axis: str,
    seeds=(0, 1, 2),
    jobs: int = 1,
) -> list[AblationRow]:
    """One row per variant; each variant trains once per seed with the shared ``train_cfg``."""
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    variants = ablation_variants(base, axis)
    tasks = [(cfg, train_cfg, s, train_data, val_data, test_data) for cfg in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    rows = []
    for i, cfg in enumerate(variants):
        chunk = results[i * len(seeds) : (i + 1) * len(seeds)]
        values = {m: [r[m] for r in chunk] for m in METRICS}
        rows.append(AblationRow(variant_label(cfg, axis), cfg, seeds, values))
    return rows


def write_ablation(rows: list[AblationRow], path) -> None:
    header = ["variant", "use_m", "use_p", "use_mp", "regbn", "tau", "patch_size", "embed_dim", "n_heads", "depth", "dropout", "n_seeds"]
    for m in METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            c = row.config
            out = [
                row.variant,
                int(c.branches.use_m),
                int(c.branches.use_p),
                int(c.branches.use_mp),
                int(c.regbn_enabled),
                repr(c.tau),
                c.patch_size,
                c.embed_dim,
                c.n_heads,
                c.depth,
                repr(c.dropout),
                len(row.seeds),
            ]
            for m in METRICS:
                mean, std = row.summary(m)
                out += ["" if mean is None else repr(mean), "" if std is None else repr(std)]
            writer.writerow(out)
