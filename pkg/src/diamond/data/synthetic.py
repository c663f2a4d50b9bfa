"""Seeded paired MRI/PET volumes with class signal placed in chosen components.

Each subject of class ``c`` gets

    MRI = clip(base + a_m * U_m[c] + a_s * S[c] + noise, 0, 1)
    PET = clip(base + a_p * U_p[c] + a_s * S[c] + noise, 0, 1)

where ``S`` (shared), ``U_m`` and ``U_p`` (modality-unique) are smooth class
templates, each a sum of three Gaussian bumps, and the noise is white and
independent per modality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .manifest import SubjectRecord, write_labels, write_manifest
from .volume import save_volume

N_BUMPS = 3


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 100
    dims: tuple[int, int, int] = (16, 16, 16)
    shared_signal_strength: float = 0.2
    unique_m_strength: float = 0.2
    unique_p_strength: float = 0.2
    noise_sigma: float = 0.05
    n_classes: int = 2
    seed: int = 0
    base_level: float = 0.4
    bump_width: float = 0.15  # Gaussian sigma as a fraction of the mean extent
    age_means: tuple[float, ...] = (72.0, 74.0)
    age_sd: float = 6.0
    female_rates: tuple[float, ...] = (0.5, 0.45)
    class_fractions: tuple[float, ...] | None = None

    def validate(self) -> "SynthConfig":
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive extents, got {self.dims}")
        for name in ("shared_signal_strength", "unique_m_strength", "unique_p_strength", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.class_fractions is not None and (
            len(self.class_fractions) != self.n_classes or abs(sum(self.class_fractions) - 1.0) > 1e-9
        ):
            raise ConfigError("class_fractions must have n_classes entries summing to 1")
        return self

    def per_class(self, values: tuple[float, ...]) -> np.ndarray:
        """Cycle a per-class parameter tuple out to ``n_classes`` entries."""
        return np.array([values[c % len(values)] for c in range(self.n_classes)], dtype=float)


@dataclass
class SyntheticSet:
    records: list[SubjectRecord]
    mri: np.ndarray  # [n, H, W, D] float32
    pet: np.ndarray
    labels: np.ndarray
    templates: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def gaussian_template(dims: tuple[int, int, int], rng: np.random.Generator, width: float, n_bumps: int = N_BUMPS):
    """Sum of ``n_bumps`` Gaussian bumps at random centres, scaled to peak 1."""
    grids = np.meshgrid(*[np.arange(d, dtype=float) for d in dims], indexing="ij")
    sigma = width * float(np.mean(dims))
    out = np.zeros(dims)
    for _ in range(n_bumps):
        centre = [rng.uniform(0.15 * d, 0.85 * d) for d in dims]
        sq = sum((g - c) ** 2 for g, c in zip(grids, centre))
        out += np.exp(-0.5 * sq / sigma**2)
    return out / out.max()


def class_templates(cfg: SynthConfig) -> dict[str, np.ndarray]:
    """``{"shared", "unique_m", "unique_p"}`` -> ``[L, H, W, D]`` templates."""
    rng = np.random.default_rng([cfg.seed, 0x7E])
    out = {}
    for component in ("shared", "unique_m", "unique_p"):
        out[component] = np.stack(
            [gaussian_template(cfg.dims, rng, cfg.bump_width) for _ in range(cfg.n_classes)]
        )
    return out


def _draw_labels(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.class_fractions is None:
        fractions = np.full(cfg.n_classes, 1.0 / cfg.n_classes)
    else:
        fractions = np.asarray(cfg.class_fractions)
    counts = np.floor(fractions * cfg.n_subjects).astype(int)
    order = np.argsort(-(fractions * cfg.n_subjects - counts), kind="stable")
    counts[order[: cfg.n_subjects - counts.sum()]] += 1
    labels = np.repeat(np.arange(cfg.n_classes), counts)
    return rng.permutation(labels)


def synthesize(cfg: SynthConfig) -> SyntheticSet:
    """Generate the dataset in memory (deterministic given ``cfg.seed``)."""
    cfg.validate()
    templates = class_templates(cfg)
    rng = np.random.default_rng([cfg.seed, 0x5B])
    labels = _draw_labels(cfg, rng)
    age_means, female = cfg.per_class(cfg.age_means), cfg.per_class(cfg.female_rates)
    n = cfg.n_subjects
    mri = np.empty((n, *cfg.dims), dtype=np.float32)
    pet = np.empty((n, *cfg.dims), dtype=np.float32)
    records = []
    width = len(str(n - 1))
    for i, c in enumerate(labels):
        shared = cfg.shared_signal_strength * templates["shared"][c]
        m = cfg.base_level + cfg.unique_m_strength * templates["unique_m"][c] + shared
        p = cfg.base_level + cfg.unique_p_strength * templates["unique_p"][c] + shared
        m = m + rng.normal(0.0, cfg.noise_sigma, cfg.dims)
        p = p + rng.normal(0.0, cfg.noise_sigma, cfg.dims)
        mri[i] = np.clip(m, 0.0, 1.0)
        pet[i] = np.clip(p, 0.0, 1.0)
        age = float(np.clip(rng.normal(age_means[c], cfg.age_sd), 40.0, 100.0))
        sex = "F" if rng.random() < female[c] else "M"
        records.append(SubjectRecord(f"sub-{i:0{width}d}", round(age, 2), sex, int(c)))
    return SyntheticSet(records, mri, pet, labels.astype(np.intp), templates)


def default_labels(n_classes: int) -> list[str]:
    return [f"class{c}" for c in range(n_classes)]


def generate_synthetic(cfg: SynthConfig, out_dir) -> list[SubjectRecord]:
    """Write volumes, ``manifest.csv`` and ``labels.txt`` under ``out_dir``."""
    data = synthesize(cfg)
    out = Path(out_dir)
    (out / "mri").mkdir(parents=True, exist_ok=True)
    (out / "pet").mkdir(parents=True, exist_ok=True)
    records = []
    for rec, m, p in zip(data.records, data.mri, data.pet):
        mri_path, pet_path = out / "mri" / f"{rec.id}.dmvol", out / "pet" / f"{rec.id}.dmvol"
        save_volume(m, mri_path)
        save_volume(p, pet_path)
        records.append(SubjectRecord(rec.id, rec.age, rec.sex, rec.diagnosis, mri_path, pet_path))
    labels = default_labels(cfg.n_classes)
    write_labels(labels, out / "labels.txt")
    write_manifest(records, labels, out / "manifest.csv")
    return records
