"""Subject manifests, label files and split files (all plain UTF-8 text)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ManifestError
from .volume import load_volume

MANIFEST_FIELDS = ("id", "age", "sex", "diagnosis", "mri_path", "pet_path")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    age: float
    sex: str  # "F" or "M"
    diagnosis: int
    mri_path: Path | None = None
    pet_path: Path | None = None

    def __post_init__(self):
        if not 0.0 < self.age < 120.0:
            raise ManifestError(f"subject {self.id}: age {self.age} outside (0, 120)")
        if self.sex not in ("F", "M"):
            raise ManifestError(f"subject {self.id}: sex must be F or M, got {self.sex!r}")
        if self.diagnosis < 0:
            raise ManifestError(f"subject {self.id}: negative diagnosis index")


def read_labels(path) -> list[str]:
    labels = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    labels = [lab for lab in labels if lab]
    if len(set(labels)) != len(labels):
        raise ManifestError(f"{path}: duplicate labels")
    if len(labels) < 2:
        raise ManifestError(f"{path}: need at least two labels")
    return labels


def write_labels(labels: list[str], path) -> None:
    Path(path).write_text("".join(f"{lab}\n" for lab in labels), encoding="utf-8")


def read_manifest(path, labels: list[str] | None = None) -> list[SubjectRecord]:
    """Parse ``manifest.csv``; labels default to ``labels.txt`` beside it.

    Relative volume paths are resolved against the manifest's directory.
    """
    path = Path(path)
    if labels is None:
        labels = read_labels(path.parent / "labels.txt")
    index = {lab: i for i, lab in enumerate(labels)}
    records, seen = [], set()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{path}: cannot open manifest ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}:1: header must be {','.join(MANIFEST_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
            sid, age, sex, diagnosis, mri, pet = (c.strip() for c in row)
            if sid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate subject id {sid!r}")
            if diagnosis not in index:
                raise ManifestError(f"{path}:{lineno}: unknown diagnosis label {diagnosis!r}")
            try:
                age_value = float(age)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: age {age!r} is not a number") from None
            try:
                rec = SubjectRecord(
                    sid, age_value, sex, index[diagnosis], path.parent / mri, path.parent / pet
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            seen.add(sid)
            records.append(rec)
    if not records:
        raise ManifestError(f"{path}: manifest has no subjects")
    return records


def write_manifest(records: list[SubjectRecord], labels: list[str], path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.id,
                    f"{r.age:.2f}",
                    r.sex,
                    labels[r.diagnosis],
                    _relative(r.mri_path, path.parent),
                    _relative(r.pet_path, path.parent),
                ]
            )


def _relative(p: Path | None, base: Path) -> str:
    if p is None:
        return ""
    try:
        return Path(p).relative_to(base).as_posix()
    except ValueError:
        return str(p)


def load_arrays(records: list[SubjectRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack every subject's MRI and PET volumes: ``(mri[n,H,W,D], pet[n,H,W,D], labels[n])``."""
    mri, pet = [], []
    for r in records:
        for p in (r.mri_path, r.pet_path):
            if p is None or not Path(p).is_file():
                raise ManifestError(f"subject {r.id}: volume file {p} does not exist")
        mri.append(load_volume(r.mri_path).voxels)
        pet.append(load_volume(r.pet_path).voxels)
    shapes = {v.shape for v in mri + pet}
    if len(shapes) != 1:
        raise ManifestError(f"volumes have mixed dimensions: {sorted(shapes)}")
    labels = np.array([r.diagnosis for r in records], dtype=np.intp)
    return np.stack(mri), np.stack(pet), labels


def write_split(assignment: dict[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "split"])
        for sid, split in assignment.items():
            writer.writerow([sid, split])


def read_split(path) -> dict[str, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "split"]:
            raise ManifestError(f"{path}:1: header must be id,split")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1].strip() not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: expected '<id>,<train|val|test>'")
            out[row[0].strip()] = row[1].strip()
    return out


def select(records: list[SubjectRecord], assignment: dict[str, str], split: str) -> list[SubjectRecord]:
    missing = [r.id for r in records if r.id not in assignment]
    if missing:
        raise ManifestError(f"split file has no entry for subjects {missing[:5]}")
    return [r for r in records if assignment[r.id] == split]
