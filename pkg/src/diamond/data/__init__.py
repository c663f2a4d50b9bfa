"""Volume I/O, manifests, synthetic paired volumes and balanced splitting."""

from .manifest import (
    SubjectRecord,
    load_arrays,
    read_labels,
    read_manifest,
    read_split,
    select,
    write_labels,
    write_manifest,
    write_split,
)
from .splitting import SplitAssignment, kfold_splits, propensity_split
from .synthetic import SynthConfig, SyntheticSet, generate_synthetic, synthesize
from .volume import decode_volume, encode_volume, load_volume, save_volume

__all__ = [
    "SubjectRecord",
    "SplitAssignment",
    "SynthConfig",
    "SyntheticSet",
    "decode_volume",
    "encode_volume",
    "generate_synthetic",
    "kfold_splits",
    "load_arrays",
    "load_volume",
    "propensity_split",
    "read_labels",
    "read_manifest",
    "read_split",
    "save_volume",
    "select",
    "synthesize",
    "write_labels",
    "write_manifest",
    "write_split",
]
