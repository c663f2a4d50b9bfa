"""Command-line entry point: ``diamond {synth,split,train,eval,ablate}``.

Exit codes: 0 success, 2 user or configuration error, 64 usage error,
1 internal failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import shutil
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

from .ablation import AXES, run_ablation, write_ablation
from .checkpoint import load_checkpoint, read_manifest as read_checkpoint_manifest, save_checkpoint
from .config import BranchSet, ModelConfig
from .data import (
    SynthConfig,
    generate_synthetic,
    load_arrays,
    propensity_split,
    read_labels,
    read_manifest,
    read_split,
    select,
    write_split,
)
from .data.volume import load_volume
from .errors import CheckpointError, ConfigError, DiamondError, NumericError
from .metrics import compute_metrics, fairness_report
from .model import DiaMond
from .training import Dataset, TrainConfig, evaluate, train, write_history

EXIT_OK, EXIT_INTERNAL, EXIT_USER, EXIT_USAGE = 0, 1, 2, 64

CONFIG_NAME = "config.txt"
CHECKPOINT_NAME = "model.dmckpt"
SPLIT_NAME = "split.csv"


class UsageError(Exception):
    pass


# -- flat key = value configuration -------------------------------------------

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise ValueError(f"expected one or three extents, got {text!r}")
    return tuple(parts)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _parse_optional_floats(text: str):
    return None if text.strip().lower() in ("", "none") else _parse_floats(text)


def _parser_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, str):
        return str
    return _parse_floats


def _build_schema() -> dict[str, tuple[str, callable]]:
    schema: dict[str, tuple[str, callable]] = {}
    for section, cls in (("model", ModelConfig), ("train", TrainConfig), ("synth", SynthConfig)):
        instance = cls()
        for f in dataclasses.fields(cls):
            if f.name == "branches":
                continue
            if f.name == "dims":
                parser = _parse_dims
            elif f.name == "class_fractions":
                parser = _parse_optional_floats
            else:
                parser = _parser_for(getattr(instance, f.name))
            # keys shared by several sections (dims, n_classes, seed) feed all of them
            schema.setdefault(f.name, (section, parser))
    for name in ("use_m", "use_p", "use_mp"):
        schema[name] = ("model", _parse_bool)
    return schema


SCHEMA = _build_schema()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines with ``#`` comments; returns typed values keyed by schema name."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _convert(key, value, f"{source}:{lineno}")
    return values


def _convert(key: str, value: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        return SCHEMA[key][1](value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


@dataclass
class RunSpec:
    """Resolved configuration: config file merged with command-line overrides."""

    model: ModelConfig
    train: TrainConfig
    synth: SynthConfig
    values: dict

    @classmethod
    def resolve(cls, values: dict, check_model: bool = True) -> "RunSpec":
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model_kw = {k: v for k, v in values.items() if k in _fields(ModelConfig)}
        branch_kw = {k: values[k] for k in ("use_m", "use_p", "use_mp") if k in values}
        if branch_kw:
            model_kw["branches"] = BranchSet(**{**dataclasses.asdict(BranchSet()), **branch_kw})
        train_kw = {k: v for k, v in values.items() if k in _fields(TrainConfig)}
        synth_kw = {k: v for k, v in values.items() if k in _fields(SynthConfig)}
        try:
            model = ModelConfig(**model_kw)
            if check_model:
                model.validate()
            train_cfg = TrainConfig(**train_kw).validate()
            synth = SynthConfig(**synth_kw).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(model, train_cfg, synth, dict(values))

    def snapshot(self) -> str:
        """Every resolved model and training key, re-loadable as a config file."""
        lines = []
        for key, value in sorted(self.model.to_dict().items()):
            if key == "branches":
                for b, on in value.items():
                    lines.append(f"{b} = {str(on).lower()}")
            elif key == "dims":
                lines.append(f"dims = {','.join(map(str, value))}")
            else:
                lines.append(f"{key} = {_format(value)}")
        for key, value in sorted(self.train.to_dict().items()):
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(sorted(lines)) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_run_spec(args, overrides: dict | None = None, check_model: bool = True) -> RunSpec:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        values.update(parse_config_text(text, str(path)))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        values[key] = _convert(key, value, "--set")
    values.update(overrides or {})
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return RunSpec.resolve(values, check_model)


# -- argument parsing ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    def add_global(p: argparse.ArgumentParser) -> None:
        # SUPPRESS keeps a subcommand from erasing a value given before it
        p.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value configuration file")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (overrides the config file)")
        p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
        p.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE", help="override one config key")

    common = _Parser(add_help=False)
    add_global(common)
    parser = _Parser(prog="diamond", description="Multi-modal ViT for paired MRI/PET volumes.")
    add_global(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, help="number of subjects")
    p.add_argument("--dims", help="volume extent (one value or H,W,D)")
    p.add_argument("--classes", type=int, help="number of diagnosis classes")
    p.add_argument("--shared", type=float, help="shared signal strength")
    p.add_argument("--unique-m", type=float, help="MRI-only signal strength")
    p.add_argument("--unique-p", type=float, help="PET-only signal strength")
    p.add_argument("--noise", type=float, help="noise standard deviation")

    p = sub.add_parser("split", parents=[common], help="confounder-balanced train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.65,0.15,0.20")
    p.add_argument("--candidates", type=int, default=1000)

    p = sub.add_parser("train", parents=[common], help="train a model into a run directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-file", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--split-file", help="defaults to split.csv beside the checkpoint")
    p.add_argument("--fairness", action="store_true", help="also write the demographic breakdown")

    p = sub.add_parser("ablate", parents=[common], help="train all variants along one axis")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-file", required=True)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per variant")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def _require_out(args) -> Path:
    out = getattr(args, "out", None)
    if not out:
        raise UsageError("--out is required")
    return Path(out)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"{path}: output directory is not writable ({exc.strerror})") from None
    return path


# -- commands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _require_out(args)
    overrides = {}
    for flag, key in (("n", "n_subjects"), ("classes", "n_classes"), ("shared", "shared_signal_strength"),
                      ("unique_m", "unique_m_strength"), ("unique_p", "unique_p_strength"), ("noise", "noise_sigma")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    if args.dims is not None:
        overrides["dims"] = _convert("dims", args.dims, "--dims")
    # data generation does not depend on model geometry
    spec = load_run_spec(args, overrides, check_model=False)
    records = generate_synthetic(spec.synth, _ensure_dir(out))
    print(f"subjects = {len(records)}")
    return EXIT_OK


def cmd_split(args) -> int:
    out = _ensure_dir(_require_out(args))
    try:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    except ValueError:
        raise UsageError(f"--ratios expects three comma-separated fractions, got {args.ratios!r}") from None
    records = read_manifest(args.manifest)
    seed = getattr(args, "seed", 0)
    result = propensity_split(records, ratios, n_candidates=args.candidates, seed=seed)
    write_split(result.assignment, out / SPLIT_NAME)
    (out / "split_report.txt").write_text(result.report(), encoding="utf-8")
    sizes = result.sizes()
    print(f"train = {sizes['train']}  val = {sizes['val']}  test = {sizes['test']}  imbalance = {result.imbalance:.6g}")
    return EXIT_OK


def _load_split_data(manifest: str, split_file) -> tuple[list, dict, dict[str, Dataset]]:
    records = read_manifest(manifest)
    assignment = read_split(split_file)
    parts = {}
    for name in ("train", "val", "test"):
        chosen = select(records, assignment, name)
        if chosen:
            mri, pet, labels = load_arrays(chosen)
            parts[name] = (chosen, Dataset(mri, pet, labels))
    return records, assignment, parts


def _check_geometry(cfg: ModelConfig, records, n_labels: int) -> None:
    """Pre-flight: volume extents and label count must match the model."""
    first = records[0]
    dims = load_volume(first.mri_path).dims
    if tuple(dims) != tuple(cfg.dims):
        raise ConfigError(f"data volumes are {dims} but the model expects {cfg.dims}")
    if n_labels != cfg.n_classes:
        raise ConfigError(f"labels file lists {n_labels} classes but the model has n_classes={cfg.n_classes}")


def cmd_train(args) -> int:
    out = _ensure_dir(_require_out(args))
    spec = load_run_spec(args)
    records = read_manifest(args.manifest)
    labels = read_labels(Path(args.manifest).parent / "labels.txt")
    _check_geometry(spec.model, records, len(labels))
    _, _, parts = _load_split_data(args.manifest, args.split_file)
    if "train" not in parts:
        raise ConfigError("split file assigns no subjects to train")
    train_data = parts["train"][1]
    val_data = parts["val"][1] if "val" in parts else None

    (out / CONFIG_NAME).write_text(spec.snapshot(), encoding="utf-8")
    shutil.copyfile(args.split_file, out / SPLIT_NAME)
    model = DiaMond(spec.model, seed=spec.train.seed)
    result = train(model, train_data, val_data, spec.train)
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_history(result.history, out / "history.csv")
    report = evaluate(model, val_data if val_data is not None else train_data, spec.train.eval_batch_size)
    (out / "metrics.txt").write_text(
        f"split = {'val' if val_data is not None else 'train'}\n" + report.to_text(), encoding="utf-8"
    )
    print(f"iterations = {result.iterations_run}  best_val_bacc = {result.best_val_bacc}  checkpoint = {out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    out = _ensure_dir(Path(getattr(args, "out", None) or ckpt.parent))
    try:
        manifest = read_checkpoint_manifest(ckpt)
        cfg = ModelConfig.from_dict(manifest["config"])
    except OSError as exc:
        raise CheckpointError(f"{ckpt}: cannot read checkpoint ({exc.strerror})") from None
    records = read_manifest(args.manifest)
    labels = read_labels(Path(args.manifest).parent / "labels.txt")
    _check_geometry(cfg, records, len(labels))
    if args.split != "all":
        split_file = Path(args.split_file) if args.split_file else ckpt.parent / SPLIT_NAME
        records = select(records, read_split(split_file), args.split)
        if not records:
            raise ConfigError(f"split {args.split!r} is empty")
    model = load_checkpoint(ckpt)
    mri, pet, y = load_arrays(records)
    scores = model.predict_proba(mri, pet)
    report = compute_metrics(y, scores)
    text = f"split = {args.split}\n" + report.to_text()
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.fairness:
        rows = fairness_report(records, y, scores, class_names=labels)
        lines = ["demographic,group,metric,value,n"]
        for r in rows:
            lines.append(f"{r.demographic},{r.group},{r.metric},{'' if r.value is None else repr(r.value)},{r.n}")
        (out / "fairness.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = _ensure_dir(_require_out(args))
    spec = load_run_spec(args)
    records = read_manifest(args.manifest)
    labels = read_labels(Path(args.manifest).parent / "labels.txt")
    _check_geometry(spec.model, records, len(labels))
    _, _, parts = _load_split_data(args.manifest, args.split_file)
    for name in ("train", "test"):
        if name not in parts:
            raise ConfigError(f"split file assigns no subjects to {name}")
    if args.seeds < 1 or args.jobs < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    base_seed = spec.train.seed
    rows = run_ablation(
        spec.model,
        spec.train,
        parts["train"][1],
        parts["val"][1] if "val" in parts else None,
        parts["test"][1],
        args.axis,
        seeds=range(base_seed, base_seed + args.seeds),
        jobs=args.jobs,
    )
    path = out / f"ablation_{args.axis}.csv"
    write_ablation(rows, path)
    for row in rows:
        mean, std = row.summary("bacc")
        print(f"{row.variant}: bacc = {mean:.4f} +/- {std:.4f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"diamond: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"diamond: numeric failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DiamondError, OSError) as exc:
        print(f"diamond: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:  # noqa: BLE001 - last-resort reporting
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
