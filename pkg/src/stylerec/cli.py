"""Command-line surface wiring the pipeline end to end.

Subcommands: preprocess, stylegen, synth, train, eval, suite, dynamic,
sweep. One key=value config file describes a run; command-line flags
override it. All randomness flows from a single global seed. Outputs are
deterministic: rerunning a command on identical inputs writes byte
identical artifacts.

Exit codes: 0 success, 1 input error (unreadable or malformed files),
2 configuration error (bad values, violated contracts), 3 numeric
failure. Errors print one machine-parsable line to stderr:
``error <kind>: <detail>``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .data import (
    PreparedDataset,
    dataset_statistics,
    format_statistics_table,
    generate_style_correlated,
    generate_synthetic,
    parse_sessions,
    prepare_dataset,
    write_sessions,
)
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    InputError,
    MaskError,
    NumericError,
    ShapeError,
    StyleRecError,
)
from .metrics import FULL_CATALOG, NEGSAMPLE, COLUMNS, format_report_table
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .style import (
    extract_style_embedding,
    load_feature_maps,
    pseudo_feature_provider,
    save_style_cache,
    load_style_cache,
    standardize_embeddings,
    style_table,
)
from .training import (
    CONFIGURATIONS,
    TrainConfig,
    choose_eval_mode,
    dynamic_experiment,
    evaluate,
    run_configuration_suite,
    sweep,
    train,
)

_ERROR_KINDS = (
    (InputError, "input-error", 1),
    (FormatError, "format-error", 1),
    (ConfigError, "config-error", 2),
    (ContractError, "contract-error", 2),
    (ShapeError, "shape-error", 2),
    (MaskError, "mask-error", 2),
    (NumericError, "numeric-error", 3),
)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(type_name: str, raw: str, key: str):
    try:
        if type_name == "bool":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "str":
            return raw
        if type_name.startswith("Tuple[int"):
            return tuple(int(x) for x in raw.split(","))
        if type_name.startswith("Tuple[float"):
            return tuple(float(x) for x in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
    raise ConfigError(f"cannot parse config key {key}")


@dataclass
class RunConfig:
    """One run's file paths, seed, and model/train settings."""

    sessions: Optional[str] = None  # raw session JSONL
    data: Optional[str] = None  # prepared dataset JSON
    style_cache: Optional[str] = None  # S4SE file
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    seed: int = 0
    max_lens: Tuple[int, ...] = (2, 4, 6, 8)  # dynamic experiment grid
    model: Dict[str, object] = field(default_factory=dict)
    train: Dict[str, object] = field(default_factory=dict)

    def set_key(self, key: str, raw: str) -> None:
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in _MODEL_FIELDS:
                raise ConfigError(f"unknown model config key {name!r}")
            self.model[name] = _coerce(_MODEL_FIELDS[name], raw, key)
        elif key.startswith("train."):
            name = key[len("train."):]
            if name in ("seed",):
                raise ConfigError("set the global seed, not train.seed")
            if name not in _TRAIN_FIELDS:
                raise ConfigError(f"unknown train config key {name!r}")
            self.train[name] = _coerce(_TRAIN_FIELDS[name], raw, key)
        elif key in ("sessions", "data", "style_cache", "checkpoint_dir", "report_dir"):
            setattr(self, key, raw)
        elif key == "seed":
            self.seed = _coerce("int", raw, key)
        elif key == "max_lens":
            self.max_lens = _coerce("Tuple[int, ...]", raw, key)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    def train_config(self, **overrides) -> TrainConfig:
        kwargs = dict(self.train)
        kwargs.update(overrides)
        return TrainConfig(seed=self.seed, **kwargs)

    def model_kwargs(self, *exclude: str) -> Dict[str, object]:
        return {k: v for k, v in self.model.items() if k not in exclude}


def _read_config_file(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {path}")
    out: Dict[str, str] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    rc = RunConfig()
    if args.config:
        for key, value in _read_config_file(args.config).items():
            rc.set_key(key, value)
    if args.seed is not None:
        rc.seed = args.seed
    if getattr(args, "report_dir", None):
        rc.report_dir = args.report_dir
    if getattr(args, "checkpoint_dir", None):
        rc.checkpoint_dir = args.checkpoint_dir
    for attr, key in (("sessions", "sessions"), ("data", "data"),
                      ("style_cache", "style_cache")):
        value = getattr(args, attr, None)
        if value:
            setattr(rc, key, value)
    if getattr(args, "configuration", None):
        rc.train["configuration"] = args.configuration
    if getattr(args, "epochs", None):
        rc.train["epochs"] = args.epochs
    if getattr(args, "negatives", None):
        rc.train["eval_negatives"] = args.negatives
    if getattr(args, "hidden_dims", None):
        rc.train["hidden_dim_grid"] = _coerce("Tuple[int, ...]", args.hidden_dims,
                                              "--hidden-dims")
    if getattr(args, "l2_grid", None):
        rc.train["l2_grid"] = _coerce("Tuple[float, ...]", args.l2_grid, "--l2-grid")
    if getattr(args, "max_lens", None):
        rc.max_lens = _coerce("Tuple[int, ...]", args.max_lens, "--max-lens")
    return rc


def _require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} configured; pass the flag or set it in the config file")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {path}")
    return p


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _load_dataset(rc: RunConfig) -> PreparedDataset:
    return PreparedDataset.from_json(
        _require_file(rc.data, "prepared dataset").read_text(encoding="utf-8"))


def _load_style_table(rc: RunConfig, catalog_size: int) -> np.ndarray:
    vectors = load_style_cache(_require_file(rc.style_cache, "style cache"))
    return style_table(catalog_size, vectors)


def _model_config(rc: RunConfig, dataset: PreparedDataset, use_style: bool) -> ModelConfig:
    kwargs = rc.model_kwargs("use_style")
    kwargs.setdefault("max_len", dataset.max_len)
    return ModelConfig(use_style=use_style, **kwargs)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_preprocess(rc: RunConfig, args: argparse.Namespace) -> int:
    sessions = parse_sessions(_require_file(rc.sessions, "sessions file"))
    ds = prepare_dataset(sessions, max_len=args.max_len)
    out = Path(args.out)
    _write_text(out, ds.to_json())
    stats = format_statistics_table(dataset_statistics(sessions))
    summary = "\n".join([
        stats,
        "",
        f"seed: {rc.seed}",
        f"max_len: {ds.max_len}",
        f"catalog_size: {ds.catalog_size}",
        f"splits: train={len(ds.train)} val={len(ds.val)} test={len(ds.test)}",
        "",
    ])
    _write_text(Path(str(out) + ".stats.txt"), summary)
    print(summary, end="")
    print(f"wrote {out}")
    return 0


def _stylegen_layers(args: argparse.Namespace, pid: int, seed: int):
    """Feature maps for one product, or None when it has no image."""
    if args.features:
        path = Path(args.features) / f"{pid}.s4rf"
        if not path.is_file():
            return None
        return load_feature_maps(path)
    path = Path(args.images) / f"{pid}.npy"
    if not path.is_file():
        return None
    image = np.load(path)
    return pseudo_feature_provider(image, seed)


def cmd_stylegen(rc: RunConfig, args: argparse.Namespace) -> int:
    if bool(args.features) == bool(args.pseudo):
        raise ConfigError("pick exactly one source: --features DIR or --pseudo --images DIR")
    if args.pseudo and not args.images:
        raise ConfigError("--pseudo needs --images DIR")
    source = Path(args.features or args.images)
    if not source.is_dir():
        raise InputError(f"source directory not found: {source}")
    provider_seed = derive_seed(rc.seed, "style-provider")
    raw: Dict[int, np.ndarray] = {}
    image_ids = set()
    for pid in range(1, args.products + 1):
        layers = _stylegen_layers(args, pid, provider_seed)
        if layers is None:
            raw[pid] = np.zeros(512, dtype=np.float32)
            continue
        raw[pid] = extract_style_embedding(layers)
        image_ids.add(pid)
    vectors = standardize_embeddings(raw, image_ids)
    save_style_cache(vectors, Path(args.out))
    missing = args.products - len(image_ids)
    if missing:
        print(f"warning: {missing} of {args.products} products have no image; "
              f"their style vectors are zero")
    print(f"wrote {args.out} ({args.products} products, seed {rc.seed})")
    return 0


def cmd_synth(rc: RunConfig, args: argparse.Namespace) -> int:
    length_range = (args.length_min, args.length_max)
    out = Path(args.out)
    if args.style_correlated:
        sessions, oracle, vectors = generate_style_correlated(
            args.products, args.sessions, n_clusters=args.clusters,
            length_range=length_range, seed=rc.seed,
            dominant_mass=args.dominant_mass, cart_ratio=args.cart_ratio)
        std = standardize_embeddings(vectors)
        cache = Path(str(out) + ".style.s4se")
        out.parent.mkdir(parents=True, exist_ok=True)
        save_style_cache(std, cache)
        print(f"wrote {cache}")
    else:
        sessions, oracle = generate_synthetic(
            args.products, args.sessions, length_range=length_range, seed=rc.seed,
            dominant_mass=args.dominant_mass, cart_ratio=args.cart_ratio,
            order=args.order)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sessions(sessions, out)
    oracle_path = Path(str(out) + ".oracle.npz")
    oracle.save(oracle_path)
    print(f"wrote {out} ({args.sessions} sessions over {args.products} products, "
          f"seed {rc.seed})")
    print(f"wrote {oracle_path}")
    return 0


def _checkpoint_path(rc: RunConfig, name: str) -> Path:
    return Path(rc.checkpoint_dir) / f"model-{name}.s4ck"


def _train_report(result, lines_prefix) -> str:
    lines = list(lines_prefix)
    lines.append(f"fingerprint: {result.fingerprint}")
    lines.append(f"val_mode: {result.val_mode}")
    lines.append(f"best_epoch: {result.best_epoch}")
    lines.append(f"best_val_ndcg5: {result.best_val_ndcg5:.6f}")
    for entry in result.history:
        lines.append(f"epoch {entry['epoch']} loss {entry['loss']:.6f} "
                     f"val_ndcg5 {entry['val']['NDCG@5']:.6f}")
    return "\n".join(lines) + "\n"


def cmd_train(rc: RunConfig, args: argparse.Namespace) -> int:
    ds = _load_dataset(rc)
    cfg = rc.train_config()
    table = _load_style_table(rc, ds.catalog_size) if cfg.use_style else None
    model_cfg = _model_config(rc, ds, cfg.use_style)
    result = train(ds, model_cfg, cfg, style_table=table, log=print)
    ckpt = Path(args.out) if args.out else _checkpoint_path(rc, cfg.configuration)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, ckpt)
    report = Path(rc.report_dir) / f"train-{cfg.configuration}.txt"
    _write_text(report, _train_report(result, [f"checkpoint: {ckpt.name}"]))
    print(f"wrote {ckpt}")
    print(f"wrote {report}")
    return 0


def cmd_eval(rc: RunConfig, args: argparse.Namespace) -> int:
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    ds = _load_dataset(rc)
    if ds.catalog_size != params.catalog_size:
        raise ConfigError(f"checkpoint expects a catalog of {params.catalog_size}, "
                          f"dataset has {ds.catalog_size}")
    table = _load_style_table(rc, ds.catalog_size) if params.config.use_style else None
    n_negatives = int(rc.train.get("eval_negatives", 100))
    mode = args.mode
    if mode == "auto":
        mode = choose_eval_mode(list(ds.val) + list(ds.test), ds.catalog_size,
                                n_negatives)
    report = evaluate(params, ds.test, mode=mode, n_negatives=n_negatives,
                      seed=rc.seed, style_table=table)
    label = args.label
    text = "\n".join([
        f"checkpoint: {Path(args.checkpoint).name}",
        f"mode: {mode}",
        f"seed: {rc.seed}",
        f"sessions: {len(ds.test)}",
        "",
        *report.machine_lines(label),
        "",
        format_report_table({label: report}),
        "",
    ])
    out = Path(rc.report_dir) / f"eval-{label}.txt"
    _write_text(out, text)
    print(format_report_table({label: report}))
    print(f"wrote {out}")
    return 0


def cmd_suite(rc: RunConfig, args: argparse.Namespace) -> int:
    ds = _load_dataset(rc)
    table = _load_style_table(rc, ds.catalog_size)
    cfg = rc.train_config(configuration="P")
    kwargs = rc.model_kwargs("use_style")
    kwargs.setdefault("max_len", ds.max_len)
    results = run_configuration_suite(ds, kwargs, cfg, style_table=table, log=print)
    lines = [f"seed: {rc.seed}", f"test_sessions: {len(ds.test)}", ""]
    reports = {}
    for name, bundle in results.items():
        ckpt = _checkpoint_path(rc, name)
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(bundle["result"].params, ckpt)
        reports[name] = bundle["report"]
        lines.extend(bundle["report"].machine_lines(name))
    lines.extend(["", format_report_table(reports), ""])
    out = Path(rc.report_dir) / "suite.txt"
    _write_text(out, "\n".join(lines))
    print(format_report_table(reports))
    print(f"wrote {out}")
    return 0


def cmd_dynamic(rc: RunConfig, args: argparse.Namespace) -> int:
    sessions = parse_sessions(_require_file(rc.sessions, "sessions file"))
    cfg = rc.train_config()
    table = None
    if cfg.use_style:
        catalog = max(max(s.items) for s in sessions)
        table = _load_style_table(rc, catalog)
    kwargs = rc.model_kwargs("use_style", "max_len")
    curve = dynamic_experiment(sessions, rc.max_lens, kwargs, cfg,
                               style_table=table, log=print)
    lines = [f"seed: {rc.seed}", "max_len " + " ".join(COLUMNS)]
    for max_len, report in curve:
        lines.append(f"{max_len} " + " ".join(f"{v:.6f}" for v in report.row()))
    out = Path(rc.report_dir) / "dynamic.txt"
    _write_text(out, "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {out}")
    return 0


def cmd_sweep(rc: RunConfig, args: argparse.Namespace) -> int:
    ds = _load_dataset(rc)
    cfg = rc.train_config()
    table = _load_style_table(rc, ds.catalog_size) if cfg.use_style else None
    kwargs = rc.model_kwargs("use_style", "d_ffn")
    kwargs.setdefault("max_len", ds.max_len)
    result = sweep(ds, kwargs, cfg, style_table=table, budget=args.budget, log=print)
    lines = [f"seed: {rc.seed}", "hidden l2 val_ndcg5 best_epoch"]
    for run in result.runs:
        lines.append(f"{run.hidden_dim} {run.l2} {run.val_ndcg5:.6f} {run.best_epoch}")
    lines.append(f"best: hidden {result.best.hidden_dim} l2 {result.best.l2} "
                 f"val_ndcg5 {result.best.val_ndcg5:.6f}")
    ckpt = _checkpoint_path(rc, "sweep-best")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.best_result.params, ckpt)
    out = Path(rc.report_dir) / "sweep.txt"
    _write_text(out, "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {ckpt}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run config file")
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--report-dir", dest="report_dir", help="report output directory")
    common.add_argument("--checkpoint-dir", dest="checkpoint_dir",
                        help="checkpoint output directory")

    parser = argparse.ArgumentParser(
        prog="stylerec",
        description="Session-based product recommender with image-style embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="clean, split, and package raw sessions")
    p.add_argument("--sessions", help="raw session JSONL file")
    p.add_argument("--out", required=True, help="prepared dataset output path")
    p.add_argument("--max-len", dest="max_len", type=int, default=20)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stylegen", parents=[common],
                       help="build the style embedding cache")
    p.add_argument("--features", help="directory of <id>.s4rf feature-map files")
    p.add_argument("--pseudo", action="store_true",
                   help="derive features with the built-in seeded provider")
    p.add_argument("--images", help="directory of <id>.npy images (pseudo mode)")
    p.add_argument("--products", type=int, required=True, help="catalog size")
    p.add_argument("--out", required=True, help="style cache output path")
    p.set_defaults(func=cmd_stylegen)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic session dataset with a known oracle")
    p.add_argument("--products", type=int, required=True)
    p.add_argument("--sessions", type=int, required=True, help="number of sessions")
    p.add_argument("--out", required=True, help="session JSONL output path")
    p.add_argument("--cart-ratio", dest="cart_ratio", type=float, default=0.0)
    p.add_argument("--order", type=int, default=1, choices=(1, 2))
    p.add_argument("--length-min", dest="length_min", type=int, default=3)
    p.add_argument("--length-max", dest="length_max", type=int, default=12)
    p.add_argument("--dominant-mass", dest="dominant_mass", type=float, default=0.8)
    p.add_argument("--style-correlated", dest="style_correlated", action="store_true")
    p.add_argument("--clusters", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--data", help="prepared dataset file")
    p.add_argument("--style-cache", dest="style_cache")
    p.add_argument("--configuration", choices=CONFIGURATIONS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="prepared dataset file")
    p.add_argument("--style-cache", dest="style_cache")
    p.add_argument("--mode", default="auto",
                   choices=("auto", NEGSAMPLE, FULL_CATALOG))
    p.add_argument("--negatives", type=int, help="candidate negatives per session")
    p.add_argument("--label", default="eval", help="name used in report lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", parents=[common],
                       help="train and test all four data configurations")
    p.add_argument("--data", help="prepared dataset file")
    p.add_argument("--style-cache", dest="style_cache")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("dynamic", parents=[common],
                       help="retrain across session-length caps and report the curve")
    p.add_argument("--sessions", help="raw session JSONL file")
    p.add_argument("--max-lens", dest="max_lens", help="comma-separated lengths")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_dynamic)

    p = sub.add_parser("sweep", parents=[common],
                       help="grid-search feed-forward width and L2 penalty")
    p.add_argument("--data", help="prepared dataset file")
    p.add_argument("--style-cache", dest="style_cache")
    p.add_argument("--budget", type=int, help="cap on grid points, in order")
    p.add_argument("--hidden-dims", dest="hidden_dims", help="comma-separated widths")
    p.add_argument("--l2-grid", dest="l2_grid", help="comma-separated penalties")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = build_run_config(args)
        return args.func(rc, args)
    except StyleRecError as e:
        for cls, kind, code in _ERROR_KINDS:
            if isinstance(e, cls):
                print(f"error {kind}: {e}", file=sys.stderr)
                return code
        print(f"error internal: {e}", file=sys.stderr)  # pragma: no cover
        return 2  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
