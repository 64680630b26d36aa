"""Main entry point for pdrlab."""

import argparse
import logging
import sys
from collections import Counter
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
from tqdm import tqdm

from .ad.tensor import NonFiniteError, ShapeError, no_grad, set_default_dtype
from .checkpoint import CompatibilityError, check_compatible, load_checkpoint
from .config import (
    ConfigError,
    ExperimentConfig,
    LooccMode,
    ProbeMode,
    check_config,
    config_schema,
    config_to_dict,
    ensure_output_dir,
    load_config,
    set_config,
)
from .db import (
    close_registries,
    finish_run,
    get_session,
    init_db,
    list_evaluations,
    list_runs,
    record_epoch,
    record_evaluation,
    start_run,
)
from .nets import DEFAULT_BLOCKS, parse_blocks
from .renderer import Renderer
from .reports import EpochMetrics, write_report, write_schemas
from .scene import CAMERA_HIGH, CAMERA_LOW, LIGHT_HIGH, LIGHT_LOW, SceneParams
from .scenegen import ALBEDO_CLASSES, SHAPE_CLASSES, SPLITS, Dataset, build_dataset, generator_config_of, load_dataset
from .util.images import save_png
from .util.tensorio import DatasetError, dumps_json, read_json, write_tensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

TASKS = ("cluster", "probe", "disentangle", "attribute", "invariance", "robustness")

# override flag -> component index
CAMERA_OVERRIDES = {"pitch": 0, "yaw": 1, "roll": 2, "tx": 3, "ty": 4, "tz": 5}
LIGHT_OVERRIDES = {"ambient": 0, "diffuse": 1, "light_pitch": 2, "light_yaw": 3}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _blocks_arg(value: str) -> tuple[str, ...]:
    try:
        return parse_blocks(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdrlab", description="Physically disentangled representation experiments")
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--threads", type=int, help="worker threads (env PDR_THREADS)")
    parser.add_argument("--precision", choices=("float32", "float64"), help="tensor precision (env PDR_PRECISION)")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="env PDR_LOG_LEVEL")
    parser.add_argument("--output-dir", type=Path, help="artifact root (env PDR_OUTPUT_DIR)")
    parser.add_argument("--no-progress", action="store_true", help="disable progress bars")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    parser.add_argument("--write-schemas", type=Path, metavar="DIR", help="write config and report schemas to DIR and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("generate", help="generate a synthetic dataset")
    gen.add_argument("--n", type=int, help="number of scenes (default dataset.n)")
    gen.add_argument("--out", type=Path, help="dataset directory (default <output_dir>/dataset)")
    gen.add_argument("--seed", type=int, help="data seed (default seeds.data)")

    train = sub.add_parser("train", help="train an inverse renderer")
    train.add_argument("--dataset", type=Path, help="dataset directory (default <output_dir>/dataset)")
    train.add_argument("--mode", choices=[m.value for m in LooccMode], help="default loocc.mode")
    train.add_argument("--run-dir", type=Path, help="default <output_dir>/run-<mode>")
    train.add_argument("--epochs", type=int, help="default train.max_epochs")
    train.add_argument("--resume", action="store_true", help="continue from <run-dir>/last")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--task", choices=TASKS, required=True)
    ev.add_argument("--checkpoint", type=Path, help="checkpoint directory (best/ or last/)")
    ev.add_argument("--dataset", type=Path, help="dataset directory (default <output_dir>/dataset)")
    ev.add_argument("--label", choices=("shape", "albedo"), help="ground-truth labelling (default probe.label)")
    ev.add_argument("--blocks", type=_blocks_arg, default=DEFAULT_BLOCKS, help="e.g. geom,alb")
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--k", type=int, help="cluster count (default: number of classes)")
    ev.add_argument("--baseline", choices=("model", "pixels"), default="model")
    ev.add_argument("--n-train", type=int, help="labeled probe samples (100, 500, 1000)")
    ev.add_argument("--mode", choices=[m.value for m in ProbeMode], help="probe mode")
    ev.add_argument("--epochs", type=int, help="probe epochs")
    ev.add_argument("--hidden-dim", type=int, help="probe hidden layer width (0 = linear)")
    ev.add_argument("--steps", type=int, default=64, help="integrated-gradients steps")
    ev.add_argument("--target-class", type=int, help="attribute this class instead of the true one")
    ev.add_argument("--range-scale", type=float, default=2.0, help="robustness: light/camera range multiplier")
    ev.add_argument("--perturb", choices=(LooccMode.L.value, LooccMode.LV.value), help="invariance: perturbation mode")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", type=Path, help="report path")

    prev = sub.add_parser("render-preview", help="render a scene with camera/light overrides")
    src = prev.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, help="take scene --index from a dataset")
    src.add_argument("--params", type=Path, help="JSON file with depth, albedo, light, camera")
    prev.add_argument("--checkpoint", type=Path, help="predict the scene from the dataset image instead")
    prev.add_argument("--index", type=int, default=0)
    for name in CAMERA_OVERRIDES:
        prev.add_argument(f"--{name}", type=float, help="camera override")
    for name in LIGHT_OVERRIDES:
        prev.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, help="light override")
    prev.add_argument("--scale", type=int, default=4, help="PNG upscaling factor")
    prev.add_argument("--out", type=Path, help="output directory (default <output_dir>/preview)")

    runs = sub.add_parser("runs", help="list recorded runs")
    runs.add_argument("--limit", type=int, default=20)
    runs.add_argument("--evaluations", action="store_true", help="list evaluations instead")

    return parser


def close_logging() -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == "pdrlab":
            root.removeHandler(handler)
            handler.close()


def setup_logging(config: ExperimentConfig) -> None:
    """Console handler at the configured level plus a file handler under output_dir."""
    close_logging()
    root = logging.getLogger()
    root.setLevel(logging.DEBUG)

    console = logging.StreamHandler(sys.stderr)
    console.set_name("pdrlab")
    console.setLevel(config.log_level)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)

    ensure_output_dir(config)
    file_handler = logging.FileHandler(config.log_path, encoding="utf-8")
    file_handler.set_name("pdrlab")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(file_handler)


@contextmanager
def progress_bar(desc: str, disable: bool = False) -> Iterator[Any]:
    """Yield an on_progress(current, total, message) callback driving a tqdm bar."""
    bar = tqdm(desc=desc, leave=False, disable=disable, file=sys.stderr)

    def update(current: int, total: int, message: str) -> None:
        bar.total = total
        bar.n = current
        bar.set_postfix_str(message, refresh=False)
        bar.refresh()

    try:
        yield update
    finally:
        bar.close()


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then environment, then command-line flags."""
    config = load_config(args.config)
    overrides = {
        key: value
        for key, value in (
            ("threads", args.threads),
            ("precision", args.precision),
            ("log_level", args.log_level),
            ("output_dir", args.output_dir),
        )
        if value is not None
    }
    if overrides:
        try:
            config = replace(config, **overrides)
        except ValueError as e:
            raise ConfigError([f"command-line override: {e}"]) from None
    return check_config(config)


# --- commands ---

def cmd_generate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = args.out or config.dataset_dir
    n = args.n if args.n is not None else config.dataset.n
    seed = args.seed if args.seed is not None else config.seeds.data
    with progress_bar("generate", args.no_progress) as on_progress:
        dataset = build_dataset(
            n, out, seed=seed, fractions=config.dataset.fractions, cfg=config.generator,
            size=config.image_size, render_cfg=config.render, threads=config.threads,
            on_progress=on_progress,
        )
    _print_dataset_summary(dataset, out)
    return EXIT_OK


def _print_dataset_summary(dataset: Dataset, out: Path) -> None:
    print(f"\n📦 Dataset written to {out}")
    print(f"   Scenes: {len(dataset)} ({dataset.image_size}x{dataset.image_size})")
    for name in SPLITS:
        split = dataset.split(name)
        shapes = Counter(int(c) for c in split.shape_labels)
        albedos = Counter(int(c) for c in split.albedo_labels)
        print(f"   {name:<5}  {len(split):>5} scenes")
        print("          shape:  " + ", ".join(f"{SHAPE_CLASSES[c]}={shapes[c]}" for c in sorted(shapes)))
        print("          albedo: " + ", ".join(f"{ALBEDO_CLASSES[c]}={albedos[c]}" for c in sorted(albedos)))
    print()


def _load_dataset(args: argparse.Namespace, config: ExperimentConfig) -> Dataset:
    path = args.dataset or config.dataset_dir
    dataset = load_dataset(path)
    stored = dataset.manifest["config"].get("precision")
    if stored and stored != config.precision:
        logger.warning(f"dataset {path} was generated in {stored}, running in {config.precision}")
    return dataset


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    from .trainer import train

    if args.mode:
        config = replace(config, loocc=replace(config.loocc, mode=LooccMode(args.mode)))
    if args.epochs is not None:
        config = replace(config, train=replace(config.train, max_epochs=args.epochs))
    check_config(config)
    dataset = _load_dataset(args, config)
    run_dir = args.run_dir or config.run_dir()

    init_db(config)
    with get_session(config) as session:
        run_id = start_run(session, run_dir, dataset.path, config, resumed=args.resume)

    def on_epoch(metrics: EpochMetrics) -> None:
        with get_session(config) as session:
            record_epoch(session, run_id, metrics)

    print(f"\n🚀 Training ({config.loocc.mode.value})")
    print(f"   Dataset: {dataset.path} ({len(dataset)} scenes)")
    print(f"   Run dir: {run_dir}")
    print(f"   Epochs:  {config.train.max_epochs}, patience {config.loocc.patience}\n")
    try:
        with progress_bar("train", args.no_progress) as on_progress:
            result = train(dataset, config, run_dir, resume=args.resume, on_progress=on_progress, on_epoch=on_epoch)
    except Exception as e:
        with get_session(config) as session:
            finish_run(session, run_id, "failed", error=str(e))
        raise
    with get_session(config) as session:
        finish_run(
            session, run_id, "stopped" if result.stopped_early else "completed",
            best_epoch=result.best_epoch, best_val=result.best_val, last_epoch=result.last_epoch,
        )

    print(f"✅ Finished at epoch {result.last_epoch}" + (" (early stop)" if result.stopped_early else ""))
    print(f"   Best val recon: {result.best_val:.5f} at epoch {result.best_epoch}")
    print(f"   Checkpoints:    {result.best_dir}, {result.last_dir}")
    print(f"   Metrics:        {run_dir / 'metrics.jsonl'}\n")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig) -> int:
    from .evalkit import tasks

    dataset = _load_dataset(args, config)
    label = args.label or config.probe.label
    probe_cfg = replace(
        config.probe,
        label=label,
        **{k: v for k, v in (
            ("n_train", args.n_train),
            ("epochs", args.epochs),
            ("hidden_dim", args.hidden_dim),
            ("mode", ProbeMode(args.mode) if args.mode else None),
        ) if v is not None},
    )

    model = ckpt = ckpt_str = None
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        check_compatible(ckpt, dataset.image_size)
        model = ckpt.build_model()
        ckpt_str = str(args.checkpoint)
    elif not (args.task == "cluster" and args.baseline == "pixels"):
        raise argparse.ArgumentTypeError(f"--checkpoint is required for task '{args.task}'")

    if args.task == "cluster":
        report = tasks.cluster_task(
            dataset, label, model, args.blocks, args.split, args.k, args.baseline, ckpt_str
        )
    elif args.task == "probe":
        with progress_bar("probe", args.no_progress) as on_progress:
            report = tasks.probe_task(dataset, model, probe_cfg, args.blocks, args.seed, ckpt_str, on_progress)
    elif args.task == "disentangle":
        report = tasks.disentangle_task(dataset, model, args.split, ckpt_str)
    elif args.task == "attribute":
        with progress_bar("attribute", args.no_progress) as on_progress:
            report = tasks.attribute_task(
                dataset, model, probe_cfg, args.steps, args.target_class, args.split, args.seed, ckpt_str, on_progress
            )
    elif args.task == "invariance":
        mode = LooccMode(args.perturb) if args.perturb else LooccMode.LV
        ckpt_cfg = ckpt.config
        report = tasks.invariance_task(
            dataset, model, ckpt_cfg.render, ckpt_cfg.loocc.perturb, mode, args.split, args.seed, ckpt_str
        )
    else:
        report = tasks.robustness_task(
            dataset, model, label, args.blocks, args.range_scale, args.split, config.threads, ckpt_str
        )

    base = args.checkpoint.parent if args.checkpoint else config.output_dir
    out = args.out or base / "eval" / f"{args.task}.json"
    write_report(out, report)
    init_db(config)
    with get_session(config) as session:
        record_evaluation(session, args.task, report, dataset.path, out, args.checkpoint)

    print(f"\n📊 {args.task} → {out}")
    for key, value in report.model_dump(exclude={"per_class", "per_cluster", "raw", "matrix"}).items():
        print(f"   {key}: {value}")
    print()
    return EXIT_OK


def apply_overrides(params: SceneParams, overrides: dict[str, float]) -> tuple[SceneParams, list[str]]:
    """Set camera/light components to absolute values, clamping to their ranges.

    Returns the new params and one warning per clamped value.
    """
    camera = np.array(params.camera, dtype=np.float64, copy=True)
    light = np.array(params.light, dtype=np.float64, copy=True)
    warnings = []
    for name, value in overrides.items():
        if name in CAMERA_OVERRIDES:
            target, i, lo, hi = camera, CAMERA_OVERRIDES[name], CAMERA_LOW, CAMERA_HIGH
        elif name in LIGHT_OVERRIDES:
            target, i, lo, hi = light, LIGHT_OVERRIDES[name], LIGHT_LOW, LIGHT_HIGH
        else:
            raise ValueError(f"unknown override '{name}'")
        clamped = float(np.clip(value, lo[i], hi[i]))
        if clamped != value:
            warnings.append(f"{name}={value:g} outside [{lo[i]:g}, {hi[i]:g}], clamped to {clamped:g}")
        target[..., i] = clamped
    return params.replace(camera=camera, light=light), warnings


def _preview_params(args: argparse.Namespace, config: ExperimentConfig) -> tuple[SceneParams, Renderer]:
    if args.params is not None:
        data = read_json(args.params)
        try:
            params = SceneParams(*(np.asarray(data[k], dtype=np.float64) for k in ("depth", "albedo", "light", "camera")))
        except KeyError as e:
            raise DatasetError(args.params, f"missing field {e}") from None
        return params, Renderer(params.depth.shape[-1], config.render)

    dataset = _load_dataset(args, config)
    if not 0 <= args.index < len(dataset):
        raise ValueError(f"index {args.index} out of range for {len(dataset)} scenes")
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        check_compatible(ckpt, dataset.image_size)
        with no_grad():
            _, predicted = ckpt.build_model()(dataset.images[args.index])
        params = SceneParams(*(t.data[0] for t in predicted.fields()))
        return params, Renderer(dataset.image_size, ckpt.config.render)
    _, render_cfg = generator_config_of(dataset)
    params = SceneParams(
        dataset.depth[args.index], dataset.albedo[args.index], dataset.light[args.index], dataset.camera[args.index]
    )
    return params, Renderer(dataset.image_size, render_cfg)


def cmd_render_preview(args: argparse.Namespace, config: ExperimentConfig) -> int:
    params, renderer = _preview_params(args, config)
    errors = params.range_errors(atol=1e-6)
    if errors:
        raise ValueError("scene parameters out of range: " + "; ".join(errors))
    names = list(CAMERA_OVERRIDES) + list(LIGHT_OVERRIDES)
    overrides = {n: getattr(args, n) for n in names if getattr(args, n) is not None}
    overridden, warnings = apply_overrides(params, overrides)
    for message in warnings:
        logger.warning(message)
        print(f"⚠️  {message}", file=sys.stderr)

    out = args.out or config.output_dir / "preview"
    with no_grad():
        images = {"canonical": renderer(params).data, "override": renderer(overridden).data}
    for name, image in images.items():
        write_tensor(out / f"{name}.pdrt", image)
        save_png(out / f"{name}.png", image, scale=args.scale)

    print(f"\n🖼️  Preview written to {out}")
    print(f"   camera: {np.round(overridden.camera, 3).tolist()}")
    print(f"   light:  {np.round(overridden.light, 3).tolist()}\n")
    return EXIT_OK


def cmd_runs(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if not config.db_path.exists():
        print(f"No runs recorded yet ({config.db_path})")
        return EXIT_OK
    init_db(config)
    with get_session(config) as session:
        if args.evaluations:
            rows = list_evaluations(session, args.limit)
            for e in rows:
                print(f"{e.evaluation_id:>4}  {e.created_at:%Y-%m-%d %H:%M}  {e.task:<12} {e.checkpoint or '-'}  → {e.output_path}")
        else:
            rows = list_runs(session, args.limit)
            for r in rows:
                best = f"{r.best_val:.5f}@{r.best_epoch}" if r.best_val is not None else "-"
                print(
                    f"{r.run_id:>4}  {r.started_at:%Y-%m-%d %H:%M}  {r.mode:<9} {r.status:<10} "
                    f"epochs={r.last_epoch if r.last_epoch is not None else '-':<4} best={best}  {r.run_dir}"
                )
    if not rows:
        print("No entries.")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "render-preview": cmd_render_preview,
    "runs": cmd_runs,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one command, return the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = resolve_config(args)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.print_schema:
        print(dumps_json(config_schema()), end="")
        return EXIT_OK
    if args.write_schemas:
        for path in write_schemas(args.write_schemas):
            print(path)
        return EXIT_OK
    if args.print_config:
        print(dumps_json(config_to_dict(config)), end="")
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    set_config(config)
    set_default_dtype(config.precision)
    close_registries()
    try:
        setup_logging(config)
        return COMMANDS[args.command](args, config)
    except (ConfigError, argparse.ArgumentTypeError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CompatibilityError, ShapeError, NonFiniteError, ValueError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        close_registries()
        close_logging()


def run():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
