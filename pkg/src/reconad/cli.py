"""Command-line front end tying the modules into reproducible experiments.

Commands: ``synth``, ``prepare``, ``train``, ``detect``, ``evaluate``,
``embed``, ``report``. Every command takes a config file (``-c``), writes
into a resolved output directory, and drops the resolved config snapshot
there so each run is self-describing. Outputs are deterministic per
(config, seed) apart from wall-clock fields in training logs.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .config import ExperimentConfig, load_config
from .data import Dataset, load_volume, read_archive, write_archive
from .detection import DetectionResult, detect, save_heatmaps, save_residual_records
from .errors import (
    BoundsError,
    CheckpointError,
    ConfigError,
    ContractError,
    DataIntegrityError,
    DegenerateInputError,
    IngestionError,
    NumericalOverflowError,
    PlacementError,
    SizeError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .evaluation import (
    error_distributions,
    export_latents,
    roc_auc,
    write_embedding_csv,
    write_histogram_csv,
    write_roc_csv,
)
from .models import load_checkpoint, save_checkpoint
from .phantom import make_benchmark
from .preprocess import preprocess_volumes
from .training import train

log = logging.getLogger("reconad")

_USAGE_ERRORS = (ConfigError, ContractError)
_DATA_ERRORS = (
    IngestionError,
    DataIntegrityError,
    DegenerateInputError,
    BoundsError,
    SizeError,
    PlacementError,
    UndefinedMetricError,
    CheckpointError,
)
_NUMERIC_ERRORS = (TrainingDivergedError, NumericalOverflowError)


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Figure helpers
# ---------------------------------------------------------------------------


def _to_tile(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span == 0.0:
        scaled = np.zeros_like(values, dtype=np.float64)
    else:
        scaled = np.clip((values.astype(np.float64) - lo) / span, 0.0, 1.0)
    return np.round(scaled * 255).astype(np.uint8)


def _panel_row(image, reconstruction, residual, mask, upscale: int = 4) -> np.ndarray:
    """Four tiles side by side: input | reconstruction | residual | truth.

    Input and reconstruction share one intensity scale so they are directly
    comparable; the residual is scaled on its own; the mask is binary.
    """
    lo = float(min(image.min(), reconstruction.min()))
    hi = float(max(image.max(), reconstruction.max()))
    tiles = [
        _to_tile(image, lo, hi),
        _to_tile(reconstruction, lo, hi),
        _to_tile(residual, float(residual.min()), float(residual.max())),
        (np.asarray(mask) != 0).astype(np.uint8) * 255,
    ]
    tiles = [np.kron(tile, np.ones((upscale, upscale), dtype=np.uint8)) for tile in tiles]
    separator = np.full((tiles[0].shape[0], upscale), 255, dtype=np.uint8)
    row = []
    for index, tile in enumerate(tiles):
        if index:
            row.append(separator)
        row.append(tile)
    return np.concatenate(row, axis=1)


def _write_panels(result: DetectionResult, masks: np.ndarray, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    for index in range(len(result)):
        row = _panel_row(
            result.images[index],
            result.reconstructions[index],
            result.residuals[index],
            masks[index],
        )
        PILImage.fromarray(row, mode="L").save(directory / f"panel_{index:04d}.png")


def _plot_roc_overlay(curves: dict, path: Path):
    """One ROC plot with a line per model, AUC in the legend."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    for label, roc in curves.items():
        ax.plot(roc.fpr, roc.tpr, label=f"{label} (AUC = {roc.auc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_embedding(embedding, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = np.asarray(embedding.labels)
    fig, ax = plt.subplots(figsize=(6, 6))
    for name, marker in (("healthy", "o"), ("anomalous", "^"), ("prior", ".")):
        chosen = labels == name
        if chosen.any():
            ax.scatter(
                embedding.embedding[chosen, 0],
                embedding.embedding[chosen, 1],
                s=12,
                marker=marker,
                label=name,
                alpha=0.7,
            )
    ax.set_xlabel("dimension 1")
    ax.set_ylabel("dimension 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _require_masks(dataset: Dataset, where: str) -> np.ndarray:
    if dataset.masks is None:
        raise DataIntegrityError(f"{where} has no ground-truth masks")
    return dataset.masks


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(config: ExperimentConfig, args, out: Path):
    spec = config.phantom_spec()
    n_train, n_test = config.phantom_counts()
    log.info("generating %d train / %d test phantoms (seed %d)", n_train, n_test, config.seed)
    bench = make_benchmark(spec, n_train, n_test)
    write_archive(bench.train, out / "train")
    write_archive(bench.test, out / "test")
    write_archive(bench.healthy_test, out / "healthy_test")
    config.save_snapshot(out)
    log.info("wrote archives under %s", out)


def cmd_prepare(config: ExperimentConfig, args, out: Path):
    options = config.prepare_options()
    volumes = [load_volume(path).validate() for path in args.volumes]
    log.info("preprocessing %d volume(s)", len(volumes))
    dataset = preprocess_volumes(
        volumes,
        axis=options["axis"],
        index_range=options["index_range"],
        nonzero_only=options["nonzero_only"],
    )
    write_archive(dataset, out)
    config.save_snapshot(out)
    log.info("wrote %d images to %s", len(dataset), out)


def cmd_train(config: ExperimentConfig, args, out: Path):
    dataset = read_archive(args.data)
    train_config = config.train_config()
    if train_config.model_kind == "vae" and train_config.hyper.lambda_lc != 0:
        log.warning(
            "lambda_lc=%g has no effect on a VAE and is ignored",
            train_config.hyper.lambda_lc,
        )
    out.mkdir(parents=True, exist_ok=True)
    config.save_snapshot(out)
    log.info(
        "training %s for %d epoch(s) on %d images (seed %d)",
        train_config.model_kind, train_config.epochs, len(dataset), config.seed,
    )
    try:
        checkpoint, train_log = train(train_config, dataset, checkpoint_dir=out)
    except TrainingDivergedError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(
                out / "checkpoint_diverged.pt",
                exc.checkpoint.kind,
                exc.checkpoint.descriptor,
                exc.checkpoint.hyper,
                *exc.checkpoint.modules(),
            )
        (out / "divergence.json").write_text(json.dumps(exc.diagnostics, indent=2, sort_keys=True))
        raise
    save_checkpoint(
        out / "checkpoint.pt",
        checkpoint.kind,
        checkpoint.descriptor,
        checkpoint.hyper,
        *checkpoint.modules(),
    )
    train_log.to_csv(out / "train_log.csv")
    train_log.save_summary(out / "train_summary.json")
    log.info(
        "finished %d steps in %.1fs; checkpoint at %s",
        len(train_log.records), train_log.wall_clock_seconds, out / "checkpoint.pt",
    )


def cmd_detect(config: ExperimentConfig, args, out: Path):
    checkpoint = load_checkpoint(args.model)
    dataset = read_archive(args.data)
    log.info("scoring %d images with %s model", len(dataset), checkpoint.kind)
    result = detect(checkpoint, dataset)
    save_residual_records(result.residuals, out / "residuals")
    save_heatmaps(result.residuals, out / "heatmaps")
    config.save_snapshot(out)
    log.info("wrote residual records and heatmaps under %s", out)


def _model_labels(model_paths, label_args):
    if label_args:
        if len(label_args) != len(model_paths):
            raise ConfigError(
                f"got {len(label_args)} --label values for {len(model_paths)} --model values"
            )
        labels = list(label_args)
    else:
        labels = [Path(path).resolve().parent.name or Path(path).stem for path in model_paths]
    seen = {}
    unique = []
    for label in labels:
        count = seen.get(label, 0)
        seen[label] = count + 1
        unique.append(label if count == 0 else f"{label}_{count + 1}")
    return unique


def cmd_evaluate(config: ExperimentConfig, args, out: Path):
    options = config.evaluation_options()
    dataset = read_archive(args.data)
    masks = _require_masks(dataset, f"test archive {args.data}")
    labels = _model_labels(args.model, args.label)
    curves = {}
    for label, model_path in zip(labels, args.model):
        checkpoint = load_checkpoint(model_path)
        log.info("evaluating %s (%s model) on %d images", label, checkpoint.kind, len(dataset))
        result = detect(checkpoint, dataset)
        roc = roc_auc(result.residuals.ravel(), masks.ravel())
        dists = error_distributions(
            result.residuals, masks,
            bins=options["bins"], overlap_method=options["overlap_method"],
        )
        model_dir = out / label
        model_dir.mkdir(parents=True, exist_ok=True)
        metrics = {"auc": roc.auc, **dists.metrics()}
        (model_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
        write_roc_csv(roc, model_dir / "roc.csv")
        write_histogram_csv(dists, model_dir / "histograms.csv")
        if options["panels"]:
            _write_panels(result, masks, model_dir / "panels")
        curves[label] = roc
        log.info("%s: auc=%.4f overlap=%.1f%%", label, roc.auc, dists.overlap_percent)
    _plot_roc_overlay(curves, out / "roc_curves.png")
    config.save_snapshot(out)


def cmd_embed(config: ExperimentConfig, args, out: Path):
    options = config.embedding_options()
    checkpoint = load_checkpoint(args.model)
    healthy = read_archive(args.healthy)
    anomalous = read_archive(args.anomalous)
    log.info(
        "embedding %d healthy + %d anomalous codes + %d prior samples",
        len(healthy), len(anomalous), options["prior_samples"],
    )
    embedding = export_latents(
        checkpoint,
        healthy.images,
        anomalous.images,
        prior_sample_count=options["prior_samples"],
        seed=config.seed,
        perplexity=options["perplexity"],
        iterations=options["iterations"],
    )
    out.mkdir(parents=True, exist_ok=True)
    write_embedding_csv(embedding, out / "embedding.csv", include_latents=args.include_latents)
    _plot_embedding(embedding, out / "embedding.png")
    config.save_snapshot(out)
    log.info("wrote embedding CSV and scatter to %s", out)


def _collect_metrics(run_dirs):
    """Find (label, metrics, roc_csv) triples under evaluation output dirs."""
    found = []
    for run in run_dirs:
        run = Path(run)
        candidates = sorted(run.glob("*/metrics.json"))
        if (run / "metrics.json").exists():
            candidates.insert(0, run / "metrics.json")
        if not candidates:
            raise IngestionError(f"no metrics.json found under {run}")
        for metrics_path in candidates:
            label = metrics_path.parent.name if metrics_path.parent != run else run.name
            try:
                metrics = json.loads(metrics_path.read_text())
            except json.JSONDecodeError as exc:
                raise IngestionError(f"invalid metrics file {metrics_path}: {exc}") from exc
            roc_path = metrics_path.parent / "roc.csv"
            found.append((label, metrics, roc_path if roc_path.exists() else None))
    seen = {}
    unique = []
    for label, metrics, roc_path in found:
        count = seen.get(label, 0)
        seen[label] = count + 1
        unique.append((label if count == 0 else f"{label}_{count + 1}", metrics, roc_path))
    return unique


def _read_roc_csv(path: Path):
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    fpr = np.array([float(row["fpr"]) for row in rows])
    tpr = np.array([float(row["tpr"]) for row in rows])
    return fpr, tpr


def cmd_report(config: ExperimentConfig, args, out: Path):
    entries = _collect_metrics(args.runs)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["auc", "mu_h", "sigma_h", "mu_a", "sigma_a", "overlap_percent"]
    with open(out / "summary.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model"] + columns)
        for label, metrics, _ in entries:
            writer.writerow([label] + [repr(float(metrics[c])) for c in columns])

    ranked = sorted(entries, key=lambda entry: -entry[1]["auc"])
    lines = [
        "# Evaluation summary",
        "",
        "| model | AUC | mu_h | sigma_h | mu_a | sigma_a | overlap % |",
        "| --- | --- | --- | --- | --- | --- | --- |",
    ]
    for label, metrics, _ in ranked:
        lines.append(
            "| {} | {:.4f} | {:.4f} | {:.4f} | {:.4f} | {:.4f} | {:.1f} |".format(
                label, metrics["auc"], metrics["mu_h"], metrics["sigma_h"],
                metrics["mu_a"], metrics["sigma_a"], metrics["overlap_percent"],
            )
        )
    lines.append("")
    lines.append(f"Best AUC: {ranked[0][0]} ({ranked[0][1]['auc']:.4f})")
    (out / "report.md").write_text("\n".join(lines) + "\n")

    class _Curve:
        def __init__(self, fpr, tpr, auc):
            self.fpr, self.tpr, self.auc = fpr, tpr, auc

    curves = {}
    for label, metrics, roc_path in entries:
        if roc_path is not None:
            fpr, tpr = _read_roc_csv(roc_path)
            curves[label] = _Curve(fpr, tpr, metrics["auc"])
    if curves:
        _plot_roc_overlay(curves, out / "roc_curves.png")
    config.save_snapshot(out)
    log.info("report for %d model(s) written to %s", len(entries), out)


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("-c", "--config", required=True, help="experiment config file (YAML)")
    parser.add_argument("-o", "--output", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. --set hyperparameters.lambda_lc=0.5",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="reconad",
        description="Reconstruction-based anomaly detection experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    sub = commands.add_parser("synth", help="generate phantom train/test archives")
    _add_common(sub)
    sub.set_defaults(func=cmd_synth, default_name="synth")

    sub = commands.add_parser("prepare", help="preprocess volumes into an archive")
    _add_common(sub)
    sub.add_argument("volumes", nargs="+", help="volume files (NIfTI or raw)")
    sub.set_defaults(func=cmd_prepare, default_name="prepared")

    sub = commands.add_parser("train", help="train a model on an archive")
    _add_common(sub)
    sub.add_argument("-d", "--data", required=True, help="training archive directory")
    sub.set_defaults(func=cmd_train, default_name="train")

    sub = commands.add_parser("detect", help="score an archive with a checkpoint")
    _add_common(sub)
    sub.add_argument("-m", "--model", required=True, help="checkpoint file")
    sub.add_argument("-d", "--data", required=True, help="archive directory to score")
    sub.set_defaults(func=cmd_detect, default_name="detect")

    sub = commands.add_parser("evaluate", help="compute metrics and figures on a test archive")
    _add_common(sub)
    sub.add_argument(
        "-m", "--model", required=True, action="append",
        help="checkpoint file (repeat to overlay several models)",
    )
    sub.add_argument(
        "--label", action="append", default=[],
        help="label for the matching --model (defaults to its directory name)",
    )
    sub.add_argument("-d", "--data", required=True, help="test archive directory (with masks)")
    sub.set_defaults(func=cmd_evaluate, default_name="evaluate")

    sub = commands.add_parser("embed", help="export a 2-D latent embedding")
    _add_common(sub)
    sub.add_argument("-m", "--model", required=True, help="checkpoint file")
    sub.add_argument("--healthy", required=True, help="healthy archive directory")
    sub.add_argument("--anomalous", required=True, help="anomalous archive directory")
    sub.add_argument("--include-latents", action="store_true",
                     help="also write raw latent coordinates to the CSV")
    sub.set_defaults(func=cmd_embed, default_name="embed")

    sub = commands.add_parser("report", help="summarize one or more evaluation runs")
    _add_common(sub)
    sub.add_argument("runs", nargs="+", help="evaluation output directories")
    sub.set_defaults(func=cmd_report, default_name="report")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        config = load_config(args.config, overrides)
        out = config.resolve_output_dir(args.output, default_name=args.default_name)
        config.output_dir = str(out)
        args.func(config, args, out)
    except _USAGE_ERRORS as exc:
        log.error("%s", exc)
        return 1
    except _DATA_ERRORS as exc:
        log.error("%s", exc)
        return 2
    except _NUMERIC_ERRORS as exc:
        log.error("%s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
