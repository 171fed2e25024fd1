"""Experiment configuration: one YAML document driving every command.

The document is validated up front — unknown keys anywhere are rejected so
typos fail loudly instead of silently falling back to defaults. Precedence,
lowest to highest: built-in defaults, the config file, ``--set`` overrides,
dedicated command-line flags (``--seed``, ``--output``).

The default output root comes from the ``RECONAD_OUTPUT_ROOT`` environment
variable (falling back to the working directory); everything else is
configured through the document or flags.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .models import ArchitectureDescriptor, Hyperparameters
from .phantom import PhantomSpec
from .training import TrainConfig

OUTPUT_ROOT_VARIABLE = "RECONAD_OUTPUT_ROOT"
SNAPSHOT_NAME = "config.snapshot.yaml"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


def _type_checker(kinds, label):
    def check(path, value):
        if isinstance(value, bool) and bool not in kinds:
            raise ConfigError(f"{path}: expected {label}, got {value!r}")
        if not isinstance(value, kinds):
            raise ConfigError(f"{path}: expected {label}, got {value!r}")
        return value

    return check


_int = _type_checker((int,), "an integer")
_number = _type_checker((int, float), "a number")
_bool = _type_checker((bool,), "a boolean")
_string = _type_checker((str,), "a string")


def _nullable(checker):
    def check(path, value):
        return None if value is None else checker(path, value)

    return check


def _pair(path, value):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"{path}: expected a [low, high] pair of numbers, got {value!r}")
    return (float(value[0]), float(value[1]))


def _int_list(path, value):
    if (not isinstance(value, (list, tuple)) or not value
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"{path}: expected a non-empty list of integers, got {value!r}")
    return tuple(int(v) for v in value)


def _choice(*options):
    def check(path, value):
        if value not in options:
            raise ConfigError(f"{path}: expected one of {options}, got {value!r}")
        return value

    return check


_SCHEMA = {
    "seed": _int,
    "output_dir": _nullable(_string),
    "phantom": {
        "n_train": _int,
        "n_test": _int,
        "semi_axis_a": _pair,
        "semi_axis_b": _pair,
        "orientation": _pair,
        "texture_amplitude": _pair,
        "texture_smoothness": _number,
        "center_jitter": _number,
        "base_intensity": _number,
        "edge_softness": _number,
        "anomaly_radius": _pair,
        "anomaly_offset": _pair,
    },
    "prepare": {
        "axis": _int,
        "index_range": _nullable(_pair),
        "nonzero_only": _bool,
    },
    "model": {
        "kind": _choice("vae", "aae"),
        "image_size": _int,
        "channels": _int_list,
        "latent_dim": _int,
        "critic_hidden": _int,
        "critic_layers": _int,
        "norm_groups": _int,
    },
    "hyperparameters": {
        "lambda_lc": _number,
        "lambda_gp": _number,
        "learning_rate": _number,
        "beta1": _number,
        "beta2": _number,
        "batch_size": _int,
        "n_critic": _int,
        "kl_weight": _number,
    },
    "training": {
        "epochs": _int,
        "checkpoint_every": _int,
        "stop_consistency_gradient": _bool,
    },
    "evaluation": {
        "bins": _int,
        "overlap_method": _choice("percentile", "gaussian"),
        "panels": _bool,
    },
    "embedding": {
        "prior_samples": _int,
        "perplexity": _number,
        "iterations": _int,
    },
}

_TRAINING_DEFAULTS = {"epochs": 20, "checkpoint_every": 0, "stop_consistency_gradient": False}
_EVALUATION_DEFAULTS = {"bins": 100, "overlap_method": "percentile", "panels": True}
_EMBEDDING_DEFAULTS = {"prior_samples": 200, "perplexity": 30.0, "iterations": 1000}
_PREPARE_DEFAULTS = {"axis": 2, "index_range": None, "nonzero_only": True}
_PHANTOM_COUNTS = {"n_train": 2000, "n_test": 200}


def _validate(document: dict) -> dict:
    """Walk the document against the schema, normalizing values.

    Raises ConfigError naming the offending key for unknown keys, unknown
    sections, and type mismatches.
    """
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(f"config document must be a mapping, got {type(document).__name__}")
    out = {}
    for key, value in document.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        entry = _SCHEMA[key]
        if isinstance(entry, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping of options, got {value!r}")
            section = {}
            for sub, subvalue in value.items():
                if sub not in entry:
                    raise ConfigError(f"unknown config key {key + '.' + str(sub)!r}")
                section[sub] = entry[sub](f"{key}.{sub}", subvalue)
            out[key] = section
        else:
            out[key] = entry(key, value)
    return out


def apply_overrides(document: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of a raw document.

    Values are parsed as YAML scalars, so ``training.epochs=5`` and
    ``model.channels=[16,32]`` both work. Validation happens afterwards.
    """
    document = dict(document or {})
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override {override!r} is not of the form key=value")
        dotted, _, raw = override.partition("=")
        try:
            value = yaml.safe_load(raw) if raw != "" else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {override!r}: unparsable value ({exc})") from exc
        parts = dotted.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override {override!r} has an empty key component")
        if len(parts) == 1:
            document[parts[0]] = value
        elif len(parts) == 2:
            section = dict(document.get(parts[0]) or {})
            section[parts[1]] = value
            document[parts[0]] = section
        else:
            raise ConfigError(f"override key {dotted!r} nests deeper than section.key")
    return document


# ---------------------------------------------------------------------------
# The validated configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """A validated experiment document with typed accessors per module."""

    seed: int = 0
    output_dir: str | None = None
    phantom: dict = field(default_factory=dict)
    prepare: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    hyperparameters: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, document: dict) -> "ExperimentConfig":
        data = _validate(document)
        config = cls(**data)
        # Build every typed object once so semantic problems (out-of-range
        # hyperparameters, bad architecture) surface before any work starts.
        config.phantom_spec()
        config.phantom_counts()
        config.train_config()
        config.prepare_options()
        config.evaluation_options()
        config.embedding_options()
        return config

    # -- typed accessors ----------------------------------------------------

    def architecture(self) -> ArchitectureDescriptor:
        options = {k: v for k, v in self.model.items() if k != "kind"}
        return ArchitectureDescriptor(**options)

    def model_kind(self) -> str:
        return self.model.get("kind", "vae")

    def hyper(self) -> Hyperparameters:
        return Hyperparameters(**self.hyperparameters)

    def phantom_spec(self) -> PhantomSpec:
        options = {k: v for k, v in self.phantom.items() if k not in _PHANTOM_COUNTS}
        return PhantomSpec(seed=self.seed, n_images=1, **options)

    def phantom_counts(self) -> tuple[int, int]:
        n_train = self.phantom.get("n_train", _PHANTOM_COUNTS["n_train"])
        n_test = self.phantom.get("n_test", _PHANTOM_COUNTS["n_test"])
        if n_train < 1 or n_test < 1:
            raise ConfigError("phantom.n_train and phantom.n_test must be >= 1")
        return n_train, n_test

    def train_config(self) -> TrainConfig:
        options = {**_TRAINING_DEFAULTS, **self.training}
        return TrainConfig(
            model_kind=self.model_kind(),
            architecture=self.architecture(),
            hyper=self.hyper(),
            epochs=options["epochs"],
            seed=self.seed,
            checkpoint_every=options["checkpoint_every"],
            stop_consistency_gradient=options["stop_consistency_gradient"],
        )

    def prepare_options(self) -> dict:
        options = {**_PREPARE_DEFAULTS, **self.prepare}
        if options["index_range"] is not None:
            low, high = options["index_range"]
            options["index_range"] = (int(low), int(high))
        return options

    def evaluation_options(self) -> dict:
        options = {**_EVALUATION_DEFAULTS, **self.evaluation}
        if options["bins"] < 1:
            raise ConfigError("evaluation.bins must be >= 1")
        return options

    def embedding_options(self) -> dict:
        options = {**_EMBEDDING_DEFAULTS, **self.embedding}
        if options["prior_samples"] < 0:
            raise ConfigError("embedding.prior_samples must be >= 0")
        if options["iterations"] < 250:
            raise ConfigError("embedding.iterations must be >= 250")
        return options

    # -- resolution and snapshots ------------------------------------------

    def resolve_output_dir(self, cli_value=None, default_name: str = "run") -> Path:
        """Pick the output directory: flag beats config beats root/<name>.

        Relative paths land under the output root taken from the
        ``RECONAD_OUTPUT_ROOT`` environment variable (default: cwd).
        """
        root = Path(os.environ.get(OUTPUT_ROOT_VARIABLE, "."))
        chosen = cli_value or self.output_dir or default_name
        chosen = Path(chosen)
        return chosen if chosen.is_absolute() else root / chosen

    def resolved(self) -> dict:
        """The full document with every default filled in explicitly."""
        spec = self.phantom_spec()
        n_train, n_test = self.phantom_counts()
        phantom = {
            "n_train": n_train,
            "n_test": n_test,
            "semi_axis_a": list(spec.semi_axis_a),
            "semi_axis_b": list(spec.semi_axis_b),
            "orientation": list(spec.orientation),
            "texture_amplitude": list(spec.texture_amplitude),
            "texture_smoothness": spec.texture_smoothness,
            "center_jitter": spec.center_jitter,
            "base_intensity": spec.base_intensity,
            "edge_softness": spec.edge_softness,
            "anomaly_radius": list(spec.anomaly_radius),
            "anomaly_offset": list(spec.anomaly_offset),
        }
        prepare = self.prepare_options()
        if prepare["index_range"] is not None:
            prepare["index_range"] = list(prepare["index_range"])
        model = {"kind": self.model_kind(), **self.architecture().to_dict()}
        model["channels"] = list(model["channels"])
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "phantom": phantom,
            "prepare": prepare,
            "model": model,
            "hyperparameters": self.hyper().to_dict(),
            "training": {**_TRAINING_DEFAULTS, **self.training},
            "evaluation": self.evaluation_options(),
            "embedding": self.embedding_options(),
        }

    def save_snapshot(self, directory) -> Path:
        """Write the resolved document so the output is self-describing."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / SNAPSHOT_NAME
        path.write_text(yaml.safe_dump(self.resolved(), sort_keys=True))
        return path


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read, override, and validate a YAML experiment document."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        document = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    document = apply_overrides(document, overrides)
    return ExperimentConfig.from_mapping(document)
