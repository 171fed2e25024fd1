"""Exception hierarchy shared across the package.

Errors are grouped by the CLI exit code they map to: configuration/usage
problems, data problems, and numerical failures.
"""


class ReconadError(Exception):
    """Base class for all package errors."""


class ConfigError(ReconadError):
    """Invalid configuration file or option set."""


class IngestionError(ReconadError):
    """A volume file could not be read."""


class DataIntegrityError(ReconadError):
    """Loaded data violates an invariant (NaN/Inf voxels, bad masks...)."""


class DegenerateInputError(ReconadError):
    """Input has no usable variation (constant intensities, zero variance)."""


class BoundsError(ReconadError):
    """Index or range outside the valid extent."""


class SizeError(ReconadError):
    """Image or volume dimensions unsuitable for the operation."""


class ContractError(ReconadError):
    """Arguments violate an operation's shape/dimension contract."""


class PlacementError(ReconadError):
    """No valid location for an injected anomaly."""


class UndefinedMetricError(ReconadError):
    """Metric is undefined for the given inputs (single class, empty set)."""


class CheckpointError(ReconadError):
    """Checkpoint file is malformed or disagrees with its descriptor."""


class NumericalOverflowError(ReconadError):
    """A network forward pass produced non-finite activations."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingDivergedError(ReconadError):
    """Training hit a non-finite loss; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None, diagnostics=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.diagnostics = diagnostics or {}
