"""Exception types shared across the package.

The CLI maps these onto its documented exit codes: config/input problems
exit 2, missing prerequisites exit 3, checkpoint trouble exits 4.
"""


class SemcomError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SemcomError, ValueError):
    """Invalid configuration value, unknown config key, or bad argument."""


class ShapeError(SemcomError, ValueError):
    """Tensor shapes inconsistent with what an operation requires."""


class DegenerateInputError(SemcomError, ValueError):
    """Input is structurally valid but degenerate (zero norm, empty batch...)."""


class DataError(SemcomError):
    """Dataset files missing or corrupt at the configured root."""


class CheckpointError(SemcomError):
    """Checkpoint cannot be loaded (bad file, wrong topology)."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint content hash does not match its header."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint loads but does not fit the requested configuration."""


class MissingPrerequisiteError(SemcomError):
    """A required earlier artifact (e.g. a stage-1 checkpoint) is absent."""


class TrainingDivergedError(SemcomError):
    """Loss became non-finite or exceeded the divergence guard threshold."""
