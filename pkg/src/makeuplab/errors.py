"""Exception hierarchy shared across the package."""


class MakeuplabError(Exception):
    """Base class for all package-specific errors."""


class FormatError(MakeuplabError):
    """A file exists but is not in the expected format."""


class ShapeError(MakeuplabError):
    """Tensor/grid shapes are inconsistent with the operation's contract."""


class GenerationError(MakeuplabError):
    """A synthetic sample could not be rendered under the given pose."""


class ConfigurationError(MakeuplabError):
    """Invalid or inconsistent configuration."""


class TrainingError(MakeuplabError):
    """Training produced a non-finite loss or otherwise diverged."""


class CheckpointVersionError(MakeuplabError):
    """Checkpoint file carries an unsupported format version."""


class CheckpointIntegrityError(MakeuplabError):
    """Checkpoint file is truncated or corrupt."""
