"""Error taxonomy shared across the package.

Three buckets, mapped to CLI exit codes: bad configuration (2), runtime
failure inside a pipeline stage (1), and malformed serialized data (1).
"""


class VtryonError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(VtryonError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class PipelineError(VtryonError):
    """A pipeline stage failed at runtime; message names the stage."""


class FormatError(VtryonError):
    """Malformed tensor container, manifest, or checkpoint on disk."""
