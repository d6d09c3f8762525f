"""Exception hierarchy used across the package.

Every error raised by library code derives from PipelineError so callers
(and the CLI) can map failures to a small set of categories.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class InvalidInputError(PipelineError):
    """An argument violated an operation's preconditions."""

    category = "invalid-input"


class InvalidConfigError(PipelineError):
    """A configuration value is out of range or inconsistent."""

    category = "invalid-config"


class InvalidVocabularyError(PipelineError):
    """A vocabulary ended up empty or otherwise unusable."""

    category = "invalid-vocabulary"


class EmptyDatasetError(PipelineError):
    """No trainable records remain after filtering."""

    category = "empty-dataset"


class ProviderUnavailableError(PipelineError):
    """The embedding sidecar could not be reached or misbehaved."""

    category = "provider-unavailable"


class NonFiniteLossError(PipelineError):
    """Training produced a NaN/inf loss; carries a diagnostic payload."""

    category = "non-finite-loss"

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FormatError(PipelineError):
    """A file did not conform to its declared on-disk format."""

    category = "format"

    def __init__(self, message: str, *, path=None, line: int | None = None,
                 offset: int | None = None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset
