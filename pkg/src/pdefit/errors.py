"""Exception hierarchy shared across the package.

Every error raised by the library derives from PdefitError so the CLI can map
failures to stable exit codes: validation problems exit 2, numerical
instability exits 3, storage corruption or format-version trouble exits 4.
"""

from __future__ import annotations


class PdefitError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(PdefitError):
    """Invalid configuration, parameters, or inputs."""

    exit_code = 2


class GridMismatchError(ValidationError):
    """Two objects live on different grids but were combined."""


class DegenerateInputError(ValidationError):
    """An input is degenerate for the requested operation (e.g. zero variance)."""


class UnreachableTargetError(ValidationError):
    """A requested target value cannot be achieved by the search family."""


class InstabilityError(PdefitError):
    """The time stepper produced a non-finite state."""

    exit_code = 3

    def __init__(self, message: str, *, step: int | None = None,
                 term: str | None = None, sample: int | None = None):
        super().__init__(message)
        self.step = step
        self.term = term
        self.sample = sample


class StorageError(PdefitError):
    """Problems reading or writing on-disk artifacts."""

    exit_code = 4


class CorruptArtifactError(StorageError):
    """A stored blob failed its checksum or byte-level comparison."""

    def __init__(self, message: str, *, blob: str | None = None,
                 offset: int | None = None):
        super().__init__(message)
        self.blob = blob
        self.offset = offset


class UnsupportedVersionError(StorageError):
    """The artifact's format version is not supported by this build."""
