"""Exception hierarchy shared across the workbench.

Each error class carries the process exit code the CLI maps it to, so
command handlers can translate failures uniformly.
"""

from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for all workbench errors."""

    exit_code = 1


class ConfigError(WorkbenchError):
    """Invalid configuration, dimension mismatch, or unknown option."""

    exit_code = 2


class NumericError(WorkbenchError):
    """Non-finite inputs or numerical corruption during a run."""

    exit_code = 3


class CheckpointError(WorkbenchError):
    """Checkpoint file cannot be read or written."""

    exit_code = 4


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file is shorter than its header declares."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload fails integrity checks."""


class OutputExistsError(WorkbenchError):
    """Refusing to overwrite an existing run directory without --force."""

    exit_code = 4
