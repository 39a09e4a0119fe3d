"""Pipeline error types with distinct exit codes for the CLI."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class; `exit_code` is what the CLI returns on failure."""

    exit_code = 1


class MissingInputError(PipelineError):
    """A required input file or directory does not exist."""

    exit_code = 10


class MalformedFileError(PipelineError):
    """An input file exists but cannot be parsed or fails validation."""

    exit_code = 11


class ConfigError(PipelineError):
    """A configuration value is missing, out of range, or inconsistent."""

    exit_code = 12


class DataError(PipelineError):
    """Input data violates a stage precondition (e.g. too few players)."""

    exit_code = 13
