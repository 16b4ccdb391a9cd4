"""Exception hierarchy shared across the package.

Callers that need coarse classes (e.g. the CLI exit-code mapping) catch the
three roots: ContractError for bad calls, ConfigError for invalid
configuration, DataError for malformed external data.
"""


class VisoundError(Exception):
    pass


class ContractError(VisoundError):
    """A function was called outside its documented preconditions."""


class DimensionError(ContractError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(VisoundError):
    """A configuration value or combination of values is invalid."""


class DataError(VisoundError):
    """External data (file contents, records) violates its format contract."""


class FormatError(DataError):
    """A binary file's byte layout is malformed; message names the field."""


class CheckpointError(DataError):
    """A model checkpoint cannot be decoded or does not match its config."""
