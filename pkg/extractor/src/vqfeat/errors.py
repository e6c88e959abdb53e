"""Error taxonomy shared by the library and the CLI.

Exit codes match the downstream training tool: 2 for bad configuration,
3 for bad data or undecodable inputs.
"""


class ExtractorError(Exception):
    exit_code = 1


class ConfigError(ExtractorError):
    """A user-supplied knob is out of range or inconsistent."""

    exit_code = 2


class DataError(ExtractorError):
    """An input file, video, or record is missing or malformed."""

    exit_code = 3
