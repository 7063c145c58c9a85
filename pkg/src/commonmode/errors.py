"""Exception hierarchy shared by the I/O layers and the command line."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(ValueError):
    """Input data that cannot be used (missing, inconsistent, insufficient)."""


class FormatError(DataError):
    """A binary file does not follow its container layout."""


class TruncationError(FormatError):
    pass


class ChecksumError(FormatError):
    pass
