"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DimensionError(ValueError):
    """Array shapes do not conform."""


class FormatError(ValueError):
    """Binary or text file does not follow the expected layout."""


class DataError(ValueError):
    """Training data violates a labelling constraint."""


class UnknownClassError(KeyError):
    """A class id or class name is not in the catalog / embedding table."""

    def __str__(self):
        # KeyError repr-quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""
