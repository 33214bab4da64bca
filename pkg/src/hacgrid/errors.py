class ConfigurationError(ValueError):
    """Invalid system or scenario description."""


class UsageError(ValueError):
    """Invalid arguments to an analysis routine."""
