"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when a dataset or one of its columns is malformed."""


class EstimationError(RuntimeError):
    """Raised when an estimator cannot produce a valid estimate."""


class ConfigError(ValueError):
    """Raised when a run configuration fails validation.

    Carries every problem found, not just the first, so a user can fix a
    config in one pass.  ``errors`` is a list of ``(path, message)`` pairs
    where ``path`` is a slash-separated location inside the config document.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {message}" for path, message in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
