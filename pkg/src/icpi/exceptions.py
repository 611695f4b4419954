class ConfigurationError(ValueError):
    """Raised for unknown domains, invalid hyperparameters or bad credentials."""


class EpisodeFinishedError(RuntimeError):
    """Raised when stepping an environment whose episode has already ended."""


class ParseFailure(ValueError):
    """A model completion contained no value of the requested kind."""


class BackendUnavailable(RuntimeError):
    """A remote model backend could not be reached after all retries."""
