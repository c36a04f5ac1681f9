"""Exception types raised across the package."""


class UTError(Exception):
    """Base class for all package errors."""


class ShapeError(UTError, ValueError):
    pass


class DegenerateRowError(UTError, ValueError):
    """A softmax row had no finite entry (every key masked)."""


class ContractError(UTError, ValueError):
    pass


class ConfigError(UTError, ValueError):
    """Invalid configuration. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class VocabularyError(UTError, ValueError):
    pass


class LengthError(UTError, ValueError):
    pass


class CheckpointError(UTError):
    """Malformed or inconsistent checkpoint (manifest/blob mismatch)."""


class NonFiniteError(UTError, FloatingPointError):
    pass


class TrainingDiverged(UTError):
    def __init__(self, message, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
