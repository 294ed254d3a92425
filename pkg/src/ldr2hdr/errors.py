"""Exception types shared across the package.

Exit-code mapping used by the CLI: usage errors exit 1, data/format errors
exit 2, numeric divergence exits 3.
"""


class FormatError(ValueError):
    """File content does not match the expected format (bad magic, wrong layout)."""


class DataError(ValueError):
    """File parsed but its payload violates an invariant (NaN pixels, size mismatch)."""


class ConfigurationError(ValueError):
    """Components wired together with incompatible configurations."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    Carries the path of the last checkpoint written before the failure, or
    None if no checkpoint exists yet.
    """

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
