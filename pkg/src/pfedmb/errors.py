"""Exception hierarchy for the pfedmb package."""


class PfedmbError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PfedmbError):
    """Structurally invalid inputs: shape mismatches, infeasible specs."""


class UsageError(PfedmbError):
    """A call that is malformed at runtime, e.g. an empty batch."""


class NumericError(PfedmbError):
    """Non-finite values encountered during computation."""


class ParseError(PfedmbError):
    """Malformed input file; the message names the offending location."""


class PartitionError(PfedmbError):
    """A partitioner could not produce a usable split."""


class ValidationError(PfedmbError):
    """Invalid experiment configuration; lists every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
