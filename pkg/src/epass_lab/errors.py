"""Exception and warning types raised across the package."""


class EpassError(Exception):
    """Base class for all package errors."""


class ZeroVector(EpassError, ValueError):
    pass


class NonPositiveTemperature(EpassError, ValueError):
    pass


class ShapeMismatch(EpassError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class NonFiniteValue(EpassError, FloatingPointError):
    pass


class NonDeterministicLoss(EpassError, RuntimeError):
    pass


class InvalidSpec(EpassError, ValueError):
    pass


class UnknownSlot(EpassError, KeyError):
    pass


class EmptyBank(EpassError, ValueError):
    pass


class InfeasibleSplit(EpassError, ValueError):
    pass


class InvalidLambda(EpassError, ValueError):
    pass


class EmptySet(EpassError, ValueError):
    pass


class EmptyLog(EpassError, ValueError):
    pass


class CorruptCheckpoint(EpassError, ValueError):
    pass


class ConfigError(EpassError, ValueError):
    """Invalid experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class TrainingAborted(EpassError, RuntimeError):
    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"training aborted at step {step}: {cause}")


class DegenerateRunningMean(UserWarning):
    """Distribution-alignment running mean had a near-zero class entry."""


class UndefinedClassMetric(UserWarning):
    """A per-class metric is undefined (no positives or no negatives)."""


class InvalidDistribution(EpassError, ValueError):
    pass
