"""Exception hierarchy shared by the simulator, analytics and CLI."""


class QKDSimError(Exception):
    """Base class for all package errors."""


class DomainError(QKDSimError, ValueError):
    """An argument lies outside the domain of a closed-form quantity."""


class DegenerateSampleError(QKDSimError, ValueError):
    """A statistical correction was requested on an empty sample."""


class NegativeSignalError(QKDSimError, ValueError):
    """Measured singles are below the noise floor."""


class AccidentalDominatedError(QKDSimError, ValueError):
    """Coincidences do not exceed the accidental level, so no finite loss exists."""


class NoKeyError(QKDSimError):
    """The link yields no positive secure key anywhere in the searched range."""

    def __init__(self, message, loss_db=None):
        super().__init__(message)
        self.loss_db = loss_db


class ReconciliationAbort(QKDSimError):
    """Error correction cannot proceed (QBER at or above one half)."""

    def __init__(self, message, qber=None):
        super().__init__(message)
        self.qber = qber


class ConventionError(QKDSimError):
    """Estimated QBER above one half: the outcome convention is inverted."""

    def __init__(self, message, qber_z=None, qber_x=None):
        super().__init__(message)
        self.qber_z = qber_z
        self.qber_x = qber_x


class SyncError(QKDSimError):
    """No significant correlation peak was found between two tag streams."""

    def __init__(self, message, significance=None):
        super().__init__(message)
        self.significance = significance


class CoverageError(QKDSimError, ValueError):
    """A time profile does not cover the requested interval."""


class FormatError(QKDSimError, ValueError):
    """A file does not follow the expected format."""


class ConfigError(QKDSimError, ValueError):
    """Scenario configuration failed validation.

    ``diagnostics`` holds ``(path, message)`` tuples, with dotted JSON paths.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        text = "; ".join(f"{p}: {m}" for p, m in self.diagnostics)
        super().__init__(text or "invalid configuration")


class PipelineError(QKDSimError):
    """Wraps a failure inside the key pipeline with the stage it came from."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
