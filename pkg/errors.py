"""
Exception taxonomy shared by every workbench module.

Argument and data errors derive from ValueError, run-time failures from
RuntimeError, so callers can catch either the specific class or the builtin.
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


# ----------------------------------------------------------------------
# Arithmetic / representation errors
# ----------------------------------------------------------------------

class InvalidModulus(WorkbenchError, ValueError):
    pass


class NotCoprime(WorkbenchError, ValueError):
    pass


class OutOfRange(WorkbenchError, ValueError):
    pass


class ModuliMismatch(WorkbenchError, ValueError):
    pass


class LengthMismatch(WorkbenchError, ValueError):
    pass


class OutOfLegitimateRange(WorkbenchError, ValueError):
    pass


# ----------------------------------------------------------------------
# Analog core simulation
# ----------------------------------------------------------------------

class NonFiniteInput(WorkbenchError, ValueError):
    pass


class ShapeMismatch(WorkbenchError, ValueError):
    pass


class RangeViolation(WorkbenchError, ValueError):
    """Moduli range cannot hold the full dot-product width."""


class InvalidInverterCount(WorkbenchError, ValueError):
    pass


class DigitOverflow(WorkbenchError, ValueError):
    pass


class NumericDrift(WorkbenchError, ValueError):
    """Phase model landed too far from an integer after rescaling."""


# ----------------------------------------------------------------------
# Hybrid RNS + positional numbers
# ----------------------------------------------------------------------

class HybridOverflow(WorkbenchError, ValueError):
    pass


class Unnormalized(WorkbenchError, ValueError):
    pass


class DigitRangeViolation(WorkbenchError, ValueError):
    pass


# ----------------------------------------------------------------------
# Data ingestion
# ----------------------------------------------------------------------

class BadMagic(WorkbenchError, ValueError):
    pass


class TruncatedFile(WorkbenchError, ValueError):
    pass


class CountMismatch(WorkbenchError, ValueError):
    pass


class DownloadFailed(WorkbenchError, RuntimeError):
    pass


# ----------------------------------------------------------------------
# Experiment driver
# ----------------------------------------------------------------------

class ConfigInvalid(WorkbenchError, ValueError):
    pass


class ExperimentFailed(WorkbenchError, RuntimeError):
    pass


class VerificationFailed(WorkbenchError, RuntimeError):
    def __init__(self, failing_suites):
        self.failing_suites = list(failing_suites)
        super().__init__(f"Verification failed: {', '.join(self.failing_suites)}")
