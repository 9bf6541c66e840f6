"""Error hierarchy for BNMR training, inference and file handling.

Each error also derives from the builtin exception a caller would naturally
catch (``ValueError`` for bad inputs, ``ZeroDivisionError`` for conditioning on
an impossible event), so generic handlers keep working.
"""

from pathlib import Path

__all__ = [
    "BnmrError",
    "CalibrationError",
    "CapacityError",
    "ConfigurationError",
    "DataError",
    "DivergenceError",
    "NetworkStateError",
    "ParseError",
    "SamplingError",
    "ShapeError",
    "UndefinedConditionalError",
]


class BnmrError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BnmrError, ValueError):
    """Invalid configuration value (layer dims, rates, empty micro-set list)."""


class ShapeError(BnmrError, ValueError):
    """Array or sequence length does not match what the operation expects."""


class DataError(BnmrError, ValueError):
    """Input data violates a content rule (NaN, non-binary column, empty buffer)."""


class CapacityError(BnmrError, ValueError):
    """Requested size exceeds a hard cap of an exhaustive algorithm."""


class NetworkStateError(BnmrError, RuntimeError):
    """Bayesian network is in the wrong state for the operation."""


class UndefinedConditionalError(BnmrError, ZeroDivisionError):
    """Conditional probability requested on an event of probability zero."""


class CalibrationError(BnmrError, ZeroDivisionError):
    """Calibrator ratio has a zero-probability denominator."""


class SamplingError(BnmrError, ValueError):
    """Not enough candidate rows to draw a balanced micro validation set."""

    def __init__(self, attribute: str, side: str, deficit: int) -> None:
        """Record which attribute side fell short and by how much.

        Args:
            attribute: Attribute whose micro set could not be drawn
            side: "positive" or "negative" attribute value side
            deficit: Number of missing rows on that side

        """
        self.attribute = attribute
        self.side = side
        self.deficit = deficit
        super().__init__(
            f"Cannot sample micro validation set for attribute '{attribute}': "
            f"{side} side (y=1) is short by {deficit} rows"
        )


class ParseError(BnmrError, ValueError):
    """Malformed input file; carries the file path and 1-based line number."""

    def __init__(self, path: Path | str, line: int, detail: str) -> None:
        """Build a message of the form ``<path>:<line>: <detail>``.

        Args:
            path: File being parsed
            line: 1-based line number of the offending line (0 for whole-file errors)
            detail: What was wrong

        """
        self.path = Path(path)
        self.line = line
        super().__init__(f"{path}:{line}: {detail}")


class DivergenceError(BnmrError, ArithmeticError):
    """Training produced a non-finite loss or parameter vector."""

    def __init__(self, step: int, detail: str) -> None:
        """Attach the global step at which divergence was detected.

        Args:
            step: 1-based global training step
            detail: Which quantity became non-finite

        """
        self.step = step
        super().__init__(f"Training diverged at step {step}: {detail}")
