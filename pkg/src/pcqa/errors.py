"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``code`` besides its message so
callers (and tests) can branch on the failure kind without string matching.
"""

from __future__ import annotations


class PcqaError(Exception):
    """Base class for all package errors."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ParseError(PcqaError):
    """PLY document could not be parsed."""


class ManifestError(PcqaError):
    """Dataset manifest is malformed."""


class PartitionError(PcqaError):
    """Cloud cannot be partitioned or patched as requested."""


class GraphError(PcqaError):
    """k-nearest-neighbor graph construction failed."""


class ShapeError(PcqaError):
    """Tensor shapes do not conform to the operation's signature."""

    def __init__(self, message: str):
        super().__init__("shape", message)


class NumericsError(PcqaError):
    """Non-finite value surfaced while debug checks are enabled."""

    def __init__(self, message: str):
        super().__init__("non-finite", message)


class TapeError(PcqaError):
    """Autodiff tape misuse (e.g. backward called twice)."""


class TrainError(PcqaError):
    """Training could not proceed."""


class CheckpointError(PcqaError):
    """Checkpoint file is invalid or incompatible."""


class EvalError(PcqaError):
    """Evaluation input is unusable (e.g. zero-variance scores)."""
