from typing import List, Optional


class GCMError(Exception):
    """Base class for every error raised by the counterfactual toolkit"""


class ShapeError(GCMError, ValueError):
    """Tensor or vector dimensions do not match the configured model"""


class EmptyInputError(GCMError, ValueError):
    """A required collection (dataset, targets, grid, negatives) is empty"""


class ConfigValidationError(GCMError):
    """Run configuration violates one or more invariants"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) or "invalid configuration")


class BundleError(GCMError):
    """Dataset bundle could not be read or is inconsistent"""


class BundleFormatError(BundleError):
    """Bundle bytes are malformed: bad magic, version, or truncated blocks"""


class BundleValidationError(BundleError):
    """Bundle decoded but violates a dataset invariant"""


class CheckpointFormatError(GCMError):
    """Tensor container bytes are malformed"""


class NonFiniteLossError(GCMError, FloatingPointError):
    """A loss term became NaN or infinite during training"""

    def __init__(
        self,
        term: str,
        value: float,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
    ):
        self.term = term
        self.value = value
        self.epoch = epoch
        self.step = step
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        location = f" at {', '.join(where)}" if where else ""
        super().__init__(f"non-finite loss term '{term}' = {value}{location}")


class ContractViolationError(GCMError):
    """An oracle transformation broke its declared contract"""


class RankDeficiencyError(GCMError):
    """Synthetic generator could not be drawn with full column rank"""
