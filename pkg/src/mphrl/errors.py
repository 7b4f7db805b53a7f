"""Exception types shared across the package."""

from __future__ import annotations


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class InvalidBatchError(ContractError):
    """Batch cannot be processed in the requested mode (e.g. BN train mode with one row)."""


class InvalidConfigError(ContractError):
    pass


class InsufficientDataError(RuntimeError):
    """Replay buffer holds fewer transitions than requested."""


class InsufficientPositivesError(RuntimeError):
    """Too few positive samples to fit an initiation classifier."""

    def __init__(self, n_positives: int, required: int):
        super().__init__(f"need at least {required} positive samples, got {n_positives}")
        self.n_positives = n_positives
        self.required = required


class ChainIncompleteError(RuntimeError):
    """Skill chaining stopped before the start state was covered.

    ``chain`` holds the primitives built so far (goal-most first).
    """

    def __init__(self, message: str, chain: list):
        super().__init__(message)
        self.chain = chain


class NoAvailableOptionError(RuntimeError):
    pass


class FormatVersionError(RuntimeError):
    pass


class CorruptionError(RuntimeError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
