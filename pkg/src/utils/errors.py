"""
Exception hierarchy shared by every ReasonIQ module.
"""

from typing import List, Optional


class ReasonIQError(Exception):
    """Base class for all errors raised by ReasonIQ."""


class ConfigError(ReasonIQError):
    """Invalid configuration value, unknown key, or empty grading reference."""


class ContractViolation(ReasonIQError, ValueError):
    """A caller broke a precondition (length mismatch, bad argument range)."""


class OnPolicyViolation(ReasonIQError):
    """A rollout batch was not sampled under the current policy snapshot."""


class CheckpointError(ReasonIQError):
    """Checkpoint file cannot be read, or was written for another vocabulary."""


class LexiconError(ReasonIQError):
    """Behavior lexicon file is malformed."""


class RuleError(ReasonIQError):
    """A curation pattern rule failed to compile."""

    def __init__(self, index: int, rule: str, reason: str):
        self.index = index
        self.rule = rule
        super().__init__(f"rule #{index} {rule!r} is invalid: {reason}")


class CorpusError(ReasonIQError):
    """Corpus rows are missing a column the requested stage needs."""

    def __init__(self, message: str, offending_ids: Optional[List[str]] = None):
        self.offending_ids = list(offending_ids or [])
        if self.offending_ids:
            shown = ", ".join(self.offending_ids[:10])
            more = "" if len(self.offending_ids) <= 10 else f" (+{len(self.offending_ids) - 10} more)"
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class UndefinedTransferError(ReasonIQError, ZeroDivisionError):
    """Transfer rate requested while the linguistic emergence rate is zero."""


class UndefinedCorrelationError(ReasonIQError):
    """Correlation requested over a constant or too-short series."""
