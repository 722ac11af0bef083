"""Exception taxonomy.

Every domain error carries a stable ``code`` string so the CLI and tests can
match on it without parsing prose.
"""

from __future__ import annotations


class TmError(Exception):
    """Base class for all toolkit errors."""

    code = "TM_ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class AmbiguousPathError(TmError):
    code = "AMBIGUOUS_PATH"


class UnresolvedElementError(TmError):
    code = "UNRESOLVED_ELEMENT"


class DisconnectedRegionError(TmError):
    code = "DISCONNECTED_REGION"


class DuplicateEventIdError(TmError):
    code = "DUPLICATE_EVENT_ID"


class UnknownEventError(TmError):
    code = "UNKNOWN_EVENT"


class MixedModelsError(TmError):
    code = "MIXED_MODELS"


class CascadeOverflowError(TmError):
    code = "CASCADE_OVERFLOW"


class StimulusTargetError(TmError):
    code = "STIMULUS_TARGET_INVALID"


class UnknownChoicePointError(TmError):
    code = "UNKNOWN_CHOICE_POINT"


class MissingColumnError(TmError):
    code = "MISSING_COLUMN"


class NondeterministicTableError(TmError):
    code = "NONDETERMINISTIC_TABLE"


class EmptyTableError(TmError):
    code = "EMPTY_TABLE"


class UnhandledSignalError(TmError):
    """No table row for the current (state, signal) pair."""

    code = "UNHANDLED_EVENT"

    def __init__(self, state: str, signal: str, position: int):
        super().__init__(f"no transition from {state!r} on {signal!r} (input #{position})")
        self.state = state
        self.signal = signal
        self.position = position


class BadParamsError(TmError):
    code = "BAD_PARAMS"


class StateBudgetError(TmError):
    code = "STATE_BUDGET_EXCEEDED"
