"""Exception hierarchy shared by all canlab modules."""


class CanLabError(Exception):
    """Base class for every error raised by this package."""


# --- framing / codec ---

class InvalidFrame(CanLabError):
    """Frame violates CAN 2.0A constraints (id range, dlc, payload length)."""


class StuffError(CanLabError):
    """Six identical consecutive bits inside the stuffed region."""


class CrcError(CanLabError):
    """Recomputed CRC-15 does not match the transmitted CRC field."""


class FormError(CanLabError):
    """Fixed-form bit (delimiter, EOF) has the wrong level, or truncated frame."""


class DuplicateId(CanLabError):
    """Two simultaneous contenders share the same arbitration field."""


# --- simulation engine ---

class PastEvent(CanLabError):
    """Attempt to schedule an event before the current simulation time."""


class UnknownNode(CanLabError):
    pass


class UnknownSensor(CanLabError):
    pass


class UnknownSignal(CanLabError):
    """Signal name not present in the engine's signal registry."""


# --- attack injection ---

class ConflictingAttack(CanLabError):
    """An attack of the same kind is already active."""


class InvalidProfile(CanLabError):
    pass


class UnknownHandle(CanLabError):
    pass


class ParseError(CanLabError):
    """Replay CSV line could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyTrace(CanLabError):
    pass


# --- IDS ---

class DimensionMismatch(CanLabError):
    pass


class ModelNotLoaded(CanLabError):
    pass


class InsufficientData(CanLabError):
    pass


# --- monitoring ---

class CaptureOverflow(CanLabError):
    """Capture buffer exceeded its configured sample limit."""


# --- control service / scenarios ---

class ValidationError(CanLabError):
    """Scenario or command document failed validation."""


class ScriptError(CanLabError):
    """A scripted step failed; carries the 0-based step index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class UnknownOp(CanLabError):
    pass


class EngineBusy(CanLabError):
    pass


class AuthError(CanLabError):
    pass
