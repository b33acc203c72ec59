"""Exception taxonomy shared across the toolkit.

Every error carries a stable machine-readable ``code`` so that tools
(CLI exit paths, the HTTP service, fixture tests) can match on it
without parsing messages.
"""

from __future__ import annotations


class OxdrError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


# --- extension registry ------------------------------------------------------

class RegistryError(OxdrError):
    code = "registry_error"


class DuplicateTypeNameError(RegistryError):
    code = "duplicate_type_name"


class ReservedTypeNameError(RegistryError):
    code = "reserved_type_name"


# --- encoding ----------------------------------------------------------------

class EncodeError(OxdrError):
    code = "encode_error"


class NonFiniteValueError(EncodeError):
    """NaN/Inf cannot be represented portably in the text encoding."""

    code = "non_finite_value"


# --- decoding ----------------------------------------------------------------

class DecodeError(OxdrError):
    """Base for stream decoding failures.

    ``line`` is 1-based and only meaningful for the text encoding;
    ``offset`` is the byte offset of the failing record in the source.
    """

    code = "decode_error"

    def __init__(self, message: str, *, line: int | None = None,
                 offset: int | None = None, **context):
        super().__init__(message, **context)
        self.line = line
        self.offset = offset


class MalformedRecordError(DecodeError):
    code = "malformed_record"


class UnknownKindError(DecodeError):
    code = "unknown_kind"


class UnknownTypeTagError(DecodeError):
    """Value type tag is neither built in nor registered."""

    code = "unknown_type_tag"

    def __init__(self, message: str, *, type_name: str, **kw):
        super().__init__(message, **kw)
        self.type_name = type_name


class TruncationError(DecodeError):
    code = "truncated"


# --- recorder ----------------------------------------------------------------

class RecorderError(OxdrError):
    code = "recorder_error"


class DuplicateDeviceError(RecorderError):
    code = "duplicate_device"


class RecorderStateError(RecorderError):
    code = "recorder_state"


class ClockRegressionError(RecorderError):
    """The injected monotonic clock went backwards; unrecoverable."""

    code = "clock_regression"


class SinkWriteError(RecorderError):
    """A sink write failed mid-session; the output file is truncated."""

    code = "sink_write_failed"


# --- analysis ----------------------------------------------------------------

class AnalysisError(OxdrError):
    code = "analysis_error"


class EmptySelectionError(AnalysisError):
    """Selector matched no feature that could populate a table."""

    code = "empty_selection"


class AmbiguousParticipantError(AnalysisError):
    """More than one questionnaire response shares a participant id."""

    code = "ambiguous_participant"


# --- configuration -----------------------------------------------------------

class ConfigError(OxdrError):
    code = "config_error"
