"""Domain types for the recording format.

A recording is a metadata header followed by a sequence of snapshots.
Each snapshot captures the state of every device that reported during
one update cycle of the polling clock; each device carries a flat list
of named, typed features.  The hierarchy is:

    RecordingMetadata
    Snapshot -> DeviceRecord -> Feature -> value (tagged union)

All types are immutable after construction and safe to share between
threads.  Constructors normalise representation (tuples, float/int
coercion) but deliberately do not enforce range or uniqueness rules:
those are checked by :func:`validate_record_sequence`, which reports
violations as data instead of raising, so that defective files can be
inspected rather than merely rejected.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Sequence, Union

from .errors import DuplicateTypeNameError, ReservedTypeNameError

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_ONE_US = timedelta(microseconds=1)

FORMAT_VERSION = "1.0.0"


def datetime_to_us(dt: datetime) -> int:
    """Convert an aware datetime to integer microseconds since the Unix epoch."""
    return (dt - _EPOCH) // _ONE_US


def us_to_datetime(us: int) -> datetime:
    """Inverse of :func:`datetime_to_us`; exact for any integer input."""
    return _EPOCH + timedelta(microseconds=us)


def _as_utc(dt: datetime) -> datetime:
    # Naive datetimes are taken to be UTC; aware ones are converted.
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


# ---------------------------------------------------------------------------
# Feature value variants
# ---------------------------------------------------------------------------

class TouchPhase(str, Enum):
    NONE = "none"
    BEGAN = "began"
    MOVED = "moved"
    ENDED = "ended"
    CANCELED = "canceled"


@dataclass(frozen=True)
class Integer:
    """64-bit signed integer sample."""

    value: int

    type_tag = "Integer"

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value))


@dataclass(frozen=True)
class Double:
    """Double-precision scalar sample."""

    value: float

    type_tag = "Double"

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Vector2:
    x: float
    y: float

    type_tag = "Vector2"

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Vector3:
    x: float
    y: float
    z: float

    type_tag = "Vector3"

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))


@dataclass(frozen=True)
class Quaternion:
    """Rotation stored in (x, y, z, w) component order."""

    x: float
    y: float
    z: float
    w: float

    type_tag = "Quaternion"

    def __post_init__(self):
        for name in ("x", "y", "z", "w"):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True)
class Axis:
    """One-dimensional control; valid values lie in [-1, 1]."""

    value: float

    type_tag = "Axis"

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Button:
    """Analog button: value in [0, 1] plus the thresholded pressed state."""

    value: float
    pressed: bool

    type_tag = "Button"

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "pressed", bool(self.pressed))


@dataclass(frozen=True)
class Key:
    code: int
    pressed: bool

    type_tag = "Key"

    def __post_init__(self):
        object.__setattr__(self, "code", int(self.code))
        object.__setattr__(self, "pressed", bool(self.pressed))


@dataclass(frozen=True)
class Stick:
    """Two-axis control; each axis valid in [-1, 1]."""

    x: float
    y: float

    type_tag = "Stick"

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class DPad:
    up: bool
    down: bool
    left: bool
    right: bool

    type_tag = "DPad"

    def __post_init__(self):
        for name in ("up", "down", "left", "right"):
            object.__setattr__(self, name, bool(getattr(self, name)))


@dataclass(frozen=True)
class Touch:
    """Touch control sample; pressure valid in [0, 1]."""

    touch_id: int
    position: Vector2
    pressure: float
    phase: TouchPhase

    type_tag = "Touch"

    def __post_init__(self):
        object.__setattr__(self, "touch_id", int(self.touch_id))
        object.__setattr__(self, "pressure", float(self.pressure))
        object.__setattr__(self, "phase", TouchPhase(self.phase))


@dataclass(frozen=True)
class Extension:
    """User-defined value type: a registered tag plus opaque payload bytes.

    Payloads survive transcoding untouched; interpreting them requires the
    codec hooks registered for ``type_name`` (see :class:`ExtensionRegistry`).
    """

    type_name: str
    payload: bytes

    def __post_init__(self):
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def type_tag(self) -> str:
        return self.type_name


FeatureValue = Union[
    Integer, Double, Vector2, Vector3, Quaternion,
    Axis, Button, Key, Stick, DPad, Touch, Extension,
]

BUILTIN_TYPE_TAGS = frozenset({
    "Integer", "Double", "Vector2", "Vector3", "Quaternion",
    "Axis", "Button", "Key", "Stick", "DPad", "Touch",
})


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Feature:
    """A named, typed datum exposed by a device."""

    name: str
    value: FeatureValue


@dataclass(frozen=True)
class DeviceRecord:
    """One device's identity and feature list within a snapshot.

    ``device_timestamp_us`` is the device-local sample time; for sources
    with a native rate above the polling rate it lags the snapshot time.
    """

    device_id: int
    name: str
    serial: str
    device_timestamp_us: int
    features: tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "device_id", int(self.device_id))
        object.__setattr__(self, "device_timestamp_us", int(self.device_timestamp_us))
        object.__setattr__(self, "features", tuple(self.features))

    def feature(self, name: str) -> Optional[Feature]:
        for f in self.features:
            if f.name == name:
                return f
        return None


@dataclass(frozen=True)
class Snapshot:
    """All device states captured in one update cycle.

    ``timestamp_us`` counts microseconds since the recording's
    ``start_time``; ``frame`` is whatever index the host frame source
    reported at poll time and may repeat across snapshots during a
    rendering stall.
    """

    frame: int
    timestamp_us: int
    devices: tuple[DeviceRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frame", int(self.frame))
        object.__setattr__(self, "timestamp_us", int(self.timestamp_us))
        object.__setattr__(self, "devices", tuple(self.devices))


@dataclass(frozen=True)
class RecordingMetadata:
    """Session header; always the first record of a recording.

    ``end_time`` stays ``None`` until the recording is finalized.  The
    participant identifier lives here, not in a sidecar, so a single file
    is sufficient to honour a deletion-by-identifier request.
    """

    start_time: datetime
    polling_rate_hz: float
    hmd_name: str = ""
    hmd_serial: str = ""
    storage_medium: str = ""
    participant_id: str = ""
    consent_recorded: bool = False
    session_label: str = ""
    format_version: str = FORMAT_VERSION
    end_time: Optional[datetime] = None
    video_width: Optional[int] = None
    video_height: Optional[int] = None
    video_filename: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "start_time", _as_utc(self.start_time))
        if self.end_time is not None:
            object.__setattr__(self, "end_time", _as_utc(self.end_time))
        object.__setattr__(self, "polling_rate_hz", float(self.polling_rate_hz))
        object.__setattr__(self, "consent_recorded", bool(self.consent_recorded))

    def finalized(self, end_time: datetime) -> "RecordingMetadata":
        """Copy of this header with ``end_time`` set."""
        from dataclasses import replace

        return replace(self, end_time=end_time)


Record = Union[RecordingMetadata, Snapshot]


# ---------------------------------------------------------------------------
# Questionnaire types
# ---------------------------------------------------------------------------

class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"
    NON_BINARY = "non_binary"
    UNDISCLOSED = "undisclosed"
    SELF_DESCRIBED = "self_described"


#: Ordinal 0..7: no experience, less than once a year, once a year, every six
#: months, every three months, once a month, once a week, daily user.
VR_EXPERIENCE_SCALE = (
    "no experience",
    "less than once a year",
    "once a year",
    "every six months",
    "every three months",
    "once a month",
    "once a week",
    "daily VR user",
)


@dataclass(frozen=True)
class DemographicsResponse:
    """One participant's demographics questionnaire answers.

    Unlike recording records, responses are configuration-grade input:
    invariant breaches raise ``ValueError`` at construction.
    """

    participant_id: str
    age_years: int
    gender: Gender
    native_language: str
    vision_correction: bool
    vr_experience: int
    gender_description: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "age_years", int(self.age_years))
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "vision_correction", bool(self.vision_correction))
        object.__setattr__(self, "vr_experience", int(self.vr_experience))
        if self.age_years <= 0:
            raise ValueError(f"age_years must be positive, got {self.age_years}")
        if not 0 <= self.vr_experience <= 7:
            raise ValueError(
                f"vr_experience must be in [0, 7], got {self.vr_experience}")
        if self.gender is Gender.SELF_DESCRIBED and not (self.gender_description or "").strip():
            raise ValueError("self-described gender requires a non-empty description")


# ---------------------------------------------------------------------------
# Extension value type registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtensionHandle:
    """Registration token for a custom value type.

    Holding the handle allows idempotent re-installation into a registry
    (e.g. after process restart in tests); registering the same name with
    a fresh handle is an error.
    """

    type_name: str
    encode: Callable[[Any], bytes]
    decode: Callable[[bytes], Any]


class ExtensionRegistry:
    """Process-wide table of custom value types.

    Reads are lock-free; registrations take a lock and must otherwise be
    serialised by the caller (single-writer contract).
    """

    def __init__(self):
        self._table: dict[str, ExtensionHandle] = {}
        self._lock = threading.Lock()

    def register(self, type_name: str,
                 encode: Callable[[Any], bytes],
                 decode: Callable[[bytes], Any]) -> ExtensionHandle:
        """Register codec hooks for ``type_name`` and return its handle."""
        handle = ExtensionHandle(type_name, encode, decode)
        self.install(handle)
        return handle

    def install(self, handle: ExtensionHandle) -> ExtensionHandle:
        """Install a handle; re-installing the identical handle is a no-op."""
        if handle.type_name in BUILTIN_TYPE_TAGS:
            raise ReservedTypeNameError(
                f"{handle.type_name!r} is a built-in value type tag")
        with self._lock:
            existing = self._table.get(handle.type_name)
            if existing is not None:
                if existing is handle:  # only the original handle is idempotent
                    return existing
                raise DuplicateTypeNameError(
                    f"value type {handle.type_name!r} is already registered")
            self._table[handle.type_name] = handle
        return handle

    def unregister(self, type_name: str) -> None:
        with self._lock:
            self._table.pop(type_name, None)

    def lookup(self, type_name: str) -> Optional[ExtensionHandle]:
        return self._table.get(type_name)

    def is_registered(self, type_name: str) -> bool:
        return type_name in self._table

    def registered_names(self) -> tuple[str, ...]:
        return tuple(self._table)

    def encode_payload(self, type_name: str, value: Any) -> Extension:
        """Build an :class:`Extension` from a user value via the hooks."""
        handle = self._require(type_name)
        return Extension(type_name, handle.encode(value))

    def decode_payload(self, ext: Extension) -> Any:
        """Recover the user value from an :class:`Extension` via the hooks."""
        handle = self._require(ext.type_name)
        return handle.decode(ext.payload)

    def _require(self, type_name: str) -> ExtensionHandle:
        handle = self._table.get(type_name)
        if handle is None:
            from .errors import UnknownTypeTagError

            raise UnknownTypeTagError(
                f"unknown value type tag {type_name!r}", type_name=type_name)
        return handle


#: Default registry used by codecs unless one is passed explicitly.
default_registry = ExtensionRegistry()


def register_value_type(type_name: str,
                        encode: Callable[[Any], bytes],
                        decode: Callable[[bytes], Any],
                        registry: ExtensionRegistry | None = None) -> ExtensionHandle:
    """Register a custom value type in ``registry`` (default: process-wide)."""
    return (registry or default_registry).register(type_name, encode, decode)


# ---------------------------------------------------------------------------
# Sequence validation
# ---------------------------------------------------------------------------

RULE_METADATA_NOT_FIRST = "metadata_not_first"
RULE_METADATA_MISSING = "metadata_missing"
RULE_METADATA_DUPLICATE = "metadata_duplicate"
RULE_NON_MONOTONIC_TIMESTAMP = "non_monotonic_timestamp"
RULE_FRAME_DECREASED = "frame_decreased"
RULE_DUPLICATE_DEVICE_ID = "duplicate_device_id"
RULE_DUPLICATE_FEATURE_NAME = "duplicate_feature_name"
RULE_EMPTY_FEATURE_NAME = "empty_feature_name"
RULE_VALUE_OUT_OF_RANGE = "value_out_of_range"
RULE_INVALID_POLLING_RATE = "invalid_polling_rate"
RULE_END_BEFORE_START = "end_before_start"
RULE_VIDEO_FIELDS_INCONSISTENT = "video_fields_inconsistent"
RULE_NEGATIVE_TIMESTAMP = "negative_timestamp"
RULE_NEGATIVE_FRAME = "negative_frame"

ALL_RULES = frozenset({
    RULE_METADATA_NOT_FIRST, RULE_METADATA_MISSING, RULE_METADATA_DUPLICATE,
    RULE_NON_MONOTONIC_TIMESTAMP, RULE_FRAME_DECREASED,
    RULE_DUPLICATE_DEVICE_ID, RULE_DUPLICATE_FEATURE_NAME,
    RULE_EMPTY_FEATURE_NAME, RULE_VALUE_OUT_OF_RANGE,
    RULE_INVALID_POLLING_RATE, RULE_END_BEFORE_START,
    RULE_VIDEO_FIELDS_INCONSISTENT, RULE_NEGATIVE_TIMESTAMP,
    RULE_NEGATIVE_FRAME,
})


@dataclass(frozen=True)
class Violation:
    """One broken rule: which record, which rule, human-readable detail."""

    index: int
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    record_count: int
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_rule(self, rule: str) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.rule == rule)


def _range_violations(index: int, device: DeviceRecord) -> Iterable[Violation]:
    for feat in device.features:
        v = feat.value
        where = f"device {device.device_id} ({device.name}) feature {feat.name!r}"
        if isinstance(v, Axis) and not -1.0 <= v.value <= 1.0:
            yield Violation(index, RULE_VALUE_OUT_OF_RANGE,
                            f"{where}: Axis value {v.value} outside [-1, 1]")
        elif isinstance(v, Button) and not 0.0 <= v.value <= 1.0:
            yield Violation(index, RULE_VALUE_OUT_OF_RANGE,
                            f"{where}: Button value {v.value} outside [0, 1]")
        elif isinstance(v, Stick) and not (-1.0 <= v.x <= 1.0 and -1.0 <= v.y <= 1.0):
            yield Violation(index, RULE_VALUE_OUT_OF_RANGE,
                            f"{where}: Stick ({v.x}, {v.y}) outside [-1, 1]^2")
        elif isinstance(v, Touch) and not 0.0 <= v.pressure <= 1.0:
            yield Violation(index, RULE_VALUE_OUT_OF_RANGE,
                            f"{where}: Touch pressure {v.pressure} outside [0, 1]")


def _snapshot_violations(index: int, snap: Snapshot) -> Iterable[Violation]:
    if snap.timestamp_us < 0:
        yield Violation(index, RULE_NEGATIVE_TIMESTAMP,
                        f"timestamp_us {snap.timestamp_us} is negative")
    if snap.frame < 0:
        yield Violation(index, RULE_NEGATIVE_FRAME,
                        f"frame {snap.frame} is negative")
    seen_ids: set[int] = set()
    for dev in snap.devices:
        if dev.device_id in seen_ids:
            yield Violation(index, RULE_DUPLICATE_DEVICE_ID,
                            f"device id {dev.device_id} appears twice in one snapshot")
        seen_ids.add(dev.device_id)
        seen_names: set[str] = set()
        for feat in dev.features:
            if not feat.name:
                yield Violation(index, RULE_EMPTY_FEATURE_NAME,
                                f"device {dev.device_id} has a feature with an empty name")
            if feat.name in seen_names:
                yield Violation(index, RULE_DUPLICATE_FEATURE_NAME,
                                f"feature {feat.name!r} appears twice on device {dev.device_id}")
            seen_names.add(feat.name)
        yield from _range_violations(index, dev)


def _metadata_violations(index: int, meta: RecordingMetadata) -> Iterable[Violation]:
    if not meta.polling_rate_hz > 0:
        yield Violation(index, RULE_INVALID_POLLING_RATE,
                        f"polling_rate_hz must be positive, got {meta.polling_rate_hz}")
    if meta.end_time is not None and meta.end_time < meta.start_time:
        yield Violation(index, RULE_END_BEFORE_START,
                        f"end_time {meta.end_time.isoformat()} precedes start_time")
    video = (meta.video_width, meta.video_height, meta.video_filename)
    present = [v is not None for v in video]
    if any(present) and not all(present):
        yield Violation(index, RULE_VIDEO_FIELDS_INCONSISTENT,
                        "video width/height/filename must all be present or all absent")
    elif all(present) and (meta.video_width <= 0 or meta.video_height <= 0):
        yield Violation(index, RULE_VIDEO_FIELDS_INCONSISTENT,
                        f"video dimensions must be positive, got "
                        f"{meta.video_width}x{meta.video_height}")


def validate_record_sequence(records: Sequence[Record]) -> ValidationReport:
    """Check a decoded record sequence against every format rule.

    Violations are returned, not raised; an empty violation list means the
    sequence satisfies all type invariants plus the stream rules (exactly
    one metadata record, positioned first; strictly increasing snapshot
    timestamps; non-decreasing frame indices).

    ``records`` must be non-empty (that is a caller error, not a data
    violation).
    """
    if not records:
        raise ValueError("validate_record_sequence requires at least one record")

    violations: list[Violation] = []
    metadata_seen = False
    prev_snap: Optional[Snapshot] = None
    prev_snap_index = -1

    if not isinstance(records[0], RecordingMetadata):
        violations.append(Violation(
            0, RULE_METADATA_NOT_FIRST,
            "the first record of a stream must be the metadata header"))

    for i, rec in enumerate(records):
        if isinstance(rec, RecordingMetadata):
            if metadata_seen:
                violations.append(Violation(
                    i, RULE_METADATA_DUPLICATE,
                    "stream contains more than one metadata record"))
            metadata_seen = True
            violations.extend(_metadata_violations(i, rec))
        elif isinstance(rec, Snapshot):
            violations.extend(_snapshot_violations(i, rec))
            if prev_snap is not None:
                if rec.timestamp_us <= prev_snap.timestamp_us:
                    violations.append(Violation(
                        i, RULE_NON_MONOTONIC_TIMESTAMP,
                        f"timestamp_us {rec.timestamp_us} at index {i} does not "
                        f"exceed {prev_snap.timestamp_us} at index {prev_snap_index}"))
                if rec.frame < prev_snap.frame:
                    violations.append(Violation(
                        i, RULE_FRAME_DECREASED,
                        f"frame {rec.frame} at index {i} is below "
                        f"{prev_snap.frame} at index {prev_snap_index}"))
            prev_snap = rec
            prev_snap_index = i
        else:
            raise TypeError(f"record {i} has unsupported type {type(rec).__name__}")

    if not metadata_seen:
        violations.append(Violation(
            0, RULE_METADATA_MISSING, "stream contains no metadata record"))

    return ValidationReport(record_count=len(records), violations=tuple(violations))
