"""Decoders for both recording containers, implemented from FORMAT.md.

This package deliberately shares no code with the recording toolkit:
the format document is the whole contract. Records come back as plain
dataclasses with wire-level field values (timestamps stay integer
microseconds, value payloads stay scalars/dicts, extension payloads
stay bytes). Unknown value type tags are data, not errors; their
payloads pass through opaquely.
"""

from __future__ import annotations

import base64
import json
import math
import struct
from dataclasses import dataclass
from typing import Any, BinaryIO, Iterator, Optional, Union

NDJSON_SUFFIX = ".oxdr.ndjson"
BINARY_SUFFIX = ".oxdr.mp"

BUILTIN_TAGS = frozenset({
    "Integer", "Double", "Vector2", "Vector3", "Quaternion",
    "Axis", "Button", "Key", "Stick", "DPad", "Touch",
})

TOUCH_PHASES = frozenset({"none", "began", "moved", "ended", "canceled"})


class ReaderError(Exception):
    """Base decoding failure; mirrors the writer-side error taxonomy."""

    code = "decode_error"

    def __init__(self, message: str, line: Optional[int] = None,
                 offset: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.offset = offset


class MalformedRecord(ReaderError):
    code = "malformed_record"


class UnknownKind(ReaderError):
    code = "unknown_kind"


class Truncated(ReaderError):
    code = "truncated"


@dataclass(frozen=True)
class ReaderFeature:
    name: str
    type_tag: str
    value: Any  # scalar, component dict, or bytes for extension payloads


@dataclass(frozen=True)
class ReaderDevice:
    device_id: int
    name: str
    serial: str
    device_timestamp_us: int
    features: tuple[ReaderFeature, ...]


@dataclass(frozen=True)
class ReaderSnapshot:
    frame: int
    timestamp_us: int
    devices: tuple[ReaderDevice, ...]


@dataclass(frozen=True)
class ReaderMetadata:
    format_version: str
    start_time_us: int
    end_time_us: Optional[int]
    polling_rate_hz: float
    video_width: Optional[int]
    video_height: Optional[int]
    video_filename: Optional[str]
    hmd_name: str
    hmd_serial: str
    storage_medium: str
    participant_id: str
    consent_recorded: bool
    session_label: str


ReaderRecord = Union[ReaderMetadata, ReaderSnapshot]


# ---------------------------------------------------------------------------
# Field coercion helpers (strict per FORMAT.md: bools are not ints)
# ---------------------------------------------------------------------------

def _need(obj: dict, key: str) -> Any:
    if key not in obj:
        raise MalformedRecord(f"missing key {key!r}")
    return obj[key]


def _int_field(obj: dict, key: str) -> int:
    v = _need(obj, key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedRecord(f"{key!r} must be an integer")
    return v


def _num_field(obj: dict, key: str) -> float:
    v = _need(obj, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedRecord(f"{key!r} must be a number")
    out = float(v)
    if not math.isfinite(out):
        raise MalformedRecord(f"{key!r} is not finite")
    return out


def _bool_field(obj: dict, key: str) -> bool:
    v = _need(obj, key)
    if not isinstance(v, bool):
        raise MalformedRecord(f"{key!r} must be a boolean")
    return v


def _str_field(obj: dict, key: str) -> str:
    v = _need(obj, key)
    if not isinstance(v, str):
        raise MalformedRecord(f"{key!r} must be a string")
    return v


def _opt_int_field(obj: dict, key: str) -> Optional[int]:
    v = _need(obj, key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedRecord(f"{key!r} must be an integer or null")
    return v


def _opt_str_field(obj: dict, key: str) -> Optional[str]:
    v = _need(obj, key)
    if v is not None and not isinstance(v, str):
        raise MalformedRecord(f"{key!r} must be a string or null")
    return v


_VALUE_SHAPES = {
    "Vector2": (("x", _num_field), ("y", _num_field)),
    "Vector3": (("x", _num_field), ("y", _num_field), ("z", _num_field)),
    "Quaternion": (("x", _num_field), ("y", _num_field), ("z", _num_field),
                   ("w", _num_field)),
    "Button": (("value", _num_field), ("pressed", _bool_field)),
    "Key": (("code", _int_field), ("pressed", _bool_field)),
    "Stick": (("x", _num_field), ("y", _num_field)),
    "DPad": (("up", _bool_field), ("down", _bool_field),
             ("left", _bool_field), ("right", _bool_field)),
    "Touch": (("touch_id", _int_field), ("x", _num_field), ("y", _num_field),
              ("pressure", _num_field), ("phase", _str_field)),
}


def _feature_value(tag: str, payload: Any, binary: bool) -> Any:
    if tag == "Integer":
        if isinstance(payload, bool) or not isinstance(payload, int):
            raise MalformedRecord("Integer value must be an integer")
        return payload
    if tag in ("Double", "Axis"):
        if isinstance(payload, bool) or not isinstance(payload, (int, float)):
            raise MalformedRecord(f"{tag} value must be a number")
        out = float(payload)
        if not math.isfinite(out):
            raise MalformedRecord(f"{tag} value is not finite")
        return out
    shape = _VALUE_SHAPES.get(tag)
    if shape is not None:
        if not isinstance(payload, dict):
            raise MalformedRecord(f"{tag} value must be an object")
        value = {key: getter(payload, key) for key, getter in shape}
        if tag == "Touch" and value["phase"] not in TOUCH_PHASES:
            raise MalformedRecord(f"unknown touch phase {value['phase']!r}")
        return value
    # Anything else is an extension tag; payloads are opaque bytes.
    if binary:
        if not isinstance(payload, bytes):
            raise MalformedRecord(f"extension {tag!r} payload must be binary")
        return payload
    if not isinstance(payload, str):
        raise MalformedRecord(f"extension {tag!r} payload must be base64 text")
    try:
        return base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise MalformedRecord(f"extension {tag!r} payload is not base64: {exc}")


def _to_record(obj: Any, binary: bool) -> ReaderRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord("record must be an object")
    kind = obj.get("kind")
    if kind == "snap":
        raw_devices = _need(obj, "devices")
        if not isinstance(raw_devices, list):
            raise MalformedRecord("'devices' must be an array")
        devices = []
        for dev in raw_devices:
            if not isinstance(dev, dict):
                raise MalformedRecord("device entry must be an object")
            raw_features = _need(dev, "features")
            if not isinstance(raw_features, list):
                raise MalformedRecord("'features' must be an array")
            features = []
            for feat in raw_features:
                if not isinstance(feat, dict):
                    raise MalformedRecord("feature entry must be an object")
                tag = _str_field(feat, "type")
                features.append(ReaderFeature(
                    name=_str_field(feat, "name"),
                    type_tag=tag,
                    value=_feature_value(tag, _need(feat, "value"), binary)))
            devices.append(ReaderDevice(
                device_id=_int_field(dev, "id"),
                name=_str_field(dev, "name"),
                serial=_str_field(dev, "serial"),
                device_timestamp_us=_int_field(dev, "dev_ts_us"),
                features=tuple(features)))
        return ReaderSnapshot(frame=_int_field(obj, "frame"),
                              timestamp_us=_int_field(obj, "ts_us"),
                              devices=tuple(devices))
    if kind == "meta":
        end = _opt_int_field(obj, "end_time")
        return ReaderMetadata(
            format_version=_str_field(obj, "format_version"),
            start_time_us=_int_field(obj, "start_time"),
            end_time_us=end if end else None,  # 0 means "never finalized"
            polling_rate_hz=_num_field(obj, "polling_rate_hz"),
            video_width=_opt_int_field(obj, "video_width"),
            video_height=_opt_int_field(obj, "video_height"),
            video_filename=_opt_str_field(obj, "video_filename"),
            hmd_name=_str_field(obj, "hmd_name"),
            hmd_serial=_str_field(obj, "hmd_serial"),
            storage_medium=_str_field(obj, "storage_medium"),
            participant_id=_str_field(obj, "participant_id"),
            consent_recorded=_bool_field(obj, "consent_recorded"),
            session_label=_str_field(obj, "session_label"))
    if isinstance(kind, str):
        raise UnknownKind(f"unknown record kind {kind!r}")
    raise MalformedRecord("record has no 'kind' discriminator")


# ---------------------------------------------------------------------------
# Text container
# ---------------------------------------------------------------------------

def _reject_constant(token: str) -> None:
    raise ValueError(f"non-finite constant {token}")


def _iter_ndjson(stream: BinaryIO) -> Iterator[ReaderRecord]:
    line_no = 0
    offset = 0
    for raw in iter(stream.readline, b""):
        line_no += 1
        if not raw.endswith(b"\n"):
            raise Truncated("final line has no newline", line=line_no,
                            offset=offset)
        try:
            obj = json.loads(raw.rstrip(b" \r\n"), parse_constant=_reject_constant)
        except ValueError as exc:
            raise MalformedRecord(f"invalid JSON: {exc}", line=line_no,
                                  offset=offset)
        try:
            yield _to_record(obj, binary=False)
        except ReaderError as exc:
            exc.line, exc.offset = line_no, offset
            raise
        offset += len(raw)


# ---------------------------------------------------------------------------
# Binary container (MessagePack subset per FORMAT.md)
# ---------------------------------------------------------------------------

class _Bytes:
    """Chunked byte feeder; keeps at most one chunk plus carry in memory."""

    def __init__(self, stream: BinaryIO, chunk: int = 1 << 16):
        self._stream = stream
        self._chunk = chunk
        self._carry = b""
        self.consumed = 0

    def take(self, n: int, at: int) -> bytes:
        while len(self._carry) < n:
            more = self._stream.read(max(self._chunk, n - len(self._carry)))
            if not more:
                raise Truncated("value cut off by end of stream", offset=at)
            self._carry += more
        out, self._carry = self._carry[:n], self._carry[n:]
        self.consumed += n
        return out

    def at_eof(self) -> bool:
        if self._carry:
            return False
        more = self._stream.read(self._chunk)
        if not more:
            return True
        self._carry = more
        return False


def _parse_value(feed: _Bytes, at: int) -> Any:
    marker = feed.take(1, at)[0]
    if marker < 0x80:
        return marker
    if marker >= 0xE0:
        return marker - 0x100
    if marker < 0x90:
        return _parse_map(feed, marker - 0x80, at)
    if marker < 0xA0:
        return [_parse_value(feed, at) for _ in range(marker - 0x90)]
    if marker < 0xC0:
        return _parse_str(feed, marker - 0xA0, at)
    fixed = {0xC0: None, 0xC2: False, 0xC3: True}
    if marker in fixed:
        return fixed[marker]
    if marker in (0xC4, 0xC5, 0xC6):
        width = (1, 2, 4)[marker - 0xC4]
        return feed.take(int.from_bytes(feed.take(width, at), "big"), at)
    if marker == 0xCA:
        return struct.unpack(">f", feed.take(4, at))[0]
    if marker == 0xCB:
        return struct.unpack(">d", feed.take(8, at))[0]
    if 0xCC <= marker <= 0xCF:
        return int.from_bytes(feed.take(1 << (marker - 0xCC), at), "big")
    if 0xD0 <= marker <= 0xD3:
        return int.from_bytes(feed.take(1 << (marker - 0xD0), at), "big",
                              signed=True)
    if marker in (0xD9, 0xDA, 0xDB):
        width = (1, 2, 4)[marker - 0xD9]
        return _parse_str(feed, int.from_bytes(feed.take(width, at), "big"), at)
    if marker in (0xDC, 0xDD):
        width = 2 if marker == 0xDC else 4
        count = int.from_bytes(feed.take(width, at), "big")
        return [_parse_value(feed, at) for _ in range(count)]
    if marker in (0xDE, 0xDF):
        width = 2 if marker == 0xDE else 4
        return _parse_map(feed, int.from_bytes(feed.take(width, at), "big"), at)
    raise MalformedRecord(f"unsupported wire marker 0x{marker:02x}", offset=at)


def _parse_str(feed: _Bytes, length: int, at: int) -> str:
    try:
        return feed.take(length, at).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRecord(f"invalid UTF-8: {exc}", offset=at)


def _parse_map(feed: _Bytes, count: int, at: int) -> dict:
    out = {}
    for _ in range(count):
        key = _parse_value(feed, at)
        if not isinstance(key, str):
            raise MalformedRecord("map keys must be strings", offset=at)
        out[key] = _parse_value(feed, at)
    return out


def _iter_binary(stream: BinaryIO) -> Iterator[ReaderRecord]:
    feed = _Bytes(stream)
    while not feed.at_eof():
        at = feed.consumed
        obj = _parse_value(feed, at)
        try:
            yield _to_record(obj, binary=True)
        except ReaderError as exc:
            exc.offset = at
            raise


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def detect_container(path: str, first_byte: bytes) -> str:
    """'ndjson' or 'binary', by suffix first and leading byte second."""
    if path.endswith(NDJSON_SUFFIX):
        return "ndjson"
    if path.endswith(BINARY_SUFFIX):
        return "binary"
    if not first_byte:
        raise Truncated("empty file", offset=0)
    b = first_byte[0]
    if b == 0x7B:
        return "ndjson"
    if 0x80 <= b <= 0x8F or b in (0xDE, 0xDF):
        return "binary"
    raise MalformedRecord(f"cannot identify container from byte 0x{b:02x}",
                          offset=0)


def iter_records(path: str) -> Iterator[ReaderRecord]:
    """Decode every record in file order, whichever container it is."""
    with open(path, "rb") as stream:
        container = detect_container(path, stream.read(1))
        stream.seek(0)
        parser = _iter_ndjson if container == "ndjson" else _iter_binary
        yield from parser(stream)


def read_recording(path: str) -> tuple[ReaderMetadata, Iterator[ReaderSnapshot]]:
    """Open a recording: the metadata header plus a lazy snapshot iterator.

    The file must be well-formed enough to start with its header; use
    ``iter_records`` to inspect arbitrary record sequences.
    """
    records = iter_records(path)
    try:
        head = next(records)
    except StopIteration:
        raise Truncated("file holds no records", offset=0) from None
    if not isinstance(head, ReaderMetadata):
        raise MalformedRecord("first record is not the metadata header", line=1,
                              offset=0)

    def snapshots() -> Iterator[ReaderSnapshot]:
        for record in records:
            if isinstance(record, ReaderSnapshot):
                yield record

    return head, snapshots()


# ---------------------------------------------------------------------------
# Re-validation (FORMAT.md section 4)
# ---------------------------------------------------------------------------

def validate_sequence(records) -> list[tuple[int, str, str]]:
    """Re-check the stream rules; returns (index, rule id, detail) triples."""
    problems: list[tuple[int, str, str]] = []
    have_meta = False
    prev_ts = prev_frame = None
    records = list(records)
    if records and not isinstance(records[0], ReaderMetadata):
        problems.append((0, "metadata_not_first",
                         "first record is not the metadata header"))
    for i, record in enumerate(records):
        if isinstance(record, ReaderMetadata):
            if have_meta:
                problems.append((i, "metadata_duplicate",
                                 "more than one metadata record"))
            have_meta = True
            if not record.polling_rate_hz > 0:
                problems.append((i, "invalid_polling_rate",
                                 f"polling_rate_hz {record.polling_rate_hz}"))
            if (record.end_time_us is not None
                    and record.end_time_us < record.start_time_us):
                problems.append((i, "end_before_start",
                                 "end_time precedes start_time"))
            video = (record.video_width, record.video_height,
                     record.video_filename)
            if any(v is not None for v in video) and None in video:
                problems.append((i, "video_fields_inconsistent",
                                 "partial video descriptor"))
            continue
        if record.timestamp_us < 0:
            problems.append((i, "negative_timestamp", f"ts {record.timestamp_us}"))
        if record.frame < 0:
            problems.append((i, "negative_frame", f"frame {record.frame}"))
        if prev_ts is not None and record.timestamp_us <= prev_ts:
            problems.append((i, "non_monotonic_timestamp",
                             f"{record.timestamp_us} after {prev_ts}"))
        if prev_frame is not None and record.frame < prev_frame:
            problems.append((i, "frame_decreased",
                             f"{record.frame} after {prev_frame}"))
        prev_ts, prev_frame = record.timestamp_us, record.frame
        seen_devices = set()
        for device in record.devices:
            if device.device_id in seen_devices:
                problems.append((i, "duplicate_device_id",
                                 f"device {device.device_id}"))
            seen_devices.add(device.device_id)
            seen_features = set()
            for feature in device.features:
                if not feature.name:
                    problems.append((i, "empty_feature_name",
                                     f"device {device.device_id}"))
                if feature.name in seen_features:
                    problems.append((i, "duplicate_feature_name", feature.name))
                seen_features.add(feature.name)
                problems.extend(
                    (i, "value_out_of_range", f"{feature.name}: {detail}")
                    for detail in _range_problems(feature))
    if not have_meta:
        problems.append((0, "metadata_missing", "no metadata record"))
    return problems


def _range_problems(feature: ReaderFeature) -> list[str]:
    tag, value = feature.type_tag, feature.value
    out = []
    if tag == "Axis" and not -1.0 <= value <= 1.0:
        out.append(f"axis {value}")
    elif tag == "Button" and not 0.0 <= value["value"] <= 1.0:
        out.append(f"button {value['value']}")
    elif tag == "Stick" and not (-1.0 <= value["x"] <= 1.0
                                 and -1.0 <= value["y"] <= 1.0):
        out.append(f"stick ({value['x']}, {value['y']})")
    elif tag == "Touch" and not 0.0 <= value["pressure"] <= 1.0:
        out.append(f"pressure {value['pressure']}")
    return out
