"""Streaming encoders/decoders for the two on-disk representations.

Both encodings share one logical schema (identical key strings), so
transcoding needs no translation layer:

* text: newline-delimited JSON, UTF-8, LF line endings, one record per
  line, ``.oxdr.ndjson``
* binary: concatenated self-delimiting MessagePack values, ``.oxdr.mp``

The first record of a file is always the metadata header.  Because the
session end time is only known at stop, live writers reserve space for
it up front: the text writer pads the metadata line with trailing spaces
to a fixed width, the binary writer always stores ``end_time`` in the
9-byte uint64 form.  In both encodings an ``end_time`` of null/0 means
"never finalized".

Non-finite doubles are rejected at encode time in *both* encodings —
JSON cannot represent them portably and the two wire forms must stay
interchangeable.
"""

from __future__ import annotations

import base64
import io
import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Any, BinaryIO, Iterable, Iterator, Optional, Union

from . import msgpack_wire
from .errors import (
    DecodeError,
    EncodeError,
    MalformedRecordError,
    NonFiniteValueError,
    TruncationError,
    UnknownKindError,
    UnknownTypeTagError,
)
from .model import (
    BUILTIN_TYPE_TAGS,
    Axis,
    Button,
    DeviceRecord,
    Double,
    DPad,
    Extension,
    ExtensionRegistry,
    Feature,
    FeatureValue,
    Integer,
    Key,
    Quaternion,
    Record,
    RecordingMetadata,
    Snapshot,
    Stick,
    Touch,
    TouchPhase,
    Vector2,
    Vector3,
    datetime_to_us,
    default_registry,
    us_to_datetime,
)


class Encoding(str, Enum):
    NDJSON = "ndjson"
    BINARY = "binary"


NDJSON_SUFFIX = ".oxdr.ndjson"
BINARY_SUFFIX = ".oxdr.mp"

# Epoch microseconds for 9999-12-31T23:59:59.999999Z; bounds the padded
# metadata line width in the text encoding.
_MAX_TIME_US = 253402300799999999

KIND_METADATA = "meta"
KIND_SNAPSHOT = "snap"

_METADATA_FIELDS = (
    "format_version", "start_time", "end_time", "polling_rate_hz",
    "video_width", "video_height", "video_filename",
    "hmd_name", "hmd_serial", "storage_medium",
    "participant_id", "consent_recorded", "session_label",
)


def encoding_for_path(path: str | os.PathLike) -> Optional[Encoding]:
    """Infer the encoding from the conventional file suffix, if possible."""
    name = os.fspath(path)
    if name.endswith(NDJSON_SUFFIX):
        return Encoding.NDJSON
    if name.endswith(BINARY_SUFFIX):
        return Encoding.BINARY
    return None


def sniff_encoding(stream: BinaryIO) -> Encoding:
    """Guess the encoding from the first byte (a JSON ``{`` vs a map marker)."""
    pos = stream.tell()
    first = stream.read(1)
    stream.seek(pos)
    if not first:
        raise TruncationError("empty stream", offset=0)
    b = first[0]
    if b == 0x7B:  # '{'
        return Encoding.NDJSON
    if 0x80 <= b <= 0x8F or b in (0xDE, 0xDF):
        return Encoding.BINARY
    raise MalformedRecordError(
        f"cannot determine encoding from leading byte 0x{b:02x}", offset=0)


# ---------------------------------------------------------------------------
# record -> plain object
# ---------------------------------------------------------------------------

def _check_finite(x: float) -> float:
    if not math.isfinite(x):
        raise NonFiniteValueError(f"cannot encode non-finite double: {x!r}")
    return x


def _value_to_obj(value: FeatureValue, binary: bool,
                  registry: ExtensionRegistry, allow_unregistered: bool) -> tuple[str, Any]:
    """Return the (type tag, wire payload) pair for one feature value."""
    if isinstance(value, Integer):
        return value.type_tag, value.value
    if isinstance(value, Double):
        return value.type_tag, _check_finite(value.value)
    if isinstance(value, Vector2):
        return value.type_tag, {"x": _check_finite(value.x), "y": _check_finite(value.y)}
    if isinstance(value, Vector3):
        return value.type_tag, {"x": _check_finite(value.x), "y": _check_finite(value.y),
                                "z": _check_finite(value.z)}
    if isinstance(value, Quaternion):
        return value.type_tag, {"x": _check_finite(value.x), "y": _check_finite(value.y),
                                "z": _check_finite(value.z), "w": _check_finite(value.w)}
    if isinstance(value, Axis):
        return value.type_tag, _check_finite(value.value)
    if isinstance(value, Button):
        return value.type_tag, {"value": _check_finite(value.value), "pressed": value.pressed}
    if isinstance(value, Key):
        return value.type_tag, {"code": value.code, "pressed": value.pressed}
    if isinstance(value, Stick):
        return value.type_tag, {"x": _check_finite(value.x), "y": _check_finite(value.y)}
    if isinstance(value, DPad):
        return value.type_tag, {"up": value.up, "down": value.down,
                                "left": value.left, "right": value.right}
    if isinstance(value, Touch):
        return value.type_tag, {
            "touch_id": value.touch_id,
            "x": _check_finite(value.position.x), "y": _check_finite(value.position.y),
            "pressure": _check_finite(value.pressure), "phase": value.phase.value,
        }
    if isinstance(value, Extension):
        if not allow_unregistered and not registry.is_registered(value.type_name):
            raise UnknownTypeTagError(
                f"extension type {value.type_name!r} is not registered",
                type_name=value.type_name)
        payload: Any = value.payload if binary else base64.b64encode(value.payload).decode("ascii")
        return value.type_name, payload
    raise EncodeError(f"cannot encode feature value of type {type(value).__name__}")


def record_to_obj(record: Record, binary: bool,
                  registry: ExtensionRegistry | None = None,
                  allow_unregistered: bool = False) -> dict:
    """Lower a record to the plain-dict shape shared by both encodings."""
    registry = registry or default_registry
    if isinstance(record, RecordingMetadata):
        end_us: Any
        if record.end_time is None:
            end_us = msgpack_wire.FixedUint64(0) if binary else None
        else:
            us = datetime_to_us(record.end_time)
            if us < 0:
                raise EncodeError("end_time before 1970 is not representable")
            end_us = msgpack_wire.FixedUint64(us) if binary else us
        return {
            "kind": KIND_METADATA,
            "format_version": record.format_version,
            "start_time": datetime_to_us(record.start_time),
            "end_time": end_us,
            "polling_rate_hz": _check_finite(record.polling_rate_hz),
            "video_width": record.video_width,
            "video_height": record.video_height,
            "video_filename": record.video_filename,
            "hmd_name": record.hmd_name,
            "hmd_serial": record.hmd_serial,
            "storage_medium": record.storage_medium,
            "participant_id": record.participant_id,
            "consent_recorded": record.consent_recorded,
            "session_label": record.session_label,
        }
    if isinstance(record, Snapshot):
        devices = []
        for dev in record.devices:
            features = []
            for feat in dev.features:
                tag, payload = _value_to_obj(feat.value, binary, registry, allow_unregistered)
                features.append({"name": feat.name, "type": tag, "value": payload})
            devices.append({
                "id": dev.device_id,
                "name": dev.name,
                "serial": dev.serial,
                "dev_ts_us": dev.device_timestamp_us,
                "features": features,
            })
        return {
            "kind": KIND_SNAPSHOT,
            "frame": record.frame,
            "ts_us": record.timestamp_us,
            "devices": devices,
        }
    raise EncodeError(f"cannot encode record of type {type(record).__name__}")


def encode_record(record: Record, encoding: Encoding,
                  registry: ExtensionRegistry | None = None,
                  allow_unregistered: bool = False) -> bytes:
    """Encode one record: an LF-terminated line, or one MessagePack value."""
    encoding = Encoding(encoding)
    binary = encoding is Encoding.BINARY
    obj = record_to_obj(record, binary, registry, allow_unregistered)
    if binary:
        return msgpack_wire.pack(obj)
    try:
        text = json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except ValueError as exc:
        raise NonFiniteValueError(str(exc)) from exc
    return text.encode("utf-8") + b"\n"


# ---------------------------------------------------------------------------
# plain object -> record
# ---------------------------------------------------------------------------

def _req(obj: dict, key: str) -> Any:
    try:
        return obj[key]
    except KeyError:
        raise MalformedRecordError(f"missing key {key!r}") from None


def _as_int(obj: dict, key: str) -> int:
    v = _req(obj, key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedRecordError(f"key {key!r} must be an integer, got {v!r}")
    return v


def _as_float(obj: dict, key: str) -> float:
    v = _req(obj, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedRecordError(f"key {key!r} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise MalformedRecordError(f"key {key!r} is not finite: {v!r}")
    return v


def _as_bool(obj: dict, key: str) -> bool:
    v = _req(obj, key)
    if not isinstance(v, bool):
        raise MalformedRecordError(f"key {key!r} must be a boolean, got {v!r}")
    return v


def _as_str(obj: dict, key: str) -> str:
    v = _req(obj, key)
    if not isinstance(v, str):
        raise MalformedRecordError(f"key {key!r} must be a string, got {v!r}")
    return v


def _as_opt_int(obj: dict, key: str) -> Optional[int]:
    v = _req(obj, key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedRecordError(f"key {key!r} must be an integer or null, got {v!r}")
    return v


def _as_opt_str(obj: dict, key: str) -> Optional[str]:
    v = _req(obj, key)
    if v is None or isinstance(v, str):
        return v
    raise MalformedRecordError(f"key {key!r} must be a string or null, got {v!r}")


def _scalar_number(tag: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedRecordError(f"{tag} value must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise MalformedRecordError(f"{tag} value is not finite: {v!r}")
    return v


def _value_from_obj(tag: str, payload: Any, binary: bool,
                    registry: ExtensionRegistry,
                    allow_unknown_extensions: bool) -> FeatureValue:
    if tag in BUILTIN_TYPE_TAGS:
        if tag == "Integer":
            if isinstance(payload, bool) or not isinstance(payload, int):
                raise MalformedRecordError(f"Integer value must be an integer, got {payload!r}")
            return Integer(payload)
        if tag == "Double":
            return Double(_scalar_number(tag, payload))
        if tag == "Axis":
            return Axis(_scalar_number(tag, payload))
        if not isinstance(payload, dict):
            raise MalformedRecordError(f"{tag} value must be an object, got {payload!r}")
        if tag == "Vector2":
            return Vector2(_as_float(payload, "x"), _as_float(payload, "y"))
        if tag == "Vector3":
            return Vector3(_as_float(payload, "x"), _as_float(payload, "y"),
                           _as_float(payload, "z"))
        if tag == "Quaternion":
            return Quaternion(_as_float(payload, "x"), _as_float(payload, "y"),
                              _as_float(payload, "z"), _as_float(payload, "w"))
        if tag == "Button":
            return Button(_as_float(payload, "value"), _as_bool(payload, "pressed"))
        if tag == "Key":
            return Key(_as_int(payload, "code"), _as_bool(payload, "pressed"))
        if tag == "Stick":
            return Stick(_as_float(payload, "x"), _as_float(payload, "y"))
        if tag == "DPad":
            return DPad(_as_bool(payload, "up"), _as_bool(payload, "down"),
                        _as_bool(payload, "left"), _as_bool(payload, "right"))
        if tag == "Touch":
            phase = _as_str(payload, "phase")
            try:
                phase_val = TouchPhase(phase)
            except ValueError:
                raise MalformedRecordError(f"unknown touch phase {phase!r}") from None
            return Touch(_as_int(payload, "touch_id"),
                         Vector2(_as_float(payload, "x"), _as_float(payload, "y")),
                         _as_float(payload, "pressure"), phase_val)
        raise AssertionError(tag)  # unreachable: tag set is closed

    # Extension value type.
    if not allow_unknown_extensions and not registry.is_registered(tag):
        raise UnknownTypeTagError(
            f"unknown value type tag {tag!r}", type_name=tag)
    if binary:
        if not isinstance(payload, bytes):
            raise MalformedRecordError(
                f"extension {tag!r} payload must be binary, got {type(payload).__name__}")
        return Extension(tag, payload)
    if not isinstance(payload, str):
        raise MalformedRecordError(
            f"extension {tag!r} payload must be a base64 string, got {type(payload).__name__}")
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise MalformedRecordError(
            f"extension {tag!r} payload is not valid base64: {exc}") from exc
    return Extension(tag, raw)


def obj_to_record(obj: Any, binary: bool,
                  registry: ExtensionRegistry | None = None,
                  allow_unknown_extensions: bool = False) -> Record:
    """Raise a record from its plain-dict wire shape, strictly typed."""
    registry = registry or default_registry
    if not isinstance(obj, dict):
        raise MalformedRecordError(f"record must be an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind == KIND_SNAPSHOT:
        devices_obj = _req(obj, "devices")
        if not isinstance(devices_obj, list):
            raise MalformedRecordError("'devices' must be an array")
        devices = []
        for dev_obj in devices_obj:
            if not isinstance(dev_obj, dict):
                raise MalformedRecordError("device entry must be an object")
            feats_obj = _req(dev_obj, "features")
            if not isinstance(feats_obj, list):
                raise MalformedRecordError("'features' must be an array")
            features = []
            for feat_obj in feats_obj:
                if not isinstance(feat_obj, dict):
                    raise MalformedRecordError("feature entry must be an object")
                value = _value_from_obj(_as_str(feat_obj, "type"), _req(feat_obj, "value"),
                                        binary, registry, allow_unknown_extensions)
                features.append(Feature(_as_str(feat_obj, "name"), value))
            devices.append(DeviceRecord(
                device_id=_as_int(dev_obj, "id"),
                name=_as_str(dev_obj, "name"),
                serial=_as_str(dev_obj, "serial"),
                device_timestamp_us=_as_int(dev_obj, "dev_ts_us"),
                features=tuple(features),
            ))
        return Snapshot(frame=_as_int(obj, "frame"), timestamp_us=_as_int(obj, "ts_us"),
                        devices=tuple(devices))
    if kind == KIND_METADATA:
        end_raw = _as_opt_int(obj, "end_time")
        # 0 is the binary writer's "not finalized" sentinel; treat uniformly.
        end_time = us_to_datetime(end_raw) if end_raw else None
        width = _as_opt_int(obj, "video_width")
        height = _as_opt_int(obj, "video_height")
        return RecordingMetadata(
            format_version=_as_str(obj, "format_version"),
            start_time=us_to_datetime(_as_int(obj, "start_time")),
            end_time=end_time,
            polling_rate_hz=_as_float(obj, "polling_rate_hz"),
            video_width=width,
            video_height=height,
            video_filename=_as_opt_str(obj, "video_filename"),
            hmd_name=_as_str(obj, "hmd_name"),
            hmd_serial=_as_str(obj, "hmd_serial"),
            storage_medium=_as_str(obj, "storage_medium"),
            participant_id=_as_str(obj, "participant_id"),
            consent_recorded=_as_bool(obj, "consent_recorded"),
            session_label=_as_str(obj, "session_label"),
        )
    if isinstance(kind, str):
        raise UnknownKindError(f"unknown record kind {kind!r}")
    raise MalformedRecordError("record has no 'kind' discriminator")


# ---------------------------------------------------------------------------
# stream decoding
# ---------------------------------------------------------------------------

def _locate(exc: DecodeError, *, line: int | None = None,
            offset: int | None = None) -> DecodeError:
    if exc.line is None:
        exc.line = line
    if exc.offset is None:
        exc.offset = offset
    return exc


def decode_stream(source: BinaryIO | bytes, encoding: Encoding,
                  registry: ExtensionRegistry | None = None,
                  allow_unknown_extensions: bool = False) -> Iterator[Record]:
    """Yield records from a byte stream using bounded memory.

    All complete records are yielded before any error is raised, so a
    truncated file still gives up its intact prefix.  Text-encoding errors
    carry a 1-based line number and the byte offset of the failing line.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    encoding = Encoding(encoding)

    if encoding is Encoding.NDJSON:
        line_no = 0
        offset = 0
        for raw in iter(source.readline, b""):
            line_no += 1
            if not raw.endswith(b"\n"):
                raise TruncationError(
                    "final line is not newline-terminated",
                    line=line_no, offset=offset)
            # Trailing spaces are legal: the live writer pads the metadata
            # line so it can be rewritten in place at finalization.
            text = raw.rstrip(b" \r\n")
            try:
                obj = json.loads(
                    text,
                    parse_constant=lambda c: (_ for _ in ()).throw(ValueError(c)),
                )
            except ValueError as exc:
                raise MalformedRecordError(
                    f"invalid JSON: {exc}", line=line_no, offset=offset) from exc
            try:
                yield obj_to_record(obj, binary=False, registry=registry,
                                    allow_unknown_extensions=allow_unknown_extensions)
            except DecodeError as exc:
                raise _locate(exc, line=line_no, offset=offset)
            offset += len(raw)
        return

    unpacker = msgpack_wire.StreamUnpacker(source)
    while True:
        obj = unpacker.unpack_next()
        if obj is msgpack_wire.StreamUnpacker.END:
            return
        try:
            yield obj_to_record(obj, binary=True, registry=registry,
                                allow_unknown_extensions=allow_unknown_extensions)
        except DecodeError as exc:
            raise _locate(exc, offset=unpacker.value_offset)


def decode_file(path: str | os.PathLike,
                encoding: Encoding | None = None,
                registry: ExtensionRegistry | None = None,
                allow_unknown_extensions: bool = False) -> Iterator[Record]:
    """Decode a recording file, inferring the encoding if not given."""
    with open(path, "rb") as stream:
        enc = encoding or encoding_for_path(path) or sniff_encoding(stream)
        yield from decode_stream(stream, enc, registry, allow_unknown_extensions)


def read_all(path: str | os.PathLike,
             encoding: Encoding | None = None,
             registry: ExtensionRegistry | None = None) -> list[Record]:
    return list(decode_file(path, encoding, registry))


# ---------------------------------------------------------------------------
# transcoding
# ---------------------------------------------------------------------------

def transcode(source: BinaryIO | bytes, from_encoding: Encoding,
              to_encoding: Encoding, dest: BinaryIO,
              registry: ExtensionRegistry | None = None) -> int:
    """Re-encode a stream record by record; returns the record count.

    Unknown extension payloads pass through opaquely, so a transcoder
    does not need the extension types of the streams it moves.
    """
    count = 0
    for record in decode_stream(source, from_encoding, registry,
                                allow_unknown_extensions=True):
        dest.write(encode_record(record, to_encoding, registry,
                                 allow_unregistered=True))
        count += 1
    return count


@dataclass(frozen=True)
class EncodedStream:
    """A fully encoded record sequence held in memory."""

    encoding: Encoding
    data: bytes
    record_count: int

    def __post_init__(self):
        if self.record_count < 1:
            raise EncodeError("an encoded stream holds at least the metadata record")


def encode_records(records: Iterable[Record], encoding: Encoding,
                   registry: ExtensionRegistry | None = None) -> EncodedStream:
    """Encode a whole record sequence into one in-memory stream."""
    buf = bytearray()
    count = 0
    for record in records:
        buf += encode_record(record, encoding, registry)
        count += 1
    return EncodedStream(Encoding(encoding), bytes(buf), count)


# ---------------------------------------------------------------------------
# live writers (metadata-first, finalizable in place)
# ---------------------------------------------------------------------------

class RecordingWriter:
    """Writes a recording file front to back and finalizes the header.

    The metadata record must be written first; ``finalize`` rewrites it
    at the head of the file with ``end_time`` filled in, which requires a
    seekable stream.  Use as a context manager or call ``close``.
    """

    def __init__(self, stream: BinaryIO, encoding: Encoding,
                 registry: ExtensionRegistry | None = None):
        self._stream = stream
        self._encoding = Encoding(encoding)
        self._registry = registry
        self._metadata: Optional[RecordingMetadata] = None
        self._head_len = 0
        self.record_count = 0

    @property
    def encoding(self) -> Encoding:
        return self._encoding

    @property
    def metadata(self) -> Optional[RecordingMetadata]:
        return self._metadata

    def write_metadata(self, metadata: RecordingMetadata) -> None:
        if self._metadata is not None:
            raise EncodeError("metadata was already written")
        head = self._render_head(metadata)
        self._stream.write(head)
        self._head_len = len(head)
        self._metadata = metadata
        self.record_count += 1

    def write_snapshot(self, snapshot: Snapshot) -> None:
        if self._metadata is None:
            raise EncodeError("the metadata record must be written first")
        self._stream.write(encode_record(snapshot, self._encoding, self._registry))
        self.record_count += 1

    def finalize(self, end_time) -> RecordingMetadata:
        """Patch ``end_time`` into the header; returns the final metadata."""
        if self._metadata is None:
            raise EncodeError("cannot finalize before metadata is written")
        final = self._metadata.finalized(end_time)
        head = self._render_head(final)
        if len(head) != self._head_len:
            raise EncodeError(
                "finalized header does not fit the reserved space "
                f"({len(head)} != {self._head_len} bytes)")
        pos = self._stream.tell()
        self._stream.seek(0)
        self._stream.write(head)
        self._stream.seek(pos)
        self._metadata = final
        return final

    def flush(self) -> None:
        self._stream.flush()

    def close(self) -> None:
        self._stream.close()

    def __enter__(self) -> "RecordingWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _render_head(self, metadata: RecordingMetadata) -> bytes:
        encoded = encode_record(metadata, self._encoding, self._registry)
        if self._encoding is Encoding.BINARY:
            # end_time is pinned to 9 bytes, so every render has one length.
            return encoded
        # Pad to the widest this line can ever get (largest end_time value);
        # only end_time varies between the initial and final renders.
        widest = encode_record(metadata.finalized(us_to_datetime(_MAX_TIME_US)),
                               self._encoding, self._registry)
        width = max(len(encoded), len(widest))
        return encoded[:-1] + b" " * (width - len(encoded)) + b"\n"


def open_writer(path: str | os.PathLike, encoding: Encoding | None = None,
                registry: ExtensionRegistry | None = None) -> RecordingWriter:
    """Create a recording file, inferring the encoding from the suffix."""
    enc = encoding or encoding_for_path(path)
    if enc is None:
        raise EncodeError(
            f"cannot infer encoding from {os.fspath(path)!r}; "
            f"expected a {NDJSON_SUFFIX} or {BINARY_SUFFIX} suffix")
    return RecordingWriter(open(path, "w+b"), enc, registry)
