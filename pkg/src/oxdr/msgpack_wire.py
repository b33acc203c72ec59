"""Minimal MessagePack wire codec (https://msgpack.org, spec 2017-08-08).

Only the subset the recording format needs is emitted: nil, bool, int,
float64, str, bin, array, map.  The decoder additionally accepts float32
so foreign files remain readable.  Encoding is canonical — integers take
the smallest representation, floats are always 8 bytes — which makes
encoded output byte-deterministic for golden-file comparisons.

``FixedUint64`` is the one deliberate departure from smallest-form
integers: it always encodes as the 9-byte uint64 form so a value at a
known file position can be patched in place without shifting bytes.
"""

from __future__ import annotations

import math
import struct
from typing import Any, BinaryIO

from .errors import EncodeError, MalformedRecordError, NonFiniteValueError, TruncationError

_MAX_UINT64 = 2**64 - 1
_MIN_INT64 = -(2**63)

_F64 = struct.Struct(">d")
_F32 = struct.Struct(">f")


class FixedUint64(int):
    """Integer pinned to the 9-byte uint64 encoding (in-place patchable)."""


def _pack_int(out: bytearray, n: int) -> None:
    if isinstance(n, FixedUint64):
        if not 0 <= n <= _MAX_UINT64:
            raise EncodeError(f"FixedUint64 out of range: {int(n)}")
        out.append(0xCF)
        out += n.to_bytes(8, "big")
    elif 0 <= n <= 0x7F:
        out.append(n)
    elif -32 <= n < 0:
        out.append(0x100 + n)
    elif 0 <= n <= 0xFF:
        out += bytes((0xCC, n))
    elif 0 <= n <= 0xFFFF:
        out.append(0xCD)
        out += n.to_bytes(2, "big")
    elif 0 <= n <= 0xFFFFFFFF:
        out.append(0xCE)
        out += n.to_bytes(4, "big")
    elif 0 <= n <= _MAX_UINT64:
        out.append(0xCF)
        out += n.to_bytes(8, "big")
    elif -0x80 <= n < 0:
        out.append(0xD0)
        out += n.to_bytes(1, "big", signed=True)
    elif -0x8000 <= n < 0:
        out.append(0xD1)
        out += n.to_bytes(2, "big", signed=True)
    elif -0x80000000 <= n < 0:
        out.append(0xD2)
        out += n.to_bytes(4, "big", signed=True)
    elif _MIN_INT64 <= n < 0:
        out.append(0xD3)
        out += n.to_bytes(8, "big", signed=True)
    else:
        raise EncodeError(f"integer out of 64-bit range: {n}")


def _pack_str(out: bytearray, s: str) -> None:
    data = s.encode("utf-8")
    n = len(data)
    if n <= 31:
        out.append(0xA0 | n)
    elif n <= 0xFF:
        out += bytes((0xD9, n))
    elif n <= 0xFFFF:
        out.append(0xDA)
        out += n.to_bytes(2, "big")
    else:
        out.append(0xDB)
        out += n.to_bytes(4, "big")
    out += data


def _pack_bin(out: bytearray, b: bytes) -> None:
    n = len(b)
    if n <= 0xFF:
        out += bytes((0xC4, n))
    elif n <= 0xFFFF:
        out.append(0xC5)
        out += n.to_bytes(2, "big")
    else:
        out.append(0xC6)
        out += n.to_bytes(4, "big")
    out += b


def _pack(out: bytearray, obj: Any) -> None:
    if obj is None:
        out.append(0xC0)
    elif obj is True:
        out.append(0xC3)
    elif obj is False:
        out.append(0xC2)
    elif isinstance(obj, int):  # after bool: bool is an int subclass
        _pack_int(out, obj)
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise NonFiniteValueError(f"cannot encode non-finite double: {obj!r}")
        out.append(0xCB)
        out += _F64.pack(obj)
    elif isinstance(obj, str):
        _pack_str(out, obj)
    elif isinstance(obj, (bytes, bytearray)):
        _pack_bin(out, bytes(obj))
    elif isinstance(obj, (list, tuple)):
        n = len(obj)
        if n <= 15:
            out.append(0x90 | n)
        elif n <= 0xFFFF:
            out.append(0xDC)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xDD)
            out += n.to_bytes(4, "big")
        for item in obj:
            _pack(out, item)
    elif isinstance(obj, dict):
        n = len(obj)
        if n <= 15:
            out.append(0x80 | n)
        elif n <= 0xFFFF:
            out.append(0xDE)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xDF)
            out += n.to_bytes(4, "big")
        for key, value in obj.items():
            if not isinstance(key, str):
                raise EncodeError(f"map keys must be strings, got {type(key).__name__}")
            _pack_str(out, key)
            _pack(out, value)
    else:
        raise EncodeError(f"cannot encode {type(obj).__name__}")


def pack(obj: Any) -> bytes:
    """Encode one value as a self-delimiting MessagePack byte string."""
    out = bytearray()
    _pack(out, obj)
    return bytes(out)


class StreamUnpacker:
    """Pulls consecutive MessagePack values from a binary stream.

    Memory use is bounded by the largest single value, not the stream
    length.  A clean end-of-stream between values returns the ``END``
    sentinel; end-of-stream inside a value raises ``TruncationError``.
    """

    END = object()

    _CHUNK = 1 << 16

    def __init__(self, stream: BinaryIO):
        self._stream = stream
        self._buf = b""
        self._pos = 0          # read position within _buf
        self._consumed = 0     # bytes consumed from the stream before _buf
        self.value_offset = 0  # stream offset of the most recent top-level value

    @property
    def offset(self) -> int:
        return self._consumed + self._pos

    def _fill(self, need: int) -> bool:
        """Ensure ``need`` unread bytes are buffered; False on EOF."""
        avail = len(self._buf) - self._pos
        while avail < need:
            chunk = self._stream.read(max(self._CHUNK, need - avail))
            if not chunk:
                return False
            # Drop consumed prefix so the buffer stays bounded.
            if self._pos:
                self._consumed += self._pos
                self._buf = self._buf[self._pos:]
                self._pos = 0
            self._buf += chunk
            avail = len(self._buf) - self._pos
        return True

    def _take(self, n: int) -> bytes:
        if not self._fill(n):
            raise TruncationError(
                "stream ends inside a value", offset=self.value_offset)
        start = self._pos
        self._pos = start + n
        return self._buf[start:start + n]

    def unpack_next(self) -> Any:
        """Decode the next top-level value, or return ``END`` at EOF."""
        if not self._fill(1):
            return self.END
        self.value_offset = self.offset
        return self._unpack_value()

    def _unpack_value(self) -> Any:
        marker = self._take(1)[0]
        if marker <= 0x7F:
            return marker
        if marker >= 0xE0:
            return marker - 0x100
        if 0x80 <= marker <= 0x8F:
            return self._unpack_map(marker & 0x0F)
        if 0x90 <= marker <= 0x9F:
            return self._unpack_array(marker & 0x0F)
        if 0xA0 <= marker <= 0xBF:
            return self._unpack_str(marker & 0x1F)
        if marker == 0xC0:
            return None
        if marker == 0xC2:
            return False
        if marker == 0xC3:
            return True
        if marker == 0xC4:
            return bytes(self._take(self._take(1)[0]))
        if marker == 0xC5:
            return bytes(self._take(int.from_bytes(self._take(2), "big")))
        if marker == 0xC6:
            return bytes(self._take(int.from_bytes(self._take(4), "big")))
        if marker == 0xCA:
            return _F32.unpack(self._take(4))[0]
        if marker == 0xCB:
            return _F64.unpack(self._take(8))[0]
        if marker == 0xCC:
            return self._take(1)[0]
        if marker == 0xCD:
            return int.from_bytes(self._take(2), "big")
        if marker == 0xCE:
            return int.from_bytes(self._take(4), "big")
        if marker == 0xCF:
            return int.from_bytes(self._take(8), "big")
        if marker == 0xD0:
            return int.from_bytes(self._take(1), "big", signed=True)
        if marker == 0xD1:
            return int.from_bytes(self._take(2), "big", signed=True)
        if marker == 0xD2:
            return int.from_bytes(self._take(4), "big", signed=True)
        if marker == 0xD3:
            return int.from_bytes(self._take(8), "big", signed=True)
        if marker == 0xD9:
            return self._unpack_str(self._take(1)[0])
        if marker == 0xDA:
            return self._unpack_str(int.from_bytes(self._take(2), "big"))
        if marker == 0xDB:
            return self._unpack_str(int.from_bytes(self._take(4), "big"))
        if marker == 0xDC:
            return self._unpack_array(int.from_bytes(self._take(2), "big"))
        if marker == 0xDD:
            return self._unpack_array(int.from_bytes(self._take(4), "big"))
        if marker == 0xDE:
            return self._unpack_map(int.from_bytes(self._take(2), "big"))
        if marker == 0xDF:
            return self._unpack_map(int.from_bytes(self._take(4), "big"))
        raise MalformedRecordError(
            f"unsupported wire marker 0x{marker:02x}", offset=self.value_offset)

    def _unpack_str(self, length: int) -> str:
        raw = self._take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRecordError(
                f"invalid UTF-8 in string: {exc}", offset=self.value_offset) from exc

    def _unpack_array(self, length: int) -> list:
        return [self._unpack_value() for _ in range(length)]

    def _unpack_map(self, length: int) -> dict:
        out = {}
        for _ in range(length):
            key = self._unpack_value()
            if not isinstance(key, str):
                raise MalformedRecordError(
                    f"map key must be a string, got {type(key).__name__}",
                    offset=self.value_offset)
            out[key] = self._unpack_value()
        return out


def unpack(data: bytes) -> Any:
    """Decode exactly one value from ``data``; trailing bytes are an error."""
    import io

    unpacker = StreamUnpacker(io.BytesIO(data))
    value = unpacker.unpack_next()
    if value is StreamUnpacker.END:
        raise TruncationError("empty input", offset=0)
    if unpacker.unpack_next() is not StreamUnpacker.END:
        raise MalformedRecordError("trailing bytes after value",
                                   offset=unpacker.value_offset)
    return value
