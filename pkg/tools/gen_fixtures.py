#!/usr/bin/env python3
"""Regenerate the fixture corpus under fixtures/.

The generated files are checked in and byte-normative: decoder changes
that alter any golden byte are format changes and must be deliberate.
Run from the repository root:

    python tools/gen_fixtures.py
"""

from __future__ import annotations

import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

REPO = Path(__file__).parent.parent
sys.path.insert(0, str(REPO / "src"))

from oxdr import ops  # noqa: E402
from oxdr.codec import Encoding, encode_record, transcode  # noqa: E402
from oxdr.model import (  # noqa: E402
    Axis,
    DeviceRecord,
    Double,
    Extension,
    ExtensionRegistry,
    Feature,
    RecordingMetadata,
    Snapshot,
)

GOLDEN = REPO / "fixtures" / "golden"
MALFORMED = REPO / "fixtures" / "malformed"

START = datetime(2000, 1, 1, tzinfo=timezone.utc)


def meta(**kw) -> RecordingMetadata:
    defaults = dict(start_time=START, polling_rate_hz=100.0, hmd_name="FixtureHMD",
                    hmd_serial="FIX-01", storage_medium="repo",
                    participant_id="P000", consent_recorded=True,
                    session_label="fixture")
    defaults.update(kw)
    return RecordingMetadata(**defaults)


def snap(ts: int, frame: int = 0, devices=()) -> Snapshot:
    return Snapshot(frame=frame, timestamp_us=ts, devices=tuple(devices))


def axis_device(value: float) -> DeviceRecord:
    return DeviceRecord(0, "dev", "sn", 0, (Feature("wheel", Axis(value)),))


def ndjson(*records) -> bytes:
    return b"".join(encode_record(r, Encoding.NDJSON) for r in records)


def write(path: Path, data: bytes) -> None:
    path.write_bytes(data)
    print(f"  {path.relative_to(REPO)}  {len(data)} bytes")


def golden_sessions() -> None:
    print("golden recordings:")
    session_nd = GOLDEN / "session.oxdr.ndjson"
    ops.record_simulated(REPO / "default.simspec", session_nd,
                         polling_rate_hz=50.0, duration_s=2.0)
    print(f"  {session_nd.relative_to(REPO)}  {session_nd.stat().st_size} bytes")

    session_mp = GOLDEN / "session.oxdr.mp"
    with open(session_nd, "rb") as src, open(session_mp, "wb") as dst:
        transcode(src, Encoding.NDJSON, Encoding.BINARY, dst)
    print(f"  {session_mp.relative_to(REPO)}  {session_mp.stat().st_size} bytes")

    controller_spec = GOLDEN / "controller.simspec"
    controller_spec.write_text(
        "[session]\n"
        "hmd_name = FixtureHMD\n"
        "hmd_serial = FIX-01\n"
        "storage_medium = repo\n"
        "participant_id = P007\n"
        "consent_recorded = true\n"
        "session_label = controller-only\n"
        "start_time_us = 946684800000000\n"
        "frame_rate_hz = 72\n"
        "\n"
        "[device:pad]\n"
        "kind = controller\n"
        "seed = 7\n")
    controller_nd = GOLDEN / "controller.oxdr.ndjson"
    ops.record_simulated(controller_spec, controller_nd,
                         polling_rate_hz=100.0, duration_s=1.0)
    print(f"  {controller_nd.relative_to(REPO)}  "
          f"{controller_nd.stat().st_size} bytes")
    controller_mp = GOLDEN / "controller.oxdr.mp"
    with open(controller_nd, "rb") as src, open(controller_mp, "wb") as dst:
        transcode(src, Encoding.NDJSON, Encoding.BINARY, dst)
    print(f"  {controller_mp.relative_to(REPO)}  "
          f"{controller_mp.stat().st_size} bytes")


def golden_extension() -> None:
    registry = ExtensionRegistry()
    registry.register("probe_counter_v1", encode=bytes, decode=bytes)
    records = [
        meta(session_label="extension-fixture"),
        snap(0, devices=(DeviceRecord(0, "probe", "sn", 0, (
            Feature("count", Extension("probe_counter_v1", b"\x00\x01\x02\xff")),
            Feature("level", Double(0.25)),)),)),
        snap(10_000, devices=(DeviceRecord(0, "probe", "sn", 10_000, (
            Feature("count", Extension("probe_counter_v1", b"\x00\x01\x03\x00")),
            Feature("level", Double(0.5)),)),)),
    ]
    data = b"".join(encode_record(r, Encoding.NDJSON, registry) for r in records)
    write(GOLDEN / "extension.oxdr.ndjson", data)
    out = io.BytesIO()
    transcode(io.BytesIO(data), Encoding.NDJSON, Encoding.BINARY, out)
    write(GOLDEN / "extension.oxdr.mp", out.getvalue())


def golden_responses() -> None:
    rows = [
        {"participant_id": "P000", "age_years": 27, "gender": "female",
         "native_language": "German", "vision_correction": True,
         "vr_experience": 5},
        {"participant_id": "P007", "age_years": 34, "gender": "self_described",
         "gender_description": "agender", "native_language": "English",
         "vision_correction": False, "vr_experience": 2},
        {"participant_id": "P011", "age_years": 58, "gender": "male",
         "native_language": "Japanese", "vision_correction": True,
         "vr_experience": 0},
    ]
    data = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows)
    write(GOLDEN / "study.responses.ndjson", data.encode())


def malformed_corpus() -> None:
    print("malformed corpus:")
    manifest: dict[str, dict] = {}

    def violations(name: str, data: bytes, rules: list[str]) -> None:
        write(MALFORMED / name, data)
        manifest[name] = {"kind": "violations", "rules": rules}

    def decode_error(name: str, data: bytes, code: str,
                     line: int | None = None) -> None:
        write(MALFORMED / name, data)
        entry: dict = {"kind": "decode_error", "code": code}
        if line is not None:
            entry["line"] = line
        manifest[name] = entry

    violations("metadata_not_first.oxdr.ndjson",
               ndjson(snap(0), meta()), ["metadata_not_first"])
    violations("missing_metadata.oxdr.ndjson",
               ndjson(snap(0), snap(100)),
               ["metadata_not_first", "metadata_missing"])
    violations("duplicate_metadata.oxdr.ndjson",
               ndjson(meta(), snap(0), meta()), ["metadata_duplicate"])
    violations("non_monotonic_timestamp.oxdr.ndjson",
               ndjson(meta(), snap(100), snap(100)),
               ["non_monotonic_timestamp"])
    violations("frame_decreased.oxdr.ndjson",
               ndjson(meta(), snap(0, frame=5), snap(100, frame=4)),
               ["frame_decreased"])
    violations("duplicate_device.oxdr.ndjson",
               ndjson(meta(), snap(0, devices=(
                   DeviceRecord(1, "a", "s1", 0, ()),
                   DeviceRecord(1, "b", "s2", 0, ())))),
               ["duplicate_device_id"])
    violations("out_of_range_axis.oxdr.ndjson",
               ndjson(meta(), snap(0, devices=(axis_device(1.5),))),
               ["value_out_of_range"])
    violations("invalid_polling_rate.oxdr.ndjson",
               ndjson(meta(polling_rate_hz=-100.0), snap(0)),
               ["invalid_polling_rate"])

    good = ndjson(meta())
    decode_error("garbage_line.oxdr.ndjson",
                 good + b"{not valid json]\n" + ndjson(snap(0)),
                 "malformed_record", line=2)
    decode_error("unknown_tag.oxdr.ndjson",
                 good + b'{"kind":"snap","frame":0,"ts_us":0,"devices":'
                        b'[{"id":0,"name":"d","serial":"s","dev_ts_us":0,'
                        b'"features":[{"name":"f","type":"flux_capacitor",'
                        b'"value":"AAEC"}]}]}\n',
                 "unknown_type_tag", line=2)
    decode_error("unknown_kind.oxdr.ndjson",
                 good + b'{"kind":"blob","frame":0}\n',
                 "unknown_kind", line=2)
    decode_error("truncated_line.oxdr.ndjson",
                 ndjson(meta(), snap(0)) + b'{"kind":"snap","frame":1',
                 "truncated", line=3)
    binary = b"".join(encode_record(r, Encoding.BINARY)
                      for r in (meta(), snap(0), snap(100)))
    decode_error("truncated.oxdr.mp", binary[:-4], "truncated")

    manifest_path = MALFORMED / "expected.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"  {manifest_path.relative_to(REPO)}  ({len(manifest)} fixtures)")


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    MALFORMED.mkdir(parents=True, exist_ok=True)
    golden_sessions()
    golden_extension()
    golden_responses()
    malformed_corpus()


if __name__ == "__main__":
    main()
