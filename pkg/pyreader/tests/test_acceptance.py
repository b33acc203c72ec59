"""Acceptance: cross-implementation equivalence with the recording toolkit.

The toolkit (`oxdr`) is imported here purely as the reference oracle;
the reader package itself never touches it. If these tests pass, two
independent implementations agree on every golden byte, which is the
evidence that the format document, not either codebase, is the contract.
"""

import io
import struct

import pytest

oxdr = pytest.importorskip("oxdr")

from oxdr.analysis import FeatureSelector, csv_header, resample  # noqa: E402
from oxdr.codec import decode_file  # noqa: E402
from oxdr.model import RecordingMetadata as PrimaryMetadata  # noqa: E402
from oxdr.model import datetime_to_us  # noqa: E402

from oxdr_reader import ReaderMetadata, Selector, iter_records, to_table  # noqa: E402
from oxdr_reader.tabular import COMPONENT_ORDER  # noqa: E402

GOLDEN_RECORDINGS = (
    "session.oxdr.ndjson", "session.oxdr.mp",
    "controller.oxdr.ndjson", "controller.oxdr.mp",
    "extension.oxdr.ndjson", "extension.oxdr.mp",
)


class _Criterion:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        print(f"{'PASS' if exc_type is None else 'FAIL'}: {self.name}")
        return False


def _bits(x: float) -> bytes:
    return struct.pack("<d", x)


def _canonical_value(tag: str, value) -> object:
    """Reduce a reader value to a bit-comparable form."""
    if isinstance(value, float):
        return _bits(value)
    if isinstance(value, dict):
        return {k: _bits(v) if isinstance(v, float) else v
                for k, v in value.items()}
    return value


def _primary_value(value) -> object:
    """Reduce a toolkit feature value to the same comparable form."""
    tag = value.type_tag
    if tag in ("Integer",):
        return value.value
    if tag in ("Double", "Axis"):
        return _bits(value.value)
    if tag == "Vector2":
        return {"x": _bits(value.x), "y": _bits(value.y)}
    if tag == "Vector3":
        return {"x": _bits(value.x), "y": _bits(value.y), "z": _bits(value.z)}
    if tag == "Quaternion":
        return {"x": _bits(value.x), "y": _bits(value.y), "z": _bits(value.z),
                "w": _bits(value.w)}
    if tag == "Button":
        return {"value": _bits(value.value), "pressed": value.pressed}
    if tag == "Key":
        return {"code": value.code, "pressed": value.pressed}
    if tag == "Stick":
        return {"x": _bits(value.x), "y": _bits(value.y)}
    if tag == "DPad":
        return {"up": value.up, "down": value.down, "left": value.left,
                "right": value.right}
    if tag == "Touch":
        return {"touch_id": value.touch_id, "x": _bits(value.position.x),
                "y": _bits(value.position.y), "pressure": _bits(value.pressure),
                "phase": value.phase.value}
    return value.payload  # extension


def test_every_golden_fixture_decodes_equivalently(golden_dir):
    with _Criterion("cross-language equivalence: reader output matches the "
                    "toolkit decoder on every golden fixture"):
        for name in GOLDEN_RECORDINGS:
            path = str(golden_dir / name)
            theirs = list(decode_file(path, allow_unknown_extensions=True))
            mine = list(iter_records(path))
            assert len(mine) == len(theirs), name

            for reader_rec, primary_rec in zip(mine, theirs):
                if isinstance(primary_rec, PrimaryMetadata):
                    assert isinstance(reader_rec, ReaderMetadata)
                    assert reader_rec.start_time_us == datetime_to_us(
                        primary_rec.start_time)
                    end = (None if primary_rec.end_time is None
                           else datetime_to_us(primary_rec.end_time))
                    assert reader_rec.end_time_us == end
                    assert _bits(reader_rec.polling_rate_hz) == _bits(
                        primary_rec.polling_rate_hz)
                    for field in ("format_version", "hmd_name", "hmd_serial",
                                  "storage_medium", "participant_id",
                                  "consent_recorded", "session_label",
                                  "video_width", "video_height",
                                  "video_filename"):
                        assert getattr(reader_rec, field) == \
                            getattr(primary_rec, field), (name, field)
                    continue

                assert reader_rec.frame == primary_rec.frame
                assert reader_rec.timestamp_us == primary_rec.timestamp_us
                assert len(reader_rec.devices) == len(primary_rec.devices)
                for rd, pd in zip(reader_rec.devices, primary_rec.devices):
                    assert (rd.device_id, rd.name, rd.serial,
                            rd.device_timestamp_us) == (
                        pd.device_id, pd.name, pd.serial,
                        pd.device_timestamp_us)
                    assert len(rd.features) == len(pd.features)
                    for rf, pf in zip(rd.features, pd.features):
                        assert rf.name == pf.name
                        assert rf.type_tag == pf.value.type_tag
                        assert _canonical_value(rf.type_tag, rf.value) == \
                            _primary_value(pf.value), (name, rf.name)


@pytest.mark.parametrize("select", [
    ["SimHMD:position"],
    ["SimController:trigger_*", "SimHMD:*"],
    ["*:*"],
    ["SimEyeTracker:pupil_diameter_mm", "SimController:touchpad"],
])
def test_csv_header_is_byte_identical(golden_dir, select):
    with _Criterion(f"CSV header parity for selector {select}"):
        path = str(golden_dir / "session.oxdr.ndjson")
        table = to_table(iter_records(path), Selector.parse(select))
        mine = io.StringIO()
        import csv as _csv

        _csv.writer(mine, lineterminator="\n").writerow(table.header)

        primary_table = resample(path, FeatureSelector.parse(select), 50.0)
        assert mine.getvalue()[:-1] == csv_header(primary_table)


def test_component_tables_match_primary_export():
    # The per-type component order is duplicated from the format document
    # on both sides; drift on either side must fail loudly.
    from oxdr.analysis import _COMPONENTS

    primary = {
        cls.type_tag: tuple((name, kind) for name, kind, _, _ in spec)
        for cls, spec in _COMPONENTS.items()
    }
    assert primary == dict(COMPONENT_ORDER)
