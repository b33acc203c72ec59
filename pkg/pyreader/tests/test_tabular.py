"""Nearest-sample tables and the CSV dump."""

import csv
import io

import pytest

from oxdr_reader import SelectionError, Selector, iter_records, to_table, write_csv


def test_identity_selector_on_controller_fixture(golden_dir):
    table = to_table(iter_records(str(golden_dir / "controller.oxdr.ndjson")),
                     Selector([("*", "*")]))
    features = {(c.device, c.feature) for c in table.columns}
    assert features == {("SimController", name) for name in (
        "button_a", "button_b", "button_menu", "trigger_index", "trigger_grip",
        "touchpad", "position", "rotation")}
    # 5 buttons x2 + touch x5 + vector3 x3 + quaternion x4
    assert len(table.columns) == 22
    assert len(table.rows) == 100


def test_columns_follow_selector_then_component_order(golden_dir):
    table = to_table(iter_records(str(golden_dir / "session.oxdr.ndjson")),
                     Selector([("SimHMD", "rotation"), ("SimHMD", "position")]))
    assert table.header == [
        "ts_us",
        "SimHMD.rotation.x", "SimHMD.rotation.y", "SimHMD.rotation.z",
        "SimHMD.rotation.w",
        "SimHMD.position.x", "SimHMD.position.y", "SimHMD.position.z"]


def test_hold_fill_keeps_last_sample(golden_dir):
    # The eye tracker reports on half the 100 Hz cycles in this fixture
    # (native 200 Hz against 50 Hz polling -> always fresh), so use the
    # session fixture's eye tracker and check cells are never None after
    # the first report.
    table = to_table(iter_records(str(golden_dir / "session.oxdr.ndjson")),
                     Selector([("SimEyeTracker", "pupil_diameter_mm")]))
    values = [row[0] for row in table.rows]
    first = next(i for i, v in enumerate(values) if v is not None)
    assert all(v is not None for v in values[first:])


def test_selection_error():
    with pytest.raises(SelectionError):
        Selector([])
    with pytest.raises(SelectionError):
        to_table(iter(()), Selector([("*", "*")]))


def test_extension_features_are_skipped(golden_dir):
    with pytest.raises(SelectionError):
        to_table(iter_records(str(golden_dir / "extension.oxdr.ndjson")),
                 Selector([("probe", "count")]))
    table = to_table(iter_records(str(golden_dir / "extension.oxdr.ndjson")),
                     Selector([("probe", "*")]))
    assert table.header == ["ts_us", "probe.level.value"]


def test_csv_dump_parses_back(golden_dir):
    table = to_table(iter_records(str(golden_dir / "session.oxdr.ndjson")),
                     Selector([("SimHMD", "position")]))
    buffer = io.StringIO()
    rows, cols = write_csv(table, buffer)
    assert (rows, cols) == (100, 4)
    parsed = list(csv.reader(io.StringIO(buffer.getvalue())))
    assert parsed[0] == table.header
    for row_index, row in enumerate(parsed[1:]):
        assert int(row[0]) == table.times[row_index]
        for col_index in range(3):
            assert float(row[1 + col_index]) == table.rows[row_index][col_index]


def test_selector_parse_shapes():
    selector = Selector.parse(["SimHMD:pos*", ":level", "OnlyDevice"])
    assert selector.pairs == (("SimHMD", "pos*"), ("*", "level"),
                              ("OnlyDevice", "*"))
    assert selector.first_match("SimHMD", "position") == 0
    assert selector.first_match("anything", "level") == 1
    assert selector.first_match("OnlyDevice", "whatever") == 2
    assert selector.first_match("other", "nope") is None
