"""Summaries, filtering, resampling against closed forms, CSV, and joins."""

import csv
import io
import math
from datetime import datetime, timezone

import pytest

from genrecords import bit_equal
from oxdr.analysis import (
    FeatureSelector,
    csv_header,
    export_csv,
    filter_records,
    join_summary,
    join_table,
    load_responses,
    resample,
    summarize,
)
from oxdr.errors import (
    AmbiguousParticipantError,
    AnalysisError,
    ConfigError,
    EmptySelectionError,
)
from oxdr.model import (
    Axis,
    Button,
    DemographicsResponse,
    DeviceRecord,
    Double,
    Feature,
    Integer,
    Quaternion,
    RecordingMetadata,
    Snapshot,
    validate_record_sequence,
)
from oxdr.simdevices import SimSpec, hmd_position, make_sim_hmd

UTC = timezone.utc


def meta(**kw) -> RecordingMetadata:
    defaults = dict(start_time=datetime(2024, 1, 1, tzinfo=UTC),
                    polling_rate_hz=100.0, participant_id="P007")
    defaults.update(kw)
    return RecordingMetadata(**defaults)


def stream_with(feature_points, device="dev", feature="f", metadata=None):
    """Build [metadata, snapshots...] with one feature sampled at given (ts, value)."""
    records = [metadata or meta()]
    for ts, value in feature_points:
        records.append(Snapshot(frame=0, timestamp_us=ts, devices=(
            DeviceRecord(0, device, "sn", ts, (Feature(feature, value),)),)))
    return records


def response(pid="P007", **kw) -> DemographicsResponse:
    defaults = dict(participant_id=pid, age_years=29, gender="female",
                    native_language="German", vision_correction=True,
                    vr_experience=4)
    defaults.update(kw)
    return DemographicsResponse(**defaults)


# ---------------------------------------------------------------------------
# Selector
# ---------------------------------------------------------------------------

def test_selector_wildcards():
    sel = FeatureSelector.parse(["SimController:trigger_*", "*HMD*:*"])
    assert sel.matches("SimController", "trigger_index")
    assert not sel.matches("SimController", "button_a")
    assert sel.matches("MyHMDPro", "anything")
    assert sel.match_index("SimController", "trigger_grip") == 0
    assert sel.match_index("TheHMD", "pose") == 1


def test_selector_star_is_the_only_metacharacter():
    sel = FeatureSelector(((r"dev.name", "f"),))
    assert sel.matches("dev.name", "f")
    assert not sel.matches("devXname", "f")  # '.' is literal


def test_selector_requires_entries():
    with pytest.raises(ConfigError):
        FeatureSelector(())


def test_selector_parse_defaults():
    sel = FeatureSelector.parse(["OnlyDevice"])
    assert sel.entries == (("OnlyDevice", "*"),)
    assert FeatureSelector.parse([":feat"]).entries == (("*", "feat"),)


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------

def test_summary_of_simulated_session(session_recording):
    summary = summarize(session_recording)
    assert summary.snapshot_count == 1000
    assert abs(summary.duration_s - 9.99) < 1e-9
    assert abs(summary.effective_rate_hz - 100.0) <= 0.2
    controller = next(d for d in summary.devices if d.name == "SimController")
    assert [name for name, _ in controller.features] == [
        "button_a", "button_b", "button_menu", "trigger_index", "trigger_grip",
        "touchpad", "position", "rotation"]
    assert controller.presence_ratio == 1.0 and controller.missed_cycles == 0


def test_summary_without_devices():
    records = [meta()] + [Snapshot(frame=i, timestamp_us=i * 10_000)
                          for i in range(100)]
    summary = summarize(records)
    assert summary.devices == ()
    assert summary.snapshot_count == 100
    assert abs(summary.duration_s - 0.99) < 1e-9


def test_summary_counts_missed_cycles():
    points = [(i * 10_000, Double(0.0)) for i in range(10)]
    records = stream_with(points)
    # Drop the device from snapshots 4 and 7.
    for i in (4, 7):
        records[1 + i] = Snapshot(frame=0, timestamp_us=records[1 + i].timestamp_us)
    summary = summarize(records)
    dev = summary.devices[0]
    assert dev.appearances == 8
    assert dev.missed_cycles == 2
    assert dev.presence_ratio == 0.8


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------

def test_identity_filter_preserves_structure(session_records):
    out = list(filter_records(iter(session_records), FeatureSelector.all()))
    assert bit_equal(out, session_records)


def test_trigger_filter_keeps_two_features(session_records):
    sel = FeatureSelector.parse(["SimController:trigger_*"])
    out = list(filter_records(iter(session_records), sel))
    snaps = [r for r in out if isinstance(r, Snapshot)]
    assert len(snaps) == 1000
    for snap in snaps:
        assert len(snap.devices) == 1
        names = [f.name for f in snap.devices[0].features]
        assert names == ["trigger_index", "trigger_grip"]


def test_nonmatching_filter_keeps_empty_snapshots(session_records):
    sel = FeatureSelector.parse(["NoSuchDevice:*"])
    out = list(filter_records(iter(session_records), sel))
    snaps = [r for r in out if isinstance(r, Snapshot)]
    assert len(snaps) == 1000
    assert all(s.devices == () for s in snaps)
    assert [s.timestamp_us for s in snaps] == [
        s.timestamp_us for s in session_records if isinstance(s, Snapshot)]
    assert validate_record_sequence(out).ok


# ---------------------------------------------------------------------------
# resample
# ---------------------------------------------------------------------------

def test_constant_feature_resamples_to_constant():
    points = [(i * 10_000, Double(2.71828)) for i in range(101)]
    table = resample(stream_with(points), FeatureSelector.all(), 37.0)
    cells, valid = table.column("dev.f.value")
    assert all(valid)
    assert all(c == 2.71828 for c in cells)


def test_grid_geometry():
    points = [(i * 10_000, Double(float(i))) for i in range(1001)]  # spans 10 s
    table = resample(stream_with(points), FeatureSelector.all(), 100.0)
    assert table.step_us == 10_000
    assert table.n_rows == 1001  # floor(span/step) + 1, endpoints inclusive
    assert table.times[0] == 0 and table.times[-1] == 10_000_000

    table = resample(stream_with(points), FeatureSelector.all(), 90.0)
    assert table.step_us == 11_111
    assert table.n_rows == 10_000_000 // 11_111 + 1


def test_coincident_grid_reproduces_samples_exactly():
    values = [0.1, -2.5, 3.75, 0.0, 1e-7, 123.456]
    points = [(i * 10_000, Double(v)) for i, v in enumerate(values)]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0)
    cells, valid = table.column("dev.f.value")
    assert all(valid)
    assert list(cells) == values  # bit-exact at coincident timestamps


def test_linear_interpolation_between_samples():
    points = [(0, Double(0.0)), (10_000, Double(1.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 400.0)
    cells, valid = table.column("dev.f.value")
    expected = [t / 10_000 for t in table.times]
    assert all(valid)
    assert cells == pytest.approx(expected, abs=1e-12)


def test_resampled_hmd_tracks_closed_form(session_recording):
    # 100 Hz recording resampled onto a 90 Hz grid; compare against the
    # analytic signal evaluated directly at the grid times.
    spec = SimSpec(kind="hmd", seed=42, amplitude=(1.0, 1.0, 1.0),
                   frequency_hz=0.5)
    table = resample(session_recording,
                     FeatureSelector.parse(["SimHMD:position"]), 90.0)
    worst = 0.0
    for axis_index, axis in enumerate("xyz"):
        cells, valid = table.column(f"SimHMD.position.{axis}")
        for t, cell, ok in zip(table.times, cells, valid):
            assert ok
            expected = hmd_position(spec, t)[axis_index]
            worst = max(worst, abs(cell - expected))
    assert worst < 1e-3, f"max abs error {worst}"


def test_resampled_quaternions_stay_unit(session_recording):
    table = resample(session_recording,
                     FeatureSelector.parse(["SimHMD:rotation"]), 90.0)
    cols = {axis: table.column(f"SimHMD.rotation.{axis}")[0] for axis in "xyzw"}
    for r in range(table.n_rows):
        norm = math.sqrt(sum(cols[a][r] ** 2 for a in "xyzw"))
        assert abs(norm - 1.0) < 1e-9


def test_quaternion_shortest_arc_sign_flip():
    q0 = Quaternion(0.0, 0.0, 0.0, 1.0)
    q1 = Quaternion(0.0, 0.0, 0.0, -1.0)  # same rotation, opposite sign
    points = [(0, q0), (10_000, q1)]
    table = resample(stream_with(points), FeatureSelector.all(), 200.0)
    cells, valid = table.column("dev.f.w")
    assert all(valid)
    # Interior points blend along the short arc (no swing through zero);
    # grid points that coincide with samples reproduce them verbatim.
    for t, c in zip(table.times, cells):
        if 0 < t < 10_000:
            assert abs(c - 1.0) < 1e-12
        else:
            assert abs(abs(c) - 1.0) < 1e-12


def test_hold_features_never_anticipate():
    points = [(0, Button(0.0, False)), (100_000, Button(1.0, True))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0,
                     staleness_horizon_ms=1000.0)
    pressed, valid = table.column("dev.f.pressed")
    for t, p, ok in zip(table.times, pressed, valid):
        assert ok
        assert p is (t >= 100_000)


def test_staleness_masks_cells_beyond_horizon():
    # Samples at 0 and 500 ms; the gap interior exceeds a 100 ms horizon.
    points = [(0, Double(1.0)), (500_000, Double(2.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0,
                     staleness_horizon_ms=100.0)
    cells, valid = table.column("dev.f.value")
    for t, ok in zip(table.times, valid):
        near_edge = t <= 100_000 or t >= 400_000
        assert ok is near_edge


def test_trailing_gap_is_masked():
    # Sample stops at 200 ms but empty snapshots continue to 500 ms.
    records = stream_with([(0, Double(1.0)), (200_000, Double(2.0))])
    for ts in range(300_000, 600_000, 100_000):
        records.append(Snapshot(frame=0, timestamp_us=ts))
    table = resample(records, FeatureSelector.all(), 10.0,
                     staleness_horizon_ms=100.0)
    cells, valid = table.column("dev.f.value")
    assert valid == tuple(t <= 300_000 for t in table.times)


def test_masked_count_monotone_in_horizon():
    points = [(0, Double(0.0)), (130_000, Double(1.0)), (150_000, Double(2.0)),
              (600_000, Double(3.0))]
    previous = None
    for horizon in (5.0, 20.0, 60.0, 200.0, 1000.0):
        table = resample(stream_with(points), FeatureSelector.all(), 100.0,
                         staleness_horizon_ms=horizon)
        masked = table.masked_count()
        if previous is not None:
            assert masked <= previous
        previous = masked


def test_nearest_mode_picks_recorded_values():
    points = [(0, Double(10.0)), (10_000, Double(20.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 300.0,
                     method="nearest")
    cells, valid = table.column("dev.f.value")
    assert all(valid)
    assert set(cells) == {10.0, 20.0}
    # Midpoint ties go to the earlier sample.
    for t, cell in zip(table.times, cells):
        if t == 5_000:
            assert cell == 10.0


def test_discrete_components_hold_previous_sample():
    points = [(0, Integer(5)), (50_000, Integer(9))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0,
                     staleness_horizon_ms=1000.0)
    cells, valid = table.column("dev.f.value")
    assert all(valid)
    assert list(cells) == [5, 5, 5, 5, 5, 9]


def test_filter_then_resample_commutes(session_recording):
    sel = FeatureSelector.parse(["SimController:trigger_*", "SimHMD:position"])
    direct = resample(session_recording, sel, 60.0)
    filtered = list(filter_records(session_recording, sel))
    indirect = resample(filtered, FeatureSelector.all(), 60.0)
    assert set(direct.column_names) == set(indirect.column_names)
    assert direct.times == indirect.times
    for name in direct.column_names:
        assert direct.column(name) == indirect.column(name)


def test_empty_selection_is_an_error(session_recording):
    with pytest.raises(EmptySelectionError):
        resample(session_recording, FeatureSelector.parse(["Nothing:*"]), 50.0)


def test_no_snapshots_is_an_error():
    with pytest.raises(AnalysisError):
        resample([meta()], FeatureSelector.all(), 50.0)


def test_bad_rate_rejected(session_recording):
    with pytest.raises(ConfigError):
        resample(session_recording, FeatureSelector.all(), 0.0)
    with pytest.raises(ConfigError):
        resample(session_recording, FeatureSelector.all(), 50.0, method="cubic")


def test_column_order_follows_selector_then_components(session_recording):
    sel = FeatureSelector.parse(["SimHMD:rotation", "SimHMD:position"])
    table = resample(session_recording, sel, 50.0)
    assert list(table.column_names) == [
        "SimHMD.rotation.x", "SimHMD.rotation.y", "SimHMD.rotation.z",
        "SimHMD.rotation.w",
        "SimHMD.position.x", "SimHMD.position.y", "SimHMD.position.z"]


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def test_csv_header_and_masked_cells():
    points = [(0, Axis(0.5)), (500_000, Axis(-0.5))]
    table = resample(stream_with(points, device="SimHMD", feature="wheel"),
                     FeatureSelector.all(), 10.0, staleness_horizon_ms=100.0)
    buf = io.StringIO()
    rows, cols = export_csv(table, buf)
    text = buf.getvalue()
    lines = text.split("\n")
    assert lines[0] == "ts_us,SimHMD.wheel.value"
    assert rows == table.n_rows and cols == 2
    assert "\r" not in text
    # Interior cells past the horizon are empty fields, never "NaN".
    assert "200000," in lines and "300000," in lines
    assert "NaN" not in text


def test_csv_round_trips_floats_bit_exactly(tmp_path, session_recording):
    table = resample(session_recording,
                     FeatureSelector.parse(["SimHMD:position"]), 90.0)
    out = tmp_path / "hmd.csv"
    export_csv(table, out)
    with open(out, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header == ["ts_us", *table.column_names]
        for r, row in enumerate(reader):
            assert int(row[0]) == table.times[r]
            for c in range(table.n_cols):
                parsed = float(row[1 + c])
                assert parsed == table.cells[c][r]
                assert math.copysign(1, parsed) == math.copysign(
                    1, table.cells[c][r])


def test_csv_quotes_awkward_names():
    points = [(0, Double(1.0)), (10_000, Double(2.0))]
    table = resample(stream_with(points, device='weird,"dev"'),
                     FeatureSelector.all(), 100.0)
    buf = io.StringIO()
    export_csv(table, buf)
    header = buf.getvalue().split("\n")[0]
    assert header == 'ts_us,"weird,""dev"".f.value"'
    assert next(csv.reader(io.StringIO(header))) == [
        "ts_us", 'weird,"dev".f.value']


def test_csv_bool_and_string_cells(session_recording):
    table = resample(session_recording,
                     FeatureSelector.parse(["SimController:touchpad"]), 50.0)
    buf = io.StringIO()
    export_csv(table, buf)
    reader = csv.reader(io.StringIO(buf.getvalue()))
    header = next(reader)
    phase_col = header.index("SimController.touchpad.phase")
    id_col = header.index("SimController.touchpad.touch_id")
    phases = set()
    for row in reader:
        phases.add(row[phase_col])
        int(row[id_col])  # integers stay integers
    assert phases <= {"none", "began", "moved", "ended", "canceled"}
    assert len(phases) > 1


def test_csv_header_helper_matches_export():
    points = [(0, Double(1.0)), (10_000, Double(2.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0)
    buf = io.StringIO()
    export_csv(table, buf)
    assert buf.getvalue().split("\n")[0] == csv_header(table)


# ---------------------------------------------------------------------------
# Questionnaire join
# ---------------------------------------------------------------------------

def test_join_summary_matched(session_records):
    summary = summarize(session_records)
    joined = join_summary(summary, [response("P000"), response("P001")])
    assert joined.matched and joined.response.participant_id == "P000"


def test_join_summary_unmatched(session_records):
    summary = summarize(session_records)
    joined = join_summary(summary, [response("P999")])
    assert joined.matched is False and joined.response is None
    assert joined.participant_id == "P000"


def test_join_duplicate_ids_ambiguous(session_records):
    summary = summarize(session_records)
    with pytest.raises(AmbiguousParticipantError):
        join_summary(summary, [response("P000"), response("P000")])


def test_join_table_appends_constant_columns():
    points = [(0, Double(1.0)), (10_000, Double(2.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0)
    joined = join_table(table, [response("P007", age_years=31,
                                         vr_experience=6)])
    matched, _ = joined.column("participant.join.matched")
    assert all(matched)
    ages, ages_ok = joined.column("participant.demographics.age_years")
    assert all(ages_ok) and set(ages) == {31}
    genders, _ = joined.column("participant.demographics.gender")
    assert set(genders) == {"female"}

    buf = io.StringIO()
    export_csv(joined, buf)
    header = buf.getvalue().split("\n")[0]
    assert header.endswith(
        "participant.join.matched,participant.demographics.age_years,"
        "participant.demographics.gender,"
        "participant.demographics.gender_description,"
        "participant.demographics.native_language,"
        "participant.demographics.vision_correction,"
        "participant.demographics.vr_experience")


def test_join_table_unmatched_masks_demographics():
    points = [(0, Double(1.0)), (10_000, Double(2.0))]
    table = resample(stream_with(points), FeatureSelector.all(), 100.0)
    joined = join_table(table, [response("someone_else")])
    matched, _ = joined.column("participant.join.matched")
    assert not any(matched)
    _, ages_ok = joined.column("participant.demographics.age_years")
    assert not any(ages_ok)


def test_load_responses_sidecar(tmp_path):
    path = tmp_path / "study.responses.ndjson"
    path.write_text(
        '{"participant_id":"P007","age_years":29,"gender":"female",'
        '"native_language":"German","vision_correction":true,"vr_experience":4}\n'
        '{"participant_id":"P008","age_years":41,"gender":"self_described",'
        '"gender_description":"agender","native_language":"English",'
        '"vision_correction":false,"vr_experience":0}\n')
    responses = load_responses(path)
    assert [r.participant_id for r in responses] == ["P007", "P008"]
    assert responses[1].gender_description == "agender"


@pytest.mark.parametrize("line", [
    "not json",
    '{"participant_id":"P1"}',
    '{"participant_id":"P1","age_years":0,"gender":"male",'
    '"native_language":"x","vision_correction":false,"vr_experience":1}',
])
def test_load_responses_rejects_bad_lines(tmp_path, line):
    path = tmp_path / "bad.responses.ndjson"
    path.write_text(line + "\n")
    with pytest.raises(ConfigError) as info:
        load_responses(path)
    assert ":1:" in str(info.value)
