"""Offline pipeline: recordings in, validated ML-ready tables out.

All operations are pure functions over decoded record streams; a path
argument is accepted everywhere a record iterable is, as a convenience.
The stages compose as  filter -> resample -> export_csv, with an
optional questionnaire join keyed on the participant identifier.

Resampling policy per value class (chosen so continuous signals stay
smooth and discrete signals stay causal):

* linear interpolation — Double, Vector2/3, Axis, Stick, Button value,
  Touch position and pressure
* normalized linear interpolation with shortest-arc sign handling —
  Quaternion
* previous-sample hold — Integer, Button pressed, Key, DPad,
  Touch id and phase

A grid cell with no sample within the staleness horizon on either side
is masked invalid; a cell with a sample on only one side inside the
horizon takes that sample's value (boundary hold).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
from dataclasses import dataclass, replace
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

from .codec import decode_file
from .errors import (
    AmbiguousParticipantError,
    AnalysisError,
    ConfigError,
    EmptySelectionError,
)
from .model import (
    Axis,
    Button,
    DemographicsResponse,
    DeviceRecord,
    Double,
    DPad,
    Extension,
    Feature,
    Integer,
    Key,
    Quaternion,
    Record,
    RecordingMetadata,
    Snapshot,
    Stick,
    Touch,
    Vector2,
    Vector3,
)

logger = logging.getLogger(__name__)

RecordSource = Union[str, os.PathLike, Iterable[Record]]

RESPONSES_SUFFIX = ".responses.ndjson"


def _iter_records(source: RecordSource) -> Iterator[Record]:
    if isinstance(source, (str, os.PathLike)):
        return decode_file(source)
    return iter(source)


# ---------------------------------------------------------------------------
# Feature selection
# ---------------------------------------------------------------------------

def _compile_pattern(pattern: str) -> re.Pattern:
    # Only '*' is special; everything else matches literally.
    return re.compile("^" + ".*".join(re.escape(p) for p in pattern.split("*")) + "$")


@dataclass(frozen=True)
class FeatureSelector:
    """Ordered (device pattern, feature pattern) pairs; ``*`` wildcards only."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("a selector needs at least one pattern pair")
        object.__setattr__(self, "entries", tuple(
            (str(d), str(f)) for d, f in self.entries))
        object.__setattr__(self, "_compiled", tuple(
            (_compile_pattern(d), _compile_pattern(f)) for d, f in self.entries))

    @classmethod
    def parse(cls, expressions: Sequence[str]) -> "FeatureSelector":
        """Parse ``device:feature`` expressions (missing part defaults to ``*``)."""
        entries = []
        for expr in expressions:
            device, sep, feature = expr.partition(":")
            entries.append((device or "*", feature if sep else "*"))
        return cls(tuple(entries))

    @classmethod
    def all(cls) -> "FeatureSelector":
        return cls((("*", "*"),))

    def matches(self, device_name: str, feature_name: str) -> bool:
        return self.match_index(device_name, feature_name) is not None

    def match_index(self, device_name: str, feature_name: str) -> Optional[int]:
        """Index of the first entry matching the pair, or None."""
        for i, (dev_re, feat_re) in enumerate(self._compiled):  # type: ignore[attr-defined]
            if dev_re.match(device_name) and feat_re.match(feature_name):
                return i
        return None


def filter_records(source: RecordSource, selector: FeatureSelector) -> Iterator[Record]:
    """Keep only matching device/feature pairs; stream stays valid.

    Snapshots whose device list empties out are retained with empty
    lists so the timestamp lattice survives for later alignment.
    """
    matched_any = False
    for record in _iter_records(source):
        if not isinstance(record, Snapshot):
            yield record
            continue
        devices = []
        for dev in record.devices:
            kept = tuple(f for f in dev.features
                         if selector.matches(dev.name, f.name))
            if kept:
                matched_any = True
                devices.append(replace(dev, features=kept))
        yield replace(record, devices=tuple(devices))
    if not matched_any:
        logger.warning("selector %s matched no device/feature pair",
                       list(selector.entries))


# ---------------------------------------------------------------------------
# Session summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceSummary:
    device_id: int
    name: str
    serial: str
    features: tuple[tuple[str, str], ...]  # (feature name, type tag)
    appearances: int
    presence_ratio: float
    missed_cycles: int


@dataclass(frozen=True)
class SessionSummary:
    metadata: Optional[RecordingMetadata]
    snapshot_count: int
    duration_s: float
    effective_rate_hz: float
    devices: tuple[DeviceSummary, ...]


def summarize(source: RecordSource) -> SessionSummary:
    """Digest a recording: timing, cadence, and per-device inventory.

    ``missed_cycles`` counts snapshots since a device's first appearance
    in which it did not report (its samples were slower than polling or
    it went silent); ``presence_ratio`` is the complementary fraction.
    """
    metadata: Optional[RecordingMetadata] = None
    snapshot_count = 0
    first_ts = last_ts = None
    inventory: dict[int, dict] = {}

    for record in _iter_records(source):
        if isinstance(record, RecordingMetadata):
            if metadata is None:
                metadata = record
            continue
        snap = record
        if first_ts is None:
            first_ts = snap.timestamp_us
        last_ts = snap.timestamp_us
        snapshot_count += 1
        for dev in snap.devices:
            entry = inventory.setdefault(dev.device_id, {
                "name": dev.name, "serial": dev.serial,
                "features": {}, "appearances": 0,
                "first_snapshot": snapshot_count - 1,
            })
            entry["appearances"] += 1
            for feat in dev.features:
                entry["features"].setdefault(feat.name, feat.value.type_tag)

    duration_s = 0.0
    if first_ts is not None and last_ts is not None:
        duration_s = (last_ts - first_ts) / 1e6
    rate = (snapshot_count - 1) / duration_s if duration_s > 0 else 0.0

    devices = []
    for device_id in sorted(inventory):
        entry = inventory[device_id]
        window = snapshot_count - entry["first_snapshot"]
        devices.append(DeviceSummary(
            device_id=device_id,
            name=entry["name"],
            serial=entry["serial"],
            features=tuple(entry["features"].items()),
            appearances=entry["appearances"],
            presence_ratio=entry["appearances"] / window if window else 0.0,
            missed_cycles=window - entry["appearances"],
        ))
    return SessionSummary(metadata=metadata, snapshot_count=snapshot_count,
                          duration_s=duration_s, effective_rate_hz=rate,
                          devices=tuple(devices))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

_LERP = "lerp"
_HOLD = "hold"
_NLERP = "nlerp"

#: Per value type: (component name, cell kind, fill policy, extractor).
_COMPONENTS: dict[type, tuple[tuple[str, str, str, Any], ...]] = {
    Integer: (("value", "int", _HOLD, lambda v: v.value),),
    Double: (("value", "float", _LERP, lambda v: v.value),),
    Vector2: (("x", "float", _LERP, lambda v: v.x),
              ("y", "float", _LERP, lambda v: v.y)),
    Vector3: (("x", "float", _LERP, lambda v: v.x),
              ("y", "float", _LERP, lambda v: v.y),
              ("z", "float", _LERP, lambda v: v.z)),
    Quaternion: (("x", "float", _NLERP, lambda v: v.x),
                 ("y", "float", _NLERP, lambda v: v.y),
                 ("z", "float", _NLERP, lambda v: v.z),
                 ("w", "float", _NLERP, lambda v: v.w)),
    Axis: (("value", "float", _LERP, lambda v: v.value),),
    Button: (("value", "float", _LERP, lambda v: v.value),
             ("pressed", "bool", _HOLD, lambda v: v.pressed)),
    Key: (("code", "int", _HOLD, lambda v: v.code),
          ("pressed", "bool", _HOLD, lambda v: v.pressed)),
    Stick: (("x", "float", _LERP, lambda v: v.x),
            ("y", "float", _LERP, lambda v: v.y)),
    DPad: (("up", "bool", _HOLD, lambda v: v.up),
           ("down", "bool", _HOLD, lambda v: v.down),
           ("left", "bool", _HOLD, lambda v: v.left),
           ("right", "bool", _HOLD, lambda v: v.right)),
    Touch: (("touch_id", "int", _HOLD, lambda v: v.touch_id),
            ("x", "float", _LERP, lambda v: v.position.x),
            ("y", "float", _LERP, lambda v: v.position.y),
            ("pressure", "float", _LERP, lambda v: v.pressure),
            ("phase", "str", _HOLD, lambda v: v.phase.value)),
}


@dataclass(frozen=True)
class ColumnSpec:
    device: str
    feature: str
    component: str
    kind: str  # float | int | bool | str

    @property
    def name(self) -> str:
        return f"{self.device}.{self.feature}.{self.component}"


@dataclass(frozen=True)
class ResampledTable:
    """Uniform-rate columnar view of selected features.

    Column-major storage: ``cells[c][r]`` pairs with ``valid[c][r]``.
    The time column is exact integer microseconds on the grid
    ``start_us + r * step_us``.
    """

    metadata: Optional[RecordingMetadata]
    target_rate_hz: float
    step_us: int
    times: tuple[int, ...]
    columns: tuple[ColumnSpec, ...]
    cells: tuple[tuple, ...]
    valid: tuple[tuple[bool, ...], ...]

    @property
    def n_rows(self) -> int:
        return len(self.times)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> tuple[tuple, tuple[bool, ...]]:
        for spec, cells, valid in zip(self.columns, self.cells, self.valid):
            if spec.name == name:
                return cells, valid
        raise KeyError(name)

    def masked_count(self) -> int:
        return sum(1 for col in self.valid for ok in col if not ok)


def _nlerp(q0, q1, u: float):
    # Shortest arc: flip one endpoint when the dot product is negative.
    dot = sum(a * b for a, b in zip(q0, q1))
    if dot < 0.0:
        q1 = tuple(-b for b in q1)
    blend = tuple(a + u * (b - a) for a, b in zip(q0, q1))
    norm = math.sqrt(sum(c * c for c in blend))
    if norm == 0.0:
        return q0
    return tuple(c / norm for c in blend)


class _Series:
    """All samples of one (device, feature) pair plus a scan cursor."""

    __slots__ = ("ts", "values", "_cursor")

    def __init__(self):
        self.ts: list[int] = []
        self.values: list = []
        self._cursor = 0

    def bracket(self, t: int) -> tuple[Optional[int], Optional[int]]:
        """Indices of the samples at/just before and at/just after ``t``.

        Grid times are queried in increasing order, so the cursor only
        moves forward; the whole fill pass is linear.
        """
        ts = self.ts
        n = len(ts)
        while self._cursor < n and ts[self._cursor] < t:
            self._cursor += 1
        after = self._cursor if self._cursor < n else None
        if after is not None and ts[after] == t:
            return after, after
        before = self._cursor - 1 if self._cursor > 0 else None
        return before, after


def resample(source: RecordSource, selector: FeatureSelector,
             target_rate_hz: float,
             staleness_horizon_ms: Optional[float] = None,
             method: str = "interpolate") -> ResampledTable:
    """Resample selected features onto a uniform grid.

    The grid spans first to last snapshot timestamp inclusive, spaced
    ``round(1e6 / target_rate_hz)`` microseconds.  ``method`` is
    ``interpolate`` (policy in the module docstring) or ``nearest``
    (closest sample within the horizon, ties to the earlier one).

    The default horizon is two polling periods: one missed cycle is
    tolerated, longer gaps surface as masked cells.
    """
    if not target_rate_hz > 0:
        raise ConfigError(f"target_rate_hz must be positive, got {target_rate_hz}")
    if method not in ("interpolate", "nearest"):
        raise ConfigError(f"unknown resampling method {method!r}")

    metadata: Optional[RecordingMetadata] = None
    first_ts = last_ts = None
    columns: list[ColumnSpec] = []
    column_fill: list[tuple[str, Any]] = []  # (policy, extractor) per column
    series_for_column: list[_Series] = []
    series: dict[tuple[str, str], _Series] = {}
    order: list[tuple[int, int]] = []  # (selector index, discovery ordinal)
    discovered: dict[tuple[str, str], int] = {}

    for record in _iter_records(source):
        if isinstance(record, RecordingMetadata):
            if metadata is None:
                metadata = record
            continue
        snap = record
        if first_ts is None:
            first_ts = snap.timestamp_us
        last_ts = snap.timestamp_us
        for dev in snap.devices:
            for feat in dev.features:
                sel_index = selector.match_index(dev.name, feat.name)
                if sel_index is None:
                    continue
                key = (dev.name, feat.name)
                ser = series.get(key)
                if ser is None:
                    ser = series[key] = _Series()
                    if not isinstance(feat.value, Extension):
                        comp_specs = _COMPONENTS[type(feat.value)]
                        ordinal = len(discovered)
                        discovered[key] = ordinal
                        for comp_name, kind, policy, extract in comp_specs:
                            columns.append(ColumnSpec(dev.name, feat.name,
                                                      comp_name, kind))
                            column_fill.append((policy, extract))
                            series_for_column.append(ser)
                            order.append((sel_index, ordinal))
                elif ser.values and type(feat.value) is not type(ser.values[0]):
                    raise AnalysisError(
                        f"feature {feat.name!r} on device {dev.name!r} changed "
                        f"type mid-recording")
                ser.ts.append(snap.timestamp_us)
                ser.values.append(feat.value)

    if first_ts is None:
        raise AnalysisError("recording contains no snapshots")
    if not columns:
        raise EmptySelectionError(
            f"selector {list(selector.entries)} selected no tabulatable feature")

    # Stable column order: selector entry first, then discovery, then the
    # component order fixed per type above.
    permutation = sorted(range(len(columns)), key=lambda i: (order[i], i))
    columns = [columns[i] for i in permutation]
    column_fill = [column_fill[i] for i in permutation]
    series_for_column = [series_for_column[i] for i in permutation]

    step_us = round(1e6 / target_rate_hz)
    if step_us <= 0:
        raise ConfigError(f"target_rate_hz {target_rate_hz} is above 1 MHz")
    span = last_ts - first_ts
    times = tuple(first_ts + r * step_us for r in range(span // step_us + 1))

    if staleness_horizon_ms is None:
        polling = metadata.polling_rate_hz if metadata else target_rate_hz
        staleness_horizon_ms = 2_000.0 / polling if polling > 0 else 100.0
    horizon_us = round(staleness_horizon_ms * 1_000)

    quat_cache: dict[tuple[int, int], tuple] = {}
    n_cols = len(columns)
    cells: list[list] = [[None] * len(times) for _ in range(n_cols)]
    valid: list[list[bool]] = [[False] * len(times) for _ in range(n_cols)]

    # Per-column cursors must not share _Series scan state across columns
    # of the same feature; bracket once per (series, grid row) instead.
    unique_series = list({id(s): s for s in series_for_column}.values())
    brackets: dict[int, tuple] = {}

    for r, t in enumerate(times):
        brackets.clear()
        for ser in unique_series:
            brackets[id(ser)] = ser.bracket(t)
        quat_cache.clear()
        for c in range(n_cols):
            ser = series_for_column[c]
            before, after = brackets[id(ser)]
            policy, extract = column_fill[c]

            b_ok = before is not None and t - ser.ts[before] <= horizon_us
            a_ok = after is not None and ser.ts[after] - t <= horizon_us

            if method == "nearest":
                pick = None
                if b_ok and a_ok:
                    pick = before if t - ser.ts[before] <= ser.ts[after] - t else after
                elif b_ok:
                    pick = before
                elif a_ok:
                    pick = after
                if pick is not None:
                    cells[c][r] = extract(ser.values[pick])
                    valid[c][r] = True
                continue

            if policy == _HOLD:
                if b_ok:
                    cells[c][r] = extract(ser.values[before])
                    valid[c][r] = True
                continue

            if not (b_ok or a_ok):
                continue
            if not b_ok:
                cells[c][r] = extract(ser.values[after])
            elif not a_ok or before == after:
                cells[c][r] = extract(ser.values[before])
            elif policy == _LERP:
                t0, t1 = ser.ts[before], ser.ts[after]
                v0, v1 = extract(ser.values[before]), extract(ser.values[after])
                u = (t - t0) / (t1 - t0)
                cells[c][r] = v0 + u * (v1 - v0)
            else:  # _NLERP: blend all four components jointly, then normalize
                cache_key = (id(ser), r)
                blend = quat_cache.get(cache_key)
                if blend is None:
                    q0 = ser.values[before]
                    q1 = ser.values[after]
                    u = (t - ser.ts[before]) / (ser.ts[after] - ser.ts[before])
                    blend = _nlerp((q0.x, q0.y, q0.z, q0.w),
                                   (q1.x, q1.y, q1.z, q1.w), u)
                    quat_cache[cache_key] = blend
                comp_index = {"x": 0, "y": 1, "z": 2, "w": 3}[columns[c].component]
                cells[c][r] = blend[comp_index]
            valid[c][r] = True

    return ResampledTable(
        metadata=metadata,
        target_rate_hz=float(target_rate_hz),
        step_us=step_us,
        times=times,
        columns=tuple(columns),
        cells=tuple(tuple(col) for col in cells),
        valid=tuple(tuple(col) for col in valid),
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _format_cell(value: Any, kind: str) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "1" if value else "0"
    if kind == "int":
        return str(int(value))
    return str(value)


def export_csv(table: ResampledTable, dest) -> tuple[int, int]:
    """Write the table as UTF-8 CSV with LF line endings.

    Header: ``ts_us`` then one column per component.  Invalid cells are
    empty fields; floats use the shortest round-tripping decimal form.
    Returns (data row count, column count incl. ``ts_us``).
    """
    if table.n_rows == 0 or table.n_cols == 0:
        raise EmptySelectionError("cannot export an empty table")
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            return export_csv(table, fh)

    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["ts_us", *table.column_names])
    kinds = [c.kind for c in table.columns]
    for r, t in enumerate(table.times):
        row = [str(t)]
        for c in range(table.n_cols):
            if table.valid[c][r]:
                row.append(_format_cell(table.cells[c][r], kinds[c]))
            else:
                row.append("")
        writer.writerow(row)
    return len(table.times), table.n_cols + 1


def csv_header(table: ResampledTable) -> str:
    """The exact header line ``export_csv`` would write, without newline."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(["ts_us", *table.column_names])
    return buf.getvalue()[:-1]


# ---------------------------------------------------------------------------
# Questionnaire join
# ---------------------------------------------------------------------------

def load_responses(path: str | os.PathLike) -> list[DemographicsResponse]:
    """Read a ``.responses.ndjson`` sidecar, one response object per line."""
    responses = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                responses.append(DemographicsResponse(
                    participant_id=obj["participant_id"],
                    age_years=obj["age_years"],
                    gender=obj["gender"],
                    native_language=obj["native_language"],
                    vision_correction=obj["vision_correction"],
                    vr_experience=obj["vr_experience"],
                    gender_description=obj.get("gender_description"),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(
                    f"{os.fspath(path)}:{line_no}: invalid response: {exc}") from exc
    return responses


def _match_response(participant_id: str,
                    responses: Sequence[DemographicsResponse]
                    ) -> Optional[DemographicsResponse]:
    matches = [r for r in responses if r.participant_id == participant_id]
    if len(matches) > 1:
        raise AmbiguousParticipantError(
            f"{len(matches)} responses share participant_id {participant_id!r}")
    return matches[0] if matches else None


@dataclass(frozen=True)
class JoinedSummary:
    summary: SessionSummary
    participant_id: str
    matched: bool
    response: Optional[DemographicsResponse]


def join_summary(summary: SessionSummary,
                 responses: Sequence[DemographicsResponse]) -> JoinedSummary:
    """Attach the matching demographics response to a session summary.

    A missing match is reported explicitly (``matched=False``), never
    silently dropped; a duplicated participant id is an error.
    """
    if summary.metadata is None:
        raise AnalysisError("summary has no metadata, so no participant_id")
    pid = summary.metadata.participant_id
    response = _match_response(pid, responses)
    return JoinedSummary(summary=summary, participant_id=pid,
                         matched=response is not None, response=response)


#: Constant columns appended by join_table: (suffix, kind, attribute).
_PARTICIPANT_COLUMNS = (
    ("age_years", "int", "age_years"),
    ("gender", "str", "gender"),
    ("gender_description", "str", "gender_description"),
    ("native_language", "str", "native_language"),
    ("vision_correction", "bool", "vision_correction"),
    ("vr_experience", "int", "vr_experience"),
)


def join_table(table: ResampledTable,
               responses: Sequence[DemographicsResponse]) -> ResampledTable:
    """Append demographics as constant ``participant.*`` columns.

    The column schema is identical whether or not a response matched:
    ``participant.matched`` records the outcome and unmatched rows carry
    masked demographic cells rather than fabricated values.
    """
    if table.metadata is None:
        raise AnalysisError("table has no metadata, so no participant_id")
    pid = table.metadata.participant_id
    response = _match_response(pid, responses)

    n = table.n_rows
    columns = list(table.columns)
    cells = list(table.cells)
    valid = list(table.valid)

    columns.append(ColumnSpec("participant", "join", "matched", "bool"))
    cells.append(tuple([response is not None] * n))
    valid.append(tuple([True] * n))

    for suffix, kind, attr in _PARTICIPANT_COLUMNS:
        columns.append(ColumnSpec("participant", "demographics", suffix, kind))
        if response is None:
            cells.append(tuple([None] * n))
            valid.append(tuple([False] * n))
        else:
            value = getattr(response, attr)
            if value is None:
                value = ""
            elif suffix == "gender":
                value = value.value
            cells.append(tuple([value] * n))
            valid.append(tuple([True] * n))

    return replace(table, columns=tuple(columns), cells=tuple(cells),
                   valid=tuple(valid))
