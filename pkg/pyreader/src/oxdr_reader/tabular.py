"""Nearest-sample tabulation and CSV dump, per the FORMAT.md CSV contract.

No interpolation here: each output row is one snapshot, and every cell
holds the newest sample at or before that row's timestamp. The column
naming and ordering rules match the recording toolkit's exporter
exactly, so headers are byte-compatible for identical selectors.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .reading import ReaderMetadata, ReaderRecord, ReaderSnapshot

#: Component order and cell kind per value type (FORMAT.md section 5).
COMPONENT_ORDER = {
    "Integer": (("value", "int"),),
    "Double": (("value", "float"),),
    "Vector2": (("x", "float"), ("y", "float")),
    "Vector3": (("x", "float"), ("y", "float"), ("z", "float")),
    "Quaternion": (("x", "float"), ("y", "float"), ("z", "float"), ("w", "float")),
    "Axis": (("value", "float"),),
    "Button": (("value", "float"), ("pressed", "bool")),
    "Key": (("code", "int"), ("pressed", "bool")),
    "Stick": (("x", "float"), ("y", "float")),
    "DPad": (("up", "bool"), ("down", "bool"), ("left", "bool"), ("right", "bool")),
    "Touch": (("touch_id", "int"), ("x", "float"), ("y", "float"),
              ("pressure", "float"), ("phase", "str")),
}


class SelectionError(Exception):
    """The selector matched nothing tabulatable."""


def _compile(pattern: str) -> re.Pattern:
    # '*' is the only metacharacter.
    return re.compile("^" + ".*".join(re.escape(part) for part in pattern.split("*")) + "$")


class Selector:
    """Ordered device:feature patterns, '*' wildcards only."""

    def __init__(self, pairs: Sequence[tuple[str, str]]):
        if not pairs:
            raise SelectionError("selector needs at least one pattern")
        self.pairs = tuple(pairs)
        self._regexes = [(_compile(d), _compile(f)) for d, f in pairs]

    @classmethod
    def parse(cls, expressions: Sequence[str]) -> "Selector":
        pairs = []
        for expr in expressions:
            device, colon, feature = expr.partition(":")
            pairs.append((device or "*", feature if colon else "*"))
        return cls(pairs or [("*", "*")])

    def first_match(self, device: str, feature: str) -> Optional[int]:
        for index, (dev_re, feat_re) in enumerate(self._regexes):
            if dev_re.match(device) and feat_re.match(feature):
                return index
        return None


@dataclass
class Column:
    device: str
    feature: str
    component: str
    kind: str

    @property
    def header(self) -> str:
        return f"{self.device}.{self.feature}.{self.component}"


@dataclass
class Table:
    times: list[int]
    columns: list[Column]
    rows: list[list]  # row-major; None marks a cell with no sample yet

    @property
    def header(self) -> list[str]:
        return ["ts_us"] + [c.header for c in self.columns]


def _component_value(tag: str, value, component: str):
    if tag in ("Integer", "Double", "Axis"):
        return value
    return value[component]


def to_table(records: Iterable[ReaderRecord], selector: Selector) -> Table:
    """Tabulate selected features, one row per snapshot, hold-filled."""
    snapshots: list[ReaderSnapshot] = []
    columns: list[Column] = []
    column_order: list[tuple[int, int]] = []
    column_key: list[tuple[str, str, str]] = []  # device, feature, component
    discovered: dict[tuple[str, str], int] = {}

    for record in records:
        if isinstance(record, ReaderMetadata):
            continue
        snapshots.append(record)
        for device in record.devices:
            for feature in device.features:
                key = (device.name, feature.name)
                if key in discovered:
                    continue
                rank = selector.first_match(device.name, feature.name)
                if rank is None:
                    continue
                components = COMPONENT_ORDER.get(feature.type_tag)
                if components is None:
                    continue  # extension payloads are not tabulated
                ordinal = len(discovered)
                discovered[key] = ordinal
                for component, kind in components:
                    columns.append(Column(device.name, feature.name,
                                          component, kind))
                    column_order.append((rank, ordinal))
                    column_key.append((device.name, feature.name, component))

    if not columns:
        raise SelectionError("selector matched no tabulatable feature")

    permutation = sorted(range(len(columns)),
                         key=lambda i: (column_order[i], i))
    columns = [columns[i] for i in permutation]
    column_key = [column_key[i] for i in permutation]
    slot = {key: i for i, key in enumerate(column_key)}

    held: list = [None] * len(columns)
    times: list[int] = []
    rows: list[list] = []
    for snapshot in snapshots:
        for device in snapshot.devices:
            for feature in device.features:
                components = COMPONENT_ORDER.get(feature.type_tag)
                if components is None:
                    continue
                for component, _ in components:
                    index = slot.get((device.name, feature.name, component))
                    if index is not None:
                        held[index] = _component_value(feature.type_tag,
                                                       feature.value, component)
        times.append(snapshot.timestamp_us)
        rows.append(list(held))
    return Table(times=times, columns=columns, rows=rows)


def _render(value, kind: str) -> str:
    if value is None:
        return ""
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "1" if value else "0"
    if kind == "int":
        return str(int(value))
    return str(value)


def write_csv(table: Table, dest) -> tuple[int, int]:
    """UTF-8, LF endings, header row first; returns (rows, columns)."""
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as handle:
            return write_csv(table, handle)
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(table.header)
    kinds = [c.kind for c in table.columns]
    for t, row in zip(table.times, table.rows):
        writer.writerow([str(t)] + [_render(v, k) for v, k in zip(row, kinds)])
    return len(table.rows), len(table.columns) + 1
