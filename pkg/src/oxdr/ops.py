"""Use-case layer shared by the CLI and the HTTP service.

Each function performs one complete workflow (record, validate,
summarize, convert, export) against filesystem paths, raising the
toolkit's typed errors; the front ends only translate those into exit
codes or HTTP statuses.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Sequence

from .analysis import (
    FeatureSelector,
    SessionSummary,
    export_csv,
    join_table,
    load_responses,
    resample,
    summarize,
)
from .codec import (
    Encoding,
    decode_file,
    encoding_for_path,
    open_writer,
    transcode,
)
from .errors import ConfigError
from .model import RecordingMetadata, ValidationReport, validate_record_sequence
from .recorder import MonotonicClock, Recorder, RecorderConfig, VirtualClock
from .simdevices import SimFrameSource, SimSession, load_sim_session


@dataclass(frozen=True)
class RecordResult:
    output_path: str
    encoding: Encoding
    metadata: RecordingMetadata
    snapshot_count: int
    record_count: int
    device_names: tuple[str, ...]
    file_size_bytes: int
    dropped_samples: dict[str, int]


def _require_encoding(path: str | os.PathLike,
                      encoding: Encoding | str | None) -> Encoding:
    if encoding is not None:
        return Encoding(encoding)
    inferred = encoding_for_path(path)
    if inferred is None:
        raise ConfigError(
            f"cannot infer encoding from {os.fspath(path)!r}; "
            "pass an explicit encoding or use a .oxdr.ndjson/.oxdr.mp suffix")
    return inferred


def load_session_config(spec_path: str | os.PathLike) -> SimSession:
    try:
        return load_sim_session(spec_path)
    except FileNotFoundError:
        raise ConfigError(f"sim spec file not found: {os.fspath(spec_path)}") from None


def record_simulated(spec_path: str | os.PathLike,
                     output_path: str | os.PathLike,
                     polling_rate_hz: float,
                     duration_s: Optional[float],
                     encoding: Encoding | str | None = None,
                     realtime: bool = False,
                     stop: Optional[threading.Event] = None,
                     recorder_slot: Optional[list] = None) -> RecordResult:
    """Run one simulated recording session to a file.

    The default virtual clock produces the session instantly and, with a
    fixed spec, byte-identically on every run; ``realtime`` swaps in the
    wall clock and actually paces the polling loop.  ``recorder_slot``,
    when given, receives the live :class:`Recorder` before the run starts
    so a controller thread can stop it.
    """
    session = load_session_config(spec_path)
    enc = _require_encoding(output_path, encoding)
    if duration_s is not None and not duration_s > 0:
        raise ConfigError(f"duration must be positive, got {duration_s}")

    metadata = session.metadata
    if realtime:
        clock: VirtualClock | MonotonicClock = MonotonicClock()
        from dataclasses import replace

        metadata = replace(metadata, start_time=datetime.now(timezone.utc))
    else:
        clock = VirtualClock()

    writer = open_writer(output_path, enc)
    try:
        recorder = Recorder(RecorderConfig(
            polling_rate_hz=polling_rate_hz,
            frame_source=SimFrameSource(clock, session.frame_rate_hz),
            sink=writer,
            metadata=metadata,
            clock=clock,
        ))
        sources = session.build_sources()
        ids = [recorder.register_device(src) for src in sources]
        if recorder_slot is not None:
            recorder_slot.append(recorder)
        final = recorder.run(duration_s, stop=stop)
        writer.flush()
    finally:
        writer.close()

    stats = recorder.stats()
    drops = {sources[i].name: stats.dropped_samples.get(device_id, 0)
             for i, device_id in enumerate(ids)}
    return RecordResult(
        output_path=os.fspath(output_path),
        encoding=enc,
        metadata=final,
        snapshot_count=stats.cycles,
        record_count=writer.record_count,
        device_names=tuple(src.name for src in sources),
        file_size_bytes=os.path.getsize(output_path),
        dropped_samples=drops,
    )


def validate_path(path: str | os.PathLike) -> ValidationReport:
    """Decode and validate a recording; decode failures propagate."""
    records = list(decode_file(path))
    return validate_record_sequence(records)


def summarize_path(path: str | os.PathLike) -> SessionSummary:
    return summarize(path)


@dataclass(frozen=True)
class ConvertResult:
    records: int
    output_path: str
    from_encoding: Encoding
    to_encoding: Encoding
    output_size_bytes: int


def convert_path(input_path: str | os.PathLike,
                 output_path: str | os.PathLike,
                 from_encoding: Encoding | str | None = None,
                 to_encoding: Encoding | str | None = None) -> ConvertResult:
    src_enc = _require_encoding(input_path, from_encoding)
    dst_enc = _require_encoding(output_path, to_encoding)
    with open(input_path, "rb") as src, open(output_path, "wb") as dst:
        count = transcode(src, src_enc, dst_enc, dst)
    return ConvertResult(records=count, output_path=os.fspath(output_path),
                         from_encoding=src_enc, to_encoding=dst_enc,
                         output_size_bytes=os.path.getsize(output_path))


@dataclass(frozen=True)
class ExportResult:
    csv_path: str
    rows: int
    columns: int
    matched: Optional[bool]  # None when no questionnaire was joined


def export_table(input_path: str | os.PathLike,
                 csv_path: str | os.PathLike,
                 select: Sequence[str],
                 target_rate_hz: float,
                 staleness_horizon_ms: Optional[float] = None,
                 method: str = "interpolate",
                 responses_path: str | os.PathLike | None = None) -> ExportResult:
    """filter -> resample -> (optional questionnaire join) -> CSV."""
    selector = FeatureSelector.parse(select) if select else FeatureSelector.all()
    table = resample(input_path, selector, target_rate_hz,
                     staleness_horizon_ms, method)
    matched: Optional[bool] = None
    if responses_path is not None:
        table = join_table(table, load_responses(responses_path))
        matched_cells, _ = table.column("participant.join.matched")
        matched = bool(matched_cells[0]) if matched_cells else False
    rows, cols = export_csv(table, csv_path)
    return ExportResult(csv_path=os.fspath(csv_path), rows=rows, columns=cols,
                        matched=matched)
