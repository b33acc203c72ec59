"""Fixed-rate polling engine.

One recorder owns one polling loop.  Every update cycle it asks each
registered device source for its current record and emits exactly one
snapshot, whether or not any device reported.  Cycles are scheduled on
absolute deadlines (``start + k/rate``), so timing error never
accumulates and the emitted cadence is unaffected by how long a host
render frame takes — the frame source is merely *read* each cycle and
its index stored with the snapshot.

The clock is injected.  ``MonotonicClock`` records in real time;
``VirtualClock`` steps simulated time instantly, which makes recordings
deterministic and fast to produce.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from datetime import timedelta
from typing import Callable, Optional, Protocol

from .errors import (
    ClockRegressionError,
    ConfigError,
    DuplicateDeviceError,
    RecorderStateError,
    SinkWriteError,
)
from .model import DeviceRecord, RecordingMetadata, Snapshot


class Clock(Protocol):
    """Monotonic time source in integer microseconds."""

    def now_us(self) -> int: ...

    def sleep_until_us(self, deadline_us: int) -> None: ...


class MonotonicClock:
    """Wall-time clock backed by ``time.monotonic_ns``."""

    def now_us(self) -> int:
        return time.monotonic_ns() // 1_000

    def sleep_until_us(self, deadline_us: int) -> None:
        while True:
            remaining = deadline_us - self.now_us()
            if remaining <= 0:
                return
            # Cap each nap so callers regain control at a bounded latency.
            time.sleep(min(remaining / 1e6, 0.05))


class VirtualClock:
    """Simulated clock: sleeping jumps straight to the deadline."""

    def __init__(self, start_us: int = 0):
        self._now = start_us

    def now_us(self) -> int:
        return self._now

    def sleep_until_us(self, deadline_us: int) -> None:
        if deadline_us > self._now:
            self._now = deadline_us

    def advance_us(self, delta_us: int) -> None:
        self._now += delta_us


class RecordSink(Protocol):
    """Consumer of the emitted record stream (typically a codec writer)."""

    def write_metadata(self, metadata: RecordingMetadata) -> None: ...

    def write_snapshot(self, snapshot: Snapshot) -> None: ...

    def finalize(self, end_time) -> RecordingMetadata: ...


class ListSink:
    """In-memory sink for tests and ad-hoc capture."""

    def __init__(self):
        self.records: list = []
        self.end_time = None

    def write_metadata(self, metadata: RecordingMetadata) -> None:
        self.records.append(metadata)

    def write_snapshot(self, snapshot: Snapshot) -> None:
        self.records.append(snapshot)

    def finalize(self, end_time) -> RecordingMetadata:
        self.end_time = end_time
        final = self.records[0].finalized(end_time)
        self.records[0] = final
        return final


class DeviceSource:
    """A pollable device: identity plus a per-cycle sampler.

    ``sample`` returns the device's record for the current cycle or
    ``None`` when it has nothing new to report, in which case the device
    is simply absent from that snapshot.  Samplers are called from the
    polling thread only; a source fed from another thread must hand over
    an atomically consistent view of its latest state.

    ``dropped_samples`` counts native samples the source produced but
    could not deliver because polling is slower than its native rate.
    """

    def __init__(self, name: str, serial: str,
                 sampler: Optional[Callable[[int, int], Optional[DeviceRecord]]] = None):
        self.name = name
        self.serial = serial
        self._sampler = sampler
        self.dropped_samples = 0

    def sample(self, device_id: int, timestamp_us: int) -> Optional[DeviceRecord]:
        if self._sampler is None:
            raise NotImplementedError("DeviceSource requires a sampler or an override")
        return self._sampler(device_id, timestamp_us)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, serial={self.serial!r})"


@dataclass
class RecorderConfig:
    """Everything a polling session needs, with the clock injectable."""

    polling_rate_hz: float
    frame_source: Callable[[], int]
    sink: RecordSink
    metadata: RecordingMetadata
    clock: Clock = field(default_factory=MonotonicClock)

    def __post_init__(self):
        if not self.polling_rate_hz > 0:
            raise ConfigError(
                f"polling_rate_hz must be positive, got {self.polling_rate_hz}")


@dataclass(frozen=True)
class RecorderStats:
    cycles: int
    max_gap_us: int
    dropped_samples: dict[int, int]


class Recorder:
    """Polls registered devices at a fixed rate and emits one snapshot per cycle."""

    def __init__(self, config: RecorderConfig):
        self.config = config
        self._devices: list[tuple[int, DeviceSource]] = []
        self._identities: set[tuple[str, str]] = set()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._running = False
        self._finalized = False
        self._cycles = 0
        self._max_gap_us = 0

    def register_device(self, source: DeviceSource) -> int:
        """Add a source; it is polled every cycle from the next one on.

        Registration is allowed mid-session (snapshots taken earlier simply
        do not contain the device), but not after the session finalized.
        """
        with self._lock:
            if self._finalized:
                raise RecorderStateError("recorder is finalized; start a new session")
            identity = (source.name, source.serial)
            if identity in self._identities:
                raise DuplicateDeviceError(
                    f"device {source.name!r} / {source.serial!r} is already registered")
            device_id = len(self._devices)
            self._identities.add(identity)
            self._devices.append((device_id, source))
            return device_id

    def request_stop(self) -> None:
        self._stop.set()

    @property
    def running(self) -> bool:
        return self._running

    def stats(self) -> RecorderStats:
        with self._lock:
            drops = {device_id: src.dropped_samples for device_id, src in self._devices}
        return RecorderStats(cycles=self._cycles, max_gap_us=self._max_gap_us,
                             dropped_samples=drops)

    def run(self, duration_s: Optional[float] = None,
            stop: Optional[threading.Event] = None) -> RecordingMetadata:
        """Record until ``duration_s`` elapses or a stop signal fires.

        Emits the metadata header first, then one snapshot per cycle, and
        finalizes the header with the session end time on the way out.
        With no duration the loop runs until ``stop`` or ``request_stop``
        fires.  Returns the finalized metadata.
        """
        if self._running:
            raise RecorderStateError("recorder is already running")
        if self._finalized:
            raise RecorderStateError("recorder is finalized; start a new session")

        cfg = self.config
        clock = cfg.clock
        rate = cfg.polling_rate_hz
        external_stop = stop

        def stopped() -> bool:
            return self._stop.is_set() or (
                external_stop is not None and external_stop.is_set())

        metadata = replace(cfg.metadata, polling_rate_hz=rate, end_time=None)
        try:
            cfg.sink.write_metadata(metadata)
        except OSError as exc:
            raise SinkWriteError(f"could not write header: {exc}") from exc

        self._running = True
        start_us = clock.now_us()
        end_us = None if duration_s is None else start_us + round(duration_s * 1e6)
        last_now = start_us
        last_ts = -1
        last_frame = -1
        k = 0
        try:
            while not stopped():
                deadline = start_us + round(k * 1e6 / rate)
                if end_us is not None and deadline >= end_us:
                    break
                clock.sleep_until_us(deadline)
                now = clock.now_us()
                if now < last_now:
                    raise ClockRegressionError(
                        f"clock went backwards: {now} < {last_now}")
                last_now = now

                ts = now - start_us
                if ts <= last_ts:  # collapse sub-microsecond cycles
                    ts = last_ts + 1
                frame = cfg.frame_source()
                if frame < last_frame:  # emitted indices stay non-decreasing
                    frame = last_frame

                with self._lock:
                    polled = tuple(self._devices)
                devices = []
                for device_id, source in polled:
                    record = source.sample(device_id, ts)
                    if record is not None:
                        devices.append(record)

                snapshot = Snapshot(frame=frame, timestamp_us=ts,
                                    devices=tuple(devices))
                try:
                    cfg.sink.write_snapshot(snapshot)
                except OSError as exc:
                    raise SinkWriteError(
                        f"write failed mid-session; output truncated at "
                        f"{self._cycles} snapshots: {exc}") from exc

                if last_ts >= 0:
                    self._max_gap_us = max(self._max_gap_us, ts - last_ts)
                last_ts = ts
                last_frame = frame
                self._cycles += 1
                k += 1
                # If this cycle overran into later deadlines, realign to the
                # next future one; a deadline never gets two snapshots.
                now = clock.now_us()
                while start_us + round(k * 1e6 / rate) <= now:
                    k += 1
        finally:
            self._running = False

        elapsed_us = clock.now_us() - start_us
        end_time = metadata.start_time + timedelta(microseconds=elapsed_us)
        try:
            final = cfg.sink.finalize(end_time)
        except OSError as exc:
            raise SinkWriteError(f"could not finalize header: {exc}") from exc
        with self._lock:
            self._finalized = True
        return final
