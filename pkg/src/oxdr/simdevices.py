"""Deterministic synthetic device sources.

These stand in for real XR hardware so the whole pipeline can run — and
be verified — on a desk.  Continuous signals are closed-form functions
of the poll timestamp (never stateful integrators), so any downstream
value can be checked against direct evaluation of the same expression.
Seeded pseudo-randomness only shapes discrete events (button wave
periods and offsets, touch timing) through a counter-based integer
mixer, so identical specs replay byte-identically on a platform.

The session-level configuration is a plain key-value text file parsed
with :mod:`configparser`; see ``default.simspec`` in the repository root
for the documented template.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .errors import ConfigError
from .model import (
    Button,
    DeviceRecord,
    Double,
    Feature,
    Quaternion,
    RecordingMetadata,
    Touch,
    TouchPhase,
    Vector2,
    Vector3,
    us_to_datetime,
)
from .recorder import Clock, DeviceSource

TWO_PI = 2.0 * math.pi

#: 2000-01-01T00:00:00Z; fixed so simulated sessions are reproducible.
DEFAULT_START_TIME_US = 946_684_800_000_000


class DeviceKind(str, Enum):
    HMD = "hmd"
    CONTROLLER = "controller"
    EYE_TRACKER = "eye_tracker"


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _mix(seed: int, stream: int) -> int:
    """Stateless per-stream hash; identical across platforms and runs."""
    return _splitmix64(_splitmix64(seed & _MASK64) ^ (stream & _MASK64))


@dataclass(frozen=True)
class SimSpec:
    """Parameters of one simulated device.

    The continuous signal parameters feed the closed forms below; the
    seed only influences discrete event layout.  Fields not meaningful
    for a kind are ignored by its factory.
    """

    kind: DeviceKind
    seed: int = 0
    name: str = ""
    serial: str = ""
    native_rate_hz: float = 100.0
    amplitude: tuple[float, float, float] = (1.0, 1.0, 1.0)
    frequency_hz: float = 0.5
    rotation_hz: float = 0.25
    button_duty: float = 0.3
    gaze_yaw_rad: float = 0.6
    gaze_pitch_rad: float = 0.35
    gaze_yaw_hz: float = 0.2
    gaze_pitch_hz: float = 0.13
    pupil_mean_mm: float = 5.0
    pupil_amplitude_mm: float = 2.5
    pupil_hz: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", DeviceKind(self.kind))
        if not self.name:
            object.__setattr__(self, "name", _DEFAULT_NAMES[self.kind])
        if not self.serial:
            object.__setattr__(self, "serial", f"SIM-{self.kind.value}-{self.seed:04d}")
        if not self.native_rate_hz > 0:
            raise ConfigError(f"native_rate_hz must be positive, got {self.native_rate_hz}")
        numeric = (*self.amplitude, self.frequency_hz, self.rotation_hz,
                   self.button_duty, self.gaze_yaw_rad, self.gaze_pitch_rad,
                   self.gaze_yaw_hz, self.gaze_pitch_hz, self.pupil_mean_mm,
                   self.pupil_amplitude_mm, self.pupil_hz)
        if not all(math.isfinite(v) for v in numeric):
            raise ConfigError("signal parameters must be finite")
        if not 0.0 <= self.button_duty < 1.0:
            raise ConfigError(f"button_duty must be in [0, 1), got {self.button_duty}")
        lo = self.pupil_mean_mm - self.pupil_amplitude_mm
        hi = self.pupil_mean_mm + self.pupil_amplitude_mm
        if self.kind is DeviceKind.EYE_TRACKER and not (2.0 <= lo and hi <= 8.0):
            raise ConfigError(
                f"pupil sweep [{lo}, {hi}] mm leaves the physiological range [2, 8]")


_DEFAULT_NAMES = {
    DeviceKind.HMD: "SimHMD",
    DeviceKind.CONTROLLER: "SimController",
    DeviceKind.EYE_TRACKER: "SimEyeTracker",
}

CONTROLLER_BUTTONS = ("button_a", "button_b", "button_menu",
                      "trigger_index", "trigger_grip")


# ---------------------------------------------------------------------------
# Closed-form signals (shared by the sources and by verification code)
# ---------------------------------------------------------------------------

def hmd_position(spec: SimSpec, t_us: int) -> tuple[float, float, float]:
    """p(t) = A * (sin wt, sin 2wt, cos wt) with w = 2*pi*frequency_hz."""
    t = t_us / 1e6
    wt = TWO_PI * spec.frequency_hz * t
    ax, ay, az = spec.amplitude
    return (ax * math.sin(wt), ay * math.sin(2.0 * wt), az * math.cos(wt))


def hmd_rotation(spec: SimSpec, t_us: int) -> tuple[float, float, float, float]:
    """Unit yaw rotation about +Y by angle 2*pi*rotation_hz*t, as (x, y, z, w)."""
    half = math.pi * spec.rotation_hz * (t_us / 1e6)
    return (0.0, math.sin(half), 0.0, math.cos(half))


def gaze_direction(spec: SimSpec, t_us: int) -> tuple[float, float, float]:
    """Unit gaze vector from smooth-pursuit yaw/pitch sinusoids."""
    t = t_us / 1e6
    yaw = spec.gaze_yaw_rad * math.sin(TWO_PI * spec.gaze_yaw_hz * t)
    pitch = spec.gaze_pitch_rad * math.sin(TWO_PI * spec.gaze_pitch_hz * t)
    cp = math.cos(pitch)
    return (cp * math.sin(yaw), math.sin(pitch), -cp * math.cos(yaw))


def pupil_diameter_mm(spec: SimSpec, t_us: int) -> float:
    t = t_us / 1e6
    return spec.pupil_mean_mm + spec.pupil_amplitude_mm * math.sin(TWO_PI * spec.pupil_hz * t)


@dataclass(frozen=True)
class _ButtonWave:
    """Square wave in integer microseconds; low at t=0 by construction."""

    period_us: int
    on_us: int
    offset_us: int

    def pressed(self, t_us: int) -> bool:
        return (t_us + self.offset_us) % self.period_us >= self.period_us - self.on_us


def button_wave(spec: SimSpec, index: int) -> _ButtonWave:
    """Derive one button's square wave from (seed, button index)."""
    h = _mix(spec.seed, index)
    period_us = 500_000 + (h % 6) * 100_000  # 0.5 .. 1.0 s in 0.1 s steps
    on_us = round(period_us * spec.button_duty)
    low_span = period_us - on_us
    # Offset stays clear of the ON window so every wave starts low.
    offset_us = (h >> 8) % max(1, low_span - 20_000) if low_span > 20_000 else 0
    return _ButtonWave(period_us, on_us, offset_us)


def button_value(spec: SimSpec, index: int, t_us: int) -> float:
    return 1.0 if button_wave(spec, index).pressed(t_us) else 0.0


_TOUCH_PERIOD_US = 2_000_000
_TOUCH_ACTIVE_US = 1_000_000


def touch_state(spec: SimSpec, t_us: int) -> Touch:
    """Deterministic touch gesture cycle: began, moved..., ended, idle."""
    offset = _mix(spec.seed, 0x70_75) % _TOUCH_PERIOD_US
    shifted = t_us + offset
    t_in = shifted % _TOUCH_PERIOD_US
    touch_id = shifted // _TOUCH_PERIOD_US
    step = round(1e6 / spec.native_rate_hz)
    t = t_us / 1e6
    pos = Vector2(0.8 * math.sin(TWO_PI * 0.9 * t), 0.8 * math.sin(TWO_PI * 0.7 * t))
    if t_in >= _TOUCH_ACTIVE_US:
        return Touch(touch_id, pos, 0.0, TouchPhase.NONE)
    pressure = 0.5 - 0.5 * math.cos(TWO_PI * t_in / _TOUCH_ACTIVE_US)
    if t_in < step:
        phase = TouchPhase.BEGAN
    elif t_in >= _TOUCH_ACTIVE_US - step:
        phase = TouchPhase.ENDED
    else:
        phase = TouchPhase.MOVED
    return Touch(touch_id, pos, min(max(pressure, 0.0), 1.0), phase)


# ---------------------------------------------------------------------------
# Device factories
# ---------------------------------------------------------------------------

def make_sim_hmd(spec: SimSpec) -> DeviceSource:
    """Headset pose source: sinusoidal position sweep plus a steady yaw spin."""

    def sampler(device_id: int, t_us: int) -> DeviceRecord:
        px, py, pz = hmd_position(spec, t_us)
        qx, qy, qz, qw = hmd_rotation(spec, t_us)
        return DeviceRecord(
            device_id, spec.name, spec.serial, t_us,
            (Feature("position", Vector3(px, py, pz)),
             Feature("rotation", Quaternion(qx, qy, qz, qw))),
        )

    return DeviceSource(spec.name, spec.serial, sampler)


def make_sim_controller(spec: SimSpec) -> DeviceSource:
    """Hand controller: five buttons, a touchpad, and its own pose.

    Every emitted record carries exactly this composition, in a fixed
    feature order; buttons report pressed exactly when value >= 0.5.
    """
    waves = [button_wave(spec, i) for i in range(len(CONTROLLER_BUTTONS))]

    def sampler(device_id: int, t_us: int) -> DeviceRecord:
        features = []
        for name, wave in zip(CONTROLLER_BUTTONS, waves):
            value = 1.0 if wave.pressed(t_us) else 0.0
            features.append(Feature(name, Button(value, value >= 0.5)))
        features.append(Feature("touchpad", touch_state(spec, t_us)))
        px, py, pz = hmd_position(spec, t_us)
        qx, qy, qz, qw = hmd_rotation(spec, t_us)
        features.append(Feature("position", Vector3(px, py, pz)))
        features.append(Feature("rotation", Quaternion(qx, qy, qz, qw)))
        return DeviceRecord(device_id, spec.name, spec.serial, t_us, tuple(features))

    return DeviceSource(spec.name, spec.serial, sampler)


class _EyeTrackerSource(DeviceSource):
    """Gaze source with its own native clock, usually faster than polling.

    Only the newest native sample is delivered per poll; everything the
    poller never saw increments ``dropped_samples``.  A poll cycle with no
    fresh native sample reports nothing, leaving the device out of that
    snapshot.
    """

    def __init__(self, spec: SimSpec):
        super().__init__(spec.name, spec.serial)
        self.spec = spec
        self._last_native_index: Optional[int] = None

    def sample(self, device_id: int, t_us: int) -> Optional[DeviceRecord]:
        spec = self.spec
        native_index = int(t_us * spec.native_rate_hz / 1e6)
        if self._last_native_index is not None:
            if native_index == self._last_native_index:
                return None
            self.dropped_samples += max(0, native_index - self._last_native_index - 1)
        self._last_native_index = native_index

        native_t_us = round(native_index * 1e6 / spec.native_rate_hz)
        gx, gy, gz = gaze_direction(spec, native_t_us)
        return DeviceRecord(
            device_id, spec.name, spec.serial, native_t_us,
            (Feature("gaze_direction", Vector3(gx, gy, gz)),
             Feature("pupil_diameter_mm", Double(pupil_diameter_mm(spec, native_t_us)))),
        )


def make_sim_eye_tracker(spec: SimSpec) -> DeviceSource:
    return _EyeTrackerSource(spec)


_FACTORIES: dict[DeviceKind, Callable[[SimSpec], DeviceSource]] = {
    DeviceKind.HMD: make_sim_hmd,
    DeviceKind.CONTROLLER: make_sim_controller,
    DeviceKind.EYE_TRACKER: make_sim_eye_tracker,
}


def make_device(spec: SimSpec) -> DeviceSource:
    return _FACTORIES[spec.kind](spec)


# ---------------------------------------------------------------------------
# Simulated host frame source
# ---------------------------------------------------------------------------

class SimFrameSource:
    """Frame counter advancing at a nominal fps, with optional stalls.

    ``stalls`` is a sequence of ``(start_us, duration_us)`` windows in
    session time during which the frame index freezes, mimicking a
    renderer hitch.  Construct immediately before the recording starts:
    the first clock reading taken here anchors session time zero.
    """

    def __init__(self, clock: Clock, fps: float,
                 stalls: Sequence[tuple[int, int]] = ()):
        if not fps > 0:
            raise ConfigError(f"fps must be positive, got {fps}")
        self._clock = clock
        self._fps = fps
        self._stalls = tuple(sorted(stalls))
        self._t0 = clock.now_us()

    def __call__(self) -> int:
        t = self._clock.now_us() - self._t0
        effective = t
        for start, duration in self._stalls:
            if t >= start:
                effective -= min(duration, t - start)
        return int(effective * self._fps / 1e6)


# ---------------------------------------------------------------------------
# Session configuration file
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimSession:
    """A whole simulated rig: header template plus one spec per device."""

    metadata: RecordingMetadata
    devices: tuple[SimSpec, ...]
    frame_rate_hz: float = 72.0

    def build_sources(self) -> list[DeviceSource]:
        return [make_device(spec) for spec in self.devices]


_SESSION_KEYS = {
    "hmd_name", "hmd_serial", "storage_medium", "participant_id",
    "consent_recorded", "session_label", "start_time_us", "frame_rate_hz",
    "video_width", "video_height", "video_filename",
}
_DEVICE_KEYS = {
    "kind", "seed", "name", "serial", "native_rate_hz", "amplitude",
    "frequency_hz", "rotation_hz", "button_duty", "gaze_yaw_rad",
    "gaze_pitch_rad", "gaze_yaw_hz", "gaze_pitch_hz", "pupil_mean_mm",
    "pupil_amplitude_mm", "pupil_hz",
}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def load_sim_session(path: str | os.PathLike) -> SimSession:
    """Parse a ``.simspec`` file: a ``[session]`` section plus one
    ``[device:<label>]`` section per simulated device."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=os.fspath(path))
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {os.fspath(path)!r}: {exc}") from exc

    sections = parser.sections()
    if "session" not in sections:
        raise ConfigError(f"{os.fspath(path)!r} has no [session] section")

    sess = dict(parser.items("session"))
    unknown = set(sess) - _SESSION_KEYS
    if unknown:
        raise ConfigError(f"[session] has unknown keys: {', '.join(sorted(unknown))}")

    start_us = _parse_int(sess.get("start_time_us", str(DEFAULT_START_TIME_US)),
                          "start_time_us")
    video_width = sess.get("video_width")
    video_height = sess.get("video_height")
    metadata = RecordingMetadata(
        start_time=us_to_datetime(start_us),
        polling_rate_hz=1.0,  # placeholder; the recorder stamps the real rate
        hmd_name=sess.get("hmd_name", "SimHMD"),
        hmd_serial=sess.get("hmd_serial", "SIM-0000"),
        storage_medium=sess.get("storage_medium", "sim"),
        participant_id=sess.get("participant_id", ""),
        consent_recorded=_parse_bool(sess.get("consent_recorded", "false"),
                                     "consent_recorded"),
        session_label=sess.get("session_label", ""),
        video_width=_parse_int(video_width, "video_width") if video_width else None,
        video_height=_parse_int(video_height, "video_height") if video_height else None,
        video_filename=sess.get("video_filename"),
    )
    frame_rate = _parse_float(sess.get("frame_rate_hz", "72"), "frame_rate_hz")

    devices = []
    for section in sections:
        if section == "session":
            continue
        if not section.startswith("device:"):
            raise ConfigError(f"unexpected section [{section}]")
        items = dict(parser.items(section))
        unknown = set(items) - _DEVICE_KEYS
        if unknown:
            raise ConfigError(
                f"[{section}] has unknown keys: {', '.join(sorted(unknown))}")
        if "kind" not in items:
            raise ConfigError(f"[{section}] is missing 'kind'")
        try:
            kind = DeviceKind(items["kind"])
        except ValueError:
            raise ConfigError(
                f"[{section}] has unknown kind {items['kind']!r}; expected one of "
                f"{', '.join(k.value for k in DeviceKind)}") from None
        kwargs: dict = {"kind": kind}
        if "seed" in items:
            kwargs["seed"] = _parse_int(items["seed"], "seed")
        for key in ("name", "serial"):
            if key in items:
                kwargs[key] = items[key]
        if "amplitude" in items:
            parts = items["amplitude"].split()
            if len(parts) != 3:
                raise ConfigError(f"[{section}] amplitude needs three numbers")
            kwargs["amplitude"] = tuple(_parse_float(p, "amplitude") for p in parts)
        for key in ("native_rate_hz", "frequency_hz", "rotation_hz", "button_duty",
                    "gaze_yaw_rad", "gaze_pitch_rad", "gaze_yaw_hz", "gaze_pitch_hz",
                    "pupil_mean_mm", "pupil_amplitude_mm", "pupil_hz"):
            if key in items:
                kwargs[key] = _parse_float(items[key], key)
        devices.append(SimSpec(**kwargs))

    return SimSession(metadata=metadata, devices=tuple(devices),
                      frame_rate_hz=frame_rate)
