"""Behavioral model of a trilayer bulk-switching RRAM cell.

The cell state is a single conductance ``g`` confined to a window
``[g_min, g_max]`` (scaled per device by area and device-to-device
variation).  Three behaviors are modeled:

* a smooth odd sinh I-V law, calibrated so the read current at
  ``v_read`` equals ``g * v_read`` exactly and the nonlinearity ratio
  I(1.5 V)/I(0.5 V) equals 15;
* gradual, soft-bounded conductance updates under voltage pulses
  (negative pulses set toward ``g_max``, positive pulses reset toward
  ``g_min``, sub-threshold pulses are no-ops);
* area-proportional conductance and seeded lognormal device-to-device
  spread.

Two calibrated presets ship with the package: ``"S4-DC"`` (the DC
switching window, 1 to 2.44 uS) and ``"S4-pulse"`` (the lower window
used for pulse trains, 0.1 to 0.9 uS).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, NamedTuple, TextIO

import numpy as np

__all__ = [
    "DeviceParams",
    "RramCell",
    "PulseScheme",
    "TracePoint",
    "PresetError",
    "current",
    "apply_pulse",
    "pulse_delta",
    "ltp_ltd_trace",
    "sample_device",
    "write_trace_csv",
    "read_trace_csv",
    "PRESET_NAMES",
]

_PRESET_FILES = {"S4-DC": "s4_dc.txt", "S4-pulse": "s4_pulse.txt"}
PRESET_NAMES = tuple(_PRESET_FILES)

TRACE_CSV_HEADER = ("pulse_index", "voltage_V", "width_s", "g_S", "i_read_A")


class PresetError(ValueError):
    """Raised for unknown preset names or malformed preset files."""


@dataclass(frozen=True)
class DeviceParams:
    """Calibrated parameter set for one device window.

    Attributes
    ----------
    g_min, g_max:
        Conductance window bounds for a reference-size, nominal device (S).
    v_read:
        Read voltage (V); the I-V law is anchored so I(v_read) = g * v_read.
    v_nl:
        Nonlinearity voltage scale of the sinh I-V law (V).
    set_threshold, reset_threshold:
        Pulse amplitude magnitudes below which a pulse does nothing (V).
    a_set, a_reset:
        Update magnitudes at threshold for a width_ref pulse (S).
    v_slope_set, v_slope_reset:
        Exponential voltage-acceleration scales of the update law (V).
    width_ref:
        Reference pulse width (s); updates scale linearly with width.
    sigma_d2d:
        Relative device-to-device spread of the conductance window.
    sigma_read:
        Relative read-noise spread applied by noisy readout paths.
    area_ref:
        Reference cell area (m^2); conductance scales with area/area_ref.
    """

    g_min: float
    g_max: float
    v_read: float = 0.1
    v_nl: float = 0.3796628587501035
    set_threshold: float = 0.7
    reset_threshold: float = 0.25
    a_set: float = 1e-9
    a_reset: float = 1e-8
    v_slope_set: float = 0.35
    v_slope_reset: float = 0.75
    width_ref: float = 500e-6
    sigma_d2d: float = 0.05
    sigma_read: float = 0.05
    area_ref: float = 1.963495408493621e-11

    def __post_init__(self) -> None:
        if not (0.0 < self.g_min < self.g_max):
            raise ValueError(f"need 0 < g_min < g_max, got {self.g_min}, {self.g_max}")
        for name in ("v_read", "v_nl", "set_threshold", "reset_threshold",
                     "a_set", "a_reset", "v_slope_set", "v_slope_reset",
                     "width_ref", "area_ref"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_d2d < 0.0 or self.sigma_read < 0.0:
            raise ValueError("sigmas must be nonnegative")

    @property
    def g_window(self) -> float:
        return self.g_max - self.g_min

    @property
    def diameter_ref(self) -> float:
        """Reference cell diameter implied by area_ref (m)."""
        return 2.0 * math.sqrt(self.area_ref / math.pi)

    @classmethod
    def preset(cls, name: str) -> "DeviceParams":
        """Load one of the packaged presets by name."""
        try:
            fname = _PRESET_FILES[name]
        except KeyError:
            raise PresetError(
                f"unknown preset {name!r}; available: {', '.join(_PRESET_FILES)}"
            ) from None
        text = resources.files("bulkrram").joinpath("presets", fname).read_text()
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "DeviceParams":
        """Parse the key-value preset format (``key = value``, ``#`` comments)."""
        fields = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PresetError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "name":
                continue
            if key not in cls.__dataclass_fields__:
                raise PresetError(f"line {lineno}: unknown parameter {key!r}")
            try:
                fields[key] = float(value)
            except ValueError:
                raise PresetError(f"line {lineno}: bad number {value!r}") from None
        try:
            return cls(**fields)
        except (TypeError, ValueError) as exc:
            raise PresetError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "DeviceParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self, name: str = "custom") -> str:
        lines = [f"name = {name}"]
        for field in self.__dataclass_fields__:
            lines.append(f"{field} = {getattr(self, field)!r}")
        return "\n".join(lines) + "\n"

    def to_file(self, path, name: str = "custom") -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text(name))


@dataclass(frozen=True)
class RramCell:
    """State of one physical cell: conductance plus its size/spread factors.

    The effective window of a cell is the nominal window multiplied by
    ``area_scale * d2d_factor``; ``g`` is clamped there at all times.
    """

    g: float
    area_scale: float = 1.0
    d2d_factor: float = 1.0

    def bounds(self, params: DeviceParams) -> tuple[float, float]:
        scale = self.area_scale * self.d2d_factor
        return params.g_min * scale, params.g_max * scale


def current(cell: RramCell, params: DeviceParams, v) -> float | np.ndarray:
    """Cell current at voltage ``v`` (scalar or array).

    I(v) = g * v_read * sinh(v / v_nl) / sinh(v_read / v_nl).  Odd in v,
    equal to g*v at v_read by construction, and superlinear at larger
    bias (the lumped stand-in for tunneling-dominated conduction).
    """
    norm = cell.g * params.v_read / math.sinh(params.v_read / params.v_nl)
    out = norm * np.sinh(np.asarray(v, dtype=float) / params.v_nl)
    return out if isinstance(v, np.ndarray) else float(out)


def pulse_delta(g, g_lo, g_hi, params: DeviceParams, v_amp: float, width: float):
    """Soft-bounds conductance change for one pulse; broadcasts over arrays.

    Negative amplitudes at or beyond -set_threshold increase g toward
    g_hi, positive amplitudes at or beyond +reset_threshold decrease g
    toward g_lo, anything in between returns 0 (half-select safe).
    """
    if width <= 0.0:
        raise ValueError("pulse width must be positive")
    window = g_hi - g_lo
    scale = width / params.width_ref
    if v_amp <= -params.set_threshold:
        rate = params.a_set * scale * np.exp(
            (-v_amp - params.set_threshold) / params.v_slope_set
        )
        return rate * (g_hi - g) / window
    if v_amp >= params.reset_threshold:
        rate = params.a_reset * scale * np.exp(
            (v_amp - params.reset_threshold) / params.v_slope_reset
        )
        return -rate * (g - g_lo) / window
    return np.zeros_like(g) if isinstance(g, np.ndarray) else 0.0


def apply_pulse(cell: RramCell, params: DeviceParams, v_amp: float,
                width: float) -> RramCell:
    """Apply one programming pulse and return the updated cell."""
    g_lo, g_hi = cell.bounds(params)
    dg = pulse_delta(cell.g, g_lo, g_hi, params, v_amp, width)
    return replace(cell, g=float(min(max(cell.g + dg, g_lo), g_hi)))


@dataclass(frozen=True)
class PulseScheme:
    """A set train followed by a reset train, all at one pulse width."""

    kind: str
    set_amplitudes: tuple[float, ...]
    reset_amplitudes: tuple[float, ...]
    width: float

    def __post_init__(self) -> None:
        if self.width <= 0.0:
            raise ValueError("width must be positive")
        if any(v >= 0.0 for v in self.set_amplitudes):
            raise ValueError("set amplitudes must be negative")
        if any(v <= 0.0 for v in self.reset_amplitudes):
            raise ValueError("reset amplitudes must be positive")

    @classmethod
    def identical_a(cls) -> "PulseScheme":
        """32 set pulses at -2.5 V and 32 reset pulses at +1.5 V, 500 us."""
        return cls("IdenticalA", (-2.5,) * 32, (1.5,) * 32, 500e-6)

    @classmethod
    def identical_b(cls) -> "PulseScheme":
        """32 set pulses at -2.0 V and 32 reset pulses at +1.0 V, 5 ms."""
        return cls("IdenticalB", (-2.0,) * 32, (1.0,) * 32, 5e-3)

    @classmethod
    def incremental_100(cls, width: float = 500e-6) -> "PulseScheme":
        """100 set pulses -0.8 to -2.78 V (-20 mV steps) and 100 reset
        pulses +0.3 to +0.993 V (+7 mV steps)."""
        set_amps = tuple(-0.8 - 0.02 * k for k in range(100))
        reset_amps = tuple(0.3 + 0.007 * k for k in range(100))
        return cls("Incremental100", set_amps, reset_amps, width)

    @classmethod
    def custom(cls, set_amplitudes: Iterable[float],
               reset_amplitudes: Iterable[float], width: float) -> "PulseScheme":
        return cls("Custom", tuple(set_amplitudes), tuple(reset_amplitudes), width)

    @classmethod
    def by_name(cls, name: str) -> "PulseScheme":
        table = {
            "identical-a": cls.identical_a,
            "identical-b": cls.identical_b,
            "incremental-100": cls.incremental_100,
        }
        try:
            return table[name.lower()]()
        except KeyError:
            raise ValueError(
                f"unknown scheme {name!r}; available: {', '.join(table)}"
            ) from None


class TracePoint(NamedTuple):
    pulse_index: int
    voltage: float
    width: float
    g: float
    i_read: float


def ltp_ltd_trace(params: DeviceParams, scheme: PulseScheme,
                  cell: RramCell | None = None) -> list[TracePoint]:
    """Run the full set train then reset train and record the state.

    Starts from the cell's low bound (pristine) unless an explicit cell
    is given.  The read current is evaluated at ``v_read`` after every
    pulse.  Deterministic; no read noise is applied.
    """
    if cell is None:
        cell = RramCell(g=params.g_min)
    points: list[TracePoint] = []
    index = 0
    for v_amp in (*scheme.set_amplitudes, *scheme.reset_amplitudes):
        cell = apply_pulse(cell, params, v_amp, scheme.width)
        points.append(TracePoint(index, v_amp, scheme.width, cell.g,
                                 current(cell, params, params.v_read)))
        index += 1
    return points


def sample_device(params: DeviceParams, rng_seed: int,
                  diameter: float) -> RramCell:
    """Draw one device of the given via diameter (m), pristine at its floor.

    The conductance window scales with area, (diameter/diameter_ref)^2,
    and carries a lognormal device-to-device factor with unit mean and
    relative standard deviation ``sigma_d2d``.  Deterministic per seed.
    The supported diameter range is 3 to 10 um.
    """
    if diameter <= 0.0:
        raise ValueError("diameter must be positive")
    area_scale = (diameter / params.diameter_ref) ** 2
    if params.sigma_d2d == 0.0:
        factor = 1.0
    else:
        s = math.sqrt(math.log1p(params.sigma_d2d ** 2))
        rng = np.random.default_rng(rng_seed)
        factor = float(np.exp(rng.normal(-0.5 * s * s, s)))
    return RramCell(g=params.g_min * area_scale * factor,
                    area_scale=area_scale, d2d_factor=factor)


def write_trace_csv(points: Iterable[TracePoint], dest: TextIO | str) -> None:
    """Write a pulse trace in the canonical CSV layout."""
    own = isinstance(dest, str)
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for p in points:
            writer.writerow([p.pulse_index, repr(p.voltage), repr(p.width),
                             repr(p.g), repr(p.i_read)])
    finally:
        if own:
            fh.close()


def read_trace_csv(src: TextIO | str) -> list[TracePoint]:
    own = isinstance(src, str)
    fh = open(src, newline="", encoding="utf-8") if own else src
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows or tuple(rows[0]) != TRACE_CSV_HEADER:
        raise ValueError("not a pulse-trace CSV (bad header)")
    return [TracePoint(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                       float(r[4])) for r in rows[1:]]

