"""Crossbar array with row-differential weight encoding and voltage sensing.

A signed weight w in [-1, 1] maps onto a pair of cells sharing a column:
g+ = g_center + w*g_half on the even row and g- = g_center - w*g_half on
the odd row.  Driving the pair at v_ref + x*v_read and v_ref - x*v_read
and sensing the open bit line (a conductance-weighted voltage average)
makes the decoded column output equal W^T x exactly for ideal cells.

Programming is either open loop (replay a calibrated pulse table) or
closed loop (read / pulse until within tolerance).  Wire resistance is
handled by delegating the sense step to the nodal solver.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from . import device as dev
from . import nodal

__all__ = [
    "CrossbarConfig",
    "Crossbar",
    "DifferentialMap",
    "OpenLoop",
    "ClosedLoop",
    "ProgrammingReport",
    "TargetOutOfRange",
    "AllZeroConductance",
    "encode_differential",
    "effective_dynamic_range",
    "default_diff_g_min",
    "quantize",
    "sense_bl",
    "nodal_solve",
    "mvm_differential",
    "program_weights",
    "write_grid_csv",
    "read_grid_csv",
]


class TargetOutOfRange(ValueError):
    """A programming target lies outside the device window."""


class AllZeroConductance(ValueError):
    """A sensed column has zero total conductance."""


@dataclass(frozen=True)
class CrossbarConfig:
    """Array geometry and sensing configuration.

    ``v_read_amp`` is the differential read amplitude (total word-line
    swing v_ref +/- v_read_amp); it must not exceed the device read
    voltage so reads stay non-disturbing.  ``diff_g_min`` is the minimum
    resolvable conductance difference of the readout; when None it is
    back-solved from the characterized effective dynamic range of 170.
    """

    rows: int
    cols: int
    line_r: float = 0.0
    v_ref: float = 0.0
    v_read_amp: float = 0.1
    v_pulse: float = 0.1
    c_bl: float = 1e-12
    diff_g_min: float | None = None

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.line_r < 0:
            raise ValueError("line_r must be nonnegative")
        if self.v_read_amp <= 0 or self.v_pulse <= 0 or self.c_bl <= 0:
            raise ValueError("v_read_amp, v_pulse and c_bl must be positive")
        if self.diff_g_min is not None and self.diff_g_min <= 0:
            raise ValueError("diff_g_min must be positive")


@dataclass(frozen=True)
class DifferentialMap:
    """Derived constants of the two-rows-per-weight encoding."""

    weight_rows: int
    g_center: float
    g_half: float

    @classmethod
    def for_array(cls, params: dev.DeviceParams, rows: int) -> "DifferentialMap":
        if rows % 2:
            raise ValueError("differential encoding needs an even row count")
        return cls(rows // 2, (params.g_max + params.g_min) / 2.0,
                   (params.g_max - params.g_min) / 2.0)


def default_diff_g_min(params: dev.DeviceParams,
                       characterized_range: float = 170.0) -> float:
    """Minimum conductance difference back-solved from the effective range."""
    return 2.0 * (params.g_max - params.g_min) / characterized_range


def effective_dynamic_range(params: dev.DeviceParams, diff_g_min: float) -> float:
    """Differential dynamic range 2*(g_max - g_min) / diff_g_min."""
    if diff_g_min <= 0:
        raise ValueError("diff_g_min must be positive")
    return 2.0 * (params.g_max - params.g_min) / diff_g_min


def encode_differential(w, params: dev.DeviceParams):
    """Map weights in [-1, 1] to (g_plus, g_minus) pairs; broadcasts."""
    w = np.asarray(w, dtype=float)
    if np.any(np.abs(w) > 1.0):
        raise ValueError("weights must lie in [-1, 1]")
    m = DifferentialMap.for_array(params, 2)
    g_plus = m.g_center + w * m.g_half
    g_minus = m.g_center - w * m.g_half
    if g_plus.ndim == 0:
        return float(g_plus), float(g_minus)
    return g_plus, g_minus


def quantize(w, bits: int = 4):
    """Snap weights to the symmetric signed grid of 2**bits - 1 levels.

    The grid spans [-1, 1] and includes 0 by construction (15 levels for
    4 bits), so zero weights stay exactly representable by matched pairs.
    Midpoint ties round toward zero.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    w = np.asarray(w, dtype=float)
    if np.any(np.abs(w) > 1.0):
        raise ValueError("weights must lie in [-1, 1]")
    half = 2 ** (bits - 1) - 1
    if half == 0:
        out = np.zeros_like(w)
        return float(out) if out.ndim == 0 else out
    q = w * half
    lo = np.floor(q)
    hi = lo + 1.0
    pick_lo = (q - lo) < (hi - q)
    tie = (q - lo) == (hi - q)
    toward_zero = np.where(np.abs(lo) <= np.abs(hi), lo, hi)
    k = np.where(tie, toward_zero, np.where(pick_lo, lo, hi))
    out = np.clip(k, -half, half) / half
    return float(out) if out.ndim == 0 else out


class Crossbar:
    """A rows x cols grid of cells plus the configuration to read it.

    Mutated only by programming (or direct conductance assignment);
    sensing and MVM are pure reads of the current state.
    """

    def __init__(self, config: CrossbarConfig, params: dev.DeviceParams,
                 d2d: np.ndarray | None = None, area_scale: float = 1.0):
        if config.v_read_amp > params.v_read + 1e-15:
            raise ValueError(
                "v_read_amp exceeds the device read voltage (disturbing read)")
        self.config = config
        self.params = params
        self.area_scale = float(area_scale)
        if d2d is None:
            d2d = np.ones((config.rows, config.cols))
        d2d = np.asarray(d2d, dtype=float)
        if d2d.shape != (config.rows, config.cols):
            raise ValueError("d2d grid shape must match the array")
        self.d2d = d2d
        scale = self.area_scale * d2d
        self.g_lo = params.g_min * scale
        self.g_hi = params.g_max * scale
        self.g = self.g_lo.copy()  # pristine near the floor

    @classmethod
    def ideal(cls, config: CrossbarConfig, params: dev.DeviceParams) -> "Crossbar":
        """Nominal cells, no device-to-device spread."""
        return cls(config, params)

    @classmethod
    def sampled(cls, config: CrossbarConfig, params: dev.DeviceParams,
                seed: int, diameter: float | None = None) -> "Crossbar":
        """Cells with seeded lognormal device-to-device spread."""
        if params.sigma_d2d == 0.0:
            d2d = np.ones((config.rows, config.cols))
        else:
            s = math.sqrt(math.log1p(params.sigma_d2d ** 2))
            rng = np.random.default_rng(seed)
            d2d = np.exp(rng.normal(-0.5 * s * s, s,
                                    size=(config.rows, config.cols)))
        area = 1.0 if diameter is None else (diameter / params.diameter_ref) ** 2
        return cls(config, params, d2d=d2d, area_scale=area)

    @property
    def diff_map(self) -> DifferentialMap:
        return DifferentialMap.for_array(self.params, self.config.rows)

    @property
    def diff_g_min(self) -> float:
        if self.config.diff_g_min is not None:
            return self.config.diff_g_min
        return default_diff_g_min(self.params)

    def nominal_bounds(self) -> tuple[float, float]:
        return (self.params.g_min * self.area_scale,
                self.params.g_max * self.area_scale)

    def set_conductances(self, targets: np.ndarray) -> None:
        """Assign cell conductances directly (ideal, error-free mapping)."""
        targets = np.asarray(targets, dtype=float)
        if targets.shape != self.g.shape:
            raise ValueError("target grid shape must match the array")
        lo, hi = self.nominal_bounds()
        if np.any(targets < lo - 1e-18) or np.any(targets > hi + 1e-18):
            raise TargetOutOfRange("targets outside the device window")
        self.g = np.clip(targets, self.g_lo, self.g_hi)

    def set_weights(self, w: np.ndarray) -> None:
        """Encode a (weight_rows, cols) weight matrix onto row pairs."""
        w = np.asarray(w, dtype=float)
        m = self.diff_map
        if w.shape != (m.weight_rows, self.config.cols):
            raise ValueError(
                f"weight matrix must be {(m.weight_rows, self.config.cols)}")
        g_plus, g_minus = encode_differential(w, self.params)
        targets = np.empty_like(self.g)
        targets[0::2, :] = g_plus * self.area_scale
        targets[1::2, :] = g_minus * self.area_scale
        self.set_conductances(targets)

    def decode_weights(self) -> np.ndarray:
        """Read the stored weight matrix back from the conductance pairs."""
        m = self.diff_map
        diff = self.g[0::2, :] - self.g[1::2, :]
        return diff / (2.0 * m.g_half * self.area_scale)


def nodal_solve(xbar: Crossbar, wl_drive: np.ndarray,
                bl_termination=None,
                line_r: float | None = None) -> nodal.NodalSolution:
    """Full parasitic-network solve of this array's current state.

    Terminations default to open bit lines (the voltage-sensing
    configuration) and the wire resistance defaults to the array's
    configured ``line_r``.
    """
    if bl_termination is None:
        bl_termination = nodal.open_end()
    if line_r is None:
        line_r = xbar.config.line_r
    return nodal.solve_network(xbar.g, np.asarray(wl_drive, dtype=float),
                               bl_termination, line_r)


def sense_bl(xbar: Crossbar, col: int, wl_voltages: np.ndarray) -> tuple[float, float]:
    """Steady-state open-bit-line voltage and charging time constant.

    v_bl is the conductance-weighted average of the word-line voltages
    and tau = c_bl / sum(g); both describe the settled state for times
    well beyond tau.
    """
    wl = np.asarray(wl_voltages, dtype=float)
    if wl.shape != (xbar.config.rows,):
        raise ValueError(f"wl_voltages must have shape ({xbar.config.rows},)")
    g_col = xbar.g[:, col]
    g_sum = float(g_col.sum())
    if g_sum <= 0.0:
        raise AllZeroConductance(f"column {col} has zero total conductance")
    if xbar.config.line_r == 0.0:
        v_bl = float(np.dot(g_col, wl) / g_sum)
    else:
        sol = nodal.solve_network(xbar.g, wl, nodal.open_end(),
                                  xbar.config.line_r)
        v_bl = float(sol.bl_end_v[col])
    return v_bl, xbar.config.c_bl / g_sum


def mvm_differential(xbar: Crossbar, x: np.ndarray,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Differential matrix-vector product through the array.

    Row pair i is driven at v_ref +/- x_i * v_read_amp, every bit line is
    sensed open, and the sensed offsets are decoded back into weight
    units.  With exact center-symmetric pairs, zero wire resistance and
    no noise this equals W^T x exactly.  When ``rng`` is given and the
    device has read noise, each sensed offset gets a multiplicative
    (1 + sigma_read * N(0,1)) disturbance.
    """
    cfg = xbar.config
    m = xbar.diff_map
    x = np.asarray(x, dtype=float)
    if x.shape != (m.weight_rows,):
        raise ValueError(f"x must have shape ({m.weight_rows},)")
    if np.any(np.abs(x) > 1.0):
        raise ValueError("inputs must lie in [-1, 1] (normally [0, 1])")
    wl = np.empty(cfg.rows)
    wl[0::2] = cfg.v_ref + x * cfg.v_read_amp
    wl[1::2] = cfg.v_ref - x * cfg.v_read_amp
    g_sum = xbar.g.sum(axis=0)
    if np.any(g_sum <= 0.0):
        raise AllZeroConductance("a column has zero total conductance")
    if cfg.line_r == 0.0:
        v_bl = (xbar.g * wl[:, None]).sum(axis=0) / g_sum
    else:
        sol = nodal.solve_network(xbar.g, wl, nodal.open_end(), cfg.line_r)
        v_bl = sol.bl_end_v.copy()
    offset = v_bl - cfg.v_ref
    if rng is not None and xbar.params.sigma_read > 0.0:
        offset = offset * (1.0 + xbar.params.sigma_read *
                           rng.standard_normal(offset.shape))
    return offset * g_sum / (cfg.v_read_amp * 2.0 * m.g_half * xbar.area_scale)


@dataclass(frozen=True)
class OpenLoop:
    """Replay the calibrated incremental pulse table, no verification."""


@dataclass(frozen=True)
class ClosedLoop:
    """Alternate read and pulse until within tolerance or out of budget."""

    tolerance: float
    budget: int = 300

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.budget < 1:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class ProgrammingReport:
    mode: str
    targets: np.ndarray
    final_g: np.ndarray
    pulses: np.ndarray              # per-cell pulse count
    budget_exhausted: np.ndarray    # per-cell flag, closed loop only

    @property
    def error(self) -> np.ndarray:
        return self.final_g - self.targets

    @property
    def max_abs_error(self) -> float:
        return float(np.abs(self.error).max())

    def pearson(self) -> float:
        t = self.targets.ravel()
        f = self.final_g.ravel()
        return float(np.corrcoef(t, f)[0, 1])


def ltp_table(params: dev.DeviceParams, area_scale: float = 1.0) -> np.ndarray:
    """Predicted conductance after k incremental set pulses (k = 0..100)
    for a nominal cell starting at its floor."""
    scheme = dev.PulseScheme.incremental_100()
    cell = dev.RramCell(params.g_min * area_scale, area_scale=area_scale)
    table = [cell.g]
    for v in scheme.set_amplitudes:
        cell = dev.apply_pulse(cell, params, v, scheme.width)
        table.append(cell.g)
    return np.array(table)


def program_weights(xbar: Crossbar, targets: np.ndarray,
                    mode: OpenLoop | ClosedLoop) -> ProgrammingReport:
    """Drive every cell toward its conductance target.

    Open loop fully resets each cell with the incremental reset train and
    then replays the prefix of the calibrated set table whose predicted
    conductance is nearest the target.  Closed loop reads the cell,
    picks the strongest pulse predicted not to overshoot, and repeats
    until within tolerance or the pulse budget runs out (recorded per
    cell, not fatal).
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != xbar.g.shape:
        raise ValueError("target grid shape must match the array")
    lo, hi = xbar.nominal_bounds()
    if np.any(targets < lo - 1e-18) or np.any(targets > hi + 1e-18):
        raise TargetOutOfRange("targets outside the device window")

    scheme = dev.PulseScheme.incremental_100()
    if isinstance(mode, OpenLoop):
        return _program_open(xbar, targets, scheme)
    if isinstance(mode, ClosedLoop):
        return _program_closed(xbar, targets, scheme, mode)
    raise TypeError(f"unknown programming mode {mode!r}")


def _program_open(xbar, targets, scheme) -> ProgrammingReport:
    params = xbar.params
    table = ltp_table(params, xbar.area_scale)
    n_star = np.abs(targets[..., None] - table[None, None, :]).argmin(axis=2)
    g = xbar.g.copy()
    pulses = np.zeros_like(n_star)
    for v in scheme.reset_amplitudes:
        g += dev.pulse_delta(g, xbar.g_lo, xbar.g_hi, params, v, scheme.width)
        g = np.clip(g, xbar.g_lo, xbar.g_hi)
    pulses += len(scheme.reset_amplitudes)
    for k, v in enumerate(scheme.set_amplitudes):
        live = n_star > k
        if not live.any():
            break
        dg = dev.pulse_delta(g, xbar.g_lo, xbar.g_hi, params, v, scheme.width)
        g = np.where(live, np.clip(g + dg, xbar.g_lo, xbar.g_hi), g)
        pulses += live
    xbar.g = g
    return ProgrammingReport("open-loop", targets, g.copy(), pulses,
                             np.zeros_like(n_star, dtype=bool))


def _program_closed(xbar, targets, scheme, mode: ClosedLoop) -> ProgrammingReport:
    params = xbar.params
    set_amps = np.array(scheme.set_amplitudes)
    reset_amps = np.array(scheme.reset_amplitudes)
    # model rates per amplitude: dg = rate * remaining-fraction
    set_rates = params.a_set * (scheme.width / params.width_ref) * np.exp(
        (-set_amps - params.set_threshold) / params.v_slope_set)
    reset_rates = params.a_reset * (scheme.width / params.width_ref) * np.exp(
        (reset_amps - params.reset_threshold) / params.v_slope_reset)
    lo_n, hi_n = xbar.nominal_bounds()
    window = hi_n - lo_n

    g = xbar.g.copy()
    cell_window = xbar.g_hi - xbar.g_lo
    pulses = np.zeros(g.shape, dtype=int)
    for _ in range(mode.budget):
        err = targets - g
        live = np.abs(err) > mode.tolerance
        if not live.any():
            break
        # the controller predicts steps with the nominal window (it cannot
        # see the cell's own spread), then each pulse acts per device law
        dg = np.zeros_like(g)
        up = live & (err > 0)
        down = live & (err < 0)
        if up.any():
            pred = set_rates[None, :] * ((hi_n - g[up])[:, None] / window)
            idx = _pick_amplitude(pred, err[up])
            dg[up] = set_rates[idx] * (xbar.g_hi[up] - g[up]) / cell_window[up]
        if down.any():
            pred = -reset_rates[None, :] * ((g[down] - lo_n)[:, None] / window)
            idx = _pick_amplitude(pred, err[down])
            dg[down] = -reset_rates[idx] * (g[down] - xbar.g_lo[down]) / cell_window[down]
        g = np.clip(g + dg, xbar.g_lo, xbar.g_hi)
        pulses += live
    xbar.g = g
    exhausted = np.abs(targets - g) > mode.tolerance
    return ProgrammingReport("closed-loop", targets, g.copy(), pulses, exhausted)


def _pick_amplitude(pred: np.ndarray, err: np.ndarray) -> np.ndarray:
    """Index of the strongest candidate step not exceeding |err|.

    ``pred`` is (cells, amplitudes) with magnitude increasing along the
    amplitude axis and the same sign as ``err``.  Falls back to the
    weakest amplitude when even that one overshoots.
    """
    fits = np.abs(pred) <= np.abs(err)[:, None]
    return np.where(fits.any(axis=1),
                    fits.shape[1] - 1 - np.argmax(fits[:, ::-1], axis=1), 0)


GRID_HEADER_RE = re.compile(r"#\s*rows=(\d+)\s+cols=(\d+)\s+units=(\S+)")


def write_grid_csv(grid: np.ndarray, dest: TextIO | str, units: str = "S") -> None:
    """Row-major numeric grid with a '# rows=R cols=C units=U' header."""
    grid = np.asarray(grid)
    own = isinstance(dest, str)
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        fh.write(f"# rows={grid.shape[0]} cols={grid.shape[1]} units={units}\n")
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()


def read_grid_csv(src: TextIO | str) -> tuple[np.ndarray, str]:
    own = isinstance(src, str)
    fh = open(src, newline="", encoding="utf-8") if own else src
    try:
        header = fh.readline()
        match = GRID_HEADER_RE.match(header)
        if not match:
            raise ValueError("not a grid CSV (missing '# rows=R cols=C units=U')")
        rows, cols, units = int(match[1]), int(match[2]), match[3]
        data = [[float(v) for v in r] for r in csv.reader(fh) if r]
    finally:
        if own:
            fh.close()
    grid = np.array(data)
    if grid.shape != (rows, cols):
        raise ValueError(f"grid shape {grid.shape} does not match header")
    return grid, units
