"""Conduction-regime analysis of I-V sweeps.

Fits measured or synthetic sweeps to the three transport models seen in
bulk-switching cells: ohmic-looking direct tunneling at low bias,
Fowler-Nordheim tunneling at high bias (linear ln(I/V^2) vs 1/V), and
space-charge-limited conduction in between, whose log-log slope sequence
1 / 2 / >2 locates the trap-filled-limit voltage.  The trap density is
derived from that voltage, the oxide thickness, and the permittivity.

Only lumped fit coefficients are reported; separating barrier height,
effective mass, and tunneling gap from a single trace is underdetermined
and out of scope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

__all__ = [
    "IVTrace",
    "TunnelFit",
    "SclcFit",
    "TrapExtraction",
    "InsufficientData",
    "NonPositiveCurrent",
    "DegenerateFit",
    "fit_direct",
    "fit_fn",
    "fit_sclc",
    "trap_density",
    "synth_direct",
    "synth_fn",
    "synth_sclc",
    "read_iv_csv",
    "write_iv_csv",
    "Q_ELEMENTARY",
    "EPS_VACUUM",
]

Q_ELEMENTARY = 1.602176634e-19  # C
EPS_VACUUM = 8.8541878128e-12   # F/m

IV_CSV_HEADER = ("v_V", "i_A")

# Minimum samples for one fitted line segment.
_MIN_SEG = 3
# Absolute tie tolerance on segment-split residuals; keeps the split
# choice stable when several splits of noiseless data are all exact.
_TIE_ATOL = 1e-20


class InsufficientData(ValueError):
    """Too few samples inside the requested fit window."""


class NonPositiveCurrent(ValueError):
    """A log-domain fit hit a sample with i <= 0."""


class DegenerateFit(ValueError):
    """The SCLC fit found no trap-filling region (s3 <= s2)."""


@dataclass(frozen=True)
class IVTrace:
    """An I-V sweep: strictly increasing voltages with finite currents."""

    v: np.ndarray
    i: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        i = np.asarray(self.i, dtype=float)
        if v.ndim != 1 or v.shape != i.shape:
            raise ValueError("v and i must be 1-d arrays of equal length")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(i)):
            raise ValueError("trace contains non-finite samples")
        if v.size >= 2 and not np.all(np.diff(v) > 0):
            raise ValueError("voltages must be strictly increasing")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "i", i)

    def __len__(self) -> int:
        return int(self.v.size)

    def positive_branch(self) -> "IVTrace":
        mask = self.v > 0
        return IVTrace(self.v[mask], self.i[mask], self.label)


@dataclass(frozen=True)
class TunnelFit:
    regime: str                      # "direct" or "fowler-nordheim"
    coeff_a: float                   # scale prefactor
    coeff_b: float                   # lumped exponent constant (V); 0 for direct
    fit_window: tuple[float, float]
    rms_residual: float


@dataclass(frozen=True)
class SclcFit:
    breakpoints: tuple[float, float]  # (v_1, v_tfl)
    slopes: tuple[float, float, float]
    rms_residual: float
    alpha: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", self.slopes[2])

    @property
    def v_tfl(self) -> float:
        return self.breakpoints[1]


@dataclass(frozen=True)
class TrapExtraction:
    n_t: float          # trap density (m^-3)
    v_tfl: float        # trap-filled-limit voltage (V)
    thickness_l: float  # oxide thickness (m)
    eps_r: float        # relative permittivity


def fit_direct(trace: IVTrace, v_max: float = 0.06) -> TunnelFit:
    """Least-squares fit of i = a*v through the origin on 0 < v <= v_max."""
    mask = (trace.v > 0) & (trace.v <= v_max)
    if int(mask.sum()) < 3:
        raise InsufficientData(
            f"need >= 3 samples with 0 < v <= {v_max}, have {int(mask.sum())}")
    v, i = trace.v[mask], trace.i[mask]
    a = float(np.dot(v, i) / np.dot(v, v))
    resid = i - a * v
    scale = float(np.sqrt(np.mean(i * i)))
    rms = float(np.sqrt(np.mean(resid * resid)) / scale) if scale > 0 else 0.0
    return TunnelFit("direct", a, 0.0, (float(v[0]), float(v[-1])), rms)


def fit_fn(trace: IVTrace, v_min: float = 0.5) -> TunnelFit:
    """Fowler-Nordheim fit: regress ln(i/v^2) on 1/v for v >= v_min.

    The slope is -coeff_b and the intercept ln(coeff_a).
    """
    mask = trace.v >= v_min
    if int(mask.sum()) < 3:
        raise InsufficientData(
            f"need >= 3 samples with v >= {v_min}, have {int(mask.sum())}")
    v, i = trace.v[mask], trace.i[mask]
    if np.any(i <= 0):
        raise NonPositiveCurrent("log fit requires all currents > 0 in window")
    x = 1.0 / v
    y = np.log(i / (v * v))
    slope, intercept = _line_fit(x, y)
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid * resid)))
    return TunnelFit("fowler-nordheim", float(np.exp(intercept)), -slope,
                     (float(v[0]), float(v[-1])), rms)


def fit_sclc(trace: IVTrace) -> SclcFit:
    """Three-segment log-log fit locating the trap-filled-limit voltage.

    Exhaustive search over all sample-aligned breakpoint pairs (each
    segment keeps at least three samples), minimizing the total squared
    residual of independent per-segment lines in (log v, log i).  The
    reported breakpoints are the first samples of segments two and three,
    so noiseless piecewise data is recovered exactly on its grid.
    """
    pos = trace.positive_branch()
    if len(pos) < 12:
        raise InsufficientData(f"need >= 12 positive-branch samples, have {len(pos)}")
    if np.any(pos.i <= 0):
        raise NonPositiveCurrent("SCLC fit requires all currents > 0")
    x = np.log(pos.v)
    y = np.log(pos.i)
    n = x.size

    best = None
    best_ssr = np.inf
    for b1 in range(_MIN_SEG - 1, n - 2 * _MIN_SEG):
        s1, ssr1 = _seg_fit(x, y, 0, b1 + 1)
        for b2 in range(b1 + _MIN_SEG, n - _MIN_SEG):
            s2, ssr2 = _seg_fit(x, y, b1 + 1, b2 + 1)
            s3, ssr3 = _seg_fit(x, y, b2 + 1, n)
            ssr = ssr1 + ssr2 + ssr3
            if ssr < best_ssr - _TIE_ATOL:
                best_ssr = ssr
                best = (b1, b2, s1, s2, s3)
    assert best is not None
    b1, b2, s1, s2, s3 = best
    if s3 <= s2 + 1e-9:
        raise DegenerateFit(
            f"no trap-filling region: s3 = {s3:.3f} <= s2 = {s2:.3f}")
    return SclcFit((float(pos.v[b1 + 1]), float(pos.v[b2 + 1])),
                   (s1, s2, s3), float(np.sqrt(best_ssr / n)))


def trap_density(v_tfl: float, thickness_l: float, eps_r: float) -> TrapExtraction:
    """Trap density from the trap-filled-limit voltage.

    n_t = 2 * eps_0 * eps_r * v_tfl / (q * L^2).
    """
    if v_tfl < 0:
        raise ValueError("v_tfl must be nonnegative")
    if thickness_l <= 0 or eps_r <= 0:
        raise ValueError("thickness and permittivity must be positive")
    n_t = 2.0 * EPS_VACUUM * eps_r * v_tfl / (Q_ELEMENTARY * thickness_l ** 2)
    return TrapExtraction(n_t, v_tfl, thickness_l, eps_r)


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    slope = float(np.dot(dx, dy) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


def _seg_fit(x: np.ndarray, y: np.ndarray, lo: int, hi: int) -> tuple[float, float]:
    """Slope and SSR of the least-squares line on x[lo:hi], y[lo:hi]."""
    xs, ys = x[lo:hi], y[lo:hi]
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    slope = float(np.dot(dx, dy) / np.dot(dx, dx))
    resid = dy - slope * dx
    return slope, float(np.dot(resid, resid))


def _apply_noise(i: np.ndarray, sigma: float, seed: int | None) -> np.ndarray:
    if sigma == 0.0:
        return i
    rng = np.random.default_rng(seed)
    return i * np.exp(sigma * rng.standard_normal(i.shape))


def synth_direct(coeff_a: float, v_grid: Sequence[float], sigma: float = 0.0,
                 seed: int | None = None, label: str = "synthetic-direct") -> IVTrace:
    """Exact i = a*v samples, optionally with multiplicative lognormal noise."""
    v = np.asarray(v_grid, dtype=float)
    return IVTrace(v, _apply_noise(coeff_a * v, sigma, seed), label)


def synth_fn(coeff_a: float, coeff_b: float, v_grid: Sequence[float],
             sigma: float = 0.0, seed: int | None = None,
             label: str = "synthetic-fn") -> IVTrace:
    """Exact i = a * v^2 * exp(-b/v) samples on a positive grid."""
    v = np.asarray(v_grid, dtype=float)
    if np.any(v <= 0):
        raise ValueError("FN synthesis needs v > 0")
    i = coeff_a * v * v * np.exp(-coeff_b / v)
    return IVTrace(v, _apply_noise(i, sigma, seed), label)


def synth_sclc(prefactor: float, slopes: Sequence[float],
               breakpoints: Sequence[float], v_grid: Sequence[float],
               sigma: float = 0.0, seed: int | None = None,
               label: str = "synthetic-sclc") -> IVTrace:
    """Continuous three-regime power law i = c_k * v^s_k on a positive grid.

    ``prefactor`` is the first-segment scale; the other prefactors follow
    from continuity at the two breakpoints.
    """
    s1, s2, s3 = slopes
    b1, b2 = breakpoints
    if not 0 < b1 < b2:
        raise ValueError("need 0 < b1 < b2")
    v = np.asarray(v_grid, dtype=float)
    if np.any(v <= 0):
        raise ValueError("SCLC synthesis needs v > 0")
    c1 = prefactor
    c2 = c1 * b1 ** (s1 - s2)
    c3 = c2 * b2 ** (s2 - s3)
    i = np.where(v <= b1, c1 * v ** s1,
                 np.where(v <= b2, c2 * v ** s2, c3 * v ** s3))
    return IVTrace(v, _apply_noise(i, sigma, seed), label)


def read_iv_csv(src: TextIO | str) -> IVTrace:
    """Read the ``v_V,i_A`` trace format; ``#`` starts a comment line."""
    own = isinstance(src, str)
    fh = open(src, newline="", encoding="utf-8") if own else src
    try:
        rows = [r for r in csv.reader(line for line in fh
                                      if not line.lstrip().startswith("#"))
                if r]
    finally:
        if own:
            fh.close()
    if not rows or tuple(rows[0]) != IV_CSV_HEADER:
        raise ValueError("not an I-V CSV (expected header 'v_V,i_A')")
    if len(rows) == 1:
        raise ValueError("I-V CSV has no samples")
    try:
        v = np.array([float(r[0]) for r in rows[1:]])
        i = np.array([float(r[1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed I-V CSV row: {exc}") from None
    return IVTrace(v, i)


def write_iv_csv(trace: IVTrace, dest: TextIO | str) -> None:
    own = isinstance(dest, str)
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(IV_CSV_HEADER)
        for v, i in zip(trace.v, trace.i):
            writer.writerow([repr(float(v)), repr(float(i))])
    finally:
        if own:
            fh.close()
