"""Steady-state nodal analysis of a crossbar with wire parasitics.

Every word line is a chain of ``line_r`` segments driven from the left,
every bit line a chain of segments ending at a per-column termination at
the bottom, and every cell a conductance bridging its word-line node to
its bit-line node.  Kirchhoff's current law on the 2*rows*cols unknown
node voltages gives a sparse symmetric positive-definite system.

``line_r == 0`` collapses each word line onto its driver and each bit
line onto a single node, reproducing the ideal conductance-divider
result exactly.

Terminations are ``open()`` (voltage sensing), ``grounded_through(r)``
(resistor to ground), or ``driven(v)`` (ideal source).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SingularNetwork",
    "Termination",
    "open_end",
    "grounded_through",
    "driven",
    "NodalSolution",
    "solve_network",
    "read_margin",
    "write_voltage_drop",
]


class SingularNetwork(ValueError):
    """The network has a floating subcircuit and no unique solution."""


@dataclass(frozen=True)
class Termination:
    kind: str          # "open" | "r" | "v"
    value: float = 0.0


def open_end() -> Termination:
    return Termination("open")


def grounded_through(resistance: float) -> Termination:
    if resistance < 0:
        raise ValueError("termination resistance must be nonnegative")
    return Termination("r", resistance)


def driven(voltage: float) -> Termination:
    return Termination("v", voltage)


@dataclass(frozen=True)
class NodalSolution:
    """Node voltages and branch currents of one steady-state solve."""

    wl_v: np.ndarray            # (rows, cols)
    bl_v: np.ndarray            # (rows, cols)
    cell_current: np.ndarray    # (rows, cols), word line -> bit line
    drive_current: np.ndarray   # (rows,), injected by each word-line driver
    term_current: np.ndarray    # (cols,), injected by each termination
    residual: float             # relative ||A v - b|| of the linear solve

    @property
    def bl_end_v(self) -> np.ndarray:
        """Bit-line potential at the termination (sense) side."""
        return self.bl_v[-1, :]

    def kcl_imbalance(self) -> float:
        """Net external current, normalized to the total drive scale."""
        total = float(self.drive_current.sum() + self.term_current.sum())
        scale = float(np.sum(np.abs(self.drive_current)) +
                      np.sum(np.abs(self.term_current)))
        return abs(total) / scale if scale > 0 else abs(total)


def solve_network(g: np.ndarray, wl_drive: np.ndarray,
                  bl_termination: list[Termination] | Termination,
                  line_r: float) -> NodalSolution:
    """Solve the crossbar network for the given cell conductances.

    ``g`` is (rows, cols) with nonnegative entries, ``wl_drive`` the
    per-row driver voltages.  A single Termination is broadcast to all
    columns.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 2:
        raise ValueError("g must be a rows x cols array")
    rows, cols = g.shape
    wl_drive = np.asarray(wl_drive, dtype=float)
    if wl_drive.shape != (rows,):
        raise ValueError(f"wl_drive must have shape ({rows},)")
    if isinstance(bl_termination, Termination):
        terms = [bl_termination] * cols
    else:
        terms = list(bl_termination)
        if len(terms) != cols:
            raise ValueError(f"need {cols} terminations, got {len(terms)}")
    if line_r < 0:
        raise ValueError("line_r must be nonnegative")
    if np.any(g < 0):
        raise ValueError("cell conductances must be nonnegative")

    if line_r == 0.0:
        return _solve_ideal(g, wl_drive, terms)
    return _solve_parasitic(g, wl_drive, terms, line_r)


def _solve_ideal(g, wl_drive, terms) -> NodalSolution:
    rows, cols = g.shape
    bl = np.empty(cols)
    term_i = np.empty(cols)
    for j, term in enumerate(terms):
        gsum = float(g[:, j].sum())
        inject = float(np.dot(g[:, j], wl_drive))
        if term.kind == "v" or (term.kind == "r" and term.value == 0.0):
            v_fix = term.value if term.kind == "v" else 0.0
            bl[j] = v_fix
            term_i[j] = gsum * v_fix - inject
        else:
            g_t = 0.0 if term.kind == "open" else 1.0 / term.value
            denom = gsum + g_t
            if denom == 0.0:
                raise SingularNetwork(f"column {j} is floating")
            bl[j] = inject / denom
            term_i[j] = -g_t * bl[j]
    wl_v = np.repeat(wl_drive[:, None], cols, axis=1)
    bl_v = np.repeat(bl[None, :], rows, axis=0)
    cell_i = g * (wl_v - bl_v)
    drive_i = cell_i.sum(axis=1)
    return NodalSolution(wl_v, bl_v, cell_i, drive_i, term_i, 0.0)


def _solve_parasitic(g, wl_drive, terms, line_r) -> NodalSolution:
    rows, cols = g.shape
    n = 2 * rows * cols
    gl = 1.0 / line_r

    def wl(i, j):
        return i * cols + j

    def bl(i, j):
        return rows * cols + i * cols + j

    ai, aj, av = [], [], []
    b = np.zeros(n)

    def stamp(a, c, cond):
        ai.extend((a, c, a, c))
        aj.extend((a, c, c, a))
        av.extend((cond, cond, -cond, -cond))

    def stamp_fixed(a, v_fix, cond):
        ai.append(a)
        aj.append(a)
        av.append(cond)
        b[a] += cond * v_fix

    for i in range(rows):
        stamp_fixed(wl(i, 0), wl_drive[i], gl)
        for j in range(cols - 1):
            stamp(wl(i, j), wl(i, j + 1), gl)
    for i in range(rows):
        for j in range(cols):
            gij = g[i, j]
            if gij > 0.0:
                stamp(wl(i, j), bl(i, j), gij)
    for j in range(cols):
        for i in range(rows - 1):
            stamp(bl(i, j), bl(i + 1, j), gl)
        term = terms[j]
        end = bl(rows - 1, j)
        if term.kind == "v":
            stamp_fixed(end, term.value, gl)
        elif term.kind == "r":
            stamp_fixed(end, 0.0, 1.0 / (line_r + term.value))

    a_mat = sp.coo_matrix((av, (ai, aj)), shape=(n, n)).tocsr()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            x = spla.spsolve(a_mat, b)
    except RuntimeError as exc:
        raise SingularNetwork(str(exc)) from None
    if not np.all(np.isfinite(x)):
        raise SingularNetwork("floating subnetwork (singular system)")

    b_norm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(a_mat @ x - b))
    residual = residual / b_norm if b_norm > 0 else residual

    wl_v = x[: rows * cols].reshape(rows, cols)
    bl_v = x[rows * cols:].reshape(rows, cols)
    cell_i = g * (wl_v - bl_v)
    drive_i = gl * (wl_drive - wl_v[:, 0])
    term_i = np.zeros(cols)
    for j, term in enumerate(terms):
        if term.kind == "v":
            term_i[j] = gl * (term.value - bl_v[rows - 1, j])
        elif term.kind == "r":
            term_i[j] = -bl_v[rows - 1, j] / (line_r + term.value)
    return NodalSolution(wl_v, bl_v, cell_i, drive_i, term_i, residual)


def read_margin(n: int, r_on: float, r_off: float, line_r: float,
                v_pulse: float = 0.1, background: str = "lrs") -> float:
    """Worst-case sensed-voltage separation of the far-corner cell.

    One n x n array, single-row read at ``v_pulse`` with all bit lines
    open (voltage sensing): the target cell sits at the corner farthest
    from both the row drivers and the sense side, every other cell holds
    the adversarial uniform state (all-LRS by default, the worst sneak
    loading).  Returns |v_sense(target on) - v_sense(target off)|.
    """
    if n < 2:
        raise ValueError("array size must be at least 2")
    if r_on <= 0 or r_off <= 0:
        raise ValueError("resistances must be positive")
    g_bg = 1.0 / r_on if background == "lrs" else 1.0 / r_off
    drive = np.zeros(n)
    drive[0] = v_pulse  # target row; row 0 is farthest from the sense side
    col = n - 1
    sensed = []
    for r_target in (r_on, r_off):
        g = np.full((n, n), g_bg)
        g[0, col] = 1.0 / r_target
        sol = solve_network(g, drive, open_end(), line_r)
        sensed.append(sol.bl_end_v[col])
    return float(abs(sensed[0] - sensed[1]))


def write_voltage_drop(n: int, r_on: float, line_r: float,
                       v_write: float = 2.0) -> float:
    """Fraction of the write voltage reaching the far-corner selected cell.

    V/2 bias scheme: selected word line at ``v_write`` and selected bit
    line at 0, all unselected lines held at ``v_write / 2``; every cell
    at ``r_on`` (the heaviest wire loading).
    """
    if n < 2:
        raise ValueError("array size must be at least 2")
    if r_on <= 0:
        raise ValueError("r_on must be positive")
    g = np.full((n, n), 1.0 / r_on)
    drive = np.full(n, v_write / 2.0)
    drive[0] = v_write  # selected row, farthest from the bit-line drivers
    col = n - 1
    terms = [driven(v_write / 2.0)] * n
    terms[col] = driven(0.0)
    sol = solve_network(g, drive, terms, line_r)
    return float((sol.wl_v[0, col] - sol.bl_v[0, col]) / v_write)
