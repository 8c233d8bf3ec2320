"""Deterministic 2D racing environment.

Tracks are closed centerline polylines with per-vertex corridor widths;
boundaries are derived by normal offset and validated at load.  The car
is a kinematic bicycle with instantaneous speed tracking, scanned by an
analytic 960-beam LIDAR (exact ray/segment intersections, no raster).
An episode drives a spiking network controller once per control period
and scores the fraction of the target lap count completed before a
crash.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import TextIO

import numpy as np
from numba import njit

from . import snn

__all__ = [
    "Track",
    "CarState",
    "LidarConfig",
    "EpisodeConfig",
    "TrackParseError",
    "GeometryError",
    "PoseOutsideTrack",
    "load_track",
    "save_track_csv",
    "make_ring_track",
    "lidar_scan",
    "step",
    "crash_check",
    "run_episode",
]

TRACK_CSV_HEADER = ("x_m", "y_m", "w_tr_left_m", "w_tr_right_m")
TRAJECTORY_CSV_HEADER = ("t_s", "x_m", "y_m", "heading_rad", "speed_mps",
                         "steer_rad", "alive")


class TrackParseError(ValueError):
    """A track file is not valid centerline CSV."""


class GeometryError(ValueError):
    """A track's geometry is unusable (open, too narrow, self-crossing)."""


class PoseOutsideTrack(ValueError):
    """A scan was requested from a pose outside the corridor."""


@dataclass(frozen=True)
class LidarConfig:
    beams: int = 960
    fov: float = math.radians(270.0)
    max_range: float = 30.0

    def __post_init__(self) -> None:
        if self.beams < 1:
            raise ValueError("need at least one beam")
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError("fov must be in (0, 2*pi]")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def beam_offsets(self) -> np.ndarray:
        """Beam angles relative to the heading, exactly antisymmetric."""
        raw = np.linspace(-self.fov / 2.0, self.fov / 2.0, self.beams)
        return (raw - raw[::-1]) / 2.0


@lru_cache(maxsize=8)
def _beam_trig(beams: int, fov: float) -> tuple[np.ndarray, np.ndarray]:
    off = LidarConfig(beams=beams, fov=fov).beam_offsets()
    return np.cos(off), np.sin(off)


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.002            # control period (s)
    max_steps: int = 5000
    laps_target: float = 2.0
    wheelbase: float = 0.33
    car_radius: float = 0.15
    window_steps: int = 50       # SNN timesteps per control decision

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.laps_target <= 0:
            raise ValueError("dt and laps_target must be positive")
        if self.max_steps < 1 or self.window_steps < 1:
            raise ValueError("max_steps and window_steps must be positive")
        if self.wheelbase <= 0 or self.car_radius <= 0:
            raise ValueError("wheelbase and car_radius must be positive")


@dataclass(frozen=True)
class CarState:
    x: float
    y: float
    heading: float
    speed: float
    arc_s: float = 0.0       # position along the centerline (m)
    progress: float = 0.0    # cumulative signed arc progress (m)
    seg_hint: int = 0        # centerline segment cache for projection
    lateral: float | None = None  # cached signed offset at (arc_s, seg_hint)


class Track:
    """Closed centerline with widths, derived boundaries and arc tables."""

    def __init__(self, xy: np.ndarray, w_left: np.ndarray,
                 w_right: np.ndarray, name: str = "track"):
        xy = np.asarray(xy, dtype=float)
        w_left = np.asarray(w_left, dtype=float)
        w_right = np.asarray(w_right, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] < 3:
            raise GeometryError("centerline needs at least 3 (x, y) vertices")
        if w_left.shape != (xy.shape[0],) or w_right.shape != (xy.shape[0],):
            raise GeometryError("one left and right width per vertex required")
        self.name = name
        self.xy = xy
        self.w_left = w_left
        self.w_right = w_right

        nxt = np.roll(xy, -1, axis=0)
        seg = nxt - xy
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self.seg_len == 0):
            raise GeometryError("duplicate consecutive centerline vertices")
        self.seg_dir = seg / self.seg_len[:, None]
        self.cum_s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum_s[-1])

        # mitered vertex normals: offset boundaries stay at the stated
        # perpendicular width along both adjacent edges
        edge_n = np.stack([-self.seg_dir[:, 1], self.seg_dir[:, 0]], axis=1)
        miter = edge_n + np.roll(edge_n, 1, axis=0)
        norm = np.hypot(miter[:, 0], miter[:, 1])
        if np.any(norm < 1e-12):
            raise GeometryError("centerline has a 180-degree reversal")
        miter /= norm[:, None]
        cos_half = miter[:, 0] * edge_n[:, 0] + miter[:, 1] * edge_n[:, 1]
        if np.any(cos_half < 0.1):
            raise GeometryError("centerline corner sharper than ~168 degrees")
        scale = (1.0 / cos_half)[:, None]
        self.left = xy + w_left[:, None] * miter * scale
        self.right = xy - w_right[:, None] * miter * scale

        # wall segments, both boundaries concatenated (closed polylines)
        walls_a = np.concatenate([self.left, self.right])
        walls_b = np.concatenate([np.roll(self.left, -1, axis=0),
                                  np.roll(self.right, -1, axis=0)])
        self.wall_a = walls_a
        self.wall_e = walls_b - walls_a

        # contiguous columns for the numba kernels
        self._px = np.ascontiguousarray(xy[:, 0])
        self._py = np.ascontiguousarray(xy[:, 1])
        self._dx = np.ascontiguousarray(self.seg_dir[:, 0])
        self._dy = np.ascontiguousarray(self.seg_dir[:, 1])
        self._wall_ax = np.ascontiguousarray(walls_a[:, 0])
        self._wall_ay = np.ascontiguousarray(walls_a[:, 1])
        self._wall_ex = np.ascontiguousarray(self.wall_e[:, 0])
        self._wall_ey = np.ascontiguousarray(self.wall_e[:, 1])

    def start_pose(self) -> CarState:
        """Centerline vertex 0, facing along the centerline, at rest."""
        return CarState(float(self.xy[0, 0]), float(self.xy[0, 1]),
                        float(math.atan2(self.seg_dir[0, 1],
                                         self.seg_dir[0, 0])), 0.0)

    def project(self, x: float, y: float,
                hint: int | None = None) -> tuple[float, float, int]:
        """Closest-point projection onto the centerline.

        Returns (arc position, signed lateral offset with left positive,
        segment index).  A hint restricts the search to nearby segments.
        """
        n = self.xy.shape[0]
        start, count = (0, n) if hint is None else ((hint - 8) % n,
                                                    min(17, n))
        arc, lateral, seg = _project_kernel(
            x, y, self._px, self._py, self._dx, self._dy, self.seg_len,
            self.cum_s, start, count)
        return float(arc), float(lateral), int(seg)

    def widths_at(self, arc: float, seg: int) -> tuple[float, float]:
        """Corridor widths linearly interpolated along a segment."""
        n = self.xy.shape[0]
        t = (arc - self.cum_s[seg]) / self.seg_len[seg]
        t = min(max(t, 0.0), 1.0)
        j = (seg + 1) % n
        return (float((1 - t) * self.w_left[seg] + t * self.w_left[j]),
                float((1 - t) * self.w_right[seg] + t * self.w_right[j]))

    def inside(self, x: float, y: float, hint: int | None = None,
               margin: float = 0.0) -> bool:
        arc, lateral, seg = self.project(x, y, hint)
        wl, wr = self.widths_at(arc, seg)
        return -wr + margin <= lateral <= wl - margin

    def inside_state(self, state: "CarState", margin: float = 0.0) -> bool:
        """Containment test reusing the state's cached projection."""
        if state.lateral is None:
            return self.inside(state.x, state.y, state.seg_hint, margin)
        wl, wr = self.widths_at(state.arc_s, state.seg_hint)
        return -wr + margin <= state.lateral <= wl - margin

    def wall_distance(self, x: float, y: float) -> float:
        """Distance to the nearest boundary point."""
        return float(_wall_distance_kernel(x, y, self._wall_ax, self._wall_ay,
                                           self._wall_ex, self._wall_ey))


def make_ring_track(radius: float = 2.9, half_width: float = 1.0,
                    points: int = 36, name: str = "ring") -> Track:
    """A circular course, the smallest closed fixture that needs steering."""
    if radius <= half_width:
        raise GeometryError("radius must exceed the half width")
    ang = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    xy = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    w = np.full(points, half_width)
    return Track(xy, w, w.copy(), name=name)


def load_track(path, car_radius: float = 0.15) -> Track:
    """Parse and validate a centerline CSV track file.

    Raises TrackParseError for malformed files and GeometryError for
    unusable geometry: an unclosed loop, corridors narrower than the car,
    or self-intersecting boundaries.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh
                            if not line.lstrip().startswith("#"))
        rows = [r for r in reader if r]
    if not rows or tuple(s.strip() for s in rows[0]) != TRACK_CSV_HEADER:
        raise TrackParseError(
            "expected header 'x_m,y_m,w_tr_left_m,w_tr_right_m'")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except (ValueError, IndexError):
        raise TrackParseError("malformed centerline row") from None
    if data.ndim != 2 or data.shape[1] != 4 or data.shape[0] < 3:
        raise TrackParseError("need at least 3 rows of 4 columns")

    xy, w_left, w_right = data[:, :2], data[:, 2], data[:, 3]
    # a repeated first vertex marks closure explicitly; drop it
    if np.allclose(xy[0], xy[-1], atol=1e-9):
        xy, w_left, w_right = xy[:-1], w_left[:-1], w_right[:-1]

    seg = np.diff(xy, axis=0)
    med = float(np.median(np.hypot(seg[:, 0], seg[:, 1])))
    gap = float(np.hypot(*(xy[0] - xy[-1])))
    if gap > 3.0 * med:
        raise GeometryError(
            f"track does not close: end gap {gap:.3g} m vs typical "
            f"spacing {med:.3g} m")

    if np.any(w_left <= car_radius) or np.any(w_right <= car_radius):
        raise GeometryError("corridor narrower than the car radius")

    track = Track(xy, w_left, w_right, name=str(path))
    for poly in (track.left, track.right):
        if _self_intersects(poly):
            raise GeometryError("offset boundary self-intersects; widths "
                                "too large for the centerline curvature")
    return track


def save_track_csv(track: Track, dest: TextIO | str) -> None:
    own = isinstance(dest, str)
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(TRACK_CSV_HEADER)
        for (x, y), wl, wr in zip(track.xy, track.w_left, track.w_right):
            writer.writerow([repr(float(x)), repr(float(y)),
                             repr(float(wl)), repr(float(wr))])
    finally:
        if own:
            fh.close()


def _self_intersects(poly: np.ndarray) -> bool:
    n = poly.shape[0]
    a = poly
    b = np.roll(poly, -1, axis=0)
    for i in range(n - 2):
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if js.size == 0:
            continue
        if np.any(_segments_cross(a[i], b[i], a[js], b[js])):
            return True
    return False


def _segments_cross(p, q, a, b) -> np.ndarray:
    """Proper intersection test of segment (p, q) against segments (a, b)."""
    r = q - p
    s = b - a
    denom = r[0] * s[:, 1] - r[1] * s[:, 0]
    rel = a - p
    t_num = rel[:, 0] * s[:, 1] - rel[:, 1] * s[:, 0]
    u_num = rel[:, 0] * r[1] - rel[:, 1] * r[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    return (denom != 0) & (t > 0) & (t < 1) & (u > 0) & (u < 1)


@njit(cache=True)
def _project_kernel(px, py, ax, ay, dx, dy, seg_len, cum_s, start, count):
    n = ax.shape[0]
    best_d2 = np.inf
    best = 0
    best_u = 0.0
    for k in range(count):
        i = (start + k) % n
        rx = px - ax[i]
        ry = py - ay[i]
        u = rx * dx[i] + ry * dy[i]
        if u < 0.0:
            u = 0.0
        elif u > seg_len[i]:
            u = seg_len[i]
        ox = rx - dx[i] * u
        oy = ry - dy[i] * u
        d2 = ox * ox + oy * oy
        if d2 < best_d2:
            best_d2 = d2
            best = i
            best_u = u
    rx = px - (ax[best] + dx[best] * best_u)
    ry = py - (ay[best] + dy[best] * best_u)
    lateral = dx[best] * ry - dy[best] * rx
    return cum_s[best] + best_u, lateral, best


@njit(cache=True)
def _wall_distance_kernel(px, py, ax, ay, ex, ey):
    best = np.inf
    for i in range(ax.shape[0]):
        rx = px - ax[i]
        ry = py - ay[i]
        ee = ex[i] * ex[i] + ey[i] * ey[i]
        u = (rx * ex[i] + ry * ey[i]) / ee
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
        dx = rx - u * ex[i]
        dy = ry - u * ey[i]
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
    return math.sqrt(best)


@njit(cache=True)
def _raycast(ox, oy, dir_x, dir_y, wall_ax, wall_ay, wall_ex, wall_ey,
             max_range):
    n_beams = dir_x.shape[0]
    n_walls = wall_ax.shape[0]
    out = np.empty(n_beams)
    for k in range(n_beams):
        dx, dy = dir_x[k], dir_y[k]
        best = max_range
        for m in range(n_walls):
            denom = dx * wall_ey[m] - dy * wall_ex[m]
            if denom == 0.0:
                continue
            rel_x = wall_ax[m] - ox
            rel_y = wall_ay[m] - oy
            t = (rel_x * wall_ey[m] - rel_y * wall_ex[m]) / denom
            if t <= 0.0 or t >= best:
                continue
            u = (rel_x * dy - rel_y * dx) / denom
            if 0.0 <= u <= 1.0:
                best = t
        out[k] = best
    return out


def lidar_scan(track: Track, state: CarState,
               cfg: LidarConfig | None = None) -> np.ndarray:
    """Distances to the nearest wall along evenly spread beams.

    Beams span the field of view centered on the heading; misses clamp
    to max_range.  The pose must be inside the corridor.
    """
    cfg = cfg or LidarConfig()
    if not track.inside_state(state):
        raise PoseOutsideTrack(f"pose ({state.x:.3f}, {state.y:.3f}) "
                               "is outside the corridor")
    cos_o, sin_o = _beam_trig(cfg.beams, cfg.fov)
    cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
    return _raycast(state.x, state.y, cos_h * cos_o - sin_h * sin_o,
                    sin_h * cos_o + cos_h * sin_o,
                    track._wall_ax, track._wall_ay,
                    track._wall_ex, track._wall_ey, cfg.max_range)


def step(track: Track, state: CarState, steering: float, speed_cmd: float,
         cfg: EpisodeConfig) -> CarState:
    """One kinematic bicycle step of the control period.

    Speed tracks the command instantly; the position advances along the
    old heading, then the heading turns by (v / wheelbase) * tan(steer) * dt.
    Steering is clipped to the action-table limit of +/-0.34 rad.
    """
    if not (math.isfinite(steering) and math.isfinite(speed_cmd)):
        raise ValueError("steering and speed must be finite")
    steer = min(max(steering, -0.34), 0.34)
    v = speed_cmd
    x = state.x + v * math.cos(state.heading) * cfg.dt
    y = state.y + v * math.sin(state.heading) * cfg.dt
    heading = state.heading + (v / cfg.wheelbase) * math.tan(steer) * cfg.dt
    arc, lateral, seg = track.project(x, y, hint=state.seg_hint)
    delta = arc - state.arc_s
    if delta > track.length / 2:
        delta -= track.length
    elif delta < -track.length / 2:
        delta += track.length
    return replace(state, x=x, y=y, heading=heading, speed=v, arc_s=arc,
                   progress=state.progress + delta, seg_hint=seg,
                   lateral=lateral)


def crash_check(track: Track, state: CarState, cfg: EpisodeConfig) -> bool:
    """True while the car body stays inside the corridor."""
    if not track.inside_state(state):
        return False
    return track.wall_distance(state.x, state.y) >= cfg.car_radius


def run_episode(controller, track: Track, cfg: EpisodeConfig,
                lidar: LidarConfig | None = None,
                backend: snn.CrossbarBackend | None = None,
                trajectory: list | None = None,
                actions: list | None = None) -> float:
    """Drive a controller around the track and score lap completion.

    ``controller`` is a spiking Network (scanned observations are
    rate-coded and run for one decision window per control period) or,
    for oracle tests, any callable mapping the 10 observation values to
    a (steering, speed) pair.  The score is the completed fraction of
    ``laps_target`` laps, clamped to [0, 1]; it never decreases during
    the episode.
    """
    lidar = lidar or LidarConfig()
    if lidar.beams != snn.LIDAR_BEAMS:
        raise ValueError(f"episodes use the {snn.LIDAR_BEAMS}-beam sensor")
    state = track.start_pose()
    is_net = isinstance(controller, snn.Network)
    if is_net:
        comp = controller.compiled()
        n_inputs = len(controller.input_ids)
        if n_inputs < snn.OBS_CHANNELS:
            raise ValueError(f"controller needs >= {snn.OBS_CHANNELS} inputs")
    target = cfg.laps_target * track.length
    per_region = snn.LIDAR_BEAMS // snn.OBS_CHANNELS
    best_progress = 0.0
    alive = True
    for k in range(cfg.max_steps):
        beams = lidar_scan(track, state, lidar)
        obs = beams.reshape(snn.OBS_CHANNELS, per_region).max(axis=1)
        if is_net:
            trains = snn.to_spike_trains(obs, cfg.window_steps, lidar.max_range)
            if n_inputs > snn.OBS_CHANNELS:
                pad = np.zeros((n_inputs - snn.OBS_CHANNELS, cfg.window_steps))
                trains = np.vstack([trains, pad])
            counts = snn._window_counts(comp, trains, cfg.window_steps, backend)
            steer, speed = snn._decide(comp, counts)
        else:
            steer, speed = controller(obs)
        if actions is not None:
            actions.append((steer, speed))
        state = step(track, state, steer, speed, cfg)
        alive = crash_check(track, state, cfg)
        if trajectory is not None:
            trajectory.append(((k + 1) * cfg.dt, state.x, state.y,
                               state.heading, state.speed, steer, int(alive)))
        best_progress = max(best_progress, state.progress)
        if not alive or best_progress >= target:
            break
    return min(max(best_progress / target, 0.0), 1.0)


def write_trajectory_csv(rows, dest: TextIO | str) -> None:
    own = isinstance(dest, str)
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_CSV_HEADER)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])
    finally:
        if own:
            fh.close()
