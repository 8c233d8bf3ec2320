"""Discrete-time spiking network runtime.

Non-leaky integrate-and-fire neurons with per-neuron thresholds, signed
weighted synapses with integer delays (>= 1 step), and recurrent
connectivity anywhere.  A neuron fires when its potential reaches its
threshold, then resets to zero; potentials persist across steps within a
decision window and are cleared between windows.

Synaptic accumulation is pluggable: the exact backend sums the weight
matrix directly, the crossbar backend performs the same sum through a
simulated differential RRAM array one timestep at a time.

Sensor plumbing lives here too: collapsing a 960-beam LIDAR scan into 10
region maxima, deterministic rate coding into spike trains, and argmax
decoding of the output spike counts into a steering/speed action pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numba import njit

from . import xbar as xb
from .device import DeviceParams

__all__ = [
    "Neuron",
    "Synapse",
    "Network",
    "ActionTables",
    "SpikeCounts",
    "OutputCount",
    "CrossbarBackend",
    "BackendFault",
    "WrongBeamCount",
    "ParseError",
    "run_window",
    "encode_observation",
    "to_spike_trains",
    "decode_action",
    "prune",
    "serialize",
    "deserialize",
]

LIDAR_BEAMS = 960
OBS_CHANNELS = 10

NETWORK_FORMAT = "bulkrram-network"
NETWORK_VERSION = 1


class BackendFault(RuntimeError):
    """A synaptic-accumulation backend failed mid-window."""


class WrongBeamCount(ValueError):
    """The LIDAR scan does not have exactly 960 beams."""


class ParseError(ValueError):
    """A network file failed to parse; message carries the position."""


@dataclass(frozen=True)
class Neuron:
    id: int
    kind: str  # "input" | "hidden" | "output"
    threshold: float

    def __post_init__(self) -> None:
        if self.kind not in ("input", "hidden", "output"):
            raise ValueError(f"bad neuron kind {self.kind!r}")
        if not math.isfinite(self.threshold) or self.threshold <= 0.0:
            raise ValueError("thresholds must be positive and finite")


@dataclass(frozen=True)
class Synapse:
    pre: int
    post: int
    weight: float
    delay: int = 1

    def __post_init__(self) -> None:
        if abs(self.weight) > 1.0:
            raise ValueError("synapse weights must lie in [-1, 1]")
        if not isinstance(self.delay, int) or self.delay < 1:
            raise ValueError("delays are integers >= 1")


@dataclass(frozen=True)
class ActionTables:
    """The discrete steering and speed values the controller can emit."""

    steering: tuple[float, ...] = (
        0.0, -0.01, 0.01, -0.03, 0.03, -0.05, 0.05, -0.07, 0.07,
        -0.1, 0.1, -0.13, 0.13, -0.15, 0.15, -0.17, 0.17, -0.2, 0.2,
        -0.23, 0.23, -0.25, 0.25, -0.27, 0.27, -0.3, 0.3, -0.34, 0.34,
    )
    speed: tuple[float, ...] = (
        1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0,
    )

    def table(self, group: str) -> tuple[float, ...]:
        if group == "steering":
            return self.steering
        if group == "speed":
            return self.speed
        raise ValueError(f"unknown output group {group!r}")


@dataclass(frozen=True)
class Network:
    """An immutable spiking network plus its action-table bindings.

    ``outputs`` binds output-neuron ids to (group, table index) pairs.
    Construction normalizes ordering, so equal networks compare and
    serialize identically.
    """

    neurons: tuple[Neuron, ...]
    synapses: tuple[Synapse, ...]
    outputs: tuple[tuple[int, str, int], ...]

    def __post_init__(self) -> None:
        neurons = tuple(sorted(self.neurons, key=lambda n: n.id))
        synapses = tuple(sorted(self.synapses,
                                key=lambda s: (s.pre, s.post, s.delay, s.weight)))
        outputs = tuple(sorted(self.outputs))
        object.__setattr__(self, "neurons", neurons)
        object.__setattr__(self, "synapses", synapses)
        object.__setattr__(self, "outputs", outputs)

        ids = [n.id for n in neurons]
        if len(set(ids)) != len(ids):
            raise ValueError("neuron ids must be unique")
        known = set(ids)
        for s in synapses:
            if s.pre not in known or s.post not in known:
                raise ValueError(f"synapse {s.pre}->{s.post} references a "
                                 "missing neuron")
        kinds = {n.id: n.kind for n in neurons}
        tables = ActionTables()
        bound = set()
        for nid, group, index in outputs:
            if kinds.get(nid) != "output":
                raise ValueError(f"binding for non-output neuron {nid}")
            if not 0 <= index < len(tables.table(group)):
                raise ValueError(f"binding index {index} out of range for {group}")
            if nid in bound:
                raise ValueError(f"duplicate binding for neuron {nid}")
            bound.add(nid)
        for n in neurons:
            if n.kind == "output" and n.id not in bound:
                raise ValueError(f"output neuron {n.id} has no binding")

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.neurons if n.kind == "input")

    @property
    def output_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.neurons if n.kind == "output")

    @property
    def hidden_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.neurons if n.kind == "hidden")

    def compiled(self) -> "_Compiled":
        cached = getattr(self, "_compiled", None)
        if cached is None:
            cached = _Compiled(self)
            object.__setattr__(self, "_compiled", cached)
        return cached


class _Compiled:
    """Dense array form of a network, built once and reused per window."""

    def __init__(self, net: Network):
        self.net = net
        ids = [n.id for n in net.neurons]
        self.index = {nid: k for k, nid in enumerate(ids)}
        self.n = len(ids)
        self.is_input = np.array([n.kind == "input" for n in net.neurons])
        self.input_pos = np.flatnonzero(self.is_input).astype(np.int64)
        self.thresholds = np.array([n.threshold for n in net.neurons])
        self.max_delay = max((s.delay for s in net.synapses), default=1)
        # w[d-1, pre, post]; charges aimed at input neurons have no effect
        self.w = np.zeros((self.max_delay, self.n, self.n))
        for s in net.synapses:
            if self.is_input[self.index[s.post]]:
                continue
            self.w[s.delay - 1, self.index[s.pre], self.index[s.post]] += s.weight
        self.out_pos = np.array([self.index[nid] for nid, _, _ in net.outputs],
                                dtype=np.int64)
        self.out_bindings = [(group, index) for _, group, index in net.outputs]
        # stacked (delay-major) form used by matrix backends
        self.w_stack = self.w.reshape(self.max_delay * self.n, self.n)
        # per-group decode tables ordered by table index (argmax then takes
        # the lowest index on ties)
        tables = ActionTables()
        self.group_pos = {}
        self.group_values = {}
        for group in ("steering", "speed"):
            bound = sorted((index, self.index[nid])
                           for nid, g, index in net.outputs if g == group)
            self.group_pos[group] = np.array([p for _, p in bound],
                                             dtype=np.int64)
            table = tables.table(group)
            self.group_values[group] = np.array([table[i] for i, _ in bound])


class OutputCount(NamedTuple):
    neuron_id: int
    group: str
    index: int
    count: int


@dataclass(frozen=True)
class SpikeCounts:
    """Output spike counts over one decision window."""

    entries: tuple[OutputCount, ...]
    window: int

    def group(self, name: str) -> list[OutputCount]:
        return [e for e in self.entries if e.group == name]


@njit(cache=True)
def _window_exact(w, thresholds, is_input, input_pos, trains, t_steps):
    d_max, n, _ = w.shape
    spikes = np.zeros((t_steps, n))
    p = np.zeros(n)
    fired = np.zeros((t_steps, n), dtype=np.int64)
    for t in range(t_steps):
        for k in range(input_pos.shape[0]):
            if trains[k, t] != 0.0:
                spikes[t, input_pos[k]] = 1.0
        for d in range(1, d_max + 1):
            ts = t - d
            if ts < 0:
                continue
            for pre in range(n):
                if spikes[ts, pre] != 0.0:
                    for post in range(n):
                        p[post] += w[d - 1, pre, post]
        for k in range(n):
            if is_input[k]:
                p[k] = 0.0
            elif p[k] >= thresholds[k]:
                p[k] = 0.0
                spikes[t, k] = 1.0
                fired[t, k] = 1
    return fired


def run_window(net: Network, input_spikes: np.ndarray, t_steps: int = 50,
               backend: "CrossbarBackend | None" = None) -> SpikeCounts:
    """Simulate one decision window and count output spikes.

    ``input_spikes`` is an (n_inputs, t_steps) 0/1 array ordered by input
    neuron id.  State does not leak between calls.  ``backend=None``
    accumulates synaptic charge exactly; a CrossbarBackend routes the
    same accumulation through the simulated array.
    """
    comp = net.compiled()
    trains = np.asarray(input_spikes, dtype=float)
    n_in = len(comp.input_pos)
    if trains.ndim != 2 or trains.shape != (n_in, t_steps):
        raise ValueError(f"input_spikes must be ({n_in}, {t_steps})")
    counts = _window_counts(comp, trains, t_steps, backend)
    entries = tuple(
        OutputCount(nid, group, index, int(counts[comp.index[nid]]))
        for (nid, group, index) in net.outputs)
    return SpikeCounts(entries, t_steps)


def _window_counts(comp: "_Compiled", trains: np.ndarray, t_steps: int,
                   backend) -> np.ndarray:
    if backend is None:
        fired = _window_exact(comp.w, comp.thresholds, comp.is_input,
                              comp.input_pos, trains, t_steps)
    else:
        fired = _window_backend(comp, trains, t_steps, backend)
    return fired.sum(axis=0)


def _decide(comp: "_Compiled", counts: np.ndarray) -> tuple[float, float]:
    """Argmax decode straight from a per-neuron count array; matches
    decode_action on the equivalent SpikeCounts."""
    out = []
    for group, default in (("steering", 0.0), ("speed", 1.0)):
        pos = comp.group_pos[group]
        if pos.size:
            c = counts[pos]
            k = int(np.argmax(c))
            out.append(float(comp.group_values[group][k]) if c[k] > 0
                       else default)
        else:
            out.append(default)
    return out[0], out[1]


def _window_backend(comp: _Compiled, trains, t_steps, backend) -> np.ndarray:
    n, d_max = comp.n, comp.max_delay
    spikes = np.zeros((t_steps, n))
    p = np.zeros(n)
    fired = np.zeros((t_steps, n), dtype=np.int64)
    x_stack = np.zeros(d_max * n)
    for t in range(t_steps):
        spikes[t, comp.input_pos] = (trains[:, t] != 0.0)
        for d in range(1, d_max + 1):
            ts = t - d
            block = spikes[ts] if ts >= 0 else 0.0
            x_stack[(d - 1) * n: d * n] = block
        p += backend.accumulate(x_stack)
        p[comp.is_input] = 0.0
        fire = (p >= comp.thresholds) & ~comp.is_input
        p[fire] = 0.0
        spikes[t, fire] = 1.0
        fired[t, fire] = 1
    return fired


class CrossbarBackend:
    """Synaptic accumulation through a simulated differential crossbar.

    The stacked delay-major weight matrix (one row block per delay) is
    mapped onto row pairs; each timestep performs one differential MVM
    on the stacked recent-spike vector.  ``rng`` enables read noise.
    """

    def __init__(self, crossbar: xb.Crossbar | None, post_pos: np.ndarray,
                 n_neurons: int, rng: np.random.Generator | None = None):
        self.crossbar = crossbar
        self.post_pos = post_pos
        self.n_neurons = n_neurons
        self.rng = rng

    @classmethod
    def for_network(cls, net: Network, params: DeviceParams,
                    line_r: float = 0.0, rng: np.random.Generator | None = None,
                    programming: str = "ideal",
                    seed: int | None = None) -> "CrossbarBackend":
        """Map a network's weights onto a fresh simulated crossbar.

        ``programming`` selects how conductance targets are realized:
        "ideal" assigns them exactly, "closed-loop" and "open-loop" run
        the corresponding pulse programming (with per-device spread when
        ``seed`` is given).
        """
        comp = net.compiled()
        post_pos = np.flatnonzero(~comp.is_input).astype(np.int64)
        if post_pos.size == 0:
            return cls(None, post_pos, comp.n, rng)
        w = comp.w_stack[:, post_pos]
        rows, cols = 2 * w.shape[0], w.shape[1]
        config = xb.CrossbarConfig(rows=rows, cols=cols, line_r=line_r,
                                   v_read_amp=params.v_read)
        if seed is None:
            crossbar = xb.Crossbar.ideal(config, params)
        else:
            crossbar = xb.Crossbar.sampled(config, params, seed=seed)
        if programming == "ideal":
            crossbar.set_weights(w)
        else:
            g_plus, g_minus = xb.encode_differential(w, params)
            targets = np.empty((rows, cols))
            targets[0::2] = g_plus
            targets[1::2] = g_minus
            if programming == "closed-loop":
                tol = xb.default_diff_g_min(params) / 2.0
                xb.program_weights(crossbar, targets, xb.ClosedLoop(tolerance=tol))
            elif programming == "open-loop":
                xb.program_weights(crossbar, targets, xb.OpenLoop())
            else:
                raise ValueError(f"unknown programming mode {programming!r}")
        return cls(crossbar, post_pos, comp.n, rng)

    def accumulate(self, x_stack: np.ndarray) -> np.ndarray:
        if self.crossbar is None:
            return np.zeros(self.n_neurons)
        try:
            y = xb.mvm_differential(self.crossbar, x_stack, rng=self.rng)
        except (xb.AllZeroConductance, ValueError) as exc:
            raise BackendFault(str(exc)) from exc
        charge = np.zeros(self.n_neurons)
        charge[self.post_pos] = y
        return charge


def encode_observation(beams: Sequence[float]) -> np.ndarray:
    """Collapse a 960-beam scan into the 10 per-region maxima."""
    arr = np.asarray(beams, dtype=float)
    if arr.shape != (LIDAR_BEAMS,):
        raise WrongBeamCount(f"expected {LIDAR_BEAMS} beams, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("beam distances must be finite and nonnegative")
    return arr.reshape(OBS_CHANNELS, LIDAR_BEAMS // OBS_CHANNELS).max(axis=1)


@njit(cache=True)
def _rate_code(vals, t_steps):
    trains = np.zeros((vals.shape[0], t_steps))
    for r in range(vals.shape[0]):
        frac = vals[r]
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        n = int(math.floor(t_steps * frac + 0.5))
        for k in range(n):
            trains[r, (k * t_steps) // n] = 1.0
    return trains


def to_spike_trains(values: Sequence[float], t_steps: int,
                    d_max: float) -> np.ndarray:
    """Deterministic rate coding of observation values.

    Each value yields round(t_steps * clamp(value / d_max, 0, 1)) spikes
    placed evenly across the window at floor(k * t_steps / n).
    """
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    vals = np.asarray(values, dtype=float)
    return _rate_code(vals / d_max, t_steps)


def decode_action(counts: SpikeCounts,
                  tables: ActionTables | None = None) -> tuple[float, float]:
    """Argmax spike counts within each output group.

    Ties break toward the lowest table index; a group with no outputs or
    no spikes at all selects index 0 (steering 0.0, speed 1.0).
    """
    tables = tables or ActionTables()
    action = []
    for group in ("steering", "speed"):
        table = tables.table(group)
        entries = counts.group(group)
        best_index = 0
        if entries and any(e.count > 0 for e in entries):
            best = max(entries, key=lambda e: (e.count, -e.index))
            best_index = best.index
        action.append(table[best_index])
    return action[0], action[1]


def prune(net: Network) -> Network:
    """Drop neurons and synapses that cannot influence any output.

    Keeps every input neuron (the sensor interface), every output on a
    directed path from an input, and every hidden neuron that is both
    reachable from an input and able to reach an output.  Behavior over
    any stimulus is unchanged: removed neurons either can never fire or
    never touch a kept neuron.
    """
    fwd_edges: dict[int, set[int]] = {}
    bwd_edges: dict[int, set[int]] = {}
    for s in net.synapses:
        fwd_edges.setdefault(s.pre, set()).add(s.post)
        bwd_edges.setdefault(s.post, set()).add(s.pre)

    def reach(seeds: Iterable[int], edges: dict[int, set[int]]) -> set[int]:
        seen = set(seeds)
        frontier = list(seen)
        while frontier:
            nxt = frontier.pop()
            for other in edges.get(nxt, ()):
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        return seen

    fwd = reach(net.input_ids, fwd_edges)
    bwd = reach(net.output_ids, bwd_edges)
    keep = set(net.input_ids)
    keep.update(nid for nid in net.output_ids if nid in fwd)
    keep.update(nid for nid in net.hidden_ids if nid in fwd and nid in bwd)

    kinds = {n.id: n.kind for n in net.neurons}
    neurons = tuple(n for n in net.neurons if n.id in keep)
    synapses = tuple(s for s in net.synapses
                     if s.pre in keep and s.post in keep
                     and kinds[s.post] != "input")
    outputs = tuple(b for b in net.outputs if b[0] in keep)
    return Network(neurons, synapses, outputs)


def serialize(net: Network) -> str:
    """Canonical JSON text; equal networks serialize byte-identically."""
    doc = {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "neurons": [{"id": n.id, "kind": n.kind, "threshold": n.threshold}
                    for n in net.neurons],
        "synapses": [{"pre": s.pre, "post": s.post, "weight": s.weight,
                      "delay": s.delay} for s in net.synapses],
        "outputs": [{"id": nid, "group": group, "index": index}
                    for nid, group, index in net.outputs],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def deserialize(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != NETWORK_FORMAT:
        raise ParseError("not a network file (missing format marker)")
    if doc.get("version") != NETWORK_VERSION:
        raise ParseError(f"unsupported network file version {doc.get('version')!r}")
    try:
        neurons = tuple(Neuron(int(n["id"]), str(n["kind"]), float(n["threshold"]))
                        for n in doc["neurons"])
        synapses = tuple(Synapse(int(s["pre"]), int(s["post"]),
                                 float(s["weight"]), int(s["delay"]))
                         for s in doc["synapses"])
        outputs = tuple((int(b["id"]), str(b["group"]), int(b["index"]))
                        for b in doc["outputs"])
        return Network(neurons, synapses, outputs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad network structure: {exc}") from None


def quantize_network(net: Network, bits: int = 4) -> Network:
    """Copy of the network with weights snapped to the signed grid."""
    synapses = tuple(Synapse(s.pre, s.post, float(xb.quantize(s.weight, bits)),
                             s.delay) for s in net.synapses)
    return Network(net.neurons, synapses, net.outputs)
