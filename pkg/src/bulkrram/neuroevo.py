"""Evolutionary search over spiking-network genomes.

A genome is a bag of node and edge genes keyed by innovation number; the
sensor and action interface occupies a fixed block of innovation ids
shared by every genome, so crossover can align genes across lineages.
Each generation evaluates the population on racing episodes (or any
injected fitness function), selects parents by tournament, and breeds
offspring through crossover, weight/threshold/topology mutations, and
node duplication.  Elites carry over unchanged, so best-so-far fitness
never decreases.

Everything is driven by one seeded generator in the main process;
fitness evaluation is deterministic per genome, so traces are identical
no matter how many worker processes evaluate the population.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import raceway, snn

__all__ = [
    "NodeGene",
    "EdgeGene",
    "Genome",
    "EvolutionConfig",
    "FitnessRecord",
    "EvolutionResult",
    "init_population",
    "evaluate",
    "tournament_select",
    "crossover",
    "mutate",
    "evolve",
    "save_checkpoint",
    "load_checkpoint",
    "INPUT_IDS",
    "OUTPUT_BINDINGS",
]

# Fixed interface block: inputs 0..9, steering outputs 10..38, speed
# outputs 39..49.  Hidden nodes use innovations from 50 up.
INPUT_IDS = tuple(range(10))
_N_STEER = 29
_N_SPEED = 11
OUTPUT_BINDINGS = {
    **{10 + k: ("steering", k) for k in range(_N_STEER)},
    **{10 + _N_STEER + k: ("speed", k) for k in range(_N_SPEED)},
}
FIRST_HIDDEN_ID = 10 + _N_STEER + _N_SPEED


@dataclass(frozen=True)
class NodeGene:
    innovation: int
    kind: str  # "input" | "hidden" | "output"
    threshold: float


@dataclass(frozen=True)
class EdgeGene:
    innovation: int
    pre: int
    post: int
    weight: float
    delay: int
    enabled: bool = True


@dataclass(frozen=True)
class Genome:
    id: int
    nodes: tuple[NodeGene, ...]
    edges: tuple[EdgeGene, ...]

    def decode(self) -> snn.Network:
        """Build the runnable network from the enabled genes."""
        neurons = tuple(snn.Neuron(n.innovation, n.kind, n.threshold)
                        for n in self.nodes)
        present = {n.innovation for n in self.nodes}
        synapses = tuple(snn.Synapse(e.pre, e.post, e.weight, e.delay)
                         for e in self.edges
                         if e.enabled and e.pre in present and e.post in present)
        outputs = tuple((n.innovation, *OUTPUT_BINDINGS[n.innovation])
                        for n in self.nodes if n.kind == "output")
        return snn.Network(neurons, synapses, outputs)

    def node_map(self) -> dict[int, NodeGene]:
        return {n.innovation: n for n in self.nodes}

    def edge_map(self) -> dict[int, EdgeGene]:
        return {e.innovation: e for e in self.edges}


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    generations: int = 200
    tournament_size: int = 4
    crossover_rate: float = 0.75
    mutation_rate: float = 0.9
    duplication_rate: float = 0.05
    elitism: int = 1
    seed: int = 0
    # mutation mixture
    p_weight: float = 0.8
    weight_sigma: float = 0.1
    p_threshold: float = 0.4
    threshold_sigma: float = 0.1
    p_add_edge: float = 0.3
    p_del_edge: float = 0.1
    p_add_node: float = 0.06
    p_del_node: float = 0.04
    duplication_damping: float = 0.5
    # genesis
    init_hidden_max: int = 2
    init_edges: int = 40
    delay_max: int = 4
    # execution
    threads: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.tournament_size <= self.population:
            raise ValueError("need population >= tournament_size >= 1")
        for name in ("crossover_rate", "mutation_rate", "duplication_rate",
                     "p_weight", "p_threshold", "p_add_edge", "p_del_edge",
                     "p_add_node", "p_del_node"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be in [0, population)")
        if self.generations < 0 or self.delay_max < 1 or self.threads < 1:
            raise ValueError("bad generations, delay_max, or threads")


@dataclass(frozen=True)
class FitnessRecord:
    per_track: tuple[float, ...]
    mean: float = field(init=False)

    def __post_init__(self) -> None:
        mean = sum(self.per_track) / len(self.per_track) if self.per_track else 0.0
        object.__setattr__(self, "mean", mean)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float


@dataclass
class EvolutionResult:
    best_genome: Genome
    best_fitness: float
    best_record: FitnessRecord
    trace: list[GenerationStats]
    population: list[Genome]


def _interface_nodes(rng: np.random.Generator) -> list[NodeGene]:
    nodes = [NodeGene(i, "input", 1.0) for i in INPUT_IDS]
    nodes += [NodeGene(i, "output", float(1.0 - rng.random()))
              for i in OUTPUT_BINDINGS]
    return nodes


def init_population(cfg: EvolutionConfig,
                    rng: np.random.Generator | None = None
                    ) -> tuple[list[Genome], int]:
    """Seeded random genomes over the fixed interface.

    Returns the population and the next free innovation id.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    population = []
    next_innov = FIRST_HIDDEN_ID
    next_edge_innov = 1_000_000  # edge innovations live in their own block
    for g in range(cfg.population):
        nodes = _interface_nodes(rng)
        n_hidden = int(rng.integers(0, cfg.init_hidden_max + 1))
        for _ in range(n_hidden):
            nodes.append(NodeGene(next_innov, "hidden",
                                  float(1.0 - rng.random())))
            next_innov += 1
        ids = [n.innovation for n in nodes]
        posts = [n.innovation for n in nodes if n.kind != "input"]
        edges = []
        seen = set()
        for _ in range(cfg.init_edges):
            pre = int(rng.choice(ids))
            post = int(rng.choice(posts))
            if (pre, post) in seen:
                continue
            seen.add((pre, post))
            edges.append(EdgeGene(next_edge_innov, pre, post,
                                  float(rng.uniform(-1.0, 1.0)),
                                  int(rng.integers(1, cfg.delay_max + 1))))
            next_edge_innov += 1
        population.append(Genome(g, tuple(nodes), tuple(edges)))
    return population, max(next_innov, next_edge_innov)


def evaluate(genome: Genome, tracks: Sequence[raceway.Track],
             env_cfg: raceway.EpisodeConfig,
             lidar: raceway.LidarConfig | None = None,
             backend: snn.CrossbarBackend | None = None) -> FitnessRecord:
    """One episode per track; the record's mean is the training fitness."""
    if not tracks:
        raise ValueError("need at least one track")
    net = genome.decode()
    scores = tuple(raceway.run_episode(net, t, env_cfg, lidar=lidar,
                                       backend=backend) for t in tracks)
    return FitnessRecord(scores)


def tournament_select(population: Sequence[Genome], fitnesses: Sequence[float],
                      k: int, rng: np.random.Generator) -> Genome:
    """Best of k distinct uniformly drawn individuals; ties favor the
    lower genome id."""
    if k > len(population):
        raise ValueError("tournament larger than the population")
    picks = rng.choice(len(population), size=k, replace=False)
    best = min(picks, key=lambda i: (-fitnesses[i], population[i].id))
    return population[int(best)]


def crossover(a: Genome, b: Genome, fit_a: float, fit_b: float,
              rng: np.random.Generator, child_id: int) -> Genome:
    """Recombine two genomes, aligning genes by innovation id.

    Matching genes are inherited from a random parent; disjoint and
    excess genes come from the fitter parent (ties favor the first).
    """
    fitter, other = (a, b) if fit_a >= fit_b else (b, a)
    other_nodes = other.node_map()
    nodes = []
    for n in fitter.nodes:
        twin = other_nodes.get(n.innovation)
        nodes.append(n if twin is None or rng.random() < 0.5 else
                     replace(twin, kind=n.kind))
    other_edges = other.edge_map()
    present = {n.innovation for n in nodes}
    edges = []
    for e in fitter.edges:
        twin = other_edges.get(e.innovation)
        pick = e if twin is None or rng.random() < 0.5 else twin
        if pick.pre in present and pick.post in present:
            edges.append(pick)
    return Genome(child_id, tuple(nodes), tuple(edges))


def mutate(g: Genome, cfg: EvolutionConfig, rng: np.random.Generator,
           next_innov: int, child_id: int | None = None) -> tuple[Genome, int]:
    """Apply the mutation mixture; returns the genome and the next free
    innovation id.  All-zero rates return the genome unchanged."""
    nodes = list(g.nodes)
    edges = list(g.edges)

    if cfg.p_weight > 0:
        for i, e in enumerate(edges):
            if rng.random() < cfg.p_weight:
                w = e.weight + rng.normal(0.0, cfg.weight_sigma)
                edges[i] = replace(e, weight=float(np.clip(w, -1.0, 1.0)))
    if cfg.p_threshold > 0:
        for i, n in enumerate(nodes):
            if n.kind != "input" and rng.random() < cfg.p_threshold:
                t = n.threshold + rng.normal(0.0, cfg.threshold_sigma)
                nodes[i] = replace(n, threshold=float(np.clip(t, 1e-3, 1.0)))

    if rng.random() < cfg.p_add_edge:
        ids = [n.innovation for n in nodes]
        posts = [n.innovation for n in nodes if n.kind != "input"]
        seen = {(e.pre, e.post) for e in edges}
        for _ in range(8):
            pre = int(rng.choice(ids))
            post = int(rng.choice(posts))
            if (pre, post) not in seen:
                edges.append(EdgeGene(next_innov, pre, post,
                                      float(rng.uniform(-1.0, 1.0)),
                                      int(rng.integers(1, cfg.delay_max + 1))))
                next_innov += 1
                break
    if edges and rng.random() < cfg.p_del_edge:
        del edges[int(rng.integers(len(edges)))]

    enabled = [i for i, e in enumerate(edges) if e.enabled]
    if enabled and rng.random() < cfg.p_add_node:
        i = int(rng.choice(enabled))
        old = edges[i]
        edges[i] = replace(old, enabled=False)
        new_node = NodeGene(next_innov, "hidden", float(1.0 - rng.random()))
        nodes.append(new_node)
        edges.append(EdgeGene(next_innov + 1, old.pre, new_node.innovation,
                              1.0, 1))
        edges.append(EdgeGene(next_innov + 2, new_node.innovation, old.post,
                              old.weight, old.delay))
        next_innov += 3
    hidden = [n for n in nodes if n.kind == "hidden"]
    if hidden and rng.random() < cfg.p_del_node:
        victim = hidden[int(rng.integers(len(hidden)))].innovation
        nodes = [n for n in nodes if n.innovation != victim]
        edges = [e for e in edges if victim not in (e.pre, e.post)]

    return (Genome(g.id if child_id is None else child_id,
                   tuple(nodes), tuple(edges)), next_innov)


def duplicate_node(g: Genome, cfg: EvolutionConfig, rng: np.random.Generator,
                   next_innov: int) -> tuple[Genome, int]:
    """Copy a random node as a hidden twin with damped incident edges."""
    candidates = [n for n in g.nodes if n.kind != "input"]
    if not candidates:
        return g, next_innov
    src = candidates[int(rng.integers(len(candidates)))]
    twin = NodeGene(next_innov, "hidden", src.threshold)
    next_innov += 1
    edges = list(g.edges)
    for e in g.edges:
        if not e.enabled:
            continue
        damp = cfg.duplication_damping
        if e.pre == src.innovation:
            edges.append(EdgeGene(next_innov, twin.innovation, e.post,
                                  float(e.weight * damp), e.delay))
            next_innov += 1
        if e.post == src.innovation:
            edges.append(EdgeGene(next_innov, e.pre, twin.innovation,
                                  float(e.weight * damp), e.delay))
            next_innov += 1
    return Genome(g.id, (*g.nodes, twin), tuple(edges)), next_innov


_WORKER_STATE: dict = {}


def _worker_init(tracks_payload, env_cfg, lidar):
    _WORKER_STATE["tracks"] = [raceway.Track(*t) for t in tracks_payload]
    _WORKER_STATE["env"] = env_cfg
    _WORKER_STATE["lidar"] = lidar


def _worker_eval(genome: Genome) -> FitnessRecord:
    return evaluate(genome, _WORKER_STATE["tracks"], _WORKER_STATE["env"],
                    _WORKER_STATE["lidar"])


def evolve(cfg: EvolutionConfig, tracks: Sequence[raceway.Track] | None = None,
           env_cfg: raceway.EpisodeConfig | None = None,
           lidar: raceway.LidarConfig | None = None,
           fitness_fn: Callable[[Genome], FitnessRecord] | None = None,
           checkpoint_path: str | None = None,
           resume: bool = False,
           on_generation: Callable[[GenerationStats], None] | None = None,
           ) -> EvolutionResult:
    """Run the generational loop and return the best genome found.

    Fitness defaults to racing episodes over ``tracks``; pass
    ``fitness_fn`` to optimize any other deterministic objective.
    Identical (seed, tracks) produce identical traces regardless of
    ``cfg.threads``.
    """
    if fitness_fn is None:
        if not tracks:
            raise ValueError("need tracks or an explicit fitness_fn")
        env_cfg = env_cfg or raceway.EpisodeConfig()

    rng = np.random.default_rng(cfg.seed)
    population, next_innov = init_population(cfg, rng)
    next_id = cfg.population
    start_gen = 0
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        population, rng, next_innov, next_id, start_gen = load_checkpoint(
            checkpoint_path)

    cache: dict[int, FitnessRecord] = {}
    pool = None
    if fitness_fn is None and cfg.threads > 1:
        payload = [(t.xy, t.w_left, t.w_right, t.name) for t in tracks]
        pool = ProcessPoolExecutor(max_workers=cfg.threads,
                                   initializer=_worker_init,
                                   initargs=(payload, env_cfg, lidar))

    def eval_population(pop: list[Genome]) -> list[FitnessRecord]:
        missing = [g for g in pop if g.id not in cache]
        if fitness_fn is not None:
            fresh = [fitness_fn(g) for g in missing]
        elif pool is not None:
            fresh = list(pool.map(_worker_eval, missing, chunksize=1))
        else:
            fresh = [evaluate(g, tracks, env_cfg, lidar) for g in missing]
        for g, record in zip(missing, fresh):
            cache[g.id] = record
        return [cache[g.id] for g in pop]

    trace: list[GenerationStats] = []
    best_genome = population[0]
    best_record = FitnessRecord((float("-inf"),))
    try:
        records = eval_population(population)
        for gen in range(start_gen, cfg.generations + 1):
            fits = [r.mean for r in records]
            order = sorted(range(len(population)),
                           key=lambda i: (-fits[i], population[i].id))
            if records[order[0]].mean > best_record.mean:
                best_genome = population[order[0]]
                best_record = records[order[0]]
            stats = GenerationStats(gen, records[order[0]].mean,
                                    float(np.mean(fits)))
            trace.append(stats)
            if on_generation is not None:
                on_generation(stats)
            if checkpoint_path:
                save_checkpoint(checkpoint_path, population, rng, next_innov,
                                next_id, gen)
            if gen == cfg.generations:
                break

            offspring = [population[i] for i in order[:cfg.elitism]]
            while len(offspring) < cfg.population:
                p1 = tournament_select(population, fits, cfg.tournament_size, rng)
                if rng.random() < cfg.crossover_rate:
                    p2 = tournament_select(population, fits,
                                           cfg.tournament_size, rng)
                    child = crossover(p1, p2, cache[p1.id].mean,
                                      cache[p2.id].mean, rng, next_id)
                else:
                    child = Genome(next_id, p1.nodes, p1.edges)
                next_id += 1
                if rng.random() < cfg.mutation_rate:
                    child, next_innov = mutate(child, cfg, rng, next_innov)
                if rng.random() < cfg.duplication_rate:
                    child, next_innov = duplicate_node(child, cfg, rng,
                                                       next_innov)
                offspring.append(child)
            population = offspring
            records = eval_population(population)
    finally:
        if pool is not None:
            pool.shutdown()
    return EvolutionResult(best_genome, best_record.mean, best_record,
                           trace, population)


def _genome_to_dict(g: Genome) -> dict:
    return {
        "id": g.id,
        "nodes": [[n.innovation, n.kind, n.threshold] for n in g.nodes],
        "edges": [[e.innovation, e.pre, e.post, e.weight, e.delay, e.enabled]
                  for e in g.edges],
    }


def _genome_from_dict(d: dict) -> Genome:
    nodes = tuple(NodeGene(int(i), str(k), float(t)) for i, k, t in d["nodes"])
    edges = tuple(EdgeGene(int(i), int(p), int(q), float(w), int(dl), bool(en))
                  for i, p, q, w, dl, en in d["edges"])
    return Genome(int(d["id"]), nodes, edges)


def save_checkpoint(path: str, population: list[Genome],
                    rng: np.random.Generator, next_innov: int, next_id: int,
                    generation: int) -> None:
    doc = {
        "format": "bulkrram-evolution-checkpoint",
        "version": 1,
        "generation": generation,
        "next_innovation": next_innov,
        "next_genome_id": next_id,
        "rng_state": rng.bit_generator.state,
        "population": [_genome_to_dict(g) for g in population],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "bulkrram-evolution-checkpoint":
        raise ValueError("not an evolution checkpoint file")
    population = [_genome_from_dict(d) for d in doc["population"]]
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return (population, rng, int(doc["next_innovation"]),
            int(doc["next_genome_id"]), int(doc["generation"]))
