import math

import numpy as np
import pytest

from bulkrram.neuroevo import (
    EvolutionConfig,
    FitnessRecord,
    Genome,
    OUTPUT_BINDINGS,
    crossover,
    duplicate_node,
    evaluate,
    evolve,
    init_population,
    load_checkpoint,
    mutate,
    tournament_select,
)
from bulkrram.raceway import EpisodeConfig, make_ring_track


def small_cfg(**kw):
    base = dict(population=12, generations=3, tournament_size=3, seed=1,
                init_edges=25)
    base.update(kw)
    return EvolutionConfig(**base)


def sum_weights_fitness(genome: Genome) -> FitnessRecord:
    total = sum(e.weight for e in genome.edges if e.enabled)
    return FitnessRecord((total,))


class TestGenesis:
    def test_same_seed_identical(self):
        cfg = small_cfg()
        a, _ = init_population(cfg)
        b, _ = init_population(cfg)
        assert a == b

    def test_population_size(self):
        pop, _ = init_population(small_cfg(population=17))
        assert len(pop) == 17

    def test_all_decode_valid(self):
        pop, _ = init_population(small_cfg(population=30))
        for g in pop:
            net = g.decode()
            assert len(net.input_ids) == 10
            assert len(net.output_ids) == 40

    def test_interface_bindings_cover_tables(self):
        groups = {}
        for _, (group, idx) in OUTPUT_BINDINGS.items():
            groups.setdefault(group, set()).add(idx)
        assert groups["steering"] == set(range(29))
        assert groups["speed"] == set(range(11))


class TestSelection:
    def test_full_tournament_returns_global_best(self):
        pop, _ = init_population(small_cfg())
        fits = list(np.linspace(0, 1, len(pop)))
        rng = np.random.default_rng(0)
        best = tournament_select(pop, fits, len(pop), rng)
        assert best is pop[-1]

    def test_k1_is_uniform(self):
        pop, _ = init_population(small_cfg())
        fits = [0.0] * len(pop)
        rng = np.random.default_rng(1)
        seen = {tournament_select(pop, fits, 1, rng).id for _ in range(400)}
        assert len(seen) == len(pop)

    def test_win_rate_matches_combinatorics(self):
        n, k = 12, 3
        pop, _ = init_population(small_cfg(population=n))
        fits = list(np.linspace(0, 1, n))
        rng = np.random.default_rng(2)
        wins = sum(tournament_select(pop, fits, k, rng) is pop[-1]
                   for _ in range(10_000))
        p = k / n  # P(best included in a k-of-n draw)
        sigma = math.sqrt(p * (1 - p) / 10_000)
        assert abs(wins / 10_000 - p) < 3 * sigma

    def test_tie_breaks_by_lower_id(self):
        pop, _ = init_population(small_cfg())
        fits = [1.0] * len(pop)
        rng = np.random.default_rng(3)
        picked = tournament_select(pop, fits, len(pop), rng)
        assert picked.id == min(g.id for g in pop)


class TestCrossover:
    def test_self_crossover_identity(self):
        pop, _ = init_population(small_cfg())
        g = pop[0]
        rng = np.random.default_rng(4)
        child = crossover(g, g, 0.5, 0.5, rng, child_id=999)
        assert child.nodes == g.nodes
        assert child.edges == g.edges
        assert child.id == 999

    def test_child_genes_subset_of_parents(self):
        pop, _ = init_population(small_cfg())
        rng = np.random.default_rng(5)
        a, b = pop[0], pop[1]
        child = crossover(a, b, 1.0, 0.5, rng, 100)
        parent_edges = {e.innovation for e in a.edges} | {
            e.innovation for e in b.edges}
        assert {e.innovation for e in child.edges} <= parent_edges
        parent_nodes = {n.innovation for n in a.nodes} | {
            n.innovation for n in b.nodes}
        assert {n.innovation for n in child.nodes} <= parent_nodes

    def test_interface_always_present_fuzz(self):
        pop, next_innov = init_population(small_cfg(population=20))
        cfg = small_cfg(population=20)
        rng = np.random.default_rng(6)
        genomes = list(pop)
        for k in range(300):
            i, j = rng.integers(len(genomes), size=2)
            child = crossover(genomes[int(i)], genomes[int(j)],
                              float(rng.random()), float(rng.random()),
                              rng, 1000 + k)
            child, next_innov = mutate(child, cfg, rng, next_innov)
            net = child.decode()
            assert len(net.input_ids) == 10
            assert len(net.output_ids) == 40
            genomes.append(child)


class TestMutation:
    def test_zero_rates_identity(self):
        pop, next_innov = init_population(small_cfg())
        cfg = small_cfg(p_weight=0, p_threshold=0, p_add_edge=0,
                        p_del_edge=0, p_add_node=0, p_del_node=0)
        rng = np.random.default_rng(7)
        out, _ = mutate(pop[0], cfg, rng, next_innov)
        assert out == pop[0]

    def test_weights_stay_clamped(self):
        pop, next_innov = init_population(small_cfg())
        cfg = small_cfg(p_weight=1.0, weight_sigma=1.5)
        rng = np.random.default_rng(8)
        g = pop[0]
        for _ in range(200):
            g, next_innov = mutate(g, cfg, rng, next_innov)
        assert all(abs(e.weight) <= 1.0 for e in g.edges)
        assert all(0 < n.threshold <= 1.0 for n in g.nodes
                   if n.kind != "input")

    def test_node_count_changes_only_via_node_ops(self):
        pop, next_innov = init_population(small_cfg())
        cfg = small_cfg(p_add_node=0, p_del_node=0)
        rng = np.random.default_rng(9)
        g = pop[0]
        for _ in range(100):
            g, next_innov = mutate(g, cfg, rng, next_innov)
        assert len(g.nodes) == len(pop[0].nodes)

    def test_duplicate_node_damps_edges(self):
        from bulkrram.neuroevo import EdgeGene, NodeGene
        g = Genome(0,
                   (NodeGene(0, "input", 1.0), NodeGene(10, "output", 0.5)),
                   (EdgeGene(1_000_000, 0, 10, 0.8, 2),))
        cfg = small_cfg()
        rng = np.random.default_rng(10)
        out, _ = duplicate_node(g, cfg, rng, next_innov=500)
        twin = out.nodes[-1]
        assert twin.kind == "hidden"
        assert twin.threshold == 0.5
        new_edges = [e for e in out.edges if e.post == twin.innovation]
        assert len(new_edges) == 1
        assert new_edges[0].weight == pytest.approx(0.4)
        assert new_edges[0].delay == 2

    def test_innovation_ids_unique_after_fuzz(self):
        pop, next_innov = init_population(small_cfg())
        cfg = small_cfg(p_add_node=0.5, p_add_edge=0.9, duplication_rate=0.3)
        rng = np.random.default_rng(11)
        g = pop[0]
        for _ in range(120):
            g, next_innov = mutate(g, cfg, rng, next_innov)
            g, next_innov = duplicate_node(g, cfg, rng, next_innov)
        edge_ids = [e.innovation for e in g.edges]
        node_ids = [n.innovation for n in g.nodes]
        assert len(set(edge_ids)) == len(edge_ids)
        assert len(set(node_ids)) == len(node_ids)


class TestEvolve:
    def test_generations_zero_returns_initial_best(self):
        cfg = small_cfg(generations=0)
        result = evolve(cfg, fitness_fn=sum_weights_fitness)
        pop, _ = init_population(cfg)
        expected = max(sum_weights_fitness(g).mean for g in pop)
        assert result.best_fitness == pytest.approx(expected)
        assert len(result.trace) == 1

    def test_best_trace_monotone(self):
        cfg = small_cfg(population=16, generations=12)
        result = evolve(cfg, fitness_fn=sum_weights_fitness)
        best = [s.best_fitness for s in result.trace]
        assert all(b >= a for a, b in zip(best, best[1:]))

    def test_trivial_landscape_mean_rises(self):
        cfg = small_cfg(population=20, generations=20, seed=5)
        result = evolve(cfg, fitness_fn=sum_weights_fitness)
        assert result.trace[-1].mean_fitness > result.trace[0].mean_fitness

    def test_deterministic_per_seed(self):
        cfg = small_cfg(population=10, generations=5, seed=9)
        a = evolve(cfg, fitness_fn=sum_weights_fitness)
        b = evolve(cfg, fitness_fn=sum_weights_fitness)
        assert a.trace == b.trace
        assert a.best_genome == b.best_genome

    def test_every_genome_decodes(self):
        seen = []
        cfg = small_cfg(population=10, generations=6, seed=2)

        def probing_fitness(genome: Genome) -> FitnessRecord:
            net = genome.decode()
            seen.append(len(net.neurons))
            return sum_weights_fitness(genome)

        evolve(cfg, fitness_fn=probing_fitness)
        assert len(seen) >= 10

    def test_checkpoint_round_trip(self, tmp_path):
        path = str(tmp_path / "ckpt.json")
        cfg = small_cfg(population=8, generations=4, seed=3)
        full = evolve(cfg, fitness_fn=sum_weights_fitness,
                      checkpoint_path=path)
        population, rng, next_innov, next_id, gen = load_checkpoint(path)
        assert gen == 4
        assert len(population) == 8
        assert all(isinstance(g, Genome) for g in population)
        assert full.trace[-1].generation == 4


class TestRaceEvaluation:
    def test_track_evaluation_smoke(self):
        track = make_ring_track(radius=2.9, half_width=1.0, points=36)
        cfg = EpisodeConfig(dt=0.02, max_steps=60)
        pop, _ = init_population(small_cfg(population=3))
        rec = evaluate(pop[0], [track, track], cfg)
        assert len(rec.per_track) == 2
        assert rec.per_track[0] == rec.per_track[1]  # duplicate track, equal
        assert 0.0 <= rec.mean <= 1.0

    def test_threads_do_not_change_trace(self):
        track = make_ring_track(radius=2.9, half_width=1.0, points=36)
        env = EpisodeConfig(dt=0.02, max_steps=40)
        cfg1 = small_cfg(population=6, generations=2, seed=13, threads=1)
        cfg2 = small_cfg(population=6, generations=2, seed=13, threads=2)
        a = evolve(cfg1, tracks=[track], env_cfg=env)
        b = evolve(cfg2, tracks=[track], env_cfg=env)
        assert a.trace == b.trace
