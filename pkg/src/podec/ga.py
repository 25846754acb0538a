"""Genetic search over decompositions.

A genome labels every input and every state with a group, and gives each
group label an optional cascade parent. Any labelling is repaired into a
valid decomposition, so crossover and mutation can act gene by gene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .care import PlantSpec, solve_care
from .decomposition import (
    DEFAULT_ACTION_LEVELS,
    DEFAULT_GRID_POINTS,
    Decomposition,
    DecompositionEvaluation,
    InputGroup,
    error_rank,
    evaluate_lqr,
)
from .errors import InvalidDecomposition


@dataclass(frozen=True)
class Genome:
    input_group: tuple[int, ...]
    state_group: tuple[int, ...]
    parent: tuple[int | None, ...]


@dataclass(frozen=True)
class GAConfig:
    population: int = 64
    generations: int = 100
    tournament_size: int = 3
    crossover_rate: float = 0.7
    mutation_rate: float = 0.1
    seed: int = 0
    elitism: int = 2
    fitness_blend: float = 0.0
    grid_points: int = DEFAULT_GRID_POINTS
    action_levels: int = DEFAULT_ACTION_LEVELS
    patience: int | None = None  # stop after this many generations without a better best

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate", "fitness_blend"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.population < self.tournament_size or self.tournament_size < 1:
            raise ValueError("population must be at least tournament_size >= 1")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must lie in [0, population]")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive")


def repair(g: Genome) -> Genome:
    """Map an arbitrary genome onto the canonical genome of a valid decomposition.

    Group labels are renumbered by first appearance among the inputs; a
    genome that is already canonical comes back unchanged.
    """
    m, n = len(g.input_group), len(g.state_group)
    if m < 2:
        raise InvalidDecomposition("at least two inputs are needed to decompose")
    inputs = [int(v) for v in g.input_group]
    if len(set(inputs)) == 1:
        inputs[-1] = min(set(range(m + 1)) - set(inputs))

    relabel: dict[int, int] = {}
    for lab in inputs:
        relabel.setdefault(lab, len(relabel))
    G = len(relabel)
    inputs = [relabel[lab] for lab in inputs]
    states = [relabel[lab] if lab in relabel else int(lab) % G for lab in g.state_group]

    for grp in range(G):
        if grp not in states:
            counts = [states.count(k) for k in range(G)]
            donor = max(range(G), key=lambda k: (counts[k], -k))
            idx = max(i for i, lab in enumerate(states) if lab == donor)
            states[idx] = grp

    old_parent = list(g.parent) + [None] * max(0, m - len(g.parent))
    parent: list[int | None] = [None] * G
    for old, new in relabel.items():
        p = old_parent[old] if 0 <= old < len(old_parent) else None
        if p is not None and p in relabel and relabel[p] != new:
            parent[new] = relabel[p]
    for start in range(G):
        path, node = [], start
        while node is not None and node not in path:
            path.append(node)
            node = parent[node]
        if node is not None:
            cycle = path[path.index(node):]
            parent[max(cycle)] = None
    return Genome(tuple(inputs), tuple(states), tuple(parent) + (None,) * (m - G))


def decode(g: Genome) -> Decomposition:
    g = repair(g)
    G = max(g.input_group) + 1
    groups = tuple(
        InputGroup(
            tuple(i for i, lab in enumerate(g.input_group) if lab == k),
            tuple(i for i, lab in enumerate(g.state_group) if lab == k),
        )
        for k in range(G)
    )
    return Decomposition(groups, g.parent[:G])


def encode(d: Decomposition) -> Genome:
    m, n = d.m, d.n
    inputs, states = [0] * m, [0] * n
    for k, grp in enumerate(d.groups):
        for i in grp.inputs:
            inputs[i] = k
        for i in grp.states:
            states[i] = k
    parent = list(d.parent) + [None] * (m - len(d.groups))
    return repair(Genome(tuple(inputs), tuple(states), tuple(parent)))


def random_genome(m: int, n: int, rng) -> Genome:
    inputs = tuple(int(v) for v in rng.integers(0, m, m))
    states = tuple(int(v) for v in rng.integers(0, m, n))
    parent = tuple(None if rng.random() < 0.5 else int(rng.integers(0, m)) for _ in range(m))
    return repair(Genome(inputs, states, parent))


def mutate(g: Genome, rng, rate: float) -> Genome:
    """Per-gene mutation: relabel inputs/states, toggle cascade links, merge groups."""
    if rate <= 0.0:
        return g
    m, n = len(g.input_group), len(g.state_group)
    G = max(g.input_group) + 1
    hit = (rng.random(2 * m + n + 1) < rate).tolist()
    new_in = rng.integers(0, m, m).tolist()
    new_st = rng.integers(0, G, n).tolist()
    inputs = [new_in[i] if hit[i] else lab for i, lab in enumerate(g.input_group)]
    states = [new_st[i] if hit[m + i] else lab for i, lab in enumerate(g.state_group)]
    parent = list(g.parent)
    for k in range(m):
        if hit[m + n + k]:
            if parent[k] is None:
                others = [j for j in range(G) if j != k]
                parent[k] = others[int(rng.integers(0, len(others)))] if others else None
            else:
                parent[k] = None
    if G > 2 and hit[-1]:
        a, b = (int(v) for v in rng.choice(G, 2, replace=False))
        inputs = [a if lab == b else lab for lab in inputs]
        states = [a if lab == b else lab for lab in states]
    return repair(Genome(tuple(inputs), tuple(states), tuple(parent)))


def crossover(a: Genome, b: Genome, rng, rate: float = 1.0) -> Genome:
    """Uniform per-gene crossover followed by repair."""
    if rng.random() >= rate:
        return a
    m, n = len(a.input_group), len(a.state_group)
    take = (rng.random(2 * m + n) < 0.5).tolist()
    genes_a = a.input_group + a.state_group + a.parent
    genes_b = b.input_group + b.state_group + b.parent
    mixed = [x if t else y for x, y, t in zip(genes_a, genes_b, take)]
    return repair(Genome(tuple(mixed[:m]), tuple(mixed[m:m + n]), tuple(mixed[m + n:])))


class _Scorer:
    """Memoized fitness; the key sorts unstable individuals last."""

    def __init__(self, plant: PlantSpec, cfg: GAConfig):
        self.plant = plant
        self.cfg = cfg
        self.optimal, _ = solve_care(plant)
        self.cache: dict[Genome, tuple[Decomposition, DecompositionEvaluation]] = {}
        self.keys: dict[Genome, tuple] = {}
        self.full_surrogate = float(cfg.grid_points) ** plant.n * float(cfg.action_levels) ** plant.m

    def __call__(self, g: Genome):
        hit = self.cache.get(g)
        if hit is None:
            d = decode(g)
            ev = evaluate_lqr(self.plant, d, optimal=self.optimal,
                              grid_points=self.cfg.grid_points,
                              action_levels=self.cfg.action_levels)
            hit = self.cache[g] = (d, ev)
        return hit

    def key(self, g: Genome):
        k = self.keys.get(g)
        if k is None:
            k = self.keys[g] = self.rank_key(*self(g))
        return k

    def rank_key(self, d, ev):
        w = self.cfg.fitness_blend
        if not math.isfinite(ev.err_lqr):
            return (1, math.inf, ev.compute_surrogate, d.to_json())
        score = ev.err_lqr if w == 0 else (1 - w) * ev.err_lqr + w * ev.compute_surrogate / self.full_surrogate
        return (0, error_rank(score), ev.compute_surrogate, d.to_json())


def ga_search(plant: PlantSpec, cfg: GAConfig | None = None, trace: list | None = None,
              top: int | None = None) -> list[tuple[Decomposition, DecompositionEvaluation]]:
    """Rank decompositions of ``plant`` found by a seeded genetic algorithm.

    Returns every distinct decomposition evaluated during the run, best
    first (value error, then compute surrogate); unstable ones come last.
    If ``trace`` is a list, one dict per generation is appended to it.
    """
    cfg = cfg or GAConfig()
    if plant.m < 2:
        raise InvalidDecomposition("at least two inputs are needed to decompose")
    m, n = plant.m, plant.n
    scorer = _Scorer(plant, cfg)
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    population = [random_genome(m, n, init_rng) for _ in range(cfg.population)]

    def record(gen, pop):
        errs = [scorer(g)[1].err_lqr for g in pop]
        finite = [e for e in errs if math.isfinite(e)]
        if trace is not None:
            trace.append({
                "generation": gen,
                "best_err": min(errs),
                "mean_finite_err": float(np.mean(finite)) if finite else math.inf,
                "n_unstable": len(errs) - len(finite),
            })

    best_key, stale = None, 0
    for gen in range(cfg.generations):
        population.sort(key=scorer.key)
        record(gen, population)
        top_key = scorer.key(population[0])
        if best_key is not None and not top_key < best_key:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
        else:
            best_key, stale = top_key, 0
        nxt = []
        for g in population:
            if len(nxt) >= cfg.elitism:
                break
            if g not in nxt:
                nxt.append(g)
        # variation is sequential, so one stream per generation is deterministic
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, gen + 1]))
        while len(nxt) < cfg.population:
            a = _tournament(population, scorer, cfg.tournament_size, rng)
            b = _tournament(population, scorer, cfg.tournament_size, rng)
            child = crossover(a, b, rng, cfg.crossover_rate)
            nxt.append(mutate(child, rng, cfg.mutation_rate))
        population = nxt
    else:
        population.sort(key=scorer.key)
        record(cfg.generations, population)

    seen, out = set(), []
    for g in sorted(scorer.cache, key=scorer.key):
        d, ev = scorer.cache[g]
        key = scorer.key(g)[3]
        if key not in seen:
            seen.add(key)
            out.append((d, ev))
    return out if top is None else out[:top]


def _tournament(population, scorer, size, rng):
    picks = rng.integers(0, len(population), size)
    return min((population[i] for i in picks.tolist()), key=scorer.key)
