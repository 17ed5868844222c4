"""Genetic search over loop-offload genomes.

One bit per screen-approved loop (1 = GPU, 0 = CPU). Each candidate is turned
into a pattern, a transfer plan, and annotated code, then handed to the
evaluator; results are memoized so a genome is measured at most once per
search. Selection is roulette on 1/time with infeasible individuals carrying
zero weight, plus elitism; offspring come from single-point crossover or
straight copy followed by per-bit mutation.

The final answer is the best feasible genome over every evaluation performed,
not just the last generation, with ties broken by fewer GPU bits and then by
lexicographic genome order. Spaces of one or two bits are swept exhaustively
instead of searched. exhaustive_search enumerates the whole space and is the
verification oracle for the GA.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .codegen import C_OPENACC, emit_annotated
from .evaluators import EvaluationRequest, MeasurementResult
from .model import ModelIndex, ProgramModel, ReplacedBlock
from .patterns import (
    GenomeSpace,
    PatternError,
    build_genome_space,
    pattern_from_genome,
)
from .transfers import plan_transfers

Genome = tuple[int, ...]

_DUPLICATE_RETRIES = 20


@dataclass(frozen=True)
class GAParams:
    population_size: int = 12
    generations: int = 20
    crossover_rate: float = 0.9
    mutation_rate_per_bit: float = 0.05
    elite_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1 or self.generations < 1:
            raise ValueError("population_size and generations must be positive")
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate_per_bit <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        if not (0 <= self.elite_count <= self.population_size):
            raise ValueError("elite_count must not exceed population_size")


@dataclass(frozen=True)
class Fitness:
    time: float | None  # None = infeasible (failed to run or validate)
    source: str

    @property
    def feasible(self) -> bool:
        return self.time is not None


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_time: float | None
    mean_time: float | None
    evaluations: int


@dataclass(frozen=True)
class SearchResult:
    best_genome: Genome
    best_time: float | None
    no_offload: bool
    evaluations_performed: int
    cache_hits: int
    history: tuple[GenerationStats, ...]
    genome_length: int


class GenomeEvaluator:
    """Builds requests, memoizes results by genome, and forwards fresh
    submissions to the measurement backend."""

    def __init__(self, model: ProgramModel, space: GenomeSpace, evaluator, backend: str = C_OPENACC,
                 on_evaluation=None):
        self.model = model
        self.space = space
        self.evaluator = evaluator
        self.backend = backend
        self.on_evaluation = on_evaluation
        self.index = ModelIndex(model)
        self.cache: dict[Genome, Fitness] = {}
        self.evaluations = 0
        self.cache_hits = 0
        self.replaced_blocks = tuple(
            stmt for _, _, stmt in model.walk_statements() if isinstance(stmt, ReplacedBlock)
        )
        self._needs_code = getattr(evaluator, "needs_code", True)

    def evaluate(self, bits: Genome, tags: dict | None = None) -> Fitness:
        bits = tuple(bits)
        if bits in self.cache:
            self.cache_hits += 1
            return self.cache[bits]
        pattern = pattern_from_genome(self.model, self.space, bits)
        plan = plan_transfers(self.model, pattern, self.index)
        code = (
            emit_annotated(self.model, pattern, plan, self.backend) if self._needs_code else ""
        )
        request = EvaluationRequest(
            model=self.model,
            pattern=pattern,
            transfer_plan=plan,
            emitted_code=code,
            backend=self.backend,
            replaced_blocks=self.replaced_blocks,
            tags=dict(tags or {}),
        )
        try:
            result = self.evaluator.measure(request)
        except OSError as exc:  # harness I/O problems count as infeasible
            result = MeasurementResult(None, "runtime_error", getattr(
                self.evaluator, "evaluator_id", "unknown"), f"evaluator I/O failure: {exc}")
        fitness = Fitness(result.time_seconds, result.evaluator_id)
        self.cache[bits] = fitness
        self.evaluations += 1
        if self.on_evaluation is not None:
            self.on_evaluation(bits, request, result)
        return fitness


def evaluate(genome, model: ProgramModel, space: GenomeSpace, evaluator,
             backend: str = C_OPENACC) -> Fitness:
    """One-off evaluation of a single genome (no shared cache)."""
    return GenomeEvaluator(model, space, evaluator, backend).evaluate(tuple(genome))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def init_population(a: int, params: GAParams, rng: random.Random | None = None) -> list[Genome]:
    """Uniform random bit vectors; duplicates are regenerated a bounded number
    of times and then allowed (tiny spaces necessarily repeat)."""
    if a < 1:
        raise PatternError("cannot initialize a population over an empty genome space")
    rng = rng or random.Random(params.seed)
    population: list[Genome] = []
    seen: set[Genome] = set()
    for _ in range(params.population_size):
        genome = tuple(rng.randint(0, 1) for _ in range(a))
        retries = 0
        while genome in seen and retries < _DUPLICATE_RETRIES:
            genome = tuple(rng.randint(0, 1) for _ in range(a))
            retries += 1
        seen.add(genome)
        population.append(genome)
    return population


def _rank_key(bits: Genome, fitness: Fitness):
    return (
        0 if fitness.feasible else 1,
        fitness.time if fitness.feasible else 0.0,
        sum(bits),
        bits,
    )


def _roulette(rng: random.Random, population: list[Genome], fitnesses: list[Fitness]) -> Genome:
    weights = [1.0 / max(f.time, 1e-12) if f.feasible else 0.0 for f in fitnesses]
    total = sum(weights)
    if total <= 0.0:
        return population[rng.randrange(len(population))]
    pick = rng.random() * total
    acc = 0.0
    for genome, w in zip(population, weights):
        acc += w
        if pick <= acc:
            return genome
    return population[-1]


def _mutate(rng: random.Random, bits: Genome, rate: float) -> Genome:
    return tuple((b ^ 1) if rng.random() < rate else b for b in bits)


def next_generation(
    population: list[Genome],
    fitnesses: list[Fitness],
    params: GAParams,
    rng: random.Random,
) -> list[Genome]:
    """Elites copied verbatim, the rest bred by roulette selection,
    single-point crossover (probability crossover_rate, otherwise copy), and
    per-bit mutation."""
    if len(population) != len(fitnesses):
        raise ValueError("one fitness per individual required")
    order = sorted(range(len(population)), key=lambda i: _rank_key(population[i], fitnesses[i]))
    new: list[Genome] = [population[i] for i in order[: params.elite_count]]
    a = len(population[0]) if population else 0
    while len(new) < params.population_size:
        p1 = _roulette(rng, population, fitnesses)
        p2 = _roulette(rng, population, fitnesses)
        if a >= 2 and rng.random() < params.crossover_rate:
            point = rng.randrange(1, a)
            c1 = p1[:point] + p2[point:]
            c2 = p2[:point] + p1[point:]
        else:
            c1, c2 = p1, p2
        for child in (c1, c2):
            if len(new) < params.population_size:
                new.append(_mutate(rng, child, params.mutation_rate_per_bit))
    return new


# ---------------------------------------------------------------------------
# Search drivers
# ---------------------------------------------------------------------------


def _best_of_cache(cache: dict[Genome, Fitness], a: int) -> tuple[Genome, float | None, bool]:
    """Winner plus the no-offload verdict: the recommendation is "keep
    everything on the CPU" when nothing feasible was ever measured or when the
    all-zero genome itself wins."""
    feasible = [(bits, f.time) for bits, f in cache.items() if f.feasible]
    if not feasible:
        return (0,) * a, None, True
    best_bits, best_time = min(feasible, key=lambda item: (item[1], sum(item[0]), item[0]))
    return best_bits, best_time, not any(best_bits)


def _generation_stats(gen: int, fits: list[Fitness], evaluations: int) -> GenerationStats:
    times = [f.time for f in fits if f.feasible]
    best = min(times) if times else None
    mean = sum(times) / len(times) if times else None
    return GenerationStats(gen, best, mean, evaluations)


def run_search(
    model: ProgramModel,
    verdicts,
    evaluator,
    params: GAParams,
    backend: str = C_OPENACC,
    on_evaluation=None,
) -> SearchResult:
    """Full GA run. Deterministic for a fixed (model, params, evaluator
    state). Genome spaces of one or two bits are enumerated outright, which
    both bounds the cost and makes the tiny cases exact."""
    space = build_genome_space(model, verdicts)
    if space.is_empty:
        raise PatternError("no offloadable loops; skip the search and use the CPU-only pattern")
    runner = GenomeEvaluator(model, space, evaluator, backend, on_evaluation)

    if space.length <= 2:
        fits = [runner.evaluate(bits, {"generation": 0}) for bits in space.all_genomes()]
        history = (_generation_stats(0, fits, runner.evaluations),)
    else:
        rng = random.Random(params.seed)
        population = init_population(space.length, params, rng)
        history_list = []
        for gen in range(params.generations):
            fits = [runner.evaluate(bits, {"generation": gen}) for bits in population]
            history_list.append(_generation_stats(gen, fits, runner.evaluations))
            if gen + 1 < params.generations:
                population = next_generation(population, fits, params, rng)
        history = tuple(history_list)

    best_bits, best_time, no_offload = _best_of_cache(runner.cache, space.length)
    return SearchResult(
        best_genome=best_bits,
        best_time=best_time,
        no_offload=no_offload,
        evaluations_performed=runner.evaluations,
        cache_hits=runner.cache_hits,
        history=history,
        genome_length=space.length,
    )


class ExhaustiveCapError(ValueError):
    pass


def exhaustive_search(
    model: ProgramModel,
    verdicts,
    evaluator,
    cap: int = 14,
    backend: str = C_OPENACC,
    on_evaluation=None,
) -> SearchResult:
    """Evaluate every genome; the global optimum under the same tie-break rule
    the GA uses. Refuses spaces above the cap."""
    space = build_genome_space(model, verdicts)
    if space.is_empty:
        raise PatternError("no offloadable loops; nothing to enumerate")
    if space.length > cap:
        raise ExhaustiveCapError(
            f"genome length {space.length} exceeds the exhaustive cap of {cap}"
        )
    runner = GenomeEvaluator(model, space, evaluator, backend, on_evaluation)
    fits = [runner.evaluate(bits, {"generation": 0}) for bits in space.all_genomes()]
    history = (_generation_stats(0, fits, runner.evaluations),)
    best_bits, best_time, no_offload = _best_of_cache(runner.cache, space.length)
    return SearchResult(
        best_genome=best_bits,
        best_time=best_time,
        no_offload=no_offload,
        evaluations_performed=runner.evaluations,
        cache_hits=runner.cache_hits,
        history=history,
        genome_length=space.length,
    )
