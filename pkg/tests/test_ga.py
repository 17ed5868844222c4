import random

import pytest

from gpuoffload.build import ModelBuilder
from gpuoffload.evaluators import CostModelEvaluator
from gpuoffload.ga import (
    ExhaustiveCapError,
    Fitness,
    GAParams,
    GenomeEvaluator,
    exhaustive_search,
    init_population,
    next_generation,
    run_search,
)
from gpuoffload.model import Num
from gpuoffload.patterns import build_genome_space
from gpuoffload.screen import screen_model

from conftest import random_model

# hand-computed cost table for the four-loop fixture, genome bits over loops
# (1, 2, 3): launch overhead L per nest entry, transfer unit T per byte,
# arrays 40*8 bytes, scalars 8 bytes
L = 1e-4
T = 1e-9
ARR = 320
SC = 8
FOUR_LOOP_COSTS = {
    (0, 0, 0): 5 + 100 + 10 + 40,
    (1, 0, 0): 5 + 10 + 10 + 40 + 5 * L + (ARR + SC) * T + ARR * T,
    (0, 1, 0): 5 + 100 + 1 + 40 + L + (ARR + SC) * T,
    (0, 0, 1): 5 + 100 + 10 + 4 + L + (2 * ARR + SC) * T,
    (1, 1, 0): 5 + 10 + 1 + 40 + 6 * L + (ARR + SC) * T + ARR * T + (ARR + SC) * T,
    (1, 0, 1): 5 + 10 + 10 + 4 + 6 * L + (ARR + SC) * T + ARR * T + (2 * ARR + SC) * T,
    (0, 1, 1): 5 + 100 + 1 + 4 + 2 * L + (ARR + SC) * T + (2 * ARR + SC) * T,
    (1, 1, 1): 5 + 10 + 1 + 4 + 7 * L + 2 * (ARR + SC) * T + (2 * ARR + SC) * T,
}


class CountingEvaluator(CostModelEvaluator):
    def __init__(self):
        super().__init__()
        self.calls = 0

    def measure(self, request):
        self.calls += 1
        return super().measure(request)


def flat_model(costs, gpu_costs=None, gpu_valid=None, iters=None):
    """n top-level loops with given per-iteration costs."""
    n = len(costs)
    gpu_costs = gpu_costs or [c / 10 for c in costs]
    gpu_valid = gpu_valid or [True] * n
    iters = iters or [10] * n
    b = ModelBuilder()
    b.declare("i", "int")
    arrays = [b.declare(f"w{k}", "float", is_array=True, length=8) for k in range(n)]
    for k in range(n):
        _, body = b.for_loop(
            b.root, "i", Num(0), Num(iters[k]), iter_count=iters[k],
            cpu_cost_per_iter=costs[k], gpu_cost_per_iter=gpu_costs[k],
            gpu_valid=gpu_valid[k],
        )
        b.assign(body, b.at(f"w{k}", b.ref("i")), Num(1.0, True))
    return b.finish()


# ---------------------------------------------------------------------------
# init_population
# ---------------------------------------------------------------------------


def test_init_population_deterministic():
    p1 = init_population(5, GAParams(population_size=8, seed=42))
    p2 = init_population(5, GAParams(population_size=8, seed=42))
    assert p1 == p2
    p3 = init_population(5, GAParams(population_size=8, seed=43))
    assert p1 != p3


def test_init_population_tiny_space_allows_duplicates():
    pop = init_population(1, GAParams(population_size=4, seed=1))
    assert len(pop) == 4
    assert len(set(pop)) <= 2


def test_init_population_bit_frequency():
    pop = init_population(10, GAParams(population_size=1000, seed=7))
    bits = [b for genome in pop for b in genome]
    freq = sum(bits) / len(bits)
    assert abs(freq - 0.5) <= 0.02


# ---------------------------------------------------------------------------
# next_generation
# ---------------------------------------------------------------------------


def test_operators_disabled_keeps_population():
    params = GAParams(population_size=6, crossover_rate=0.0, mutation_rate_per_bit=0.0,
                      elite_count=6, seed=0)
    pop = init_population(4, params)
    fits = [Fitness(float(i + 1), "t") for i in range(6)]
    new = next_generation(pop, fits, params, random.Random(0))
    assert sorted(new) == sorted(pop)


def test_single_feasible_individual_takes_all_selection_mass():
    params = GAParams(population_size=4, crossover_rate=0.0, mutation_rate_per_bit=0.0,
                      elite_count=0, seed=0)
    pop = [(0, 0), (0, 1), (1, 0), (1, 1)]
    fits = [Fitness(None, "t"), Fitness(2.0, "t"), Fitness(None, "t"), Fitness(None, "t")]
    new = next_generation(pop, fits, params, random.Random(5))
    assert all(g == (0, 1) for g in new)


def test_all_infeasible_falls_back_to_uniform():
    params = GAParams(population_size=4, crossover_rate=0.0, mutation_rate_per_bit=0.0,
                      elite_count=0, seed=0)
    pop = [(0, 0), (0, 1), (1, 0), (1, 1)]
    fits = [Fitness(None, "t")] * 4
    new = next_generation(pop, fits, params, random.Random(5))
    assert len(new) == 4
    assert set(new) <= set(pop)


def test_elitism_keeps_best_feasible_first():
    params = GAParams(population_size=4, elite_count=2, seed=0)
    pop = [(1, 1), (0, 1), (1, 0), (0, 0)]
    fits = [Fitness(9.0, "t"), Fitness(1.0, "t"), Fitness(None, "t"), Fitness(3.0, "t")]
    new = next_generation(pop, fits, params, random.Random(1))
    assert new[0] == (0, 1) and new[1] == (0, 0)


# ---------------------------------------------------------------------------
# evaluate / memoization
# ---------------------------------------------------------------------------


def test_evaluation_memoized(four_loops):
    verdicts = screen_model(four_loops)
    space = build_genome_space(four_loops, verdicts)
    ev = CountingEvaluator()
    runner = GenomeEvaluator(four_loops, space, ev)
    f1 = runner.evaluate((1, 0, 1))
    f2 = runner.evaluate((1, 0, 1))
    assert f1 == f2
    assert ev.calls == 1
    assert runner.cache_hits == 1


def test_all_zero_is_plain_cpu_sum():
    model = flat_model([1.0, 2.0, 3.0], iters=[10, 20, 30])
    verdicts = screen_model(model)
    space = build_genome_space(model, verdicts)
    runner = GenomeEvaluator(model, space, CostModelEvaluator())
    fit = runner.evaluate((0,) * space.length)
    assert fit.time == pytest.approx(10 * 1.0 + 20 * 2.0 + 30 * 3.0)


def test_gpu_invalid_marks_infeasible():
    model = flat_model([1.0, 1.0], gpu_valid=[True, False])
    space = build_genome_space(model, screen_model(model))
    runner = GenomeEvaluator(model, space, CostModelEvaluator())
    assert runner.evaluate((0, 1)).time is None
    assert runner.evaluate((1, 0)).time is not None


def test_four_loops_genome_101_hand_formula(four_loops):
    space = build_genome_space(four_loops, screen_model(four_loops))
    runner = GenomeEvaluator(four_loops, space, CostModelEvaluator())
    fit = runner.evaluate((1, 0, 1))
    assert fit.time == pytest.approx(FOUR_LOOP_COSTS[(1, 0, 1)], rel=1e-12)


# ---------------------------------------------------------------------------
# run_search / exhaustive_search
# ---------------------------------------------------------------------------


def test_exhaustive_matches_hand_enumeration(four_loops):
    verdicts = screen_model(four_loops)
    space = build_genome_space(four_loops, verdicts)
    runner = GenomeEvaluator(four_loops, space, CostModelEvaluator())
    for bits, expected in FOUR_LOOP_COSTS.items():
        assert runner.evaluate(bits).time == pytest.approx(expected, rel=1e-12)
    result = exhaustive_search(four_loops, verdicts, CostModelEvaluator())
    hand_best = min(FOUR_LOOP_COSTS, key=FOUR_LOOP_COSTS.get)
    assert result.best_genome == hand_best
    assert result.best_time == pytest.approx(FOUR_LOOP_COSTS[hand_best], rel=1e-12)
    assert result.evaluations_performed == 8


def test_single_bit_space_swept_exactly():
    model = flat_model([1.0], gpu_costs=[0.1])
    verdicts = screen_model(model)
    result = run_search(model, verdicts, CostModelEvaluator(), GAParams(seed=0))
    assert result.best_genome == (1,)
    assert result.evaluations_performed == 2


def test_every_gpu_placement_invalid_gives_no_offload():
    model = flat_model([1.0, 1.0], gpu_valid=[False, False])
    verdicts = screen_model(model)
    result = run_search(model, verdicts, CostModelEvaluator(), GAParams(seed=0))
    assert result.no_offload
    assert result.best_genome == (0, 0)
    assert result.best_time == pytest.approx(20.0)


def test_nothing_feasible_gives_no_offload_with_no_time():
    class RefusingEvaluator(CostModelEvaluator):
        def measure(self, request):
            from gpuoffload.evaluators import MeasurementResult

            return MeasurementResult(None, "runtime_error", "refuser", "always fails")

    model = flat_model([1.0, 1.0])
    verdicts = screen_model(model)
    result = run_search(model, verdicts, RefusingEvaluator(), GAParams(seed=0))
    assert result.no_offload
    assert result.best_genome == (0, 0)
    assert result.best_time is None


def test_mixed_validity_never_returns_infeasible_best():
    model = flat_model([1.0, 1.0, 1.0], gpu_valid=[True, False, True])
    verdicts = screen_model(model)
    result = run_search(model, verdicts, CostModelEvaluator(), GAParams(seed=5))
    assert not result.no_offload
    assert result.best_genome[1] == 0  # the invalid loop stays on the CPU


def test_search_result_deterministic(four_loops):
    verdicts = screen_model(four_loops)
    r1 = run_search(four_loops, verdicts, CostModelEvaluator(), GAParams(seed=9))
    r2 = run_search(four_loops, verdicts, CostModelEvaluator(), GAParams(seed=9))
    assert r1 == r2


def test_elitism_makes_generation_best_non_increasing():
    rng = random.Random(2024)
    runs = 0
    attempts = 0
    while runs < 40 and attempts < 400:
        attempts += 1
        model = random_model(rng)
        verdicts = screen_model(model)
        space = build_genome_space(model, verdicts)
        if space.length < 3:
            continue
        params = GAParams(population_size=8, generations=8, elite_count=1,
                          seed=rng.randrange(2 ** 32))
        result = run_search(model, verdicts, CostModelEvaluator(), params)
        bests = [h.best_time for h in result.history]
        feasible = [b for b in bests if b is not None]
        for earlier, later in zip(feasible, feasible[1:]):
            assert later <= earlier + 1e-15
        runs += 1
    assert runs == 40


def test_ga_never_beats_exhaustive():
    rng = random.Random(515)
    checked = 0
    attempts = 0
    while checked < 15 and attempts < 200:
        attempts += 1
        model = random_model(rng)
        verdicts = screen_model(model)
        space = build_genome_space(model, verdicts)
        if not 1 <= space.length <= 8:
            continue
        ga = run_search(model, verdicts, CostModelEvaluator(),
                        GAParams(population_size=8, generations=6, seed=7))
        ex = exhaustive_search(model, verdicts, CostModelEvaluator())
        if ga.best_time is not None:
            assert ex.best_time <= ga.best_time
        checked += 1
    assert checked == 15


def test_exhaustive_cap_refused(four_loops):
    verdicts = screen_model(four_loops)
    with pytest.raises(ExhaustiveCapError):
        exhaustive_search(four_loops, verdicts, CostModelEvaluator(), cap=2)


def test_tie_break_prefers_fewer_gpu_bits():
    # identical cpu and gpu per-iteration costs make 0-bit and 1-bit genomes
    # tie except for launch overhead; force an exact tie by zero overhead
    from gpuoffload.evaluators import CostModelParams

    model = flat_model([1.0, 1.0], gpu_costs=[1.0, 1.0])
    # no transfers: loops write their own arrays, never read by the host after
    verdicts = screen_model(model)
    ev = CostModelEvaluator(CostModelParams(kernel_launch_overhead=0.0,
                                            transfer_cost_per_byte=0.0))
    result = run_search(model, verdicts, ev, GAParams(seed=0))
    assert result.best_genome == (0, 0)
