"""Walk through the loop-offload search on the four-loop fixture.

Run from the repository root:

    python3 demos/loop_search_demo.py
"""

from pathlib import Path

from gpuoffload import (
    CostModelEvaluator,
    GAParams,
    build_genome_space,
    emit_annotated,
    exhaustive_search,
    parse_mini_source,
    pattern_from_genome,
    plan_transfers,
    run_search,
    screen_model,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# ---------------------------------------------------------------------------
# 1. Parse and screen: which loops may go to the GPU at all?
# ---------------------------------------------------------------------------

source = (FIXTURES / "four_loops.mini").read_text()
model = parse_mini_source(source)
print(f"parsed {len(model.loops)} loops, {len(model.variables)} variables")

verdicts = screen_model(model)
for v in verdicts:
    print(f"  loop {v.loop_id}: {'eligible' if v.offloadable else v.reason}")

space = build_genome_space(model, verdicts)
print(f"genome length: {space.length} (loops {space.loop_ids})\n")

# ---------------------------------------------------------------------------
# 2. One candidate by hand: pattern, transfers, annotated code
# ---------------------------------------------------------------------------

pattern = pattern_from_genome(model, space, (1, 0, 1))
plan = plan_transfers(model, pattern)
print("genome 101 places nests", pattern.gpu_roots, "on the GPU")
for d in plan.directives:
    name = model.var(d.var_id).name
    print(f"  move {name:2s} {d.direction:>14s}  batch {d.batch_id}  x{d.multiplicity}")
print()
print(emit_annotated(model, pattern, plan, "c_openacc"))

# ---------------------------------------------------------------------------
# 3. Let the search find the best genome and check it against enumeration
# ---------------------------------------------------------------------------

evaluator = CostModelEvaluator()
ga = run_search(model, verdicts, evaluator, GAParams(seed=7))
full = exhaustive_search(model, verdicts, evaluator)

print(f"GA best:         {ga.best_genome} at {ga.best_time:.6f} "
      f"({ga.evaluations_performed} measurements, {ga.cache_hits} cache hits)")
print(f"exhaustive best: {full.best_genome} at {full.best_time:.6f}")
for h in ga.history[:5]:
    print(f"  generation {h.generation}: best {h.best_time:.6f}  mean {h.mean_time:.6f}")
