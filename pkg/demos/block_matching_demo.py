"""Walk through function-block matching and replacement.

Run from the repository root:

    python3 demos/block_matching_demo.py
"""

from pathlib import Path

from gpuoffload import (
    BlockRef,
    CostModelEvaluator,
    apply_replacements,
    characteristic_vector,
    load_pattern_db,
    match_by_name,
    match_by_similarity,
    parse_mini_source,
    parse_snippet,
    pretty_print,
    resolve_candidates,
    search_block_combination,
    similarity_score,
)
from gpuoffload.blocks import block_vector

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

db = load_pattern_db(FIXTURES / "sample_db.json")
print("catalog:", ", ".join(r.record_id for r in db.records), "\n")

# ---------------------------------------------------------------------------
# 1. Name matching: a call to fft() triggers the fft record directly
# ---------------------------------------------------------------------------

program = parse_mini_source((FIXTURES / "three_loops_fft.mini").read_text())
for cand in match_by_name(program, db):
    print(f"name match: call {cand.block.id} -> record {cand.record_id!r} "
          f"(interface compatible: {cand.interface_compatible})")

# ---------------------------------------------------------------------------
# 2. Similarity matching: a renamed matmul still matches its record
# ---------------------------------------------------------------------------

matmul = parse_mini_source((FIXTURES / "matmul.mini").read_text())
vector = block_vector(matmul, BlockRef("loop", 0))
record = db.record("matmul")
print(f"\nmatmul nest vector:  {vector}")
print(f"catalog snippet:     {record.snippet_vector}")
print(f"similarity score:    {similarity_score(vector, record.snippet_vector):.3f}")

stencil = parse_mini_source((FIXTURES / "stencil.mini").read_text())
other = block_vector(stencil, BlockRef("loop", 0))
print(f"stencil vs matmul:   {similarity_score(other, record.snippet_vector):.3f} "
      f"(threshold {record.similarity_threshold})")

# renaming every identifier changes nothing: the vector counts node kinds
snippet = parse_snippet("for (a = 0; a < 4; a++) { z[a] = z[a] + 1.0; }")
print("tiny snippet vector:", characteristic_vector(snippet, snippet.root_region))

# ---------------------------------------------------------------------------
# 3. Replacement and combination search on the fft program
# ---------------------------------------------------------------------------

raw = match_by_name(program, db) + match_by_similarity(program, db)
candidates, notes = resolve_candidates(program, raw)
for note in notes:
    print("conflict:", note)

outcome = search_block_combination(program, db, candidates, CostModelEvaluator())
print(f"\nmeasured {len(outcome.measurements)} subsets; "
      f"winner {outcome.chosen_subset} at {outcome.chosen_time}")

residual = apply_replacements(program, db, [candidates[i] for i in outcome.chosen_subset])
print(f"loops before: {len(program.loops)}  after replacement: {len(residual.loops)}\n")
print(pretty_print(residual))
