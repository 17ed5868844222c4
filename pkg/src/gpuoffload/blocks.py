"""Function-block offload: find blocks replaceable by device-library
equivalents and search which replacements actually pay off.

Matching runs two ways against a file-based catalog of records:

  by name        a call statement whose callee appears in a record's trigger
                 list (score fixed at 1.0);

  by similarity  a rename-invariant clone check between the record's
                 comparison snippet and each candidate block (every inlined
                 function body and every outermost loop nest), scored as
                 1 - L1(v1 - v2) / (L1(v1) + L1(v2)) over the blocks'
                 syntax-node count vectors.

Applying a replacement swaps the block for an opaque node carrying the
replacement library name and speedup hint, and drops the block's loops from
the model so the later loop search never sees them. Interface mismatches are
gated: without explicit permission they are reported as pending confirmation
instead of applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .build import ModelBuilder
from .codegen import C_OPENACC, emit_annotated
from .evaluators import EvaluationRequest, MeasurementResult
from .minilang import ParseError, parse_snippet
from .model import (
    DEFINE,
    READ,
    SET,
    ArrayRef,
    Assign,
    BinOp,
    CallStmt,
    DeclStmt,
    Expr,
    LoopStmt,
    ModelIntegrityError,
    Num,
    ProgramModel,
    ReplacedBlock,
    VarRef,
    VariableOccurrence,
)
from .patterns import GenomeSpace, pattern_from_genome
from .transfers import TransferPlan

MATCH_NAME = "name"
MATCH_SIMILARITY = "similarity"

APPLIED = "applied"
PENDING_CONFIRMATION = "pending-confirmation"

VECTOR_DIMS = (
    "assign",
    "loop",
    "call",
    "add_sub",
    "mul_div",
    "array_access",
    "scalar_ref",
    "constant",
)

DEFAULT_SIMILARITY_THRESHOLD = 0.85


class PatternDBError(Exception):
    pass


@dataclass(frozen=True)
class PatternRecord:
    record_id: str
    trigger_names: tuple[str, ...]
    comparison_snippet: str | None
    replacement_name: str
    replacement_args: tuple[str, ...]
    replacement_return: str
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    speedup_hint: float = 1.0
    snippet_vector: tuple[int, ...] | None = None


@dataclass(frozen=True)
class PatternDB:
    records: tuple[PatternRecord, ...]

    def record(self, record_id: str) -> PatternRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise PatternDBError(f"unknown record id {record_id!r}")


def load_pattern_db(path) -> PatternDB:
    """Load and validate the replacement catalog (a UTF-8 JSON array).

    Each record needs at least one of trigger_names / comparison_snippet;
    duplicate ids and malformed records are rejected with the record index.
    Snippets are parsed and their vectors precomputed here.
    """
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise PatternDBError(f"pattern DB is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise PatternDBError("pattern DB must be a JSON array of records")
    records: list[PatternRecord] = []
    seen: set[str] = set()
    for i, entry in enumerate(data):
        try:
            record_id = str(entry["id"])
            triggers = tuple(str(t) for t in entry.get("trigger_names", []))
            snippet = entry.get("comparison_snippet")
            replacement_name = str(entry["replacement_name"])
            iface = entry["replacement_interface"]
            args = tuple(str(t) for t in iface["args"])
            ret = str(iface.get("return", "void"))
            threshold = float(entry.get("similarity_threshold", DEFAULT_SIMILARITY_THRESHOLD))
            speedup = float(entry.get("speedup_hint", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise PatternDBError(f"malformed record at index {i}: {exc}") from exc
        if record_id in seen:
            raise PatternDBError(f"duplicate record id {record_id!r} at index {i}")
        seen.add(record_id)
        if not triggers and not snippet:
            raise PatternDBError(
                f"record {record_id!r} (index {i}) needs trigger_names or comparison_snippet"
            )
        if speedup <= 0 or not (0.0 <= threshold <= 1.0):
            raise PatternDBError(f"record {record_id!r} (index {i}) has out-of-range numbers")
        vector = None
        if snippet is not None:
            try:
                snippet_model = parse_snippet(str(snippet))
            except ParseError as exc:
                raise PatternDBError(
                    f"record {record_id!r} (index {i}) snippet does not parse: {exc}"
                ) from exc
            vector = characteristic_vector(snippet_model, snippet_model.root_region)
        records.append(
            PatternRecord(
                record_id, triggers, snippet, replacement_name, args, ret, threshold, speedup,
                vector,
            )
        )
    return PatternDB(tuple(records))


# ---------------------------------------------------------------------------
# Candidate blocks
# ---------------------------------------------------------------------------

BLOCK_CALL = "call"
BLOCK_LOOP = "loop"


@dataclass(frozen=True)
class BlockRef:
    kind: str  # BLOCK_CALL | BLOCK_LOOP
    id: int


@dataclass(frozen=True)
class BlockCandidate:
    block: BlockRef
    record_id: str
    match_kind: str
    similarity_score: float
    interface_compatible: bool


def _loops_under_calls(model: ProgramModel) -> set[int]:
    hidden: set[int] = set()
    for call in model.calls:
        for _, _, stmt in model.walk_statements(call.subtree):
            if isinstance(stmt, LoopStmt):
                hidden.add(stmt.loop_id)
    return hidden


def candidate_blocks(model: ProgramModel) -> list[BlockRef]:
    """Blocks eligible for similarity matching: inlined function bodies and
    outermost loop nests that are not already part of a function body."""
    out = [BlockRef(BLOCK_CALL, c.id) for c in model.calls if model.region(c.subtree).statements]
    hidden = _loops_under_calls(model)
    out.extend(
        BlockRef(BLOCK_LOOP, l.id)
        for l in model.loops
        if l.parent is None and l.id not in hidden
    )
    return out


# ---------------------------------------------------------------------------
# Characteristic vectors
# ---------------------------------------------------------------------------


def characteristic_vector(model: ProgramModel, region_id: int) -> tuple[int, ...]:
    """Syntax-node counts over a region subtree, one slot per VECTOR_DIMS
    entry. Identifier names never enter the vector, so renaming leaves it
    unchanged; loop headers are represented by the loop slot alone."""
    counts = dict.fromkeys(VECTOR_DIMS, 0)

    def expr(e: Expr) -> None:
        if isinstance(e, Num):
            counts["constant"] += 1
        elif isinstance(e, VarRef):
            counts["scalar_ref"] += 1
        elif isinstance(e, ArrayRef):
            counts["array_access"] += 1
            expr(e.index)
        elif isinstance(e, BinOp):
            counts["add_sub" if e.op in "+-" else "mul_div"] += 1
            expr(e.left)
            expr(e.right)

    def region(rid: int) -> None:
        for stmt in model.region(rid).statements:
            if isinstance(stmt, Assign):
                counts["assign"] += 1
                expr(stmt.target)
                expr(stmt.value)
            elif isinstance(stmt, DeclStmt):
                if stmt.initializer is not None:
                    counts["assign"] += 1
                    counts["scalar_ref"] += 1
                    expr(stmt.initializer)
            elif isinstance(stmt, LoopStmt):
                counts["loop"] += 1
                region(model.loop(stmt.loop_id).body)
            elif isinstance(stmt, CallStmt):
                counts["call"] += 1
                region(model.call(stmt.call_id).subtree)
            elif isinstance(stmt, ReplacedBlock):
                counts["call"] += 1

    region(region_id)
    return tuple(counts[d] for d in VECTOR_DIMS)


def block_vector(model: ProgramModel, block: BlockRef) -> tuple[int, ...]:
    if block.kind == BLOCK_CALL:
        return characteristic_vector(model, model.call(block.id).subtree)
    loop = model.loop(block.id)
    body = characteristic_vector(model, loop.body)
    with_self = list(body)
    with_self[VECTOR_DIMS.index("loop")] += 1
    return tuple(with_self)


def similarity_score(v1, v2) -> float:
    """1 - L1(v1 - v2) / (L1(v1) + L1(v2)); exactly 1.0 iff the vectors are
    equal, 0.0 when they share no node kinds."""
    norm = sum(v1) + sum(v2)
    if norm == 0:
        return 1.0
    distance = sum(abs(a - b) for a, b in zip(v1, v2))
    return 1.0 - distance / norm


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def match_by_name(model: ProgramModel, db: PatternDB) -> list[BlockCandidate]:
    """One candidate per (call, record) pair whose callee name triggers the
    record. Interface compatibility is exact type-list equality."""
    out: list[BlockCandidate] = []
    for call in model.calls:
        for record in db.records:
            if call.callee_name in record.trigger_names:
                compatible = (
                    call.arg_types == record.replacement_args
                    and call.return_type == record.replacement_return
                )
                out.append(
                    BlockCandidate(
                        BlockRef(BLOCK_CALL, call.id), record.record_id, MATCH_NAME, 1.0,
                        compatible,
                    )
                )
    return out


def implied_interface(model: ProgramModel, block: BlockRef) -> tuple[tuple[str, ...], str]:
    """Interface a block exposes if lifted into a callable: the semantic types
    of its array variables in first-occurrence order, returning void."""
    if block.kind == BLOCK_CALL:
        call = model.call(block.id)
        return call.arg_types, call.return_type
    return tuple(
        model.var(v).semantic_type for v in block_arg_vars(model, block)
    ), "void"


def block_arg_vars(model: ProgramModel, block: BlockRef) -> tuple[int, ...]:
    """Array variables touched by a block, in first-occurrence order."""
    if block.kind == BLOCK_CALL:
        return model.call(block.id).arg_var_ids
    seen: list[int] = []
    for rid in _block_regions(model, block):
        for occ in model.region_occurrences(rid):
            if model.var(occ.var_id).is_array and occ.var_id not in seen:
                seen.append(occ.var_id)
    return tuple(seen)


def _block_regions(model: ProgramModel, block: BlockRef) -> list[int]:
    if block.kind == BLOCK_CALL:
        top = model.call(block.id).subtree
    else:
        top = model.loop(block.id).body
    regions = [top]
    for _, _, stmt in model.walk_statements(top):
        if isinstance(stmt, LoopStmt):
            regions.append(model.loop(stmt.loop_id).body)
        elif isinstance(stmt, CallStmt):
            regions.append(model.call(stmt.call_id).subtree)
    return regions


def match_by_similarity(model: ProgramModel, db: PatternDB) -> list[BlockCandidate]:
    """Candidates whose vector similarity against a record snippet reaches the
    record's threshold."""
    out: list[BlockCandidate] = []
    for block in candidate_blocks(model):
        vector = block_vector(model, block)
        for record in db.records:
            if record.snippet_vector is None:
                continue
            score = similarity_score(vector, record.snippet_vector)
            if score >= record.similarity_threshold:
                iface = implied_interface(model, block)
                compatible = iface == (record.replacement_args, record.replacement_return)
                out.append(
                    BlockCandidate(block, record.record_id, MATCH_SIMILARITY, score, compatible)
                )
    return out


def resolve_candidates(
    model: ProgramModel, candidates: list[BlockCandidate]
) -> tuple[list[BlockCandidate], list[str]]:
    """Enforce the precedence rules: one candidate per block (name match beats
    similarity, then higher score, then catalog order) and no block nested
    inside another chosen block (outermost wins). Returns the surviving
    candidates in document order plus human-readable conflict notes."""
    notes: list[str] = []
    per_block: dict[BlockRef, BlockCandidate] = {}
    for cand in candidates:
        held = per_block.get(cand.block)
        if held is None:
            per_block[cand.block] = cand
            continue
        ranked = sorted(
            [held, cand],
            key=lambda c: (0 if c.match_kind == MATCH_NAME else 1, -c.similarity_score),
        )
        per_block[cand.block] = ranked[0]
        notes.append(
            f"block {cand.block.kind}:{cand.block.id} matched records "
            f"{held.record_id!r} and {cand.record_id!r}; kept {ranked[0].record_id!r}"
        )

    chosen = list(per_block.values())
    # outermost wins: drop candidates nested inside another candidate's block
    spans: dict[BlockRef, set[int]] = {}
    for cand in chosen:
        spans[cand.block] = set(_block_regions(model, cand.block))

    def container_of(block: BlockRef) -> BlockRef | None:
        if block.kind == BLOCK_LOOP:
            home = _loop_site_region(model, block.id)
        else:
            home = _call_site_region(model, block.id)
        for other, regions in spans.items():
            if other != block and home in regions:
                return other
        return None

    survivors = []
    for cand in chosen:
        outer = container_of(cand.block)
        if outer is None:
            survivors.append(cand)
        else:
            notes.append(
                f"block {cand.block.kind}:{cand.block.id} is inside "
                f"{outer.kind}:{outer.id}; outermost candidate wins"
            )
    survivors.sort(key=lambda c: (c.block.kind, c.block.id, c.record_id))
    return survivors, notes


def _loop_site_region(model: ProgramModel, loop_id: int) -> int:
    for rid, _, stmt in model.walk_statements():
        if isinstance(stmt, LoopStmt) and stmt.loop_id == loop_id:
            return rid
    raise ModelIntegrityError(f"loop {loop_id} has no statement site")


def _call_site_region(model: ProgramModel, call_id: int) -> int:
    for rid, _, stmt in model.walk_statements():
        if isinstance(stmt, CallStmt) and stmt.call_id == call_id:
            return rid
    raise ModelIntegrityError(f"call {call_id} has no statement site")


# ---------------------------------------------------------------------------
# Replacement
# ---------------------------------------------------------------------------


def _remap_expr(expr: Expr, remap: dict[int, int]) -> Expr:
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, VarRef):
        return VarRef(remap[expr.var_id])
    if isinstance(expr, ArrayRef):
        return ArrayRef(remap[expr.var_id], _remap_expr(expr.index, remap))
    return BinOp(expr.op, _remap_expr(expr.left, remap), _remap_expr(expr.right, remap))


def _collapsed_occurrences(
    model: ProgramModel, block: BlockRef
) -> tuple[VariableOccurrence, ...]:
    kinds: dict[tuple[int, str], VariableOccurrence] = {}
    for rid in _block_regions(model, block):
        for occ in model.region_occurrences(rid):
            kinds.setdefault((occ.var_id, occ.kind), occ)
    kind_rank = {DEFINE: 0, SET: 1, READ: 2}
    ordered = sorted(kinds.values(), key=lambda o: (o.var_id, kind_rank[o.kind]))
    return tuple(ordered)


def _block_cpu_time(model: ProgramModel, block: BlockRef) -> float:
    if block.kind == BLOCK_CALL:
        outer = model.region_multiplicity(model.call(block.id).subtree)
    else:
        outer = model.enclosing_multiplicity(block.id)
    total = 0.0
    block_loops = [model.loop(block.id).id] if block.kind == BLOCK_LOOP else []
    top = model.call(block.id).subtree if block.kind == BLOCK_CALL else model.loop(block.id).body
    for _, _, stmt in model.walk_statements(top):
        if isinstance(stmt, LoopStmt):
            block_loops.append(stmt.loop_id)
    for lid in block_loops:
        loop = model.loop(lid)
        total += (model.total_iterations(lid) / outer) * loop.cpu_cost_per_iter
    return total


def apply_replacements(
    model: ProgramModel, db: PatternDB, candidates: list[BlockCandidate]
) -> ProgramModel:
    """Rebuild the model with every given block swapped for its replacement
    node. Loops inside replaced blocks disappear from the loop list; ids are
    renumbered densely in the new document order. The input model is never
    mutated."""
    replace_calls: dict[int, BlockCandidate] = {}
    replace_loops: dict[int, BlockCandidate] = {}
    for cand in candidates:
        if cand.block.kind == BLOCK_CALL:
            model.call(cand.block.id)
            replace_calls[cand.block.id] = cand
        else:
            model.loop(cand.block.id)
            replace_loops[cand.block.id] = cand

    builder = ModelBuilder(language=model.source_language_tag)
    remap: dict[int, int] = {}

    def emit_replaced(region_id: int, cand: BlockCandidate) -> None:
        record = db.record(cand.record_id)
        occs = tuple(
            VariableOccurrence(remap[o.var_id], o.kind, region_id, o.size_bytes)
            for o in _collapsed_occurrences(model, cand.block)
        )
        builder.replaced_block(
            region_id,
            record.replacement_name,
            tuple(remap[v] for v in block_arg_vars(model, cand.block)),
            record.speedup_hint,
            _block_cpu_time(model, cand.block),
            record.record_id,
            occs,
        )

    def copy_region(old_region_id: int, new_region_id: int) -> None:
        for stmt in model.region(old_region_id).statements:
            if isinstance(stmt, DeclStmt):
                old_var = model.var(stmt.var_id)
                init = (
                    _remap_expr(stmt.initializer, remap) if stmt.initializer is not None else None
                )
                remap[old_var.id] = builder.declare(
                    old_var.name,
                    old_var.base_type,
                    is_array=old_var.is_array,
                    length=old_var.length,
                    initializer=init,
                    region_id=new_region_id,
                )
            elif isinstance(stmt, Assign):
                builder.assign(
                    new_region_id, _remap_expr(stmt.target, remap), _remap_expr(stmt.value, remap)
                )
            elif isinstance(stmt, ReplacedBlock):
                builder.replaced_block(
                    new_region_id,
                    stmt.replacement_name,
                    tuple(remap[v] for v in stmt.arg_var_ids),
                    stmt.speedup_hint,
                    stmt.base_cpu_time,
                    stmt.record_id,
                    tuple(
                        VariableOccurrence(remap[o.var_id], o.kind, new_region_id, o.size_bytes)
                        for o in stmt.occurrences
                    ),
                )
            elif isinstance(stmt, CallStmt):
                call = model.call(stmt.call_id)
                if stmt.call_id in replace_calls:
                    emit_replaced(new_region_id, replace_calls[stmt.call_id])
                    continue
                names = [model.var(v).name for v in call.arg_var_ids]
                if model.region(call.subtree).statements:
                    _, subtree = builder.begin_inline_call(
                        new_region_id, call.callee_name, names, pure=call.pure
                    )
                    copy_region(call.subtree, subtree)
                else:
                    builder.call_external(new_region_id, call.callee_name, names, pure=call.pure)
            elif isinstance(stmt, LoopStmt):
                loop = model.loop(stmt.loop_id)
                if stmt.loop_id in replace_loops:
                    emit_replaced(new_region_id, replace_loops[stmt.loop_id])
                    continue
                _, body = builder.for_loop(
                    new_region_id,
                    model.var(loop.index_var).name,
                    _remap_expr(loop.lower, remap),
                    _remap_expr(loop.upper, remap),
                    iter_count=loop.iter_count,
                    cpu_cost_per_iter=loop.cpu_cost_per_iter,
                    gpu_cost_per_iter=loop.gpu_cost_per_iter,
                    gpu_valid=loop.gpu_valid,
                    force_directive_error=loop.force_directive_error,
                )
                copy_region(loop.body, body)

    copy_region(model.root_region, builder.root)
    return builder.finish()


def apply_replacement(
    model: ProgramModel,
    db: PatternDB,
    candidate: BlockCandidate,
    allow_interface_change: bool = False,
) -> tuple[ProgramModel, str]:
    """Apply one candidate. Interface-incompatible candidates are skipped with
    a pending-confirmation verdict unless interface changes are allowed; the
    model is returned unchanged in that case."""
    if not candidate.interface_compatible and not allow_interface_change:
        return model, PENDING_CONFIRMATION
    return apply_replacements(model, db, [candidate]), APPLIED


# ---------------------------------------------------------------------------
# Combination search
# ---------------------------------------------------------------------------

_EXHAUSTIVE_SUBSET_LIMIT = 8


@dataclass(frozen=True)
class SubsetMeasurement:
    subset: tuple[int, ...]  # indices into the candidate list
    result: MeasurementResult
    model: ProgramModel


@dataclass(frozen=True)
class BlockSearchOutcome:
    chosen_subset: tuple[int, ...]
    chosen_time: float | None
    measurements: tuple[SubsetMeasurement, ...]


def _measure_subset(
    model: ProgramModel,
    db: PatternDB,
    candidates: list[BlockCandidate],
    subset: tuple[int, ...],
    evaluator,
    backend: str,
    on_measure,
) -> SubsetMeasurement:
    picked = [candidates[i] for i in subset]
    variant = apply_replacements(model, db, picked) if picked else model
    pattern = pattern_from_genome(variant, GenomeSpace(0, ()), ())
    plan = TransferPlan(())
    code = (
        emit_annotated(variant, pattern, plan, backend)
        if getattr(evaluator, "needs_code", True)
        else ""
    )
    request = EvaluationRequest(
        model=variant,
        pattern=pattern,
        transfer_plan=plan,
        emitted_code=code,
        backend=backend,
        replaced_blocks=tuple(
            s for _, _, s in variant.walk_statements() if isinstance(s, ReplacedBlock)
        ),
        tags={"block_subset": list(subset)},
    )
    result = evaluator.measure(request)
    if on_measure is not None:
        on_measure(subset, request, result)
    return SubsetMeasurement(subset, result, variant)


def search_block_combination(
    model: ProgramModel,
    db: PatternDB,
    candidates: list[BlockCandidate],
    evaluator,
    backend: str = C_OPENACC,
    on_measure=None,
) -> BlockSearchOutcome:
    """Measure replacement combinations and keep the fastest.

    The empty subset (the unmodified program) is always measured, every
    candidate is measured individually, and with up to eight candidates all
    subsets are tried; larger sets fall back to greedy forward selection.
    Candidates must already be conflict-resolved."""
    measurements: list[SubsetMeasurement] = []

    def measure(subset: tuple[int, ...]) -> SubsetMeasurement:
        m = _measure_subset(model, db, candidates, subset, evaluator, backend, on_measure)
        measurements.append(m)
        return m

    n = len(candidates)
    if n <= _EXHAUSTIVE_SUBSET_LIMIT:
        for mask in range(2 ** n):
            subset = tuple(i for i in range(n) if mask >> i & 1)
            measure(subset)
    else:
        measure(())
        for i in range(n):
            measure((i,))
        current: tuple[int, ...] = ()
        current_time = _time_of(measurements, ())
        improved = True
        while improved:
            improved = False
            best_next = None
            for i in range(n):
                if i in current:
                    continue
                trial = tuple(sorted(current + (i,)))
                if not any(m.subset == trial for m in measurements):
                    measure(trial)
                t = _time_of(measurements, trial)
                if t is not None and (current_time is None or t < current_time):
                    if best_next is None or t < _time_of(measurements, best_next):
                        best_next = trial
            if best_next is not None:
                current = best_next
                current_time = _time_of(measurements, best_next)
                improved = True

    valid = [m for m in measurements if m.result.feasible]
    if not valid:
        return BlockSearchOutcome((), None, tuple(measurements))
    best = min(valid, key=lambda m: (m.result.time_seconds, len(m.subset), m.subset))
    return BlockSearchOutcome(best.subset, best.result.time_seconds, tuple(measurements))


def _time_of(measurements: list[SubsetMeasurement], subset: tuple[int, ...]) -> float | None:
    for m in measurements:
        if m.subset == subset:
            return m.result.time_seconds
    return None
