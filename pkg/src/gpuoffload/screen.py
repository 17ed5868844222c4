"""Static screen deciding which loops are eligible for GPU execution.

Stands in for trial directive insertion against a real compiler: a loop is
kept only when a conservative check finds no blocker. Loops rejected here are
excluded from the search genome entirely; they can still end up on the GPU
when an eligible ancestor is offloaded (an offloaded loop takes its whole
subtree along).
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ArrayRef, Assign, CallStmt, ProgramModel, READ, SET, expr_var_ids, loop_subtree_regions

REASON_OK = "ok"
REASON_CARRIED_SCALAR = "loop_carried_scalar"
REASON_NON_AFFINE_WRITE = "non_affine_array_write"
REASON_SIDE_EFFECT_CALL = "side_effect_call"
REASON_DIRECTIVE_ERROR = "directive_error"


@dataclass(frozen=True)
class ParallelizabilityVerdict:
    loop_id: int
    offloadable: bool
    reason: str

    def __post_init__(self):
        assert self.offloadable == (self.reason == REASON_OK)


def check_parallelizable(model: ProgramModel, loop_id: int) -> ParallelizabilityVerdict:
    """Verdict for one loop. Deterministic; depends only on the loop subtree.

    Rejection reasons, checked in order:
      - directive_error: the model explicitly flags the loop as un-insertable
      - loop_carried_scalar: a scalar other than a loop index is both read and
        set inside the body (the conservative carried-dependency screen;
        reductions land here)
      - non_affine_array_write: an array write whose index expression does not
        mention this loop's index variable
      - side_effect_call: a call to a callee not marked pure
    """
    loop = model.loop(loop_id)
    if loop.force_directive_error:
        return ParallelizabilityVerdict(loop_id, False, REASON_DIRECTIVE_ERROR)

    regions = loop_subtree_regions(model, loop_id)
    region_set = set(regions)

    exempt = {loop.index_var}
    for other in model.loops:
        if other.id != loop_id and other.body in region_set:
            exempt.add(other.index_var)

    read_scalars: set[int] = set()
    set_scalars: set[int] = set()
    for rid in regions:
        for occ in model.region_occurrences(rid):
            if model.var(occ.var_id).is_array or occ.var_id in exempt:
                continue
            if occ.kind == READ:
                read_scalars.add(occ.var_id)
            elif occ.kind == SET:
                set_scalars.add(occ.var_id)
    if read_scalars & set_scalars:
        return ParallelizabilityVerdict(loop_id, False, REASON_CARRIED_SCALAR)

    for rid, _, stmt in model.walk_statements(loop.body):
        if isinstance(stmt, Assign) and isinstance(stmt.target, ArrayRef):
            if loop.index_var not in expr_var_ids(stmt.target.index):
                return ParallelizabilityVerdict(loop_id, False, REASON_NON_AFFINE_WRITE)

    for rid, _, stmt in model.walk_statements(loop.body):
        if isinstance(stmt, CallStmt) and not model.call(stmt.call_id).pure:
            return ParallelizabilityVerdict(loop_id, False, REASON_SIDE_EFFECT_CALL)

    return ParallelizabilityVerdict(loop_id, True, REASON_OK)


def screen_model(model: ProgramModel) -> list[ParallelizabilityVerdict]:
    """One verdict per loop, document order."""
    return [check_parallelizable(model, loop.id) for loop in model.loops]
