"""Derive and place CPU<->GPU transfers for an offload pattern.

Two rules decide what must move. For each offloaded nest g:

  host -> device: variables the host set or defined before g that the
  offloaded code reads inside g.

  device -> host: variables the offloaded code sets inside g that the host
  reads, sets, or defines after g.

Raw transfers sit at the nest boundary and would re-execute once per
iteration of every enclosing CPU loop. Hoisting moves each one to the
outermost enclosing loop whose body contains no interfering host-side
occurrence of the variable (a set/define for inbound copies; any occurrence
for outbound copies), then merges directives that land on the same spot into
batches. Multiplicity is the product of the trip counts still enclosing the
placement point.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import DEFINE, READ, SET, ModelIndex, ProgramModel
from .patterns import GPU, OffloadPattern, PatternError

HOST_TO_DEVICE = "host_to_device"
DEVICE_TO_HOST = "device_to_host"


@dataclass(frozen=True)
class RequiredTransfer:
    var_id: int
    direction: str
    gpu_root: int  # loop id of the offloaded nest


@dataclass(frozen=True)
class Placement:
    region: int
    stmt_index: int
    side: str  # "before" | "after"
    anchor_loop: int


@dataclass(frozen=True)
class TransferDirective:
    var_id: int
    direction: str
    placement: Placement
    multiplicity: int
    batch_id: int
    gpu_roots: tuple[int, ...]  # offloaded nests this directive feeds/drains


@dataclass(frozen=True)
class TransferPlan:
    directives: tuple[TransferDirective, ...]

    def batches(self) -> dict[int, list[TransferDirective]]:
        out: dict[int, list[TransferDirective]] = {}
        for d in self.directives:
            out.setdefault(d.batch_id, []).append(d)
        return out

    def total_bytes_moved(self, model: ProgramModel) -> int:
        return sum(
            model.var(d.var_id).size_bytes * d.multiplicity for d in self.directives
        )


def _host_side(index: ModelIndex, gpu_roots, position: int) -> bool:
    return not any(index.inside(position, g) for g in gpu_roots)


def required_transfers(
    model: ProgramModel, pattern: OffloadPattern, index: ModelIndex | None = None
) -> list[RequiredTransfer]:
    """Apply the two movement rules for every offloaded nest.

    Results are ordered by nest document order, inbound before outbound,
    then variable id.
    """
    if set(pattern.placements) != {l.id for l in model.loops}:
        raise PatternError("pattern does not cover this model's loops")
    index = index or ModelIndex(model)
    roots = pattern.gpu_roots
    out: list[RequiredTransfer] = []
    for g in roots:
        start, end = index.loop_interval[g]
        gpu_read: set[int] = set()
        gpu_set: set[int] = set()
        host_sd_before: set[int] = set()
        host_rsd_after: set[int] = set()
        for po in index.occurrences:
            occ = po.occurrence
            if start <= po.position <= end:
                if occ.kind == READ:
                    gpu_read.add(occ.var_id)
                elif occ.kind == SET:
                    gpu_set.add(occ.var_id)
            elif _host_side(index, roots, po.position):
                if po.position < start and occ.kind in (SET, DEFINE):
                    host_sd_before.add(occ.var_id)
                elif po.position > end and occ.kind in (READ, SET, DEFINE):
                    host_rsd_after.add(occ.var_id)
        for var_id in sorted(host_sd_before & gpu_read):
            out.append(RequiredTransfer(var_id, HOST_TO_DEVICE, g))
        for var_id in sorted(gpu_set & host_rsd_after):
            out.append(RequiredTransfer(var_id, DEVICE_TO_HOST, g))
    return out


def _interfering_kinds(direction: str) -> tuple[str, ...]:
    if direction == HOST_TO_DEVICE:
        return (SET, DEFINE)
    return (READ, SET, DEFINE)


def _hoist_anchor(
    model: ProgramModel,
    index: ModelIndex,
    gpu_roots,
    transfer: RequiredTransfer,
) -> int:
    """Outermost loop in the ancestor chain of the nest (including the nest
    itself) with no interfering host-side occurrence of the variable inside."""
    chain = [transfer.gpu_root]
    lid = model.loop(transfer.gpu_root).parent
    while lid is not None:
        chain.append(lid)
        lid = model.loop(lid).parent
    kinds = _interfering_kinds(transfer.direction)
    for anchor in reversed(chain):  # outermost first
        start, end = index.loop_interval[anchor]
        clean = True
        for po in index.by_var.get(transfer.var_id, []):
            if (
                start <= po.position <= end
                and po.occurrence.kind in kinds
                and _host_side(index, gpu_roots, po.position)
            ):
                clean = False
                break
        if clean:
            return anchor
    return transfer.gpu_root  # the nest itself is always interference-free


def hoist_transfers(
    model: ProgramModel,
    pattern: OffloadPattern,
    raw: list[RequiredTransfer],
    index: ModelIndex | None = None,
) -> TransferPlan:
    """Lift each raw transfer to its outermost safe placement and batch
    directives landing on the same point. Worst case a directive stays at the
    nest boundary (multiplicity unchanged)."""
    index = index or ModelIndex(model)
    roots = pattern.gpu_roots
    staged: dict[tuple[int, str, Placement], set[int]] = {}
    for t in raw:
        anchor = _hoist_anchor(model, index, roots, t)
        region, stmt_index = index.loop_site[anchor]
        side = "before" if t.direction == HOST_TO_DEVICE else "after"
        placement = Placement(region, stmt_index, side, anchor)
        staged.setdefault((t.var_id, t.direction, placement), set()).add(t.gpu_root)

    def order_key(item):
        (var_id, direction, placement), _ = item
        anchor_start = index.loop_interval[placement.anchor_loop][0]
        side_rank = 0 if placement.side == "before" else 1
        return (anchor_start, side_rank, var_id)

    batch_ids: dict[tuple[int, int, str], int] = {}
    directives: list[TransferDirective] = []
    for (var_id, direction, placement), covered in sorted(staged.items(), key=order_key):
        point = (placement.region, placement.stmt_index, placement.side)
        if point not in batch_ids:
            batch_ids[point] = len(batch_ids)
        directives.append(
            TransferDirective(
                var_id=var_id,
                direction=direction,
                placement=placement,
                multiplicity=model.region_multiplicity(placement.region),
                batch_id=batch_ids[point],
                gpu_roots=tuple(sorted(covered)),
            )
        )
    return TransferPlan(tuple(directives))


def plan_transfers(
    model: ProgramModel, pattern: OffloadPattern, index: ModelIndex | None = None
) -> TransferPlan:
    """required_transfers + hoist_transfers in one step."""
    index = index or ModelIndex(model)
    return hoist_transfers(model, pattern, required_transfers(model, pattern, index), index)


def unhoisted_plan(
    model: ProgramModel, pattern: OffloadPattern, index: ModelIndex | None = None
) -> TransferPlan:
    """Plan with every directive left at its nest boundary (for comparing
    hoisting gains)."""
    index = index or ModelIndex(model)
    raw = required_transfers(model, pattern, index)
    staged: dict[tuple[int, str, Placement], set[int]] = {}
    for t in raw:
        region, stmt_index = index.loop_site[t.gpu_root]
        side = "before" if t.direction == HOST_TO_DEVICE else "after"
        placement = Placement(region, stmt_index, side, t.gpu_root)
        staged.setdefault((t.var_id, t.direction, placement), set()).add(t.gpu_root)
    batch_ids: dict[tuple[int, int, str], int] = {}
    directives = []
    for (var_id, direction, placement), covered in sorted(
        staged.items(),
        key=lambda item: (
            index.loop_interval[item[0][2].anchor_loop][0],
            0 if item[0][2].side == "before" else 1,
            item[0][0],
        ),
    ):
        point = (placement.region, placement.stmt_index, placement.side)
        if point not in batch_ids:
            batch_ids[point] = len(batch_ids)
        directives.append(
            TransferDirective(
                var_id,
                direction,
                placement,
                model.region_multiplicity(placement.region),
                batch_ids[point],
                tuple(sorted(covered)),
            )
        )
    return TransferPlan(tuple(directives))
