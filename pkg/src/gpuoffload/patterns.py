"""Offload patterns: bit vectors over eligible loops and the placements they
imply. Bit i corresponds to the i-th screen-approved loop in document order;
1 means GPU, 0 means CPU. A GPU-marked loop carries its whole subtree, so
descendant bits are ignored underneath an offloaded ancestor.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ProgramModel
from .screen import ParallelizabilityVerdict

CPU = "cpu"
GPU = "gpu"


class PatternError(Exception):
    """Genome does not fit the model's eligible-loop space."""


@dataclass(frozen=True)
class GenomeSpace:
    """Genome length and the genome-position -> loop-id map."""

    length: int
    loop_ids: tuple[int, ...]

    @property
    def is_empty(self) -> bool:
        return self.length == 0

    def all_genomes(self):
        for value in range(2 ** self.length):
            yield tuple((value >> (self.length - 1 - i)) & 1 for i in range(self.length))


def build_genome_space(
    model: ProgramModel, verdicts: list[ParallelizabilityVerdict]
) -> GenomeSpace:
    """Eligible loops in document order. Length 0 signals "nothing to search";
    callers then skip the search and report the CPU-only pattern."""
    if len(verdicts) != len(model.loops):
        raise PatternError(
            f"expected one verdict per loop ({len(model.loops)}), got {len(verdicts)}"
        )
    loop_ids = tuple(v.loop_id for v in verdicts if v.offloadable)
    return GenomeSpace(len(loop_ids), loop_ids)


@dataclass(frozen=True)
class OffloadPattern:
    bits: tuple[int, ...]
    loop_ids: tuple[int, ...]
    placements: dict  # loop id -> CPU | GPU
    gpu_roots: tuple[int, ...]  # GPU loops whose parent runs on the CPU

    @property
    def genome_text(self) -> str:
        return "".join(str(b) for b in self.bits)

    def placement(self, loop_id: int) -> str:
        return self.placements[loop_id]


def pattern_from_genome(
    model: ProgramModel, space: GenomeSpace, bits
) -> OffloadPattern:
    bits = tuple(int(b) for b in bits)
    if len(bits) != space.length:
        raise PatternError(f"genome length {len(bits)} does not match space length {space.length}")
    if any(b not in (0, 1) for b in bits):
        raise PatternError("genome bits must be 0 or 1")
    marked = {loop_id for loop_id, bit in zip(space.loop_ids, bits) if bit}
    placements: dict[int, str] = {}
    for loop in model.loops:  # document order: parents precede children
        if loop.parent is not None and placements[loop.parent] == GPU:
            placements[loop.id] = GPU
        elif loop.id in marked:
            placements[loop.id] = GPU
        else:
            placements[loop.id] = CPU
    gpu_roots = tuple(
        loop.id
        for loop in model.loops
        if placements[loop.id] == GPU
        and (loop.parent is None or placements[loop.parent] == CPU)
    )
    return OffloadPattern(bits, space.loop_ids, placements, gpu_roots)


def cpu_only_pattern(model: ProgramModel, space: GenomeSpace) -> OffloadPattern:
    return pattern_from_genome(model, space, (0,) * space.length)
