import pytest

from gpuoffload.patterns import (
    CPU,
    GPU,
    GenomeSpace,
    PatternError,
    build_genome_space,
    cpu_only_pattern,
    pattern_from_genome,
)
from gpuoffload.screen import ParallelizabilityVerdict, screen_model


def fake_verdicts(flags):
    return [
        ParallelizabilityVerdict(i, ok, "ok" if ok else "loop_carried_scalar")
        for i, ok in enumerate(flags)
    ]


def test_space_counts_offloadable(four_loops):
    space = build_genome_space(four_loops, fake_verdicts([True, False, True, True]))
    assert space.length == 3
    assert space.loop_ids == (0, 2, 3)


def test_all_rejected_gives_empty_space(four_loops):
    space = build_genome_space(four_loops, fake_verdicts([False] * 4))
    assert space.is_empty


def test_three_loops_fft_space(three_loops_fft):
    space = build_genome_space(three_loops_fft, screen_model(three_loops_fft))
    assert space.length == 2
    assert space.loop_ids == (0, 2)


def test_verdict_count_mismatch(four_loops):
    with pytest.raises(PatternError):
        build_genome_space(four_loops, fake_verdicts([True]))


def test_genome_length_mismatch(four_loops):
    space = build_genome_space(four_loops, screen_model(four_loops))
    with pytest.raises(PatternError):
        pattern_from_genome(four_loops, space, (1,))


def test_gpu_parent_subsumes_subtree(triple_nest):
    # mark only the outermost loop; descendants execute on the GPU with it
    space = GenomeSpace(1, (0,))
    pattern = pattern_from_genome(triple_nest, space, (1,))
    assert all(pattern.placement(l.id) == GPU for l in triple_nest.loops)
    assert pattern.gpu_roots == (0,)


def test_descendant_bits_ignored_under_offloaded_ancestor(triple_nest):
    space = GenomeSpace(3, (0, 1, 2))
    pattern = pattern_from_genome(triple_nest, space, (1, 0, 0))
    assert pattern.gpu_roots == (0,)
    assert pattern.placement(2) == GPU


def test_cpu_only_pattern(four_loops):
    space = build_genome_space(four_loops, screen_model(four_loops))
    pattern = cpu_only_pattern(four_loops, space)
    assert all(p == CPU for p in pattern.placements.values())
    assert pattern.gpu_roots == ()


def test_all_genomes_enumeration_order():
    space = GenomeSpace(2, (0, 1))
    assert list(space.all_genomes()) == [(0, 0), (0, 1), (1, 0), (1, 1)]
