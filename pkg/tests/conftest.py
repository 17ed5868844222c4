import random
from pathlib import Path

import pytest

from gpuoffload.build import ModelBuilder
from gpuoffload.minilang import parse_mini_source
from gpuoffload.model import Num, ProgramModel, VarRef
from gpuoffload.patterns import GenomeSpace

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def fixture_model(name: str) -> ProgramModel:
    return parse_mini_source(fixture_text(name))


@pytest.fixture
def nest2d():
    return fixture_model("nest2d.mini")


@pytest.fixture
def three_loops_fft():
    return fixture_model("three_loops_fft.mini")


@pytest.fixture
def triple_nest():
    return fixture_model("triple_nest.mini")


@pytest.fixture
def four_loops():
    return fixture_model("four_loops.mini")


@pytest.fixture
def matmul():
    return fixture_model("matmul.mini")


@pytest.fixture
def stencil():
    return fixture_model("stencil.mini")


def all_loops_space(model: ProgramModel) -> GenomeSpace:
    """Genome space covering every loop, screen ignored (for planner tests
    that want arbitrary placements)."""
    ids = tuple(l.id for l in model.loops)
    return GenomeSpace(len(ids), ids)


def random_model(
    rng: random.Random,
    max_depth: int = 4,
    n_arrays: int = 3,
    n_scalars: int = 2,
    gpu_invalid_prob: float = 0.0,
    scalar_stmt_prob: float = 0.35,
    min_nests: int = 1,
    max_nests: int = 3,
) -> ProgramModel:
    """Small random loop forest with array/scalar traffic on every level.

    Indices idx0..idx{max_depth-1} are shared across nests (one per depth);
    statements read and write random arrays indexed by the innermost loop
    index, with occasional scalar writes/reads creating host-side
    interference for the hoisting rules to trip over.
    """
    b = ModelBuilder()
    indices = [b.declare(f"idx{d}", "int") for d in range(max_depth)]
    arrays = []
    for i in range(n_arrays):
        length = rng.choice([8, 16, 32, 64])
        arrays.append(b.declare(f"arr{i}", "float", is_array=True, length=length))
    scalars = [b.declare(f"sc{i}", "float", initializer=Num(0.0, True)) for i in range(n_scalars)]

    names = {v: b._vars[v].name for v in indices + arrays + scalars}

    def rand_stmt(region, depth):
        idx = indices[depth]
        src = rng.choice(arrays)
        dst = rng.choice(arrays)
        kind = rng.random()
        if kind < scalar_stmt_prob and scalars:
            sc = rng.choice(scalars)
            if rng.random() < 0.5:
                # scalar write from array element
                b.assign(region, b.ref(names[sc]), b.at(names[src], VarRef(idx)))
            else:
                # array write from scalar
                b.assign(region, b.at(names[dst], VarRef(idx)), VarRef(sc))
        else:
            from gpuoffload.model import BinOp

            b.assign(
                region,
                b.at(names[dst], VarRef(idx)),
                BinOp("+", b.at(names[src], VarRef(idx)), Num(float(rng.randint(1, 4)), True)),
            )

    def build_nest(region, depth):
        if depth >= max_depth:
            return
        idx = indices[depth]
        _, body = b.for_loop(
            region,
            names[idx],
            Num(0),
            Num(rng.choice([2, 3, 5, 10, 50, 200])),
            cpu_cost_per_iter=rng.choice([0.5, 1.0, 2.0]),
            gpu_cost_per_iter=rng.choice([0.02, 0.1, 0.4, 1.5]),
            gpu_valid=rng.random() >= gpu_invalid_prob,
        )
        n_stmts = rng.randint(1, 2)
        for _ in range(n_stmts):
            rand_stmt(body, depth)
        if depth + 1 < max_depth and rng.random() < 0.55:
            build_nest(body, depth + 1)
            if rng.random() < 0.25:
                build_nest(body, depth + 1)

    from gpuoffload.model import BinOp

    for _ in range(rng.randint(min_nests, max_nests)):
        build_nest(b.root, 0)
        if rng.random() < 0.4:
            if scalars:
                sc = rng.choice(scalars)
                b.assign(b.root, b.ref(names[sc]), Num(float(rng.randint(0, 9)), True))
            else:
                dst = rng.choice(arrays)
                src = rng.choice(arrays)
                b.assign(
                    b.root,
                    b.at(names[dst], Num(0)),
                    BinOp("+", b.at(names[src], Num(1)), Num(1.0, True)),
                )

    model = b.finish()
    if not model.loops:  # degenerate draw; try again deterministically
        return random_model(
            rng, max_depth, n_arrays, n_scalars, gpu_invalid_prob, scalar_stmt_prob,
            min_nests, max_nests,
        )
    return model


def random_pattern_bits(rng: random.Random, length: int):
    return tuple(rng.randint(0, 1) for _ in range(length))
