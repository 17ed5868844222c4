import sys
import textwrap

import pytest

from gpuoffload.evaluators import (
    COMPILE_ERROR,
    CostModelEvaluator,
    CostModelParams,
    EvaluationRequest,
    EvaluatorConfigError,
    ExternalCommandEvaluator,
    ExternalCommands,
    NUMERIC_MISMATCH,
    RUNTIME_ERROR,
    TIMEOUT,
    VALID,
    cost_model_time,
    run_external,
    validate_output,
)
from gpuoffload.patterns import build_genome_space, pattern_from_genome
from gpuoffload.screen import screen_model
from gpuoffload.transfers import (
    HOST_TO_DEVICE,
    Placement,
    TransferDirective,
    TransferPlan,
    plan_transfers,
    unhoisted_plan,
)

PY = sys.executable


def request_for(model, bits, plan=None):
    space = build_genome_space(model, screen_model(model))
    pattern = pattern_from_genome(model, space, bits)
    plan = plan if plan is not None else plan_transfers(model, pattern)
    return EvaluationRequest(model, pattern, plan, "// candidate\n", "c_openacc")


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------


def test_all_cpu_no_transfer_terms(four_loops):
    req = request_for(four_loops, (0, 0, 0))
    res = cost_model_time(req, CostModelParams())
    assert res.validity == VALID
    assert res.time_seconds == pytest.approx(5 + 100 + 10 + 40)


def test_gpu_invalid_gives_numeric_mismatch(four_loops):
    bad = four_loops
    object.__setattr__(bad.loops[3], "gpu_valid", False)
    try:
        req = request_for(bad, (0, 0, 1))
        res = cost_model_time(req, CostModelParams())
        assert res.validity == NUMERIC_MISMATCH
        assert res.time_seconds is None
    finally:
        object.__setattr__(bad.loops[3], "gpu_valid", True)


def test_hoisted_cheaper_than_unhoisted_by_transfer_term(four_loops):
    space = build_genome_space(four_loops, screen_model(four_loops))
    pattern = pattern_from_genome(four_loops, space, (1, 0, 1))
    params = CostModelParams()
    hoisted = cost_model_time(
        EvaluationRequest(four_loops, pattern, plan_transfers(four_loops, pattern), "", "c_openacc"),
        params,
    )
    raw_plan = unhoisted_plan(four_loops, pattern)
    raw = cost_model_time(
        EvaluationRequest(four_loops, pattern, raw_plan, "", "c_openacc"), params
    )
    # the three directives around the nested loop drop from multiplicity 5 to 1
    saved = 4 * (328 + 320) * 1e-9
    assert raw.time_seconds - hoisted.time_seconds == pytest.approx(saved, rel=1e-9)


def test_adding_a_directive_never_reduces_time(four_loops):
    space = build_genome_space(four_loops, screen_model(four_loops))
    pattern = pattern_from_genome(four_loops, space, (1, 0, 1))
    plan = plan_transfers(four_loops, pattern)
    base = cost_model_time(
        EvaluationRequest(four_loops, pattern, plan, "", "c_openacc"), CostModelParams()
    )
    extra = TransferDirective(
        var_id=0,
        direction=HOST_TO_DEVICE,
        placement=Placement(four_loops.root_region, 0, "before", 1),
        multiplicity=1,
        batch_id=99,
        gpu_roots=(1,),
    )
    bigger = TransferPlan(plan.directives + (extra,))
    more = cost_model_time(
        EvaluationRequest(four_loops, pattern, bigger, "", "c_openacc"), CostModelParams()
    )
    assert more.time_seconds >= base.time_seconds


def test_cost_model_pure(four_loops):
    req = request_for(four_loops, (1, 0, 1))
    a = cost_model_time(req, CostModelParams())
    b = cost_model_time(req, CostModelParams())
    assert a == b


# ---------------------------------------------------------------------------
# validate_output
# ---------------------------------------------------------------------------


def test_identical_sequences_valid():
    assert validate_output([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


def test_off_by_ten_tolerances_invalid():
    assert not validate_output([1.0], [1.0 + 1e-5], rel_tol=1e-6)


def test_within_relative_tolerance():
    assert validate_output([1000.0], [1000.0 + 1e-4], rel_tol=1e-6)


def test_absolute_floor_near_zero():
    assert validate_output([0.0], [1e-13], rel_tol=1e-6)
    assert not validate_output([0.0], [1e-11], rel_tol=1e-6)


def test_length_mismatch_invalid():
    assert not validate_output([1.0, 2.0], [1.0])


# ---------------------------------------------------------------------------
# external command harness
# ---------------------------------------------------------------------------


def write_stub(tmp_path, body):
    script = tmp_path / "stub_run.py"
    script.write_text(textwrap.dedent(body))
    return script


def test_stub_passthrough(tmp_path, four_loops):
    script = write_stub(
        tmp_path,
        """
        print("TIME_SECONDS=0.5")
        """,
    )
    commands = ExternalCommands(build_cmd=f"{PY} -c 'pass'", run_cmd=f"{PY} {script}")
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == VALID
    assert res.time_seconds == 0.5
    assert (tmp_path / "w" / "candidate.c").exists()
    assert (tmp_path / "w" / "pattern.json").exists()


def test_build_failure_is_compile_error(tmp_path, four_loops):
    commands = ExternalCommands(build_cmd=f"{PY} -c 'raise SystemExit(3)'", run_cmd="true")
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == COMPILE_ERROR
    assert res.time_seconds is None


def test_run_failure_is_runtime_error(tmp_path, four_loops):
    commands = ExternalCommands(
        build_cmd=f"{PY} -c 'pass'", run_cmd=f"{PY} -c 'raise SystemExit(1)'"
    )
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == RUNTIME_ERROR


def test_missing_time_line_is_runtime_error(tmp_path, four_loops):
    commands = ExternalCommands(
        build_cmd=f"{PY} -c 'pass'", run_cmd=f"{PY} -c 'print(\"no time here\")'"
    )
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == RUNTIME_ERROR
    assert "TIME_SECONDS" in res.diagnostics


def test_duplicate_time_lines_rejected(tmp_path, four_loops):
    script = write_stub(
        tmp_path,
        """
        print("TIME_SECONDS=1.0")
        print("TIME_SECONDS=2.0")
        """,
    )
    commands = ExternalCommands(build_cmd=f"{PY} -c 'pass'", run_cmd=f"{PY} {script}")
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == RUNTIME_ERROR


def test_timeout_kills_run(tmp_path, four_loops):
    script = write_stub(
        tmp_path,
        """
        import time
        time.sleep(30)
        print("TIME_SECONDS=1.0")
        """,
    )
    commands = ExternalCommands(build_cmd=f"{PY} -c 'pass'", run_cmd=f"{PY} {script}")
    res = run_external(
        request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w", timeout_seconds=1.0
    )
    assert res.validity == TIMEOUT
    assert res.time_seconds is None


def test_reference_mismatch(tmp_path, four_loops):
    script = write_stub(
        tmp_path,
        """
        from pathlib import Path
        Path("output.txt").write_text("1.0\\n9.9\\n")
        print("TIME_SECONDS=0.25")
        """,
    )
    commands = ExternalCommands(
        build_cmd=f"{PY} -c 'pass'",
        run_cmd=f"{PY} {script}",
        reference_output=(1.0, 2.0),
    )
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == NUMERIC_MISMATCH


def test_reference_match(tmp_path, four_loops):
    script = write_stub(
        tmp_path,
        """
        from pathlib import Path
        Path("output.txt").write_text("1.0\\n2.0\\n")
        print("TIME_SECONDS=0.25")
        """,
    )
    commands = ExternalCommands(
        build_cmd=f"{PY} -c 'pass'",
        run_cmd=f"{PY} {script}",
        reference_output=(1.0, 2.0),
    )
    res = run_external(request_for(four_loops, (0, 0, 0)), commands, tmp_path / "w")
    assert res.validity == VALID


def test_evaluator_requires_commands(tmp_path):
    with pytest.raises(EvaluatorConfigError):
        ExternalCommandEvaluator(ExternalCommands("", ""), tmp_path)


def test_evaluator_uses_fresh_directories(tmp_path, four_loops):
    script = write_stub(tmp_path, 'print("TIME_SECONDS=0.5")\n')
    ev = ExternalCommandEvaluator(
        ExternalCommands(f"{PY} -c 'pass'", f"{PY} {script}"), tmp_path / "base"
    )
    ev.measure(request_for(four_loops, (0, 0, 0)))
    ev.measure(request_for(four_loops, (0, 0, 1)))
    assert (tmp_path / "base" / "eval_0000" / "pattern.json").exists()
    assert (tmp_path / "base" / "eval_0001" / "pattern.json").exists()


def test_cost_model_declares_concurrency_safe():
    assert CostModelEvaluator.concurrency_safe
    assert not ExternalCommandEvaluator.concurrency_safe
