"""Performance measurement behind one contract.

Two implementations: a deterministic synthetic cost model (used by tests and
desk-scale searches) and an external compile-and-run command harness. Both
return a MeasurementResult whose time is present only for valid runs; every
failure mode (compile error, runtime error, timeout, numeric mismatch) maps
to the infeasible sentinel that the search treats as unselectable.
"""

from __future__ import annotations

import json
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .codegen import BACKEND_EXTENSIONS
from .model import ProgramModel, ReplacedBlock
from .patterns import GPU, OffloadPattern
from .transfers import HOST_TO_DEVICE, TransferPlan

VALID = "valid"
NUMERIC_MISMATCH = "numeric_mismatch"
COMPILE_ERROR = "compile_error"
RUNTIME_ERROR = "runtime_error"
TIMEOUT = "timeout"

COST_MODEL_ID = "cost_model"
EXTERNAL_ID = "external"

_TIME_LINE = re.compile(r"^TIME_SECONDS=(\S+)\s*$", re.MULTILINE)


class EvaluatorConfigError(Exception):
    """The evaluator cannot run as configured (caught before any measurement)."""


@dataclass(frozen=True)
class EvaluationRequest:
    model: ProgramModel
    pattern: OffloadPattern
    transfer_plan: TransferPlan
    emitted_code: str
    backend: str
    replaced_blocks: tuple[ReplacedBlock, ...] = ()
    tags: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MeasurementResult:
    time_seconds: float | None
    validity: str
    evaluator_id: str
    diagnostics: str = ""

    @property
    def feasible(self) -> bool:
        return self.validity == VALID

    def __post_init__(self):
        assert (self.time_seconds is not None) == (self.validity == VALID)


@dataclass(frozen=True)
class CostModelParams:
    kernel_launch_overhead: float = 1e-4
    transfer_cost_per_byte: float = 1e-9

    def __post_init__(self):
        assert self.kernel_launch_overhead >= 0 and self.transfer_cost_per_byte >= 0


def cost_model_time(request: EvaluationRequest, params: CostModelParams) -> MeasurementResult:
    """Deterministic synthetic time for a pattern.

    CPU loops cost their total iterations times cpu_cost_per_iter; offloaded
    subtrees cost gpu_cost_per_iter instead plus one launch overhead per entry
    of the nest; each transfer directive costs bytes * unit cost * its
    multiplicity; a replaced block costs its recorded CPU time divided by the
    record's speedup hint. Any loop placed on the GPU with gpu_valid False
    fails result validation and is infeasible.
    """
    model = request.model
    pattern = request.pattern
    for loop in model.loops:
        if pattern.placement(loop.id) == GPU and not loop.gpu_valid:
            return MeasurementResult(
                None,
                NUMERIC_MISMATCH,
                COST_MODEL_ID,
                f"loop {loop.id} produces wrong results on the GPU",
            )
    time = 0.0
    for loop in model.loops:
        per_iter = (
            loop.gpu_cost_per_iter if pattern.placement(loop.id) == GPU else loop.cpu_cost_per_iter
        )
        time += model.total_iterations(loop.id) * per_iter
    for g in pattern.gpu_roots:
        time += model.enclosing_multiplicity(g) * params.kernel_launch_overhead
    for d in request.transfer_plan.directives:
        time += model.var(d.var_id).size_bytes * params.transfer_cost_per_byte * d.multiplicity
    for rid, _, stmt in model.walk_statements():
        if isinstance(stmt, ReplacedBlock):
            time += (
                model.region_multiplicity(rid) * stmt.base_cpu_time / stmt.speedup_hint
            )
    return MeasurementResult(time, VALID, COST_MODEL_ID)


class CostModelEvaluator:
    evaluator_id = COST_MODEL_ID
    concurrency_safe = True
    needs_code = False  # time depends on the model alone; skip emission

    def __init__(self, params: CostModelParams | None = None):
        self.params = params or CostModelParams()

    def measure(self, request: EvaluationRequest) -> MeasurementResult:
        return cost_model_time(request, self.params)


# ---------------------------------------------------------------------------
# External command harness
# ---------------------------------------------------------------------------


def validate_output(reference, candidate, rel_tol: float = 1e-6, abs_floor: float = 1e-12) -> bool:
    """Element-wise closeness with a relative tolerance and an absolute floor:
    |c - r| <= max(rel_tol * |r|, abs_floor). Length mismatch is a failure."""
    reference = list(reference)
    candidate = list(candidate)
    if len(reference) != len(candidate):
        return False
    for r, c in zip(reference, candidate):
        if abs(c - r) > max(rel_tol * abs(r), abs_floor):
            return False
    return True


@dataclass(frozen=True)
class ExternalCommands:
    build_cmd: str
    run_cmd: str
    reference_output: tuple[float, ...] | None = None


def _parse_output_file(path: Path) -> list[float] | None:
    if not path.exists():
        return None
    values = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            v = float(line)
        except ValueError:
            return None
        if v != v or v in (float("inf"), float("-inf")):
            return None
        values.append(v)
    return values


def run_external(
    request: EvaluationRequest,
    commands: ExternalCommands,
    workdir: Path,
    timeout_seconds: float = 300.0,
    rel_tol: float = 1e-6,
) -> MeasurementResult:
    """Write the candidate into workdir, run build_cmd then run_cmd there, and
    parse the run protocol: exactly one `TIME_SECONDS=<float>` stdout line,
    results in `output.txt` (one decimal per line) when a reference is set.

    Nonzero build exit -> compile_error; nonzero run exit or a bad time line
    -> runtime_error; exceeding the per-command timeout -> timeout (the child
    is killed); reference mismatch -> numeric_mismatch. Only valid runs carry
    a time.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    ext = BACKEND_EXTENSIONS[request.backend]
    (workdir / f"candidate.{ext}").write_text(request.emitted_code, encoding="utf-8")
    (workdir / "pattern.json").write_text(_pattern_manifest(request), encoding="utf-8")

    def run(cmd: str):
        return subprocess.run(
            cmd,
            shell=True,
            cwd=workdir,
            capture_output=True,
            text=True,
            timeout=timeout_seconds,
        )

    try:
        build = run(commands.build_cmd)
    except subprocess.TimeoutExpired:
        return MeasurementResult(None, TIMEOUT, EXTERNAL_ID, "build command timed out")
    if build.returncode != 0:
        return MeasurementResult(
            None, COMPILE_ERROR, EXTERNAL_ID, _tail(build.stdout + build.stderr)
        )

    try:
        run_proc = run(commands.run_cmd)
    except subprocess.TimeoutExpired:
        return MeasurementResult(None, TIMEOUT, EXTERNAL_ID, "run command timed out")
    if run_proc.returncode != 0:
        return MeasurementResult(
            None, RUNTIME_ERROR, EXTERNAL_ID, _tail(run_proc.stdout + run_proc.stderr)
        )

    times = _TIME_LINE.findall(run_proc.stdout)
    if len(times) != 1:
        return MeasurementResult(
            None,
            RUNTIME_ERROR,
            EXTERNAL_ID,
            f"expected exactly one TIME_SECONDS line, found {len(times)}",
        )
    try:
        measured = float(times[0])
    except ValueError:
        return MeasurementResult(
            None, RUNTIME_ERROR, EXTERNAL_ID, f"unparseable TIME_SECONDS value {times[0]!r}"
        )

    if commands.reference_output is not None:
        produced = _parse_output_file(workdir / "output.txt")
        if produced is None:
            return MeasurementResult(
                None, NUMERIC_MISMATCH, EXTERNAL_ID, "output.txt missing or unparseable"
            )
        if not validate_output(commands.reference_output, produced, rel_tol):
            return MeasurementResult(
                None, NUMERIC_MISMATCH, EXTERNAL_ID, "output differs from reference"
            )
    return MeasurementResult(measured, VALID, EXTERNAL_ID)


def _pattern_manifest(request: EvaluationRequest) -> str:
    plan = [
        {
            "var": request.model.var(d.var_id).name,
            "dir": "h2d" if d.direction == HOST_TO_DEVICE else "d2h",
            "batch": d.batch_id,
            "multiplicity": d.multiplicity,
        }
        for d in request.transfer_plan.directives
    ]
    doc = {
        "genome": request.pattern.genome_text,
        "placements": {str(k): v for k, v in sorted(request.pattern.placements.items())},
        "transfers": plan,
        "replaced": [rb.replacement_name for rb in request.replaced_blocks],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _tail(text: str, limit: int = 2000) -> str:
    return text[-limit:]


class ExternalCommandEvaluator:
    evaluator_id = EXTERNAL_ID
    concurrency_safe = False  # measurements on a shared machine interfere
    needs_code = True

    def __init__(
        self,
        commands: ExternalCommands,
        workdir: Path,
        timeout_seconds: float = 300.0,
        rel_tol: float = 1e-6,
    ):
        if not commands.build_cmd or not commands.run_cmd:
            raise EvaluatorConfigError("external evaluator needs build_cmd and run_cmd")
        self.commands = commands
        self.workdir = Path(workdir)
        self.timeout_seconds = timeout_seconds
        self.rel_tol = rel_tol
        self._counter = 0

    def measure(self, request: EvaluationRequest) -> MeasurementResult:
        evaldir = self.workdir / f"eval_{self._counter:04d}"
        self._counter += 1
        return run_external(
            request, self.commands, evaldir, self.timeout_seconds, self.rel_tol
        )
