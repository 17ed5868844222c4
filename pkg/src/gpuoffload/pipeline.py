"""End-to-end offload discovery: analyze, try block replacements, search loop
offloading on the residual program, and keep the fastest measured pattern.

Stage order follows the block-first rationale (whole-block replacements beat
per-loop parallelization when available): every block-combination measurement
happens before any loop-search measurement, and the loop search runs on the
program left after the winning replacements. The final answer is the best
valid measurement across the whole run; it is always something that was
actually measured.

Outputs: report.json (schema-versioned summary), measurements.jsonl (one
record per evaluation, in order), and the annotated source of the winner.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

from .blocks import (
    BlockCandidate,
    PatternDB,
    load_pattern_db,
    match_by_name,
    match_by_similarity,
    resolve_candidates,
    search_block_combination,
)
from .codegen import BACKEND_EXTENSIONS, BACKENDS, C_OPENACC, emit_annotated
from .evaluators import (
    CostModelEvaluator,
    CostModelParams,
    EvaluatorConfigError,
    ExternalCommandEvaluator,
    ExternalCommands,
)
from .ga import GAParams, exhaustive_search, run_search
from .irdoc import load_ir_document
from .minilang import ParseOptions, parse_mini_source
from .model import ProgramModel
from .patterns import build_genome_space, pattern_from_genome
from .screen import screen_model
from .transfers import TransferPlan, plan_transfers

REPORT_SCHEMA_VERSION = 1

INPUT_MINI = "mini"
INPUT_IR = "ir"

EVALUATOR_COST_MODEL = "cost_model"
EVALUATOR_EXTERNAL = "external"

STAGE_BLOCK = "block"
STAGE_GA = "ga"


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    input_path: str
    input_kind: str = INPUT_MINI
    backend: str = C_OPENACC
    evaluator: str = EVALUATOR_COST_MODEL
    db_path: str | None = None
    seed: int = 0
    out_dir: str = "offload-out"
    allow_interface_change: bool = False
    exhaustive: bool = False
    exhaustive_cap: int = 14
    population_size: int = 12
    generations: int = 20
    crossover_rate: float = 0.9
    mutation_rate_per_bit: float = 0.05
    elite_count: int = 1
    kernel_launch_overhead: float = 1e-4
    transfer_cost_per_byte: float = 1e-9
    default_iter_count: int = 1000
    build_cmd: str = ""
    run_cmd: str = ""
    reference_output: str | None = None
    timeout_seconds: float = 300.0
    rel_tol: float = 1e-6

    def validate(self) -> None:
        if self.input_kind not in (INPUT_MINI, INPUT_IR):
            raise ConfigError(f"unknown input kind {self.input_kind!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.evaluator not in (EVALUATOR_COST_MODEL, EVALUATOR_EXTERNAL):
            raise ConfigError(f"unknown evaluator {self.evaluator!r}")
        if not Path(self.input_path).exists():
            raise ConfigError(f"input file not found: {self.input_path}")
        if self.db_path is not None and not Path(self.db_path).exists():
            raise ConfigError(f"pattern DB not found: {self.db_path}")

    def ga_params(self) -> GAParams:
        try:
            return GAParams(
                population_size=self.population_size,
                generations=self.generations,
                crossover_rate=self.crossover_rate,
                mutation_rate_per_bit=self.mutation_rate_per_bit,
                elite_count=self.elite_count,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class Report:
    config: dict
    model_summary: dict
    block: dict
    screen: dict
    ga: dict | None
    chosen: dict
    notes: list[str]
    measurements: list[dict] = field(default_factory=list)
    emitted_code: str | None = None  # winning annotated source, written alongside

    def to_json_dict(self, timestamp: str) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "timestamp": timestamp,
            "config": self.config,
            "model": self.model_summary,
            "block_stage": self.block,
            "screen": self.screen,
            "ga": self.ga,
            "chosen": self.chosen,
            "notes": self.notes,
            "measurement_count": len(self.measurements),
        }


class _MeasurementLog:
    def __init__(self):
        self.records: list[dict] = []

    def add(self, stage: str, subset, genome, generation, result) -> None:
        self.records.append(
            {
                "index": len(self.records),
                "stage": stage,
                "block_subset": list(subset),
                "genome": genome,
                "generation": generation,
                "time": result.time_seconds if result.feasible else "inf",
                "validity": result.validity,
                "evaluator": result.evaluator_id,
            }
        )


def _load_model(config: PipelineConfig) -> ProgramModel:
    text = Path(config.input_path).read_bytes()
    if config.input_kind == INPUT_IR:
        return load_ir_document(text)
    options = ParseOptions(default_iter_count=config.default_iter_count)
    return parse_mini_source(text.decode("utf-8"), options)


def _build_evaluator(config: PipelineConfig):
    if config.evaluator == EVALUATOR_COST_MODEL:
        return CostModelEvaluator(
            CostModelParams(config.kernel_launch_overhead, config.transfer_cost_per_byte)
        )
    reference = None
    if config.reference_output:
        ref_path = Path(config.reference_output)
        if not ref_path.exists():
            raise EvaluatorConfigError(f"reference output file not found: {ref_path}")
        reference = tuple(
            float(line) for line in ref_path.read_text().split() if line.strip()
        )
    return ExternalCommandEvaluator(
        ExternalCommands(config.build_cmd, config.run_cmd, reference),
        workdir=Path(config.out_dir) / "work",
        timeout_seconds=config.timeout_seconds,
        rel_tol=config.rel_tol,
    )


def run_pipeline(config: PipelineConfig) -> Report:
    """Execute the full flow and return the report (not yet written to disk).

    Raises ConfigError / ParseError / IRDocumentError / EvaluatorConfigError
    before producing any partial output.
    """
    config.validate()
    model = _load_model(config)
    evaluator = _build_evaluator(config)
    log = _MeasurementLog()
    notes: list[str] = []

    db = load_pattern_db(config.db_path) if config.db_path else PatternDB(())
    raw_candidates = match_by_name(model, db) + match_by_similarity(model, db)
    resolved, conflict_notes = resolve_candidates(model, raw_candidates)
    notes.extend(conflict_notes)
    applicable = [c for c in resolved if c.interface_compatible or config.allow_interface_change]
    pending = [c for c in resolved if not c.interface_compatible and not config.allow_interface_change]

    def on_block_measure(subset, request, result):
        log.add(STAGE_BLOCK, subset, None, None, result)

    outcome = search_block_combination(
        model, db, applicable, evaluator, config.backend, on_block_measure
    )
    subset_models = {m.subset: m.model for m in outcome.measurements}
    residual = subset_models[outcome.chosen_subset]

    verdicts = screen_model(residual)
    space = build_genome_space(residual, verdicts)

    ga_section = None
    ga_results: list[tuple[tuple[int, ...], object]] = []  # (subset, SearchResult)
    if not space.is_empty:
        params = config.ga_params()
        if config.exhaustive:
            # full cross-enumeration: every measured block subset times every
            # genome of its residual program
            for m in outcome.measurements:
                sub_verdicts = screen_model(m.model)
                sub_space = build_genome_space(m.model, sub_verdicts)
                if sub_space.is_empty:
                    continue
                if sub_space.length > config.exhaustive_cap:
                    notes.append(
                        f"subset {list(m.subset)}: genome length {sub_space.length} exceeds "
                        f"the exhaustive cap {config.exhaustive_cap}; falling back to the GA"
                    )
                    result = run_search(
                        m.model, sub_verdicts, evaluator, params, config.backend,
                        _ga_logger(log, m.subset),
                    )
                else:
                    result = exhaustive_search(
                        m.model, sub_verdicts, evaluator, config.exhaustive_cap, config.backend,
                        _ga_logger(log, m.subset),
                    )
                ga_results.append((m.subset, result))
        else:
            result = run_search(
                residual, verdicts, evaluator, params, config.backend,
                _ga_logger(log, outcome.chosen_subset),
            )
            ga_results.append((outcome.chosen_subset, result))
        primary = next(
            (r for s, r in ga_results if s == outcome.chosen_subset), ga_results[0][1]
        )
        ga_section = {
            "genome_length": primary.genome_length,
            "evaluations": sum(r.evaluations_performed for _, r in ga_results),
            "cache_hits": sum(r.cache_hits for _, r in ga_results),
            "no_offload": primary.no_offload,
            "best_genome": "".join(str(b) for b in primary.best_genome),
            "best_time": primary.best_time,
            "history": [
                {
                    "generation": h.generation,
                    "best": h.best_time,
                    "mean": h.mean_time,
                    "evaluations": h.evaluations,
                }
                for h in primary.history
            ],
            "mode": "exhaustive" if config.exhaustive else "ga",
        }

    chosen = _select_winner(log.records)
    chosen_model, chosen_pattern, chosen_plan = _materialize_choice(
        chosen, subset_models
    )
    code_name = None
    emitted = None
    plan_records: list[dict] = []
    if chosen_model is not None:
        emitted = emit_annotated(chosen_model, chosen_pattern, chosen_plan, config.backend)
        code_name = f"best.{BACKEND_EXTENSIONS[config.backend]}"
        plan_records = [
            {
                "var": chosen_model.var(d.var_id).name,
                "dir": d.direction,
                "region": d.placement.region,
                "multiplicity": d.multiplicity,
                "batch": d.batch_id,
            }
            for d in chosen_plan.directives
        ]

    report = Report(
        config=_config_echo(config),
        model_summary={
            "input": str(config.input_path),
            "loops": len(model.loops),
            "calls": len(model.calls),
            "variables": len(model.variables),
            "language": model.source_language_tag,
        },
        block={
            "candidates": [_candidate_dict(c) for c in resolved],
            "applicable": [_candidate_dict(c) for c in applicable],
            "pending_confirmation": [_candidate_dict(c) for c in pending],
            "chosen_subset": list(outcome.chosen_subset),
            "chosen_time": outcome.chosen_time,
            "subsets_measured": len(outcome.measurements),
        },
        screen={
            "verdicts": [
                {"loop": v.loop_id, "offloadable": v.offloadable, "reason": v.reason}
                for v in verdicts
            ],
            "genome_length": space.length,
        },
        ga=ga_section,
        chosen={**chosen, "code_path": code_name, "transfer_plan": plan_records},
        notes=notes,
        measurements=log.records,
        emitted_code=emitted,
    )
    return report


def _ga_logger(log: _MeasurementLog, subset):
    def on_evaluation(bits, request, result):
        log.add(
            STAGE_GA,
            subset,
            "".join(str(b) for b in bits),
            request.tags.get("generation"),
            result,
        )

    return on_evaluation


def _select_winner(records: list[dict]) -> dict:
    best = None
    for rec in records:
        if rec["time"] == "inf":
            continue
        if best is None or rec["time"] < best["time"]:
            best = rec
    if best is None:
        return {"stage": None, "block_subset": [], "genome": None, "time": None}
    return {
        "stage": best["stage"],
        "block_subset": best["block_subset"],
        "genome": best["genome"],
        "time": best["time"],
    }


def _materialize_choice(chosen: dict, subset_models: dict):
    if chosen["stage"] is None:
        return None, None, None
    model = subset_models[tuple(chosen["block_subset"])]
    verdicts = screen_model(model)
    space = build_genome_space(model, verdicts)
    genome = chosen["genome"]
    bits = tuple(int(c) for c in genome) if genome else (0,) * space.length
    pattern = pattern_from_genome(model, space, bits)
    plan = plan_transfers(model, pattern) if any(bits) else TransferPlan(())
    return model, pattern, plan


def _candidate_dict(c: BlockCandidate) -> dict:
    return {
        "block": f"{c.block.kind}:{c.block.id}",
        "record": c.record_id,
        "match": c.match_kind,
        "score": round(c.similarity_score, 6),
        "interface_compatible": c.interface_compatible,
    }


def _config_echo(config: PipelineConfig) -> dict:
    return {
        "input": str(config.input_path),
        "input_kind": config.input_kind,
        "backend": config.backend,
        "evaluator": config.evaluator,
        "db": str(config.db_path) if config.db_path else None,
        "seed": config.seed,
        "out": str(config.out_dir),
        "allow_interface_change": config.allow_interface_change,
        "exhaustive": config.exhaustive,
        "population_size": config.population_size,
        "generations": config.generations,
        "crossover_rate": config.crossover_rate,
        "mutation_rate_per_bit": config.mutation_rate_per_bit,
        "elite_count": config.elite_count,
        "kernel_launch_overhead": config.kernel_launch_overhead,
        "transfer_cost_per_byte": config.transfer_cost_per_byte,
    }


def write_report(report: Report, out_dir) -> list[Path]:
    """Write report.json, measurements.jsonl, and the winning annotated
    source. Idempotent: a re-run overwrites in place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(report.to_json_dict(timestamp), indent=2) + "\n", encoding="utf-8"
    )
    written.append(report_path)

    lines = [json.dumps(rec) for rec in report.measurements]
    measurements_path = out / "measurements.jsonl"
    measurements_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    written.append(measurements_path)

    if report.emitted_code is not None and report.chosen.get("code_path"):
        code_path = out / report.chosen["code_path"]
        code_path.write_text(report.emitted_code, encoding="utf-8")
        written.append(code_path)
    return written
