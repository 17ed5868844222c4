"""Command-line entry point.

    gpuoffload --input prog.mini --db patterns.json --seed 7 --out results/

Options may also come from a key-value config file (--config); explicit flags
win. Exit codes: 0 success (report written), 2 configuration error, 3 input
parse/load error, 4 evaluator misconfiguration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .codegen import BACKENDS, C_OPENACC
from .evaluators import EvaluatorConfigError
from .irdoc import IRDocumentError
from .minilang import ParseError
from .model import ModelIntegrityError
from .pipeline import (
    ConfigError,
    EVALUATOR_COST_MODEL,
    EVALUATOR_EXTERNAL,
    INPUT_IR,
    INPUT_MINI,
    PipelineConfig,
    run_pipeline,
    write_report,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_EVALUATOR = 4

_BOOL_KEYS = {"allow_interface_change", "exhaustive"}
_INT_KEYS = {
    "seed", "population_size", "generations", "elite_count", "default_iter_count",
    "exhaustive_cap",
}
_FLOAT_KEYS = {
    "crossover_rate", "mutation_rate_per_bit", "kernel_launch_overhead",
    "transfer_cost_per_byte", "timeout_seconds", "rel_tol",
}
_STR_KEYS = {
    "input", "input_kind", "backend", "evaluator", "db", "out", "build_cmd", "run_cmd",
    "reference_output",
}


def _parse_config_file(path: Path) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ConfigError(f"{path}:{lineno}: {key} must be true/false")
            values[key] = value.lower() in ("true", "1")
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpuoffload",
        description="Discover a fast GPU offload pattern for a program model.",
    )
    parser.add_argument("--config", type=Path, help="key-value config file")
    parser.add_argument("--input", help="program source or model document")
    parser.add_argument("--input-kind", choices=[INPUT_MINI, INPUT_IR], dest="input_kind")
    parser.add_argument("--backend", choices=list(BACKENDS))
    parser.add_argument(
        "--evaluator", choices=[EVALUATOR_COST_MODEL, EVALUATOR_EXTERNAL]
    )
    parser.add_argument("--db", help="pattern DB (JSON array of replacement records)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--allow-interface-change",
        action="store_true",
        default=None,
        dest="allow_interface_change",
        help="apply replacements whose interface differs from the original block",
    )
    parser.add_argument(
        "--exhaustive",
        action="store_true",
        default=None,
        help="enumerate every block subset and loop genome instead of running the GA",
    )
    return parser


def _merge_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        values.update(_parse_config_file(args.config))
    for key in ("input", "input_kind", "backend", "evaluator", "db", "seed", "out",
                "allow_interface_change", "exhaustive"):
        arg = getattr(args, key)
        if arg is not None:
            values[key] = arg
    if "input" not in values:
        raise ConfigError("an input file is required (--input or config key 'input')")
    return PipelineConfig(
        input_path=values["input"],
        input_kind=values.get("input_kind", INPUT_MINI),
        backend=values.get("backend", C_OPENACC),
        evaluator=values.get("evaluator", EVALUATOR_COST_MODEL),
        db_path=values.get("db"),
        seed=values.get("seed", 0),
        out_dir=values.get("out", "offload-out"),
        allow_interface_change=values.get("allow_interface_change", False),
        exhaustive=values.get("exhaustive", False),
        exhaustive_cap=values.get("exhaustive_cap", 14),
        population_size=values.get("population_size", 12),
        generations=values.get("generations", 20),
        crossover_rate=values.get("crossover_rate", 0.9),
        mutation_rate_per_bit=values.get("mutation_rate_per_bit", 0.05),
        elite_count=values.get("elite_count", 1),
        kernel_launch_overhead=values.get("kernel_launch_overhead", 1e-4),
        transfer_cost_per_byte=values.get("transfer_cost_per_byte", 1e-9),
        default_iter_count=values.get("default_iter_count", 1000),
        build_cmd=values.get("build_cmd", ""),
        run_cmd=values.get("run_cmd", ""),
        reference_output=values.get("reference_output"),
        timeout_seconds=values.get("timeout_seconds", 300.0),
        rel_tol=values.get("rel_tol", 1e-6),
    )


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        config = _merge_config(args)
        report = run_pipeline(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, IRDocumentError, ModelIntegrityError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except EvaluatorConfigError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR

    written = write_report(report, config.out_dir)
    chosen = report.chosen
    time = chosen.get("time")
    time_text = "no valid measurement" if time is None else f"time {time:.6g}"
    genome = chosen.get("genome") or "-"
    print(
        f"best pattern: stage={chosen.get('stage')} blocks={chosen.get('block_subset')} "
        f"genome={genome} ({time_text})"
    )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
