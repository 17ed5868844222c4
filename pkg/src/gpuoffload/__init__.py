"""Automatic GPU offload pattern discovery.

Given a program model (parsed from the bundled mini-language or loaded from
the JSON model document), the pipeline replaces known function blocks with
device-library equivalents, screens loops for parallelizability, searches
loop-offload bit patterns with a genetic algorithm, plans host/device
transfers with hoisting, and reports the fastest measured pattern.
"""

from .build import ModelBuilder
from .codegen import (
    BACKENDS,
    C_OPENACC,
    JAVA_LAMBDA_MARKER,
    PYTHON_CUDA_MARKER,
    emit_annotated,
    pretty_print,
    strip_annotations,
)
from .blocks import (
    BlockCandidate,
    BlockRef,
    PatternDB,
    PatternDBError,
    PatternRecord,
    apply_replacement,
    apply_replacements,
    characteristic_vector,
    load_pattern_db,
    match_by_name,
    match_by_similarity,
    resolve_candidates,
    search_block_combination,
    similarity_score,
)
from .evaluators import (
    CostModelEvaluator,
    CostModelParams,
    EvaluationRequest,
    EvaluatorConfigError,
    ExternalCommandEvaluator,
    ExternalCommands,
    MeasurementResult,
    cost_model_time,
    run_external,
    validate_output,
)
from .ga import (
    GAParams,
    Fitness,
    SearchResult,
    evaluate,
    exhaustive_search,
    init_population,
    next_generation,
    run_search,
)
from .irdoc import IRDocumentError, dump_ir_document, load_ir_document, models_equal
from .minilang import ParseError, ParseOptions, SemanticError, parse_mini_source, parse_snippet
from .model import (
    FunctionBlockCall,
    LoopNode,
    ModelIntegrityError,
    ProgramModel,
    Region,
    VariableDecl,
    VariableOccurrence,
    loop_ancestors,
    region_var_sets,
)
from .patterns import (
    GenomeSpace,
    OffloadPattern,
    PatternError,
    build_genome_space,
    pattern_from_genome,
)
from .pipeline import ConfigError, PipelineConfig, Report, run_pipeline, write_report
from .screen import ParallelizabilityVerdict, check_parallelizable, screen_model
from .transfers import (
    TransferDirective,
    TransferPlan,
    hoist_transfers,
    plan_transfers,
    required_transfers,
)

__version__ = "0.1.0"
