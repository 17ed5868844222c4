"""Programmatic construction of ProgramModel instances.

The mini-language parser, the block-replacement transformer, and the test
fixtures all funnel through ModelBuilder so occurrence classification is
implemented exactly once: declarations yield define, assignment targets yield
set, everything on a right-hand side or inside an index expression yields
read. Loop headers contribute set+read of the index plus reads of the bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import (
    C_LIKE,
    DEFINE,
    READ,
    SET,
    ArrayRef,
    Assign,
    CallStmt,
    DeclStmt,
    Expr,
    FunctionBlockCall,
    LoopNode,
    LoopStmt,
    ModelIntegrityError,
    Num,
    ProgramModel,
    Region,
    ReplacedBlock,
    VarRef,
    VariableDecl,
    VariableOccurrence,
    expr_var_ids,
)


@dataclass
class _RegionDraft:
    id: int
    enclosing_loop: int | None
    statements: list = field(default_factory=list)


class ModelBuilder:
    def __init__(
        self,
        language: str = C_LIKE,
        default_iter_count: int = 1000,
        default_cpu_cost_per_iter: float = 1.0,
        default_gpu_cost_per_iter: float = 0.1,
    ):
        self.language = language
        self.default_iter_count = default_iter_count
        self.default_cpu_cost_per_iter = default_cpu_cost_per_iter
        self.default_gpu_cost_per_iter = default_gpu_cost_per_iter
        self._vars: list[VariableDecl] = []
        self._var_ids: dict[str, int] = {}
        self._regions: dict[int, _RegionDraft] = {}
        self._loops: list[LoopNode] = []
        self._calls: list[FunctionBlockCall] = []
        self._next_region = 0
        self.root = self._new_region(None)

    # -- declarations ---------------------------------------------------------

    def declare(
        self,
        name: str,
        base_type: str = "float",
        is_array: bool = False,
        length: int = 0,
        initializer: Expr | None = None,
        region_id: int | None = None,
    ) -> int:
        if name in self._var_ids:
            raise ModelIntegrityError(f"variable {name!r} declared twice")
        var = VariableDecl(len(self._vars), name, base_type, is_array, length)
        self._vars.append(var)
        self._var_ids[name] = var.id
        rid = self.root if region_id is None else region_id
        occs = [VariableOccurrence(var.id, DEFINE, rid, var.size_bytes)]
        if initializer is not None:
            occs.append(VariableOccurrence(var.id, SET, rid, var.size_bytes))
            occs.extend(self._reads(initializer, rid))
        self._regions[rid].statements.append(DeclStmt(var.id, initializer, tuple(occs)))
        return var.id

    def var_id(self, name: str) -> int:
        try:
            return self._var_ids[name]
        except KeyError:
            raise ModelIntegrityError(f"variable {name!r} not declared") from None

    def var_name(self, var_id: int) -> str:
        return self._vars[var_id].name

    # -- expression helpers -----------------------------------------------------

    def ref(self, name: str) -> VarRef:
        return VarRef(self.var_id(name))

    def at(self, name: str, index: Expr) -> ArrayRef:
        return ArrayRef(self.var_id(name), index)

    # -- statements -------------------------------------------------------------

    def assign(self, region_id: int, target: VarRef | ArrayRef, value: Expr) -> None:
        occs: list[VariableOccurrence] = []
        if isinstance(target, ArrayRef):
            occs.append(self._occ(target.var_id, SET, region_id))
            occs.extend(self._reads(target.index, region_id))
        else:
            occs.append(self._occ(target.var_id, SET, region_id))
        occs.extend(self._reads(value, region_id))
        self._regions[region_id].statements.append(Assign(target, value, tuple(occs)))

    def for_loop(
        self,
        region_id: int,
        index_name: str,
        lower: Expr,
        upper: Expr,
        iter_count: int | None = None,
        cpu_cost_per_iter: float | None = None,
        gpu_cost_per_iter: float | None = None,
        gpu_valid: bool = True,
        force_directive_error: bool = False,
    ) -> tuple[int, int]:
        """Append a counted loop; returns (loop_id, body_region_id)."""
        index_var = self.var_id(index_name)
        loop_id = len(self._loops)
        body = self._new_region(loop_id)
        if iter_count is None:
            iter_count = self._derive_iter_count(lower, upper)
        header = [
            self._occ(index_var, SET, body),
            self._occ(index_var, READ, body),
        ]
        header.extend(self._reads(lower, body))
        header.extend(self._reads(upper, body))
        parent = self._owning_loop(region_id)
        node = LoopNode(
            id=loop_id,
            parent=parent,
            body=body,
            index_var=index_var,
            lower=lower,
            upper=upper,
            iter_count=max(1, iter_count),
            cpu_cost_per_iter=(
                self.default_cpu_cost_per_iter if cpu_cost_per_iter is None else cpu_cost_per_iter
            ),
            gpu_cost_per_iter=(
                self.default_gpu_cost_per_iter if gpu_cost_per_iter is None else gpu_cost_per_iter
            ),
            gpu_valid=gpu_valid,
            force_directive_error=force_directive_error,
            header_occurrences=tuple(header),
        )
        self._loops.append(node)
        self._regions[region_id].statements.append(LoopStmt(loop_id))
        return loop_id, body

    def call_external(
        self, region_id: int, name: str, arg_names: list[str], pure: bool = False
    ) -> int:
        arg_ids = tuple(self.var_id(n) for n in arg_names)
        subtree = self._new_region(self._owning_loop(region_id))
        call = FunctionBlockCall(
            id=len(self._calls),
            callee_name=name,
            subtree=subtree,
            arg_types=tuple(self._vars[i].semantic_type for i in arg_ids),
            return_type="void",
            arg_var_ids=arg_ids,
            pure=pure,
        )
        self._calls.append(call)
        occs = tuple(self._occ(i, READ, region_id) for i in arg_ids)
        self._regions[region_id].statements.append(CallStmt(call.id, occs))
        return call.id

    def begin_inline_call(
        self, region_id: int, name: str, arg_names: list[str], pure: bool = True
    ) -> tuple[int, int]:
        """Call whose body is expanded in place; statements added to the
        returned subtree region afterwards. Returns (call_id, subtree_id)."""
        arg_ids = tuple(self.var_id(n) for n in arg_names)
        subtree = self._new_region(self._owning_loop(region_id))
        call = FunctionBlockCall(
            id=len(self._calls),
            callee_name=name,
            subtree=subtree,
            arg_types=tuple(self._vars[i].semantic_type for i in arg_ids),
            return_type="void",
            arg_var_ids=arg_ids,
            pure=pure,
        )
        self._calls.append(call)
        self._regions[region_id].statements.append(CallStmt(call.id, ()))
        return call.id, subtree

    def replaced_block(
        self,
        region_id: int,
        replacement_name: str,
        arg_var_ids: tuple[int, ...],
        speedup_hint: float,
        base_cpu_time: float,
        record_id: str,
        occurrences: tuple[VariableOccurrence, ...],
    ) -> None:
        occs = tuple(
            VariableOccurrence(o.var_id, o.kind, region_id, o.size_bytes) for o in occurrences
        )
        self._regions[region_id].statements.append(
            ReplacedBlock(
                replacement_name, arg_var_ids, speedup_hint, base_cpu_time, record_id, occs
            )
        )

    # -- assembly ----------------------------------------------------------------

    def finish(self, validate: bool = True) -> ProgramModel:
        regions = {
            rid: Region(rid, draft.enclosing_loop, tuple(draft.statements))
            for rid, draft in self._regions.items()
        }
        model = ProgramModel(
            root_region=self.root,
            regions=regions,
            loops=list(self._loops),
            calls=list(self._calls),
            variables=list(self._vars),
            source_language_tag=self.language,
        )
        if validate:
            model.validate()
        return model

    # -- internals -----------------------------------------------------------------

    def _new_region(self, enclosing_loop: int | None) -> int:
        rid = self._next_region
        self._next_region += 1
        self._regions[rid] = _RegionDraft(rid, enclosing_loop)
        return rid

    def _owning_loop(self, region_id: int) -> int | None:
        return self._regions[region_id].enclosing_loop

    def _occ(self, var_id: int, kind: str, region_id: int) -> VariableOccurrence:
        return VariableOccurrence(var_id, kind, region_id, self._vars[var_id].size_bytes)

    def _reads(self, expr: Expr, region_id: int) -> list[VariableOccurrence]:
        return [self._occ(v, READ, region_id) for v in expr_var_ids(expr)]

    def _derive_iter_count(self, lower: Expr, upper: Expr) -> int:
        if isinstance(lower, Num) and isinstance(upper, Num):
            return max(1, int(upper.value) - int(lower.value))
        return self.default_iter_count
