"""Language-independent program model.

Every stage of the offload pipeline (screening, transfer planning, the
genetic search, block matching, code emission) operates on this one
representation: a tree of regions holding statements, a flat document-ordered
loop list, variable declarations, and per-statement variable occurrences
classified as define / set / read.

All node cross-references are integer ids, so the object graph is acyclic and
models can be compared and serialized structurally. A ProgramModel is
immutable by convention once built; transformations produce new models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass


class ModelIntegrityError(Exception):
    """A model reference (loop/region/variable id) is missing or inconsistent."""


# occurrence kinds
DEFINE = "define"
SET = "set"
READ = "read"
OCCURRENCE_KINDS = (DEFINE, SET, READ)

# language tags
C_LIKE = "c_like"
PYTHON_LIKE = "python_like"
JAVA_LIKE = "java_like"
LANGUAGE_TAGS = (C_LIKE, PYTHON_LIKE, JAVA_LIKE)

SCALAR_SIZE_BYTES = 8
ARRAY_ELEMENT_BYTES = 8


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    """Numeric literal. is_float controls rendering (2 vs 2.0)."""

    value: float
    is_float: bool = False


@dataclass(frozen=True)
class VarRef:
    var_id: int


@dataclass(frozen=True)
class ArrayRef:
    var_id: int
    index: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


Expr = Num | VarRef | ArrayRef | BinOp


def expr_var_ids(expr: Expr) -> list[int]:
    """All variable ids referenced in an expression, in syntactic order."""
    out: list[int] = []

    def walk(e: Expr) -> None:
        if isinstance(e, VarRef):
            out.append(e.var_id)
        elif isinstance(e, ArrayRef):
            out.append(e.var_id)
            walk(e.index)
        elif isinstance(e, BinOp):
            walk(e.left)
            walk(e.right)

    walk(expr)
    return out


# ---------------------------------------------------------------------------
# Occurrences and declarations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableOccurrence:
    """One use of a variable, classified as exactly one of define/set/read."""

    var_id: int
    kind: str
    region: int
    size_bytes: int


@dataclass(frozen=True)
class VariableDecl:
    id: int
    name: str
    base_type: str  # "int" | "float"
    is_array: bool = False
    length: int = 0

    @property
    def size_bytes(self) -> int:
        if self.is_array:
            return self.length * ARRAY_ELEMENT_BYTES
        return SCALAR_SIZE_BYTES

    @property
    def semantic_type(self) -> str:
        return self.base_type + "[]" if self.is_array else self.base_type


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeclStmt:
    """Variable declaration site; carries the define occurrence (plus set and
    reads when an initializer is present)."""

    var_id: int
    initializer: Expr | None
    occurrences: tuple[VariableOccurrence, ...]


@dataclass(frozen=True)
class Assign:
    target: VarRef | ArrayRef
    value: Expr
    occurrences: tuple[VariableOccurrence, ...]


@dataclass(frozen=True)
class CallStmt:
    """Reference to a FunctionBlockCall; occurrences cover the argument uses
    for opaque (external) callees. Inlined callees keep theirs in the subtree."""

    call_id: int
    occurrences: tuple[VariableOccurrence, ...] = ()


@dataclass(frozen=True)
class LoopStmt:
    loop_id: int


@dataclass(frozen=True)
class ReplacedBlock:
    """Opaque stand-in for a block swapped for a device-library equivalent.

    base_cpu_time is the replaced subtree's cost-model CPU time for a single
    execution of the block; evaluators divide it by speedup_hint.
    """

    replacement_name: str
    arg_var_ids: tuple[int, ...]
    speedup_hint: float
    base_cpu_time: float
    record_id: str
    occurrences: tuple[VariableOccurrence, ...]


Stmt = DeclStmt | Assign | CallStmt | LoopStmt | ReplacedBlock

#: statement kinds that carry their own occurrence list
OCCURRENCE_STMTS = (DeclStmt, Assign, CallStmt, ReplacedBlock)


@dataclass(frozen=True)
class Region:
    """Ordered statement container. enclosing_loop is the loop whose body this
    region is (or, for call subtrees, the loop enclosing the call site);
    None at top level."""

    id: int
    enclosing_loop: int | None
    statements: tuple[Stmt, ...]


@dataclass(frozen=True)
class LoopNode:
    """One counted loop. Header occurrences (index set/read, bound reads)
    belong to the body region and execute on whichever side runs the loop."""

    id: int
    parent: int | None
    body: int  # region id
    index_var: int
    lower: Expr
    upper: Expr
    iter_count: int
    cpu_cost_per_iter: float = 1.0
    gpu_cost_per_iter: float = 0.1
    gpu_valid: bool = True
    force_directive_error: bool = False
    header_occurrences: tuple[VariableOccurrence, ...] = ()


@dataclass(frozen=True)
class FunctionBlockCall:
    """A call statement's block view: inlined callees carry their body as the
    subtree region; opaque callees use an empty subtree. pure gates the
    parallelizability screen for opaque callees."""

    id: int
    callee_name: str
    subtree: int  # region id
    arg_types: tuple[str, ...]
    return_type: str
    arg_var_ids: tuple[int, ...] = ()
    pure: bool = False


@dataclass(eq=False)
class ProgramModel:
    root_region: int
    regions: dict[int, Region]
    loops: list[LoopNode]
    calls: list[FunctionBlockCall]
    variables: list[VariableDecl]
    source_language_tag: str = C_LIKE

    # -- lookups ------------------------------------------------------------

    def region(self, region_id: int) -> Region:
        try:
            return self.regions[region_id]
        except KeyError:
            raise ModelIntegrityError(f"unknown region id {region_id}") from None

    def loop(self, loop_id: int) -> LoopNode:
        if 0 <= loop_id < len(self.loops):
            return self.loops[loop_id]
        raise ModelIntegrityError(f"unknown loop id {loop_id}")

    def call(self, call_id: int) -> FunctionBlockCall:
        if 0 <= call_id < len(self.calls):
            return self.calls[call_id]
        raise ModelIntegrityError(f"unknown call id {call_id}")

    def var(self, var_id: int) -> VariableDecl:
        if 0 <= var_id < len(self.variables):
            return self.variables[var_id]
        raise ModelIntegrityError(f"unknown variable id {var_id}")

    def var_by_name(self, name: str) -> VariableDecl:
        for v in self.variables:
            if v.name == name:
                return v
        raise ModelIntegrityError(f"no variable named {name!r}")

    # -- traversal ----------------------------------------------------------

    def region_occurrences(self, region_id: int) -> list[VariableOccurrence]:
        """Occurrences belonging to one region: the owning loop's header
        occurrences (if the region is a loop body) plus statement occurrences.
        Child regions are not included."""
        region = self.region(region_id)
        occs: list[VariableOccurrence] = []
        if region.enclosing_loop is not None:
            owner = self.loop(region.enclosing_loop)
            if owner.body == region_id:
                occs.extend(owner.header_occurrences)
        for stmt in region.statements:
            if isinstance(stmt, OCCURRENCE_STMTS):
                occs.extend(stmt.occurrences)
        return occs

    def walk_statements(self, region_id: int | None = None):
        """Yield (region_id, stmt_index, stmt) in document (pre-)order,
        descending into loop bodies and call subtrees."""
        if region_id is None:
            region_id = self.root_region
        region = self.region(region_id)
        for idx, stmt in enumerate(region.statements):
            yield region_id, idx, stmt
            if isinstance(stmt, LoopStmt):
                yield from self.walk_statements(self.loop(stmt.loop_id).body)
            elif isinstance(stmt, CallStmt):
                yield from self.walk_statements(self.call(stmt.call_id).subtree)

    def all_occurrences(self) -> list[VariableOccurrence]:
        occs: list[VariableOccurrence] = []
        seen_regions = [self.root_region]
        for rid, _, stmt in self.walk_statements():
            if isinstance(stmt, LoopStmt):
                seen_regions.append(self.loop(stmt.loop_id).body)
            elif isinstance(stmt, CallStmt):
                seen_regions.append(self.call(stmt.call_id).subtree)
        for rid in seen_regions:
            occs.extend(self.region_occurrences(rid))
        return occs

    def child_loops(self, loop_id: int | None) -> list[LoopNode]:
        return [l for l in self.loops if l.parent == loop_id]

    def gpu_subtree_loops(self, loop_id: int) -> list[int]:
        """loop_id plus all descendant loop ids, document order."""
        self.loop(loop_id)
        out = []
        for l in self.loops:
            lid: int | None = l.id
            while lid is not None:
                if lid == loop_id:
                    out.append(l.id)
                    break
                lid = self.loops[lid].parent
        return out

    def total_iterations(self, loop_id: int) -> int:
        """iter_count product over the loop and all its ancestors."""
        total = 1
        lid: int | None = loop_id
        while lid is not None:
            node = self.loop(lid)
            total *= node.iter_count
            lid = node.parent
        return total

    def enclosing_multiplicity(self, loop_id: int) -> int:
        """iter_count product over strict ancestors only."""
        node = self.loop(loop_id)
        return self.total_iterations(loop_id) // node.iter_count if node.iter_count else 1

    def loops_enclosing_region(self, region_id: int) -> list[int]:
        """Loop chain containing a region, innermost first. A loop's own body
        region counts as inside that loop."""
        region = self.region(region_id)
        chain: list[int] = []
        lid = region.enclosing_loop
        while lid is not None:
            chain.append(lid)
            lid = self.loop(lid).parent
        return chain

    def region_multiplicity(self, region_id: int) -> int:
        mult = 1
        for lid in self.loops_enclosing_region(region_id):
            mult *= self.loop(lid).iter_count
        return mult

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        """Raise ModelIntegrityError on dangling ids, out-of-order loops, or
        misclassified occurrences."""
        if self.root_region not in self.regions:
            raise ModelIntegrityError("root region missing from region table")
        for i, loop in enumerate(self.loops):
            if loop.id != i:
                raise ModelIntegrityError(
                    f"loop ids must be dense in document order; position {i} holds id {loop.id}"
                )
            if loop.iter_count < 1:
                raise ModelIntegrityError(f"loop {loop.id} has iter_count < 1")
            if loop.body not in self.regions:
                raise ModelIntegrityError(f"loop {loop.id} body region {loop.body} missing")
            if loop.parent is not None and not (0 <= loop.parent < len(self.loops)):
                raise ModelIntegrityError(f"loop {loop.id} has dangling parent {loop.parent}")
        for i, call in enumerate(self.calls):
            if call.id != i:
                raise ModelIntegrityError(f"call ids must be dense; position {i} holds {call.id}")
            if not call.callee_name:
                raise ModelIntegrityError(f"call {call.id} has empty callee name")
            if call.subtree not in self.regions:
                raise ModelIntegrityError(f"call {call.id} subtree region missing")
        for i, var in enumerate(self.variables):
            if var.id != i:
                raise ModelIntegrityError(f"variable ids must be dense; position {i} holds {var.id}")
        for occ in self.all_occurrences():
            if occ.kind not in OCCURRENCE_KINDS:
                raise ModelIntegrityError(f"bad occurrence kind {occ.kind!r}")
            self.var(occ.var_id)
            self.region(occ.region)
        # document order of self.loops must equal pre-order over the tree
        doc_order = [s.loop_id for _, _, s in self.walk_statements() if isinstance(s, LoopStmt)]
        if doc_order != [l.id for l in self.loops]:
            raise ModelIntegrityError("loop list is not in document order")
        # every loop's parent chain must terminate (dense ids make cycles
        # impossible only if parents strictly decrease; check explicitly)
        for loop in self.loops:
            seen = set()
            lid: int | None = loop.id
            while lid is not None:
                if lid in seen:
                    raise ModelIntegrityError(f"loop parent cycle through {lid}")
                seen.add(lid)
                lid = self.loops[lid].parent


# ---------------------------------------------------------------------------
# Core queries
# ---------------------------------------------------------------------------


def region_var_sets(model: ProgramModel, region_set) -> dict[str, set[int]]:
    """Union of variable ids by occurrence kind over the given regions.

    Returns {"defined": ..., "set_": ..., "read": ...}. Pure; unknown region
    ids raise ModelIntegrityError.
    """
    defined: set[int] = set()
    set_: set[int] = set()
    read: set[int] = set()
    for region_id in region_set:
        for occ in model.region_occurrences(region_id):
            if occ.kind == DEFINE:
                defined.add(occ.var_id)
            elif occ.kind == SET:
                set_.add(occ.var_id)
            else:
                read.add(occ.var_id)
    return {"defined": defined, "set_": set_, "read": read}


def loop_ancestors(model: ProgramModel, loop_id: int) -> list[int]:
    """Enclosing loop ids, outermost first; [] for a top-level loop."""
    chain: list[int] = []
    lid = model.loop(loop_id).parent
    while lid is not None:
        chain.append(lid)
        lid = model.loop(lid).parent
    chain.reverse()
    return chain


def loop_subtree_regions(model: ProgramModel, loop_id: int) -> list[int]:
    """All region ids inside a loop (its body, nested bodies, call subtrees)."""
    body = model.loop(loop_id).body
    out = [body]
    for rid, _, stmt in model.walk_statements(body):
        if isinstance(stmt, LoopStmt):
            out.append(model.loop(stmt.loop_id).body)
        elif isinstance(stmt, CallStmt):
            out.append(model.call(stmt.call_id).subtree)
    return out


# ---------------------------------------------------------------------------
# Position index (document order of statements and occurrences)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PositionedOccurrence:
    position: int
    occurrence: VariableOccurrence


class ModelIndex:
    """Document-order positions for statements, loop intervals, and
    occurrences. Built once per model; all pipeline stages that reason about
    before/inside/after use this."""

    def __init__(self, model: ProgramModel):
        self.model = model
        self.loop_interval: dict[int, tuple[int, int]] = {}
        self.loop_site: dict[int, tuple[int, int]] = {}  # loop id -> (region, stmt index)
        self.occurrences: list[PositionedOccurrence] = []
        self.by_var: dict[int, list[PositionedOccurrence]] = {}
        self._build()

    def _build(self) -> None:
        model = self.model
        counter = itertools.count()
        loop_stack: list[int] = []
        last_pos = 0

        def visit_region(region_id: int) -> None:
            nonlocal last_pos
            region = model.region(region_id)
            for idx, stmt in enumerate(region.statements):
                pos = next(counter)
                last_pos = pos
                if isinstance(stmt, OCCURRENCE_STMTS):
                    for occ in stmt.occurrences:
                        self._add(pos, occ)
                    if isinstance(stmt, CallStmt):
                        visit_region(model.call(stmt.call_id).subtree)
                elif isinstance(stmt, LoopStmt):
                    loop = model.loop(stmt.loop_id)
                    self.loop_site[loop.id] = (region_id, idx)
                    for occ in loop.header_occurrences:
                        self._add(pos, occ)
                    start = pos
                    loop_stack.append(loop.id)
                    visit_region(loop.body)
                    loop_stack.pop()
                    self.loop_interval[loop.id] = (start, last_pos)

        visit_region(model.root_region)

    def _add(self, pos: int, occ: VariableOccurrence) -> None:
        po = PositionedOccurrence(pos, occ)
        self.occurrences.append(po)
        self.by_var.setdefault(occ.var_id, []).append(po)

    def inside(self, position: int, loop_id: int) -> bool:
        start, end = self.loop_interval[loop_id]
        return start <= position <= end
