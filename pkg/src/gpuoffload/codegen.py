"""Render a model back to source text, optionally annotated with an offload
pattern and its transfer plan.

Backends:

  c_openacc           GPU nests get `#pragma acc kernels` (or `#pragma acc
                      parallel loop` when the nest is a single inner loop),
                      transfer batches become `#pragma acc data copy(...)`
                      lines at their placement points, and nests whose copies
                      were hoisted above them get `#pragma acc data
                      present(...)` at re-entry. Annotations are purely
                      additive lines.

  python_cuda_marker  A transfer-manifest comment header plus
                      `# @gpu-kernel begin/end` markers around GPU nests.
                      Also purely additive.

  java_lambda_marker  GPU nest headers are rewritten to
                      `IntStream.range(lo, hi).parallel().forEach(i -> {`;
                      transfer batches become `// @gpu-transfer` comments.

A CPU-only pattern with an empty plan reproduces the plain pretty-printed
program byte for byte on every backend. Inlined calls are printed expanded;
the call boundary is a model-level notion only.
"""

from __future__ import annotations

from .model import (
    ArrayRef,
    Assign,
    CallStmt,
    DeclStmt,
    Expr,
    LoopStmt,
    Num,
    ProgramModel,
    ReplacedBlock,
    VarRef,
)
from .patterns import GPU, OffloadPattern
from .transfers import HOST_TO_DEVICE, TransferDirective, TransferPlan

C_OPENACC = "c_openacc"
PYTHON_CUDA_MARKER = "python_cuda_marker"
JAVA_LAMBDA_MARKER = "java_lambda_marker"
BACKENDS = (C_OPENACC, PYTHON_CUDA_MARKER, JAVA_LAMBDA_MARKER)

BACKEND_EXTENSIONS = {C_OPENACC: "c", PYTHON_CUDA_MARKER: "py", JAVA_LAMBDA_MARKER: "java"}

#: prefixes of annotation lines that stripping removes (additive backends)
ANNOTATION_PREFIXES = {C_OPENACC: "#pragma acc ", PYTHON_CUDA_MARKER: "# @gpu-"}

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def render_expr(model: ProgramModel, expr: Expr, parent_prec: int = 0) -> str:
    if isinstance(expr, Num):
        return repr(float(expr.value)) if expr.is_float else str(int(expr.value))
    if isinstance(expr, VarRef):
        return model.var(expr.var_id).name
    if isinstance(expr, ArrayRef):
        return f"{model.var(expr.var_id).name}[{render_expr(model, expr.index)}]"
    prec = _PREC[expr.op]
    left = render_expr(model, expr.left, prec)
    right = render_expr(model, expr.right, prec + 1)
    text = f"{left} {expr.op} {right}"
    return f"({text})" if prec < parent_prec else text


class _Emitter:
    def __init__(
        self,
        model: ProgramModel,
        backend: str,
        pattern: OffloadPattern | None,
        plan: TransferPlan | None,
    ):
        self.model = model
        self.backend = backend
        self.pattern = pattern
        self.plan = plan or TransferPlan(())
        self.lines: list[str] = []
        self.before: dict[tuple[int, int], list[list[TransferDirective]]] = {}
        self.after: dict[tuple[int, int], list[list[TransferDirective]]] = {}
        for batch_id, directives in sorted(self.plan.batches().items()):
            p = directives[0].placement
            table = self.before if p.side == "before" else self.after
            table.setdefault((p.region, p.stmt_index), []).append(directives)

    # -- helpers ----------------------------------------------------------

    def emit(self, indent: int, text: str) -> None:
        self.lines.append("  " * indent + text)

    def var_names(self, directives: list[TransferDirective]) -> str:
        return ", ".join(self.model.var(d.var_id).name for d in directives)

    def is_gpu_root(self, loop_id: int) -> bool:
        return self.pattern is not None and loop_id in self.pattern.gpu_roots

    def hoisted_in_vars(self, loop_id: int) -> list[TransferDirective]:
        """Inbound directives covering this nest whose copy sits strictly
        above it (the data is already resident on re-entry)."""
        out = []
        for d in self.plan.directives:
            if (
                d.direction == HOST_TO_DEVICE
                and loop_id in d.gpu_roots
                and d.placement.anchor_loop != loop_id
            ):
                out.append(d)
        return out

    def transfer_line(self, indent: int, directives: list[TransferDirective]) -> None:
        names = self.var_names(directives)
        if self.backend == C_OPENACC:
            self.emit(indent, f"#pragma acc data copy({names})")
        elif self.backend == PYTHON_CUDA_MARKER:
            pass  # manifest header carries the transfer set
        else:
            tag = "h2d" if directives[0].direction == HOST_TO_DEVICE else "d2h"
            self.emit(indent, f"// @gpu-transfer {tag}({names})")

    # -- program ------------------------------------------------------------

    def run(self) -> str:
        if self.backend == PYTHON_CUDA_MARKER and self.plan.directives:
            for batch_id, directives in sorted(self.plan.batches().items()):
                for d in directives:
                    tag = "h2d" if d.direction == HOST_TO_DEVICE else "d2h"
                    name = self.model.var(d.var_id).name
                    self.emit(
                        0,
                        f"# @gpu-transfer {tag} {name} batch={batch_id} "
                        f"multiplicity={d.multiplicity} anchor=loop{d.placement.anchor_loop}",
                    )
        self.toplevel()
        return "\n".join(self.lines) + "\n"

    def toplevel(self) -> None:
        """Root region: declarations stay at file scope, everything else is
        wrapped in the entry function so the output reparses."""
        region_id = self.model.root_region
        region = self.model.region(region_id)
        opened = False
        for idx, stmt in enumerate(region.statements):
            if not opened and isinstance(stmt, DeclStmt):
                self.statement(region_id, idx, stmt, 0)
                continue
            if not opened:
                self.emit(0, "func main() {")
                opened = True
            for batch in self.before.get((region_id, idx), []):
                self.transfer_line(1, batch)
            self.statement(region_id, idx, stmt, 1)
            for batch in self.after.get((region_id, idx), []):
                self.transfer_line(1, batch)
        if opened:
            self.emit(0, "}")

    def region(self, region_id: int, indent: int) -> None:
        region = self.model.region(region_id)
        for idx, stmt in enumerate(region.statements):
            for batch in self.before.get((region_id, idx), []):
                self.transfer_line(indent, batch)
            self.statement(region_id, idx, stmt, indent)
            for batch in self.after.get((region_id, idx), []):
                self.transfer_line(indent, batch)

    def statement(self, region_id: int, idx: int, stmt, indent: int) -> None:
        model = self.model
        if isinstance(stmt, DeclStmt):
            var = model.var(stmt.var_id)
            suffix = f"[{var.length}]" if var.is_array else ""
            init = "" if stmt.initializer is None else f" = {render_expr(model, stmt.initializer)}"
            self.emit(indent, f"{var.base_type} {var.name}{suffix}{init};")
        elif isinstance(stmt, Assign):
            target = render_expr(model, stmt.target)
            self.emit(indent, f"{target} = {render_expr(model, stmt.value)};")
        elif isinstance(stmt, CallStmt):
            call = model.call(stmt.call_id)
            subtree = model.region(call.subtree)
            if subtree.statements:
                self.region(call.subtree, indent)
            else:
                args = ", ".join(model.var(v).name for v in call.arg_var_ids)
                self.emit(indent, f"{call.callee_name}({args});")
        elif isinstance(stmt, ReplacedBlock):
            args = ", ".join(model.var(v).name for v in stmt.arg_var_ids)
            self.emit(indent, f"{stmt.replacement_name}({args});")
        elif isinstance(stmt, LoopStmt):
            self.loop(stmt.loop_id, indent)

    def loop(self, loop_id: int, indent: int) -> None:
        model = self.model
        loop = model.loop(loop_id)
        root = self.is_gpu_root(loop_id)
        index_name = model.var(loop.index_var).name
        lower = render_expr(model, loop.lower)
        upper = render_expr(model, loop.upper)
        header = f"for ({index_name} = {lower}; {index_name} < {upper}; {index_name}++) {{"

        if root and self.backend == C_OPENACC:
            hoisted = self.hoisted_in_vars(loop_id)
            if hoisted:
                self.emit(indent, f"#pragma acc data present({self.var_names(hoisted)})")
            is_inner_leaf = loop.parent is not None and not model.child_loops(loop_id)
            pragma = "parallel loop" if is_inner_leaf else "kernels"
            self.emit(indent, f"#pragma acc {pragma}")
        elif root and self.backend == PYTHON_CUDA_MARKER:
            self.emit(indent, "# @gpu-kernel begin")

        if root and self.backend == JAVA_LAMBDA_MARKER:
            self.emit(
                indent,
                f"IntStream.range({lower}, {upper}).parallel().forEach({index_name} -> {{",
            )
            self.region(loop.body, indent + 1)
            self.emit(indent, "});")
        else:
            self.emit(indent, header)
            self.region(loop.body, indent + 1)
            self.emit(indent, "}")

        if root and self.backend == PYTHON_CUDA_MARKER:
            self.emit(indent, "# @gpu-kernel end")


def pretty_print(model: ProgramModel) -> str:
    """Canonical unannotated source text for a model."""
    return _Emitter(model, C_OPENACC, None, None).run()


def emit_annotated(
    model: ProgramModel,
    pattern: OffloadPattern,
    plan: TransferPlan,
    backend: str,
) -> str:
    """Deterministic annotated emission for one backend. A CPU-only pattern
    with no transfers reproduces pretty_print(model) exactly."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    for loop_id in pattern.gpu_roots:
        model.loop(loop_id)  # raises ModelIntegrityError on stale patterns
    return _Emitter(model, backend, pattern, plan).run()


def strip_annotations(text: str, backend: str) -> str:
    """Remove the annotation lines of an additive backend."""
    prefix = ANNOTATION_PREFIXES[backend]
    kept = [ln for ln in text.splitlines() if not ln.lstrip().startswith(prefix)]
    return "\n".join(kept) + "\n"
