"""Serialization of ProgramModel as a language-neutral JSON document.

This is the on-disk exchange format that lets frontends for other source
languages feed the pipeline without linking against it: parse on their side,
emit this document, and hand it over. Occurrence kinds are carried explicitly
(they are recorded by the frontend, not re-derived here), attached to their
statement or loop-header site so loading reproduces the model exactly.

dump_ir_document / load_ir_document round-trip: loading a dumped model yields
a structurally identical model.
"""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

from .model import (
    ArrayRef,
    Assign,
    BinOp,
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
)

IR_DOCUMENT_VERSION = 1


class IRDocumentError(Exception):
    """The document violates the schema; the message names the offending path."""


def _schema() -> dict:
    text = (
        resources.files("gpuoffload")
        .joinpath("schemas/ir_document.schema.json")
        .read_text(encoding="utf-8")
    )
    return json.loads(text)


_VALIDATOR = jsonschema.Draft202012Validator(_schema())


# ---------------------------------------------------------------------------
# Dump
# ---------------------------------------------------------------------------


def _dump_expr(expr: Expr) -> dict:
    if isinstance(expr, Num):
        return {"num": expr.value, "float": expr.is_float}
    if isinstance(expr, VarRef):
        return {"var": expr.var_id}
    if isinstance(expr, ArrayRef):
        return {"array": expr.var_id, "index": _dump_expr(expr.index)}
    return {"op": expr.op, "left": _dump_expr(expr.left), "right": _dump_expr(expr.right)}


def _dump_stmt(stmt) -> dict:
    if isinstance(stmt, DeclStmt):
        out = {"decl": stmt.var_id}
        if stmt.initializer is not None:
            out["init"] = _dump_expr(stmt.initializer)
        return out
    if isinstance(stmt, Assign):
        return {"assign": _dump_expr(stmt.target), "value": _dump_expr(stmt.value)}
    if isinstance(stmt, LoopStmt):
        return {"loop": stmt.loop_id}
    if isinstance(stmt, CallStmt):
        return {"call": stmt.call_id}
    return {
        "replaced": stmt.replacement_name,
        "args": list(stmt.arg_var_ids),
        "speedup_hint": stmt.speedup_hint,
        "base_cpu_time": stmt.base_cpu_time,
        "record": stmt.record_id,
    }


def model_to_document(model: ProgramModel) -> dict:
    occurrences: list[dict] = []
    for rid in sorted(model.regions):
        region = model.regions[rid]
        for idx, stmt in enumerate(region.statements):
            occs = getattr(stmt, "occurrences", ())
            for occ in occs:
                occurrences.append(
                    {
                        "var": occ.var_id,
                        "kind": occ.kind,
                        "region": occ.region,
                        "site": {"stmt": [rid, idx]},
                    }
                )
    for loop in model.loops:
        for occ in loop.header_occurrences:
            occurrences.append(
                {
                    "var": occ.var_id,
                    "kind": occ.kind,
                    "region": occ.region,
                    "site": {"loop_header": loop.id},
                }
            )
    return {
        "version": IR_DOCUMENT_VERSION,
        "language": model.source_language_tag,
        "root_region": model.root_region,
        "variables": [
            {"id": v.id, "name": v.name, "type": v.base_type, "array": v.is_array,
             "length": v.length}
            for v in model.variables
        ],
        "regions": [
            {
                "id": rid,
                "enclosing_loop": model.regions[rid].enclosing_loop,
                "statements": [_dump_stmt(s) for s in model.regions[rid].statements],
            }
            for rid in sorted(model.regions)
        ],
        "loops": [
            {
                "id": l.id,
                "parent": l.parent,
                "body": l.body,
                "index_var": l.index_var,
                "lower": _dump_expr(l.lower),
                "upper": _dump_expr(l.upper),
                "iter_count": l.iter_count,
                "cpu_cost_per_iter": l.cpu_cost_per_iter,
                "gpu_cost_per_iter": l.gpu_cost_per_iter,
                "gpu_valid": l.gpu_valid,
                "directive_error": l.force_directive_error,
            }
            for l in model.loops
        ],
        "calls": [
            {
                "id": c.id,
                "name": c.callee_name,
                "subtree": c.subtree,
                "arg_types": list(c.arg_types),
                "return_type": c.return_type,
                "arg_vars": list(c.arg_var_ids),
                "pure": c.pure,
            }
            for c in model.calls
        ],
        "occurrences": occurrences,
    }


def dump_ir_document(model: ProgramModel) -> bytes:
    return (json.dumps(model_to_document(model), indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Load
# ---------------------------------------------------------------------------


def _load_expr(doc: dict) -> Expr:
    if "num" in doc:
        return Num(doc["num"], doc.get("float", False))
    if "var" in doc:
        return VarRef(doc["var"])
    if "array" in doc:
        return ArrayRef(doc["array"], _load_expr(doc["index"]))
    return BinOp(doc["op"], _load_expr(doc["left"]), _load_expr(doc["right"]))


def load_ir_document(data: bytes | str) -> ProgramModel:
    """Parse, schema-validate, and materialize a document.

    Schema violations raise IRDocumentError naming the offending path;
    dangling cross-references raise ModelIntegrityError.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise IRDocumentError(f"document is not valid JSON: {exc}") from exc
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        raise IRDocumentError(f"schema violation at {path}: {err.message}")

    variables = [
        VariableDecl(v["id"], v["name"], v["type"], v.get("array", False), v.get("length", 0))
        for v in doc["variables"]
    ]
    var_ids = {v.id for v in variables}

    # group occurrences by site, preserving document order
    stmt_occs: dict[tuple[int, int], list[VariableOccurrence]] = {}
    header_occs: dict[int, list[VariableOccurrence]] = {}
    for o in doc["occurrences"]:
        if o["var"] not in var_ids:
            raise ModelIntegrityError(f"occurrence references unknown variable {o['var']}")
        size = next(v for v in variables if v.id == o["var"]).size_bytes
        occ = VariableOccurrence(o["var"], o["kind"], o["region"], size)
        site = o["site"]
        if "stmt" in site:
            stmt_occs.setdefault(tuple(site["stmt"]), []).append(occ)
        else:
            header_occs.setdefault(site["loop_header"], []).append(occ)

    loops = []
    for l in doc["loops"]:
        loops.append(
            LoopNode(
                id=l["id"],
                parent=l["parent"],
                body=l["body"],
                index_var=l["index_var"],
                lower=_load_expr(l["lower"]),
                upper=_load_expr(l["upper"]),
                iter_count=l["iter_count"],
                cpu_cost_per_iter=l.get("cpu_cost_per_iter", 1.0),
                gpu_cost_per_iter=l.get("gpu_cost_per_iter", 0.1),
                gpu_valid=l.get("gpu_valid", True),
                force_directive_error=l.get("directive_error", False),
                header_occurrences=tuple(header_occs.get(l["id"], [])),
            )
        )

    calls = [
        FunctionBlockCall(
            id=c["id"],
            callee_name=c["name"],
            subtree=c["subtree"],
            arg_types=tuple(c["arg_types"]),
            return_type=c["return_type"],
            arg_var_ids=tuple(c.get("arg_vars", [])),
            pure=c.get("pure", False),
        )
        for c in doc["calls"]
    ]

    regions: dict[int, Region] = {}
    for r in doc["regions"]:
        stmts = []
        for idx, s in enumerate(r["statements"]):
            occs = tuple(stmt_occs.get((r["id"], idx), []))
            if "decl" in s:
                init = _load_expr(s["init"]) if "init" in s else None
                stmts.append(DeclStmt(s["decl"], init, occs))
            elif "assign" in s:
                target = _load_expr(s["assign"])
                if not isinstance(target, (VarRef, ArrayRef)):
                    raise IRDocumentError(
                        f"schema violation at $.regions[{r['id']}].statements[{idx}]: "
                        "assignment target must be a variable or array element"
                    )
                stmts.append(Assign(target, _load_expr(s["value"]), occs))
            elif "loop" in s:
                stmts.append(LoopStmt(s["loop"]))
            elif "call" in s:
                stmts.append(CallStmt(s["call"], occs))
            else:
                stmts.append(
                    ReplacedBlock(
                        s["replaced"],
                        tuple(s["args"]),
                        s["speedup_hint"],
                        s["base_cpu_time"],
                        s["record"],
                        occs,
                    )
                )
        if r["id"] in regions:
            raise ModelIntegrityError(f"duplicate region id {r['id']}")
        regions[r["id"]] = Region(r["id"], r["enclosing_loop"], tuple(stmts))

    model = ProgramModel(
        root_region=doc.get("root_region", 0),
        regions=regions,
        loops=loops,
        calls=calls,
        variables=variables,
        source_language_tag=doc.get("language", "c_like"),
    )
    model.validate()
    return model


def models_equal(a: ProgramModel, b: ProgramModel) -> bool:
    """Structural equality via the canonical document form."""
    return model_to_document(a) == model_to_document(b)
