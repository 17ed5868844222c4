"""Parser for the small C-like demo language.

Grammar (EBNF, also shipped in docs/mini_language.md):

    program   = { decl | func } ;
    decl      = type ident [ "[" int "]" ] [ "=" expr ] ";" ;
    type      = "int" | "float" ;
    func      = "func" ident "(" [ param { "," param } ] ")" block ;
    param     = type ident [ "[" int "]" ] ;
    block     = "{" { stmt } "}" ;
    stmt      = for | assign | call ;
    for       = "for" "(" ident "=" expr ";" ident "<" expr ";" ident "++" ")" block ;
    assign    = ident [ "[" expr "]" ] "=" expr ";" ;
    call      = ident "(" [ ident { "," ident } ] ")" ";" ;
    expr      = term { ("+" | "-") term } ;
    term      = factor { ("*" | "/") factor } ;
    factor    = number | ident [ "[" expr "]" ] | "(" expr ")" ;

Scoping is flat: all variables (including loop indices) are declared at the
top level. `func main` is the entry point; calls to other declared functions
are expanded in place with parameters substituted by the argument variables,
so the resulting model is a single translation unit. Calls to undeclared
names become opaque external calls (assumed impure).

Trip counts come from constant bounds where possible, then from the
symbol_values map (or a top-level integer initializer), then fall back to
ParseOptions.default_iter_count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .build import ModelBuilder
from .model import ArrayRef, BinOp, Expr, Num, ProgramModel, VarRef


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class SemanticError(ParseError):
    pass


@dataclass
class ParseOptions:
    symbol_values: dict[str, int] = field(default_factory=dict)
    default_iter_count: int = 1000
    default_cpu_cost_per_iter: float = 1.0
    default_gpu_cost_per_iter: float = 0.1


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<incr>\+\+)
  | (?P<punct>[-+*/=;,(){}\[\]<])
    """,
    re.VERBOSE,
)

KEYWORDS = {"int", "float", "func", "for"}


@dataclass(frozen=True)
class Token:
    kind: str  # "number" | "ident" | keyword | punctuation | "eof"
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        text = m.group()
        kind = m.lastgroup or ""
        if kind == "ident":
            kind = text if text in KEYWORDS else "ident"
        elif kind in ("incr", "punct"):
            kind = text
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Syntax tree (pre-elaboration)
# ---------------------------------------------------------------------------


@dataclass
class DeclSyntax:
    base_type: str
    name: str
    length: int | None
    init: "ExprSyntax | None"
    line: int
    col: int


@dataclass
class ParamSyntax:
    base_type: str
    name: str
    length: int | None


@dataclass
class FuncSyntax:
    name: str
    params: list[ParamSyntax]
    body: list
    line: int
    col: int


@dataclass
class ForSyntax:
    index: str
    lower: "ExprSyntax"
    upper: "ExprSyntax"
    body: list
    line: int
    col: int


@dataclass
class AssignSyntax:
    name: str
    index: "ExprSyntax | None"
    value: "ExprSyntax"
    line: int
    col: int


@dataclass
class CallSyntax:
    name: str
    args: list[str]
    line: int
    col: int


@dataclass
class NumSyntax:
    value: float
    is_float: bool


@dataclass
class NameSyntax:
    name: str
    line: int
    col: int


@dataclass
class IndexSyntax:
    name: str
    index: "ExprSyntax"
    line: int
    col: int


@dataclass
class BinSyntax:
    op: str
    left: "ExprSyntax"
    right: "ExprSyntax"


ExprSyntax = NumSyntax | NameSyntax | IndexSyntax | BinSyntax


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {kind!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return self.advance()

    # -- toplevel ---------------------------------------------------------

    def program(self) -> tuple[list[DeclSyntax], list[FuncSyntax]]:
        decls: list[DeclSyntax] = []
        funcs: list[FuncSyntax] = []
        while self.peek().kind != "eof":
            if self.peek().kind in ("int", "float"):
                decls.append(self.decl())
            elif self.peek().kind == "func":
                funcs.append(self.func())
            else:
                tok = self.peek()
                raise ParseError(
                    f"expected declaration or function, found {tok.text!r}", tok.line, tok.col
                )
        return decls, funcs

    def decl(self) -> DeclSyntax:
        type_tok = self.advance()
        name = self.expect("ident")
        length = None
        if self.peek().kind == "[":
            self.advance()
            num = self.expect("number")
            if "." in num.text or "e" in num.text or "E" in num.text:
                raise ParseError("array length must be an integer", num.line, num.col)
            length = int(num.text)
            self.expect("]")
        init = None
        if self.peek().kind == "=":
            self.advance()
            init = self.expr()
        self.expect(";")
        return DeclSyntax(type_tok.text, name.text, length, init, name.line, name.col)

    def func(self) -> FuncSyntax:
        self.expect("func")
        name = self.expect("ident")
        self.expect("(")
        params: list[ParamSyntax] = []
        if self.peek().kind != ")":
            while True:
                if self.peek().kind not in ("int", "float"):
                    tok = self.peek()
                    raise ParseError(f"expected parameter type, found {tok.text!r}", tok.line, tok.col)
                ptype = self.advance().text
                pname = self.expect("ident").text
                plen = None
                if self.peek().kind == "[":
                    self.advance()
                    plen = int(self.expect("number").text)
                    self.expect("]")
                params.append(ParamSyntax(ptype, pname, plen))
                if self.peek().kind != ",":
                    break
                self.advance()
        self.expect(")")
        body = self.block()
        return FuncSyntax(name.text, params, body, name.line, name.col)

    def block(self) -> list:
        self.expect("{")
        stmts = []
        while self.peek().kind != "}":
            stmts.append(self.stmt())
        self.expect("}")
        return stmts

    def stmt(self):
        tok = self.peek()
        if tok.kind == "for":
            return self.for_stmt()
        if tok.kind == "ident":
            after = self.tokens[self.pos + 1]
            if after.kind == "(":
                return self.call_stmt()
            return self.assign_stmt()
        raise ParseError(f"expected statement, found {tok.text or 'end of input'!r}", tok.line, tok.col)

    def for_stmt(self) -> ForSyntax:
        start = self.expect("for")
        self.expect("(")
        idx = self.expect("ident")
        self.expect("=")
        lower = self.expr()
        self.expect(";")
        idx2 = self.expect("ident")
        self.expect("<")
        upper = self.expr()
        self.expect(";")
        idx3 = self.expect("ident")
        self.expect("++")
        self.expect(")")
        if idx2.text != idx.text or idx3.text != idx.text:
            raise ParseError(
                f"loop header must use one index variable, found {idx.text!r}/{idx2.text!r}/{idx3.text!r}",
                idx2.line,
                idx2.col,
            )
        body = self.block()
        return ForSyntax(idx.text, lower, upper, body, start.line, start.col)

    def assign_stmt(self) -> AssignSyntax:
        name = self.expect("ident")
        index = None
        if self.peek().kind == "[":
            self.advance()
            index = self.expr()
            self.expect("]")
        self.expect("=")
        value = self.expr()
        self.expect(";")
        return AssignSyntax(name.text, index, value, name.line, name.col)

    def call_stmt(self) -> CallSyntax:
        name = self.expect("ident")
        self.expect("(")
        args: list[str] = []
        if self.peek().kind != ")":
            while True:
                args.append(self.expect("ident").text)
                if self.peek().kind != ",":
                    break
                self.advance()
        self.expect(")")
        self.expect(";")
        return CallSyntax(name.text, args, name.line, name.col)

    # -- expressions ---------------------------------------------------------

    def expr(self) -> ExprSyntax:
        left = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().text
            left = BinSyntax(op, left, self.term())
        return left

    def term(self) -> ExprSyntax:
        left = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.advance().text
            left = BinSyntax(op, left, self.factor())
        return left

    def factor(self) -> ExprSyntax:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            is_float = any(c in tok.text for c in ".eE")
            return NumSyntax(float(tok.text), is_float)
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "[":
                self.advance()
                index = self.expr()
                self.expect("]")
                return IndexSyntax(tok.text, index, tok.line, tok.col)
            return NameSyntax(tok.text, tok.line, tok.col)
        if tok.kind == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"expected expression, found {tok.text or 'end of input'!r}", tok.line, tok.col)


# ---------------------------------------------------------------------------
# Elaboration into ProgramModel
# ---------------------------------------------------------------------------


class _Elaborator:
    def __init__(self, decls: list[DeclSyntax], funcs: list[FuncSyntax], options: ParseOptions):
        self.options = options
        self.funcs = {f.name: f for f in funcs}
        self.builder = ModelBuilder(
            default_iter_count=options.default_iter_count,
            default_cpu_cost_per_iter=options.default_cpu_cost_per_iter,
            default_gpu_cost_per_iter=options.default_gpu_cost_per_iter,
        )
        self.int_constants: dict[str, int] = dict(options.symbol_values)
        self.decl_types: dict[str, tuple[str, bool]] = {}
        for d in decls:
            if d.name in self.decl_types:
                raise SemanticError(f"variable {d.name!r} declared twice", d.line, d.col)
            self.decl_types[d.name] = (d.base_type, d.length is not None)
            init = self.lower_expr(d.init, {}) if d.init is not None else None
            self.builder.declare(
                d.name, d.base_type, is_array=d.length is not None, length=d.length or 0,
                initializer=init,
            )
            if d.base_type == "int" and d.length is None and isinstance(d.init, NumSyntax):
                self.int_constants.setdefault(d.name, int(d.init.value))

    def run(self) -> ProgramModel:
        main = self.funcs.get("main")
        if main is None:
            if self.funcs:
                f = next(iter(self.funcs.values()))
                raise SemanticError("program has functions but no 'main'", f.line, f.col)
        else:
            self.elaborate_block(main.body, self.builder.root, {}, ("main",))
        return self.builder.finish()

    # substitution maps parameter names to caller variable names
    def resolve(self, name: str, subst: dict[str, str], line: int, col: int) -> str:
        actual = subst.get(name, name)
        if actual not in self.decl_types:
            raise SemanticError(f"use of undeclared identifier {actual!r}", line, col)
        return actual

    def elaborate_block(self, stmts: list, region: int, subst: dict[str, str], stack: tuple) -> None:
        for stmt in stmts:
            if isinstance(stmt, ForSyntax):
                self.elaborate_for(stmt, region, subst, stack)
            elif isinstance(stmt, AssignSyntax):
                self.elaborate_assign(stmt, region, subst)
            elif isinstance(stmt, CallSyntax):
                self.elaborate_call(stmt, region, subst, stack)

    def elaborate_for(self, stmt: ForSyntax, region: int, subst: dict[str, str], stack: tuple) -> None:
        index = self.resolve(stmt.index, subst, stmt.line, stmt.col)
        lower = self.lower_expr(stmt.lower, subst)
        upper = self.lower_expr(stmt.upper, subst)
        _, body = self.builder.for_loop(
            region, index, lower, upper, iter_count=self.trip_count(lower, upper)
        )
        self.elaborate_block(stmt.body, body, subst, stack)

    def elaborate_assign(self, stmt: AssignSyntax, region: int, subst: dict[str, str]) -> None:
        name = self.resolve(stmt.name, subst, stmt.line, stmt.col)
        is_array = self.decl_types[name][1]
        if stmt.index is not None and not is_array:
            raise SemanticError(f"{name!r} is not an array", stmt.line, stmt.col)
        if stmt.index is None and is_array:
            raise SemanticError(f"array {name!r} assigned without an index", stmt.line, stmt.col)
        value = self.lower_expr(stmt.value, subst)
        if stmt.index is not None:
            target: VarRef | ArrayRef = self.builder.at(name, self.lower_expr(stmt.index, subst))
        else:
            target = self.builder.ref(name)
        self.builder.assign(region, target, value)

    def elaborate_call(self, stmt: CallSyntax, region: int, subst: dict[str, str], stack: tuple) -> None:
        args = [self.resolve(a, subst, stmt.line, stmt.col) for a in stmt.args]
        callee = self.funcs.get(stmt.name)
        if callee is None:
            self.builder.call_external(region, stmt.name, args, pure=False)
            return
        if stmt.name in stack:
            raise SemanticError(f"recursive call to {stmt.name!r} cannot be expanded", stmt.line, stmt.col)
        if len(args) != len(callee.params):
            raise SemanticError(
                f"{stmt.name!r} expects {len(callee.params)} arguments, got {len(args)}",
                stmt.line,
                stmt.col,
            )
        for param, arg in zip(callee.params, args):
            want = (param.base_type, param.length is not None)
            if self.decl_types[arg] != want:
                raise SemanticError(
                    f"argument {arg!r} does not match parameter {param.name!r} of {stmt.name!r}",
                    stmt.line,
                    stmt.col,
                )
        _, subtree = self.builder.begin_inline_call(region, stmt.name, args, pure=True)
        inner = {p.name: a for p, a in zip(callee.params, args)}
        self.elaborate_block(callee.body, subtree, inner, stack + (stmt.name,))

    def lower_expr(self, expr: ExprSyntax | None, subst: dict[str, str]) -> Expr:
        if expr is None:
            raise ValueError("missing expression")
        if isinstance(expr, NumSyntax):
            return Num(expr.value, expr.is_float)
        if isinstance(expr, NameSyntax):
            name = self.resolve(expr.name, subst, expr.line, expr.col)
            return VarRef(self.builder.var_id(name))
        if isinstance(expr, IndexSyntax):
            name = self.resolve(expr.name, subst, expr.line, expr.col)
            if not self.decl_types[name][1]:
                raise SemanticError(f"{name!r} is not an array", expr.line, expr.col)
            return ArrayRef(self.builder.var_id(name), self.lower_expr(expr.index, subst))
        return BinOp(expr.op, self.lower_expr(expr.left, subst), self.lower_expr(expr.right, subst))

    def trip_count(self, lower: Expr, upper: Expr) -> int:
        lo = self.const_value(lower)
        up = self.const_value(upper)
        if lo is None or up is None:
            return self.options.default_iter_count
        return max(1, up - lo)

    def const_value(self, expr: Expr) -> int | None:
        if isinstance(expr, Num):
            return int(expr.value)
        if isinstance(expr, VarRef):
            return self.int_constants.get(self.builder.var_name(expr.var_id))
        return None


def parse_mini_source(text: str, options: ParseOptions | None = None) -> ProgramModel:
    """Parse a mini-language program into a ProgramModel.

    Declared function calls are expanded in place; loops appear in document
    order of the expanded program. Raises ParseError (with line/column) on
    syntax errors and SemanticError on undeclared identifiers, type
    mismatches, or unexpandable calls.
    """
    options = options or ParseOptions()
    tokens = tokenize(text)
    decls, funcs = _Parser(tokens).program()
    return _Elaborator(decls, funcs, options).run()


def parse_snippet(text: str, options: ParseOptions | None = None) -> ProgramModel:
    """Parse a bare statement list (used for pattern-DB comparison snippets).

    Identifiers are declared on first use: indexed names become float arrays,
    loop indices become ints, everything else a float scalar.
    """
    options = options or ParseOptions()
    tokens = tokenize(text)
    parser = _Parser(tokens)
    stmts = []
    while parser.peek().kind != "eof":
        stmts.append(parser.stmt())
    decls = _collect_snippet_decls(stmts)
    elab = _Elaborator(decls, [], options)
    elab.elaborate_block(stmts, elab.builder.root, {}, ("<snippet>",))
    return elab.builder.finish()


def _collect_snippet_decls(stmts: list) -> list[DeclSyntax]:
    arrays: dict[str, None] = {}
    ints: dict[str, None] = {}
    scalars: dict[str, None] = {}

    def see_expr(e: ExprSyntax) -> None:
        if isinstance(e, NameSyntax):
            scalars.setdefault(e.name)
        elif isinstance(e, IndexSyntax):
            arrays.setdefault(e.name)
            see_expr(e.index)
        elif isinstance(e, BinSyntax):
            see_expr(e.left)
            see_expr(e.right)

    def see(stmt) -> None:
        if isinstance(stmt, ForSyntax):
            ints.setdefault(stmt.index)
            see_expr(stmt.lower)
            see_expr(stmt.upper)
            for s in stmt.body:
                see(s)
        elif isinstance(stmt, AssignSyntax):
            if stmt.index is not None:
                arrays.setdefault(stmt.name)
                see_expr(stmt.index)
            else:
                scalars.setdefault(stmt.name)
            see_expr(stmt.value)
        elif isinstance(stmt, CallSyntax):
            for a in stmt.args:
                scalars.setdefault(a)

    for s in stmts:
        see(s)
    decls = []
    for name in arrays:
        decls.append(DeclSyntax("float", name, 64, None, 0, 0))
    for name in ints:
        if name not in arrays:
            decls.append(DeclSyntax("int", name, None, None, 0, 0))
    for name in scalars:
        if name not in arrays and name not in ints:
            decls.append(DeclSyntax("float", name, None, None, 0, 0))
    return decls
