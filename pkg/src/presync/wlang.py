"""AST, parser, validator and pretty-printer for the concurrent while-language W.

A program is a fixed set of threads over shared integer variables, plus
lock and condition variables and tagged I/O channels.  Every statement
carries a location that is unique within its thread; locations render as
``<tid>.<label>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union


class WSyntaxError(Exception):
    """Raised on malformed source text (carries line/column)."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.line = line
        self.col = col


class WSemanticError(Exception):
    """Raised on well-formed but invalid programs (label/kind misuse)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Location:
    tid: int
    label: str

    def __str__(self) -> str:
        return f"{self.tid}.{self.label}"


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple

    def __post_init__(self):
        arity = 1 if self.op == "!" else 2
        if len(self.args) != arity:
            raise WSemanticError(f"operator {self.op} expects {arity} operands")


Expr = Union[Var, Const, Op]

BINARY_OPS = ("||", "&&", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*")


@dataclass(frozen=True)
class Stmt:
    loc: Optional[Location] = field(default=None, compare=True)


@dataclass(frozen=True)
class Skip(Stmt):
    pass


@dataclass(frozen=True)
class Assign(Stmt):
    var: str = ""
    expr: Expr = Const(0)


@dataclass(frozen=True)
class HavocAssign(Stmt):
    var: str = ""


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr = Const(0)
    then: "Stmt" = None
    orelse: "Stmt" = None


@dataclass(frozen=True)
class While(Stmt):
    # cond is None for the nondeterministic loop ``while (*)``
    cond: Optional[Expr] = None
    body: "Stmt" = None


@dataclass(frozen=True)
class InputAssign(Stmt):
    var: str = ""
    tag: str = ""


@dataclass(frozen=True)
class Output(Stmt):
    tag: str = ""
    expr: Expr = Const(0)


@dataclass(frozen=True)
class Lock(Stmt):
    var: str = ""


@dataclass(frozen=True)
class Unlock(Stmt):
    var: str = ""


@dataclass(frozen=True)
class Signal(Stmt):
    var: str = ""


@dataclass(frozen=True)
class Await(Stmt):
    var: str = ""


@dataclass(frozen=True)
class Reset(Stmt):
    var: str = ""


@dataclass(frozen=True)
class Yield(Stmt):
    pass


@dataclass(frozen=True)
class Seq(Stmt):
    # Always right-flattened: first is never a Seq.
    first: "Stmt" = None
    rest: "Stmt" = None


#: Residual marker for a fully-executed statement.
TERM = Skip(loc=None)


def seq(stmts: list) -> Stmt:
    """Fold a statement list into a right-nested Seq chain."""
    if not stmts:
        return TERM
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(loc=None, first=s, rest=out)
    return out


def seq_items(s: Stmt) -> list:
    items = []
    while isinstance(s, Seq):
        items.append(s.first)
        s = s.rest
    items.append(s)
    return items


@dataclass(frozen=True)
class Decl:
    name: str
    kind: str  # "std" | "lock" | "cond"
    init: int = 0


@dataclass(frozen=True)
class Program:
    decls: tuple  # tuple[Decl]
    threads: tuple  # tuple[Stmt]; index i -> tid i+1
    thread_names: tuple = ()

    @property
    def nthreads(self) -> int:
        return len(self.threads)

    def kind_of(self, name: str) -> Optional[str]:
        for d in self.decls:
            if d.name == name:
                return d.kind
        return None

    def initial_valuation(self) -> dict:
        return {d.name: d.init for d in self.decls}


def walk(s: Stmt):
    """Yield every statement in traversal (program) order."""
    if isinstance(s, Seq):
        yield from walk(s.first)
        yield from walk(s.rest)
        return
    yield s
    if isinstance(s, If):
        yield from walk(s.then)
        yield from walk(s.orelse)
    elif isinstance(s, While):
        yield from walk(s.body)


def expr_vars(e: Expr) -> list:
    """Variable names of e in left-to-right evaluation order, duplicates kept."""
    if isinstance(e, Var):
        return [e.name]
    if isinstance(e, Const):
        return []
    out = []
    for a in e.args:
        out.extend(expr_vars(a))
    return out


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>(?:\#|//)[^\n]*)
      | (?P<int>\d+)
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>\|\||&&|==|!=|<=|>=|[-+*<>!=;:,(){}])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "var", "lock", "cond", "thread", "skip", "if", "else", "while",
    "havoc", "input", "output", "unlock", "signal", "await", "reset", "yield",
}


@dataclass
class Token:
    kind: str  # "int" | "ident" | "op" | "eof"
    text: str
    line: int
    col: int


def _lex(src: str) -> list:
    toks = []
    line, col, pos = 1, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise WSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(Token(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser

_PRECEDENCE = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4, "*": 5,
}


class _Parser:
    def __init__(self, toks: list):
        self.toks = toks
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def _err(self, expected: str):
        t = self.cur
        raise WSyntaxError(f"expected {expected}, found {t.text or 'end of input'!r}",
                           t.line, t.col)

    def advance(self) -> Token:
        t = self.cur
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.cur.text == text and self.cur.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if self.cur.text != text:
            self._err(repr(text))
        return self.advance()

    def expect_kind(self, kind: str) -> Token:
        if self.cur.kind != kind:
            self._err(kind)
        return self.advance()

    # program := decl* thread+
    def program(self) -> Program:
        decls = []
        while self.cur.text in ("var", "lock", "cond"):
            decls.append(self.decl())
        threads = []
        names = []
        while self.cur.text == "thread":
            tid = len(threads) + 1
            name, body = self.thread(tid)
            names.append(name)
            threads.append(body)
        if not threads:
            self._err("'thread'")
        if self.cur.kind != "eof":
            self._err("end of input")
        return Program(decls=tuple(decls), threads=tuple(threads),
                       thread_names=tuple(names))

    def decl(self) -> Decl:
        kw = self.advance().text
        kind = {"var": "std", "lock": "lock", "cond": "cond"}[kw]
        name = self.expect_kind("ident").text
        init = 0
        if self.accept("="):
            neg = self.accept("-")
            init = int(self.expect_kind("int").text)
            if neg:
                init = -init
        self.expect(";")
        return Decl(name=name, kind=kind, init=init)

    def thread(self, tid: int):
        self.expect("thread")
        name = self.expect_kind("ident").text
        body = self.block(tid)
        return name, body

    def block(self, tid: int) -> Stmt:
        tok = self.expect("{")
        stmts = []
        while self.cur.text != "}":
            if self.cur.kind == "eof":
                self._err("'}'")
            stmts.append(self.lstmt(tid))
        self.expect("}")
        if not stmts:
            return Skip(loc=Location(tid, f"{tok.line}:{tok.col}"))
        return seq(stmts)

    def lstmt(self, tid: int) -> Stmt:
        label = None
        if (self.cur.kind in ("int", "ident")
                and self.toks[self.i + 1].text == ":"
                and self.cur.text not in KEYWORDS):
            label = self.advance().text
            self.expect(":")
        tok = self.cur
        loc = Location(tid, label if label is not None else f"{tok.line}:{tok.col}")
        return self.stmt(tid, loc)

    def stmt(self, tid: int, loc: Location) -> Stmt:
        t = self.cur
        if self.accept("skip"):
            self.expect(";")
            return Skip(loc=loc)
        if self.accept("yield"):
            self.expect(";")
            return Yield(loc=loc)
        if self.accept("if"):
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block(tid)
            orelse = TERM
            if self.accept("else"):
                orelse = self.block(tid)
            return If(loc=loc, cond=cond, then=then, orelse=orelse)
        if self.accept("while"):
            self.expect("(")
            cond = None if self.accept("*") else self.expr()
            self.expect(")")
            body = self.block(tid)
            return While(loc=loc, cond=cond, body=body)
        if self.accept("output"):
            self.expect("(")
            tag = self.expect_kind("ident").text
            self.expect(",")
            e = self.expr()
            self.expect(")")
            self.expect(";")
            return Output(loc=loc, tag=tag, expr=e)
        for kw, cls in (("lock", Lock), ("unlock", Unlock), ("signal", Signal),
                        ("await", Await), ("reset", Reset)):
            if self.accept(kw):
                self.expect("(")
                v = self.expect_kind("ident").text
                self.expect(")")
                self.expect(";")
                return cls(loc=loc, var=v)
        if t.kind == "ident" and t.text not in KEYWORDS:
            var = self.advance().text
            self.expect("=")
            if self.accept("havoc"):
                self.expect("(")
                self.expect(")")
                self.expect(";")
                return HavocAssign(loc=loc, var=var)
            if self.accept("input"):
                self.expect("(")
                tag = self.expect_kind("ident").text
                self.expect(")")
                self.expect(";")
                return InputAssign(loc=loc, var=var, tag=tag)
            e = self.expr()
            self.expect(";")
            return Assign(loc=loc, var=var, expr=e)
        self._err("a statement")

    def expr(self, min_prec: int = 1) -> Expr:
        lhs = self.unary()
        while self.cur.text in _PRECEDENCE and _PRECEDENCE[self.cur.text] >= min_prec:
            op = self.advance().text
            rhs = self.expr(_PRECEDENCE[op] + 1)
            lhs = Op(op=op, args=(lhs, rhs))
        return lhs

    def unary(self) -> Expr:
        if self.accept("!"):
            return Op(op="!", args=(self.unary(),))
        if self.cur.text == "-":
            # negative literal only; W has no general unary minus
            nxt = self.toks[self.i + 1]
            if nxt.kind == "int":
                self.i += 2
                return Const(-int(nxt.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.cur.kind == "int":
            return Const(int(self.advance().text))
        if self.cur.kind == "ident" and self.cur.text not in KEYWORDS:
            return Var(self.advance().text)
        self._err("an expression")


# ---------------------------------------------------------------------------
# Validation


def _check_expr_vars(p: Program, e: Expr, where: Location):
    for v in expr_vars(e):
        kind = p.kind_of(v)
        if kind is None:
            raise WSemanticError(f"undeclared variable {v!r} at {where}")
        if kind != "std":
            raise WSemanticError(f"{kind} variable {v!r} used in expression at {where}")


def validate(p: Program) -> Program:
    """Check label uniqueness and variable-kind discipline; return p."""
    tags = set()
    for tid, body in enumerate(p.threads, start=1):
        seen = set()
        for s in walk(body):
            if isinstance(s, Seq) or s.loc is None:
                continue
            if s.loc in seen:
                raise WSemanticError(f"duplicate label {s.loc}")
            seen.add(s.loc)
            if isinstance(s, (Assign, HavocAssign, InputAssign)):
                kind = p.kind_of(s.var)
                if kind is None:
                    raise WSemanticError(f"undeclared variable {s.var!r} at {s.loc}")
                if kind != "std":
                    raise WSemanticError(
                        f"assignment to {kind} variable {s.var!r} at {s.loc}")
            if isinstance(s, Assign):
                _check_expr_vars(p, s.expr, s.loc)
            if isinstance(s, Output):
                _check_expr_vars(p, s.expr, s.loc)
            if isinstance(s, If):
                _check_expr_vars(p, s.cond, s.loc)
            if isinstance(s, While) and s.cond is not None:
                _check_expr_vars(p, s.cond, s.loc)
            if isinstance(s, (Lock, Unlock)):
                if p.kind_of(s.var) != "lock":
                    raise WSemanticError(
                        f"lock operation on non-lock variable {s.var!r} at {s.loc}")
            if isinstance(s, (Signal, Await, Reset)):
                if p.kind_of(s.var) != "cond":
                    raise WSemanticError(
                        f"condition operation on non-cond variable {s.var!r} at {s.loc}")
            if isinstance(s, (InputAssign, Output)):
                if p.kind_of(s.tag) is not None:
                    raise WSemanticError(
                        f"tag {s.tag!r} collides with a declared variable at {s.loc}")
                tags.add(s.tag)
    return p


def parse_program(source_text: str) -> Program:
    return validate(_Parser(_lex(source_text)).program())


# ---------------------------------------------------------------------------
# Pretty-printer


def _pp_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        return str(e.value)
    if e.op == "!":
        return "!" + _pp_expr(e.args[0], 99)
    prec = _PRECEDENCE[e.op]
    lhs = _pp_expr(e.args[0], prec)
    rhs = _pp_expr(e.args[1], prec + 1)
    text = f"{lhs} {e.op} {rhs}"
    return f"({text})" if prec < parent_prec else text


def _pp_stmt(s: Stmt, out: list, depth: int):
    ind = "  " * depth
    lbl = f"{s.loc.label}: " if s.loc is not None else ""
    if isinstance(s, Seq):
        for item in seq_items(s):
            _pp_stmt(item, out, depth)
    elif isinstance(s, Skip):
        out.append(f"{ind}{lbl}skip;")
    elif isinstance(s, Assign):
        out.append(f"{ind}{lbl}{s.var} = {_pp_expr(s.expr)};")
    elif isinstance(s, HavocAssign):
        out.append(f"{ind}{lbl}{s.var} = havoc();")
    elif isinstance(s, InputAssign):
        out.append(f"{ind}{lbl}{s.var} = input({s.tag});")
    elif isinstance(s, Output):
        out.append(f"{ind}{lbl}output({s.tag}, {_pp_expr(s.expr)});")
    elif isinstance(s, If):
        out.append(f"{ind}{lbl}if ({_pp_expr(s.cond)}) {{")
        _pp_stmt(s.then, out, depth + 1)
        if s.orelse != TERM:
            out.append(f"{ind}}} else {{")
            _pp_stmt(s.orelse, out, depth + 1)
        out.append(f"{ind}}}")
    elif isinstance(s, While):
        cond = "*" if s.cond is None else _pp_expr(s.cond)
        out.append(f"{ind}{lbl}while ({cond}) {{")
        _pp_stmt(s.body, out, depth + 1)
        out.append(f"{ind}}}")
    elif isinstance(s, Lock):
        out.append(f"{ind}{lbl}lock({s.var});")
    elif isinstance(s, Unlock):
        out.append(f"{ind}{lbl}unlock({s.var});")
    elif isinstance(s, Signal):
        out.append(f"{ind}{lbl}signal({s.var});")
    elif isinstance(s, Await):
        out.append(f"{ind}{lbl}await({s.var});")
    elif isinstance(s, Reset):
        out.append(f"{ind}{lbl}reset({s.var});")
    elif isinstance(s, Yield):
        out.append(f"{ind}{lbl}yield;")
    else:
        raise TypeError(f"cannot print {s!r}")


def pretty_print(p: Program) -> str:
    """Render p so that parse_program(pretty_print(p)) == p."""
    out = []
    kw = {"std": "var", "lock": "lock", "cond": "cond"}
    for d in p.decls:
        init = f" = {d.init}" if d.init != 0 else ""
        out.append(f"{kw[d.kind]} {d.name}{init};")
    if p.decls:
        out.append("")
    for i, body in enumerate(p.threads):
        name = p.thread_names[i] if i < len(p.thread_names) else f"t{i + 1}"
        out.append(f"thread {name} {{")
        if body != TERM and not (isinstance(body, Skip) and body.loc is None):
            _pp_stmt(body, out, 1)
        out.append("}")
    return "\n".join(out) + "\n"
