"""Surface-language parser and desugarer.

The surface language is whitespace-insensitive with ``//`` line comments.
A file is a sequence of ``name = expr`` definitions followed by one
trailing expression (the program result); if there is no trailing
expression, the definition named ``main`` is the result. The prelude is
implicitly prepended unless the caller opts out.

Precedence, tightest first: application; ``* /``; ``+ - ++``;
comparisons; user operators such as ``<>`` (anything not in the fixed
table). All infix operators are left-associative. ``\\``, ``for``, ``if``,
``case`` and ``<-``/``;`` sequencing extend to the right as far as
possible, so a lambda or loop used as a statement or as the right-hand
side of ``<-`` normally needs parentheses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import stdlib
from .errors import ParseError
from .syntax import (
    App,
    BoolV,
    Builtin,
    CaseEither,
    Expr,
    FloatV,
    For,
    Handle,
    HandlerExpr,
    If,
    IntV,
    Lam,
    Lit,
    Perform,
    StrV,
    TableLit,
    TupleLit,
    UNIT,
    Value,
    Var,
)

KEYWORDS = frozenset(
    [
        "for",
        "handle",
        "handler",
        "perform",
        "return",
        "traverse",
        "if",
        "then",
        "else",
        "case",
        "of",
        "true",
        "false",
        "Left",
        "Right",
    ]
)

_OP_CHARS = frozenset("+-*/<>=!&|^~@%?")
# Symbol runs that are punctuation rather than operator identifiers.
_RESERVED_SYMBOLS = {"=": "equals", "<-": "bindarrow", "|->": "clausearrow", "->": "arrow", "|": "pipe"}
_SINGLE_PUNCT = {
    "(": "lparen",
    ")": "rparen",
    "[": "lbracket",
    "]": "rbracket",
    "{": "lbrace",
    "}": "rbrace",
    ",": "comma",
    ";": "semi",
    ".": "dot",
    ":": "colon",
    "\\": "backslash",
}

# Infix precedence levels; anything absent is a user operator at level 1.
_OP_LEVEL = {
    "*": 4,
    "/": 4,
    "+": 3,
    "-": 3,
    "++": 3,
    "==": 2,
    "<": 2,
    "<=": 2,
    ">": 2,
    ">=": 2,
    "!=": 2,
}
_MAX_LEVEL = 4

Pos = tuple[int, int]


@dataclass(frozen=True)
class Token:
    kind: str
    value: object
    line: int
    col: int

    @property
    def pos(self) -> Pos:
        return (self.line, self.col)


# --------------------------------------------------------------------------
# Lexer


def _unescape(raw: str, line: int, col: int) -> str:
    out: list[str] = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(raw):
            raise ParseError("dangling escape in string literal", line, col)
        esc = raw[i + 1]
        simple = {'"': '"', "\\": "\\", "/": "/", "b": "\b", "f": "\f", "n": "\n", "r": "\r", "t": "\t"}
        if esc in simple:
            out.append(simple[esc])
            i += 2
        elif esc == "u":
            hexits = raw[i + 2 : i + 6]
            if len(hexits) != 4:
                raise ParseError("truncated \\u escape in string literal", line, col)
            try:
                out.append(chr(int(hexits, 16)))
            except ValueError:
                raise ParseError(f"invalid \\u escape '\\u{hexits}'", line, col) from None
            i += 6
        else:
            raise ParseError(f"unknown escape '\\{esc}' in string literal", line, col)
    return "".join(out)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line, col = 1, 1
    n = len(source)

    def advance(k: int = 1) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance()
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                advance()
            continue
        start_line, start_col = line, col
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            is_float = False
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                is_float = True
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    is_float = True
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            advance(j - i)
            if is_float:
                tokens.append(Token("float", float(text), start_line, start_col))
            else:
                tokens.append(Token("int", int(text), start_line, start_col))
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            advance(j - i)
            if word in KEYWORDS:
                tokens.append(Token("kw", word, start_line, start_col))
            else:
                tokens.append(Token("ident", word, start_line, start_col))
            continue
        if ch == '"':
            j = i + 1
            while j < n:
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == '"':
                    break
                j += 1
            if j >= n:
                raise ParseError("unterminated string literal", start_line, start_col)
            raw = source[i + 1 : j]
            advance(j + 1 - i)
            tokens.append(Token("string", _unescape(raw, start_line, start_col), start_line, start_col))
            continue
        if ch in _SINGLE_PUNCT:
            tokens.append(Token(_SINGLE_PUNCT[ch], ch, start_line, start_col))
            advance()
            continue
        if ch in _OP_CHARS:
            j = i
            while j < n and source[j] in _OP_CHARS:
                j += 1
            sym = source[i:j]
            advance(j - i)
            if sym in _RESERVED_SYMBOLS:
                tokens.append(Token(_RESERVED_SYMBOLS[sym], sym, start_line, start_col))
            else:
                tokens.append(Token("op", sym, start_line, start_col))
            continue
        raise ParseError(f"unsupported character {ch!r}", start_line, start_col)
    tokens.append(Token("eof", None, line, col))
    return tokens


# --------------------------------------------------------------------------
# Surface AST


class SExpr:
    __slots__ = ()


@dataclass(frozen=True)
class SLit(SExpr):
    value: Value
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SVar(SExpr):
    name: str
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SLam(SExpr):
    binder: str  # identifier, "_", or an operator name bound via \(op).
    body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SApp(SExpr):
    fn: SExpr
    arg: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SFor(SExpr):
    var: str
    size: SExpr
    body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SPerform(SExpr):
    op_name: str
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SIf(SExpr):
    cond: SExpr
    then: SExpr
    orelse: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SCase(SExpr):
    scrutinee: SExpr
    left_var: str
    left_body: SExpr
    right_var: str
    right_body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class STable(SExpr):
    elems: tuple[SExpr, ...]
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class STuple(SExpr):
    elems: tuple[SExpr, ...]
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SSeq(SExpr):
    first: SExpr
    second: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


class Pattern:
    __slots__ = ()


@dataclass(frozen=True)
class PVar(Pattern):
    name: str
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class PWild(Pattern):
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class PTuple(Pattern):
    elems: tuple[Pattern, ...]
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SBind(SExpr):
    pattern: Pattern
    rhs: SExpr
    body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SClause:
    name: str  # "return", "traverse", or the operation name
    body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SHandle(SExpr):
    clauses: tuple[SClause, ...]
    state: SExpr
    body: SExpr
    sugar: bool  # True for `handler`, which thunks the frame
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SDef:
    name: str
    body: SExpr
    pos: Pos = field(compare=False, default=(0, 0))


@dataclass(frozen=True)
class SurfaceProgram:
    defs: tuple[SDef, ...]
    main: Optional[SExpr]


# --------------------------------------------------------------------------
# Parser

_ATOM_KW = frozenset(["perform", "true", "false", "Left", "Right"])


class _Parser:
    def __init__(self, tokens: list[Token]):
        self._tokens = tokens
        self._pos = 0

    @property
    def cur(self) -> Token:
        return self._tokens[self._pos]

    @property
    def peek(self) -> Token:
        return self._tokens[min(self._pos + 1, len(self._tokens) - 1)]

    def _advance(self) -> Token:
        tok = self.cur
        if tok.kind != "eof":
            self._pos += 1
        return tok

    def _error(self, expected: str) -> ParseError:
        tok = self.cur
        shown = "end of input" if tok.kind == "eof" else repr(str(tok.value))
        return ParseError(f"expected {expected}, found {shown}", tok.line, tok.col)

    def _expect(self, kind: str, expected: str) -> Token:
        if self.cur.kind != kind:
            raise self._error(expected)
        return self._advance()

    def _expect_kw(self, word: str) -> Token:
        if self.cur.kind != "kw" or self.cur.value != word:
            raise self._error(f"'{word}'")
        return self._advance()

    # ---- program structure

    def parse_program(self) -> SurfaceProgram:
        defs: list[SDef] = []
        while self.cur.kind == "ident" and self.peek.kind == "equals":
            name_tok = self._advance()
            self._advance()  # '='
            body = self.parse_expr()
            defs.append(SDef(str(name_tok.value), body, name_tok.pos))
        main: Optional[SExpr] = None
        if self.cur.kind != "eof":
            main = self.parse_expr()
        self._expect("eof", "end of input")
        return SurfaceProgram(tuple(defs), main)

    # ---- expressions

    def parse_expr(self) -> SExpr:
        tok = self.cur
        if tok.kind == "backslash":
            return self._parse_lambda()
        if tok.kind == "kw":
            if tok.value == "for":
                return self._parse_for()
            if tok.value in ("handle", "handler"):
                return self._parse_handle()
            if tok.value == "if":
                return self._parse_if()
            if tok.value == "case":
                return self._parse_case()
        return self._parse_bindseq()

    def _parse_lambda(self) -> SLam:
        tok = self._advance()  # backslash
        binder = self._parse_binder()
        self._expect("dot", "'.' after lambda binder")
        body = self.parse_expr()
        return SLam(binder, body, tok.pos)

    def _parse_binder(self) -> str:
        tok = self.cur
        if tok.kind == "ident":
            self._advance()
            return str(tok.value)
        if tok.kind == "lparen" and self.peek.kind == "op":
            self._advance()
            op = self._advance()
            self._expect("rparen", "')' after operator binder")
            return str(op.value)
        raise self._error("a binder (identifier, '_', or '(operator)')")

    def _parse_for(self) -> SFor:
        tok = self._expect_kw("for")
        var = self._expect("ident", "loop index identifier")
        self._expect("colon", "':' in for loop")
        size = self._parse_infix()
        self._expect("dot", "'.' after loop size")
        body = self.parse_expr()
        return SFor(str(var.value), size, body, tok.pos)

    def _parse_if(self) -> SIf:
        tok = self._expect_kw("if")
        cond = self.parse_expr()
        self._expect_kw("then")
        then = self.parse_expr()
        self._expect_kw("else")
        orelse = self.parse_expr()
        return SIf(cond, then, orelse, tok.pos)

    def _parse_case(self) -> SCase:
        tok = self._expect_kw("case")
        scrut = self.parse_expr()
        self._expect_kw("of")
        self._expect_kw("Left")
        lv = self._expect("ident", "identifier in Left pattern")
        self._expect("arrow", "'->' after Left pattern")
        lb = self.parse_expr()
        self._expect("pipe", "'|' between case alternatives")
        self._expect_kw("Right")
        rv = self._expect("ident", "identifier in Right pattern")
        self._expect("arrow", "'->' after Right pattern")
        rb = self.parse_expr()
        return SCase(scrut, str(lv.value), lb, str(rv.value), rb, tok.pos)

    def _parse_handle(self) -> SHandle:
        tok = self._advance()  # handle | handler
        sugar = tok.value == "handler"
        self._expect("lbrace", "'{' after handle")
        clauses: list[SClause] = []
        while True:
            name_tok = self.cur
            if name_tok.kind == "ident" or (name_tok.kind == "kw" and name_tok.value in ("return", "traverse")):
                self._advance()
            else:
                raise self._error("a clause name ('return', 'traverse', or an operation)")
            self._expect("clausearrow", "'|->' after clause name")
            body = self.parse_expr()
            clauses.append(SClause(str(name_tok.value), body, name_tok.pos))
            if self.cur.kind == "comma":
                self._advance()
                continue
            break
        self._expect("rbrace", "'}' after handler clauses")
        state = self._parse_atom()
        body = self._parse_atom()
        return SHandle(tuple(clauses), state, body, sugar, tok.pos)

    def _parse_bindseq(self) -> SExpr:
        start = self._pos
        pattern = self._try_pattern()
        if pattern is not None and self.cur.kind == "bindarrow":
            self._advance()
            rhs = self._parse_bind_rhs()
            if self.cur.kind != "semi":
                raise self._error("';' after '<-' binding (parenthesize a trailing lambda, for, if, or case)")
            self._advance()
            body = self.parse_expr()
            return SBind(pattern, rhs, body, self._tokens[start].pos)
        self._pos = start
        left = self._parse_infix()
        if self.cur.kind == "semi":
            tok = self._advance()
            rest = self.parse_expr()
            return SSeq(left, rest, tok.pos)
        return left

    def _parse_bind_rhs(self) -> SExpr:
        tok = self.cur
        if tok.kind == "backslash":
            return self._parse_lambda()
        if tok.kind == "kw":
            if tok.value == "for":
                return self._parse_for()
            if tok.value in ("handle", "handler"):
                return self._parse_handle()
            if tok.value == "if":
                return self._parse_if()
            if tok.value == "case":
                return self._parse_case()
        return self._parse_infix()

    def _try_pattern(self) -> Optional[Pattern]:
        start = self._pos
        try:
            return self._parse_pattern()
        except ParseError:
            self._pos = start
            return None

    def _parse_pattern(self) -> Pattern:
        tok = self.cur
        if tok.kind == "ident":
            self._advance()
            if tok.value == "_":
                return PWild(tok.pos)
            return PVar(str(tok.value), tok.pos)
        if tok.kind == "lparen":
            self._advance()
            elems = [self._parse_pattern()]
            if self.cur.kind != "comma":
                raise self._error("',' in tuple pattern")
            while self.cur.kind == "comma":
                self._advance()
                elems.append(self._parse_pattern())
            self._expect("rparen", "')' after tuple pattern")
            return PTuple(tuple(elems), tok.pos)
        raise self._error("a pattern")

    def _parse_infix(self, level: int = 1) -> SExpr:
        if level > _MAX_LEVEL:
            return self._parse_app()
        left = self._parse_infix(level + 1)
        while self.cur.kind == "op" and _OP_LEVEL.get(str(self.cur.value), 1) == level:
            op_tok = self._advance()
            right = self._parse_infix(level + 1)
            op_var = SVar(str(op_tok.value), op_tok.pos)
            left = SApp(SApp(op_var, left, op_tok.pos), right, op_tok.pos)
        return left

    def _parse_app(self) -> SExpr:
        left = self._parse_atom()
        while self._at_atom_start():
            arg = self._parse_atom()
            left = SApp(left, arg, left.pos)  # type: ignore[attr-defined]
        return left

    def _at_atom_start(self) -> bool:
        tok = self.cur
        if tok.kind in ("int", "float", "string", "lparen", "lbracket"):
            return True
        if tok.kind == "kw" and tok.value in _ATOM_KW:
            return True
        if tok.kind == "ident":
            # An identifier followed by '=' starts the next top-level
            # definition, not an application argument.
            return self.peek.kind != "equals"
        return False

    def _parse_atom(self) -> SExpr:
        tok = self.cur
        if tok.kind == "int":
            self._advance()
            return SLit(IntV(int(tok.value)), tok.pos)  # type: ignore[arg-type]
        if tok.kind == "float":
            self._advance()
            return SLit(FloatV(float(tok.value)), tok.pos)  # type: ignore[arg-type]
        if tok.kind == "string":
            self._advance()
            return SLit(StrV(str(tok.value)), tok.pos)
        if tok.kind == "ident":
            self._advance()
            return SVar(str(tok.value), tok.pos)
        if tok.kind == "kw":
            if tok.value in ("true", "false"):
                self._advance()
                return SLit(BoolV(tok.value == "true"), tok.pos)
            if tok.value in ("Left", "Right"):
                self._advance()
                return SVar(str(tok.value), tok.pos)
            if tok.value == "perform":
                self._advance()
                op = self._expect("ident", "operation name after 'perform'")
                return SPerform(str(op.value), tok.pos)
        if tok.kind == "lbracket":
            self._advance()
            elems: list[SExpr] = []
            if self.cur.kind != "rbracket":
                elems.append(self.parse_expr())
                while self.cur.kind == "comma":
                    self._advance()
                    elems.append(self.parse_expr())
            self._expect("rbracket", "']' after table elements")
            return STable(tuple(elems), tok.pos)
        if tok.kind == "lparen":
            self._advance()
            if self.cur.kind == "rparen":
                self._advance()
                return SLit(UNIT, tok.pos)
            if self.cur.kind == "op" and self.peek.kind == "rparen":
                op = self._advance()
                self._advance()
                return SVar(str(op.value), op.pos)
            inner = self.parse_expr()
            if self.cur.kind == "comma":
                elems = [inner]
                while self.cur.kind == "comma":
                    self._advance()
                    elems.append(self.parse_expr())
                self._expect("rparen", "')' after tuple elements")
                return STuple(tuple(elems), tok.pos)
            self._expect("rparen", "')'")
            return inner
        if tok.kind == "op" and tok.value == "-" and self.peek.kind in ("int", "float"):
            self._advance()
            num = self._advance()
            if num.kind == "int":
                return SLit(IntV(-int(num.value)), tok.pos)  # type: ignore[arg-type]
            return SLit(FloatV(-float(num.value)), tok.pos)  # type: ignore[arg-type]
        raise self._error("an expression")


def parse(source: str) -> SurfaceProgram:
    """Parse source text into a surface program (definitions plus main)."""
    return _Parser(tokenize(source)).parse_program()


# --------------------------------------------------------------------------
# Desugaring to the core AST

_DEFAULT_POS: Pos = (0, 0)


class _Desugarer:
    def __init__(self) -> None:
        self._fresh_count = 0

    def fresh(self, hint: str = "x") -> str:
        # '$' cannot be lexed, so generated names can never capture or be
        # captured by user identifiers.
        self._fresh_count += 1
        return f"${hint}{self._fresh_count}"

    def program(self, prog: SurfaceProgram, prelude_defs: tuple[SDef, ...]) -> Expr:
        seen: set[str] = set()
        for d in prog.defs:
            if d.name in seen:
                raise ParseError(f"duplicate definition '{d.name}'", *d.pos)
            seen.add(d.name)
        main = prog.main
        if main is None:
            if any(d.name == "main" for d in prog.defs):
                main = SVar("main", _DEFAULT_POS)
            else:
                raise ParseError("program has no trailing expression and no 'main' definition", 1, 1)
        defs = prelude_defs + prog.defs

        def build(i: int, scope: frozenset[str]) -> Expr:
            if i == len(defs):
                return self.expr(main, scope)
            d = defs[i]
            body = self.expr(d.body, scope)
            rest = build(i + 1, scope | {d.name})
            return App(Lam(d.name, rest), body)

        return build(0, frozenset())

    def expr(self, e: SExpr, scope: frozenset[str]) -> Expr:
        match e:
            case SLit(value):
                return Lit(value)
            case SVar(name):
                if name in scope:
                    return Var(name)
                if name in stdlib.BUILTIN_NAMES:
                    return Builtin(name)
                raise ParseError(f"unbound variable '{name}'", *e.pos)
            case SLam(binder, body):
                param = self.fresh("ignored") if binder == "_" else binder
                return Lam(param, self.expr(body, scope | {param}))
            case SApp(fn, arg):
                if isinstance(fn, SPerform):
                    return Perform(fn.op_name, self.expr(arg, scope))
                return App(self.expr(fn, scope), self.expr(arg, scope))
            case SPerform(op_name):
                # A bare `perform op` is a unary function value; eta-expand.
                param = self.fresh("arg")
                return Lam(param, Perform(op_name, Var(param)))
            case SFor(var, size, body):
                return For(var, self.expr(size, scope), self.expr(body, scope | {var}))
            case SIf(cond, then, orelse):
                return If(self.expr(cond, scope), self.expr(then, scope), self.expr(orelse, scope))
            case SCase(scrut, lv, lb, rv, rb):
                return CaseEither(
                    self.expr(scrut, scope),
                    lv,
                    self.expr(lb, scope | {lv}),
                    rv,
                    self.expr(rb, scope | {rv}),
                )
            case STable(elems):
                return TableLit(tuple(self.expr(x, scope) for x in elems))
            case STuple(elems):
                return TupleLit(tuple(self.expr(x, scope) for x in elems))
            case SSeq(first, second):
                return App(Lam(self.fresh("seq"), self.expr(second, scope)), self.expr(first, scope))
            case SBind(pattern, rhs, body):
                rhs_core = self.expr(rhs, scope)
                return self._bind_pattern(pattern, rhs_core, body, scope)
            case SHandle():
                return self._handle(e, scope)
        raise ParseError(f"cannot desugar {type(e).__name__}", 1, 1)

    def _bind_pattern(self, pattern: Pattern, rhs: Expr, body: SExpr, scope: frozenset[str]) -> Expr:
        match pattern:
            case PVar(name):
                return App(Lam(name, self.expr(body, scope | {name})), rhs)
            case PWild():
                return App(Lam(self.fresh("ignored"), self.expr(body, scope)), rhs)
            case PTuple(elems):
                if len(elems) != 2:
                    raise ParseError(
                        "tuple patterns take exactly two components (only pair projections exist)",
                        *pattern.pos,
                    )
                tmp = self.fresh("pair")
                inner = self._project_pattern(
                    elems[0],
                    App(Builtin("fst"), Var(tmp)),
                    lambda sc: self._project_pattern(
                        elems[1],
                        App(Builtin("snd"), Var(tmp)),
                        lambda sc2: self.expr(body, sc2),
                        sc,
                    ),
                    scope | {tmp},
                )
                return App(Lam(tmp, inner), rhs)
        raise ParseError("unsupported pattern", 1, 1)

    def _project_pattern(self, pattern: Pattern, accessor: Expr, continue_with, scope: frozenset[str]) -> Expr:
        match pattern:
            case PVar(name):
                return App(Lam(name, continue_with(scope | {name})), accessor)
            case PWild():
                return App(Lam(self.fresh("ignored"), continue_with(scope)), accessor)
            case PTuple(elems):
                if len(elems) != 2:
                    raise ParseError(
                        "tuple patterns take exactly two components (only pair projections exist)",
                        *pattern.pos,
                    )
                tmp = self.fresh("pair")
                inner = self._project_pattern(
                    elems[0],
                    App(Builtin("fst"), Var(tmp)),
                    lambda sc: self._project_pattern(
                        elems[1],
                        App(Builtin("snd"), Var(tmp)),
                        continue_with,
                        sc,
                    ),
                    scope | {tmp},
                )
                return App(Lam(tmp, inner), accessor)
        raise ParseError("unsupported pattern", 1, 1)

    def _default_return(self) -> Expr:
        s, x = self.fresh("s"), self.fresh("x")
        return Lam(s, Lam(x, Var(x)))

    def _default_traverse(self) -> Expr:
        # \n.\s.\l.\k. k s (l (for x:n. s))
        n, s, l, k, x = (self.fresh(h) for h in ("n", "s", "l", "k", "i"))
        loop = For(x, Var(n), Var(s))
        return Lam(n, Lam(s, Lam(l, Lam(k, App(App(Var(k), Var(s)), App(Var(l), loop))))))

    def _handle(self, e: SHandle, scope: frozenset[str]) -> Expr:
        return_clause: Optional[Expr] = None
        traverse_clause: Optional[Expr] = None
        op_name: Optional[str] = None
        op_clause: Optional[Expr] = None
        for clause in e.clauses:
            body = self.expr(clause.body, scope)
            if clause.name == "return":
                if return_clause is not None:
                    raise ParseError("duplicate 'return' clause", *clause.pos)
                return_clause = body
            elif clause.name == "traverse":
                if traverse_clause is not None:
                    raise ParseError("duplicate 'traverse' clause", *clause.pos)
                traverse_clause = body
            else:
                if op_name is not None:
                    if clause.name == op_name:
                        raise ParseError(f"duplicate clause for operation '{op_name}'", *clause.pos)
                    raise ParseError(
                        f"handler defines more than one operation ('{op_name}' and '{clause.name}')",
                        *clause.pos,
                    )
                op_name = clause.name
                op_clause = body
        if op_name is None or op_clause is None:
            raise ParseError("handler must define exactly one operation clause", *e.pos)
        handler = HandlerExpr(
            op_name,
            return_clause if return_clause is not None else self._default_return(),
            op_clause,
            traverse_clause if traverse_clause is not None else self._default_traverse(),
        )
        state = self.expr(e.state, scope)
        body = self.expr(e.body, scope)
        if e.sugar:
            # handler h s e == \_. handle h s (e ())
            return Lam(self.fresh("ignored"), Handle(handler, state, App(body, Lit(UNIT))))
        return Handle(handler, state, body)


_PRELUDE_DEFS: Optional[tuple[SDef, ...]] = None


def prelude_defs() -> tuple[SDef, ...]:
    global _PRELUDE_DEFS
    if _PRELUDE_DEFS is None:
        prog = parse(stdlib.PRELUDE_SOURCE)
        if prog.main is not None:
            raise ParseError("prelude must contain only definitions", 1, 1)
        _PRELUDE_DEFS = prog.defs
    return _PRELUDE_DEFS


def desugar(program: SurfaceProgram, include_prelude: bool = True) -> Expr:
    """Desugar a surface program to a single closed core expression."""
    defs = prelude_defs() if include_prelude else ()
    return _Desugarer().program(program, defs)


def compile_source(source: str, include_prelude: bool = True) -> Expr:
    return desugar(parse(source), include_prelude=include_prelude)


# --------------------------------------------------------------------------
# Surface printer (used by the parse/print round-trip tests)


def _print_name(name: str) -> str:
    if name and (name[0].isalpha() or name[0] == "_"):
        return name
    return f"({name})"


def print_pattern(p: Pattern) -> str:
    match p:
        case PVar(name):
            return name
        case PWild():
            return "_"
        case PTuple(elems):
            return "(" + ", ".join(print_pattern(x) for x in elems) + ")"
    raise ValueError(f"unknown pattern {p!r}")


def print_surface(e: SExpr) -> str:
    """Render a surface expression, fully parenthesized."""
    from .syntax import print_value

    match e:
        case SLit(value):
            text = print_value(value)
            return f"({text})" if text.startswith("-") else text
        case SVar(name):
            return _print_name(name)
        case SLam(binder, body):
            shown = binder if binder == "_" or binder[0].isalpha() or binder[0] == "_" else f"({binder})"
            return f"(\\{shown}. {print_surface(body)})"
        case SApp(fn, arg):
            return f"({print_surface(fn)} {print_surface(arg)})"
        case SFor(var, size, body):
            return f"(for {var}:{print_surface(size)}. {print_surface(body)})"
        case SPerform(op_name):
            return f"(perform {op_name})"
        case SIf(cond, then, orelse):
            return f"(if {print_surface(cond)} then {print_surface(then)} else {print_surface(orelse)})"
        case SCase(scrut, lv, lb, rv, rb):
            return (
                f"(case {print_surface(scrut)} of Left {lv} -> {print_surface(lb)}"
                f" | Right {rv} -> {print_surface(rb)})"
            )
        case STable(elems):
            return "[" + ", ".join(print_surface(x) for x in elems) + "]"
        case STuple(elems):
            return "(" + ", ".join(print_surface(x) for x in elems) + ")"
        case SSeq(first, second):
            return f"({print_surface(first)}; {print_surface(second)})"
        case SBind(pattern, rhs, body):
            return f"({print_pattern(pattern)} <- {print_surface(rhs)}; {print_surface(body)})"
        case SHandle(clauses, state, body, sugar):
            kw = "handler" if sugar else "handle"
            shown = ", ".join(f"{c.name} |-> {print_surface(c.body)}" for c in clauses)
            return f"({kw} {{ {shown} }} {print_surface(state)} {print_surface(body)})"
    raise ValueError(f"unknown surface expression {e!r}")


def print_program(prog: SurfaceProgram) -> str:
    lines = [f"{d.name} = {print_surface(d.body)}" for d in prog.defs]
    if prog.main is not None:
        lines.append(print_surface(prog.main))
    return "\n".join(lines) + "\n"
