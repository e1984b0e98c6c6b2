"""Reader/writer for the native ``.mlt`` plain-text instance format.

Grammar (one statement per line, ``#`` starts a comment)::

    # mlt 1
    # optimum 4.0              (optional reference objective annotation)
    var NAME >= NUM <= NUM ;
    bin NAME ;
    min EXPR ;                 (or: max EXPR ;  -- negated into min)
    s.t. NAME : EXPR REL NUM ; (REL is <=, >= or =)

An EXPR is a signed sum of products ``coef * v1 * v2 * ... * vk`` where
``v^k`` is sugar for a k-fold repeated factor.  The writer emits canonical
text (variables and constraints sorted by name, shortest round-trippable
numbers) and ``parse(write(m))`` is structurally equal to ``m``.
"""

from __future__ import annotations

import re

from .model import BINARY, CONTINUOUS, Expr, Key, Model, ModelError, expr_add


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>\#[^\n]*)
      | (?P<st>s\.t\.)
      | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op><=|>=|=|\+|-|\*|\^|;|:)
    """,
    re.VERBOSE,
)

_OPTIMUM_RE = re.compile(r"^\s*#\s*optimum\s+(?P<val>[-+0-9.eE]+)\s*$", re.MULTILINE)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(text: str) -> list:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, tok, line, col))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.model = Model()
        self.names: dict = {}
        self.has_objective = False
        opt = _OPTIMUM_RE.search(text)
        if opt:
            try:
                self.model.reference_optimum = float(opt.group("val"))
            except ValueError:
                pass  # malformed annotation stays a plain comment

    # -- token plumbing -------------------------------------------------
    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise ParseError(f"expected {want!r}, found {tok.text or 'end of input'!r}",
                             tok.line, tok.col)
        return tok

    def fail(self, message: str) -> "NoReturn":
        tok = self.peek()
        raise ParseError(message, tok.line, tok.col)

    # -- grammar --------------------------------------------------------
    def parse(self) -> Model:
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "st":
                self.constraint_statement()
            elif tok.kind != "name":
                self.fail(f"expected a statement, found {tok.text!r}")
            elif tok.text == "var":
                self.var_statement()
            elif tok.text == "bin":
                self.bin_statement()
            elif tok.text in ("min", "max"):
                self.objective_statement()
            else:
                self.fail(f"unknown statement {tok.text!r}")
        self.model.validate()
        return self.model

    def number(self) -> float:
        sign = 1.0
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            if self.next().text == "-":
                sign = -sign
        tok = self.expect("num")
        return sign * float(tok.text)

    def fresh_name(self) -> str:
        tok = self.expect("name")
        if tok.text in self.names:
            raise ParseError(f"duplicate variable name {tok.text!r}", tok.line, tok.col)
        return tok.text

    def var_statement(self) -> None:
        self.expect("name", "var")
        name = self.fresh_name()
        self.expect("op", ">=")
        lower = self.number()
        self.expect("op", "<=")
        upper = self.number()
        self.expect("op", ";")
        if lower > upper:
            self.fail(f"variable {name!r}: lower bound {lower} exceeds upper bound {upper}")
        self.names[name] = self.model.add_variable(name, lower, upper, CONTINUOUS)

    def bin_statement(self) -> None:
        self.expect("name", "bin")
        name = self.fresh_name()
        self.expect("op", ";")
        self.names[name] = self.model.add_variable(name, 0.0, 1.0, BINARY)

    def objective_statement(self) -> None:
        sense = self.next().text
        if self.has_objective:
            self.fail("a model may declare at most one objective")
        expr = self.expression()
        self.expect("op", ";")
        if sense == "max":
            expr = {k: -c for k, c in expr.items()}
        self.model.set_objective(expr)
        self.has_objective = True

    def constraint_statement(self) -> None:
        self.expect("st")
        tok = self.expect("name")
        cname = tok.text
        if any(c.name == cname for c in self.model.constraints):
            raise ParseError(f"duplicate constraint name {cname!r}", tok.line, tok.col)
        self.expect("op", ":")
        expr = self.expression()
        rel_tok = self.next()
        if rel_tok.kind != "op" or rel_tok.text not in ("<=", ">=", "="):
            raise ParseError(f"expected a relation, found {rel_tok.text!r}",
                             rel_tok.line, rel_tok.col)
        rhs = self.number()
        self.expect("op", ";")
        self.model.add_constraint(cname, expr, rel_tok.text, rhs)

    def expression(self) -> Expr:
        expr: Expr = {}
        sign = self.leading_sign()
        while True:
            coef, key = self.product(sign)
            expr_add(expr, key, coef)
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("+", "-"):
                sign = 1.0
                while self.peek().kind == "op" and self.peek().text in ("+", "-"):
                    if self.next().text == "-":
                        sign = -sign
            else:
                return expr

    def leading_sign(self) -> float:
        sign = 1.0
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            if self.next().text == "-":
                sign = -sign
        return sign

    def product(self, sign: float) -> tuple:
        coef = sign
        indices: list = []
        saw_factor = False
        while True:
            tok = self.peek()
            if tok.kind == "num":
                coef *= float(self.next().text)
                saw_factor = True
            elif tok.kind == "name":
                self.next()
                if tok.text not in self.names:
                    raise ParseError(f"undeclared identifier {tok.text!r}", tok.line, tok.col)
                power = 1
                if self.peek().kind == "op" and self.peek().text == "^":
                    self.next()
                    ptok = self.expect("num")
                    if not ptok.text.isdigit() or int(ptok.text) < 1:
                        raise ParseError("exponent must be a positive integer",
                                         ptok.line, ptok.col)
                    power = int(ptok.text)
                indices.extend([self.names[tok.text]] * power)
                saw_factor = True
            else:
                self.fail(f"expected a number or identifier, found {tok.text or 'end of input'!r}")
            if self.peek().kind == "op" and self.peek().text == "*":
                self.next()
                continue
            break
        if not saw_factor:
            self.fail("empty product")
        return coef, tuple(sorted(indices))


def parse(text: str) -> Model:
    """Parse ``.mlt`` text into a raw (not yet normalized) model."""
    return _Parser(text).parse()


# ----------------------------------------------------------------------
# writer
# ----------------------------------------------------------------------

def _fmt(value: float) -> str:
    """Shortest representation that round-trips through float()."""
    return repr(float(value))


def _inline_key(model: Model, key: Key, by_aux: dict) -> tuple:
    """Expand auxiliary indices of a key back into original-variable indices."""
    flat: list = []
    for i in key:
        if i in by_aux:
            flat.extend(_inline_key(model, by_aux[i], by_aux))
        else:
            flat.append(i)
    return tuple(sorted(flat))


def _format_expr(model: Model, expr: Expr, by_aux: dict) -> str:
    flat: Expr = {}
    for key, coef in expr.items():
        expr_add(flat, _inline_key(model, key, by_aux), coef)
    if not flat:
        return "0"
    items = []
    for key in sorted(flat, key=lambda k: (len(k), tuple(model.variables[i].name for i in k))):
        coef = flat[key]
        factors: list = []
        # collapse repeats into ^k sugar
        run_start = 0
        while run_start < len(key):
            run_end = run_start
            while run_end < len(key) and key[run_end] == key[run_start]:
                run_end += 1
            name = model.variables[key[run_start]].name
            power = run_end - run_start
            factors.append(name if power == 1 else f"{name}^{power}")
            run_start = run_end
        mag = abs(coef)
        if not factors:
            body = _fmt(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([_fmt(mag)] + factors)
        items.append((coef < 0, body))
    parts = []
    for i, (neg, body) in enumerate(items):
        if i == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append(("- " if neg else "+ ") + body)
    return " ".join(parts)


def write(model: Model) -> str:
    """Render a model as canonical ``.mlt`` text.

    Product-term auxiliaries are inlined back into explicit products, so
    normalized and raw models of the same problem print identically.
    """
    by_aux = {t.aux: t.key for t in model.terms}
    lines = ["# mlt 1"]
    if model.reference_optimum is not None:
        lines.append(f"# optimum {_fmt(model.reference_optimum)}")
    aux = model.aux_indices()
    for v in sorted(model.variables, key=lambda v: v.name):
        if v.index in aux:
            continue
        if v.kind == BINARY:
            lines.append(f"bin {v.name};")
        else:
            lines.append(f"var {v.name} >= {_fmt(v.lower)} <= {_fmt(v.upper)};")
    if model.objective:
        lines.append(f"min {_format_expr(model, model.objective, by_aux)};")
    for c in sorted(model.constraints, key=lambda c: c.name):
        lines.append(
            f"s.t. {c.name}: {_format_expr(model, c.expr, by_aux)} {c.relation} {_fmt(c.rhs)};")
    return "\n".join(lines) + "\n"
