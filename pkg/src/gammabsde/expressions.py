"""Tiny arithmetic expression language for terminal maps and generators.

Grammar: decimal literals; named variables; binary + - * /; unary -;
functions sin, cos, exp, tanh, abs, min, max, clip(v, lo, hi); standard
precedence; a top-level "(e1, e2)" pair denotes a 2-vector result.
Whitespace is insignificant; parse errors carry line and column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvalError, ParseError

_FUNCTIONS = {
    "sin": (1, math.sin),
    "cos": (1, math.cos),
    "exp": (1, math.exp),
    "tanh": (1, math.tanh),
    "abs": (1, abs),
    "min": (-2, min),  # negative arity: at least that many arguments
    "max": (-2, max),
    "clip": (3, lambda v, lo, hi: min(max(v, lo), hi)),
}


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | lparen | rparen | comma | end
    text: str
    line: int
    column: int


def _tokenize(source):
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        start_col = col
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            seen_e = False
            while j < n and (
                source[j].isdigit()
                or source[j] == "."
                or (source[j] in "eE" and not seen_e)
                or (source[j] in "+-" and j > i and source[j - 1] in "eE")
            ):
                if source[j] in "eE":
                    seen_e = True
                j += 1
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ParseError(f"bad number literal '{text}'", line, start_col)
            tokens.append(_Token("num", text, line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("name", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c in "+-*/":
            tokens.append(_Token("op", c, line, start_col))
        elif c == "(":
            tokens.append(_Token("lparen", c, line, start_col))
        elif c == ")":
            tokens.append(_Token("rparen", c, line, start_col))
        elif c == ",":
            tokens.append(_Token("comma", c, line, start_col))
        else:
            raise ParseError(f"unexpected character {c!r}", line, start_col)
        i += 1
        col += 1
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = frozenset(variables)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, text=None):
        tok = self.advance()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ParseError(
                f"expected {text or kind}, found {tok.text or 'end of input'}",
                tok.line,
                tok.column,
            )
        return tok

    def parse_top(self):
        """Either a scalar expression or a top-level pair "(e1, e2)"."""
        if self.peek().kind == "lparen":
            save = self.pos
            self.advance()
            first = self.parse_expr()
            if self.peek().kind == "comma":
                self.advance()
                second = self.parse_expr()
                self.expect("rparen")
                self.expect("end")
                return ("vec", first, second)
            self.pos = save
        node = self.parse_expr()
        self.expect("end")
        return node

    def parse_expr(self):
        node = self.parse_term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = (op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = (op, node, self.parse_unary())
        return node

    def parse_unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return ("neg", self.parse_unary())
        if tok.kind == "op" and tok.text == "+":
            self.advance()
            return self.parse_unary()
        return self.parse_atom()

    def parse_atom(self):
        tok = self.advance()
        if tok.kind == "num":
            return ("num", float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if self.peek().kind == "lparen":
                if name not in _FUNCTIONS:
                    raise ParseError(f"unknown function '{name}'", tok.line, tok.column)
                self.advance()
                args = [self.parse_expr()]
                while self.peek().kind == "comma":
                    self.advance()
                    args.append(self.parse_expr())
                self.expect("rparen")
                arity = _FUNCTIONS[name][0]
                if arity >= 0 and len(args) != arity:
                    raise ParseError(
                        f"{name} takes {arity} arguments, got {len(args)}",
                        tok.line, tok.column,
                    )
                if arity < 0 and len(args) < -arity:
                    raise ParseError(
                        f"{name} takes at least {-arity} arguments",
                        tok.line, tok.column,
                    )
                return ("call", name, tuple(args))
            if name not in self.variables:
                raise ParseError(f"unknown variable '{name}'", tok.line, tok.column)
            return ("var", name)
        if tok.kind == "lparen":
            node = self.parse_expr()
            self.expect("rparen")
            return node
        raise ParseError(
            f"unexpected token {tok.text or 'end of input'}", tok.line, tok.column
        )


@dataclass(frozen=True, eq=False)
class Expression:
    """Parsed expression bound to a fixed variable set."""

    source: str
    ast: tuple
    variables: tuple

    @property
    def is_vector(self):
        return self.ast[0] == "vec"

    def __call__(self, env):
        value = _eval(self.ast, env)
        if isinstance(value, tuple):
            return np.array(value, dtype=float)
        return value


def parse_expression(source, variables) -> Expression:
    """Parse a scalar or pair expression over the given variable names."""
    tokens = _tokenize(source)
    ast = _Parser(tokens, variables).parse_top()
    return Expression(source=source, ast=ast, variables=tuple(variables))


def _eval(node, env):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return env[node[1]]
    if kind == "neg":
        return -_eval(node[1], env)
    if kind == "vec":
        return (_eval(node[1], env), _eval(node[2], env))
    if kind == "call":
        _, fn = _FUNCTIONS[node[1]]
        args = [_eval(a, env) for a in node[2]]
        try:
            out = fn(*args)
        except (ValueError, OverflowError) as exc:
            raise EvalError(f"{node[1]}{tuple(args)}: {exc}") from None
        if not math.isfinite(out):
            raise EvalError(f"{node[1]} produced a non-finite value")
        return out
    a = _eval(node[1], env)
    b = _eval(node[2], env)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        if b == 0.0:
            raise EvalError("division by zero")
        out = a / b
        if not math.isfinite(out):
            raise EvalError("division produced a non-finite value")
        return out
    raise EvalError(f"corrupt expression node {kind!r}")  # pragma: no cover
