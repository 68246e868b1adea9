"""Text form of programs.

::

    program := ["1[>" NUM "]"] seq
    seq     := "map_avg" "(" "fun" "x_t" "." frame ")"
             | ("add" | "mul") "(" seq "," seq ")"
             | "ite" "(" seq "," seq "," seq ")"
             | "x" | "??seq"
    frame   := "affine" "[" NAME ":" NUM ("," NAME ":" NUM)* ";" NUM "]" "(" "x_t" ")"
             | "select" "[" NAME "]" "(" "x_t" ")"
             | ("add" | "mul") "(" frame "," frame ")"
             | "ite" "(" frame "," frame "," frame ")"
             | "x_t" | "??frame"

``1[> c] e`` thresholds ``e`` at ``c``.  Affine weights are listed per
channel and followed by the bias.  Numbers print with two decimals.
"""

from __future__ import annotations

import re

import numpy as np

from ..grad import Param
from .ast import (FRAME, HEAD_KEY, SEQ, Affine, Architecture, FeatureSchema, Hole,
                  IfThenElse, Input, MapAverage, Op, ParameterStore, Select, path_key)

DECIMALS = 2


class ProgramSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class ProgramTypeError(ProgramSyntaxError):
    pass


class UnknownFeatureError(ProgramSyntaxError):
    pass


def _num(v: float) -> str:
    s = f"{v:.{DECIMALS}f}"
    return "0.00" if s == "-0.00" else s


def _names(schema):
    if schema is None:
        return lambda c: f"c{c}"
    return lambda c: schema.names[c]


def format_architecture(arch: Architecture, params: ParameterStore | None = None,
                        schema: FeatureSchema | None = None) -> str:
    """Render ``arch``; holes print as ``??seq``/``??frame``."""
    name = _names(schema)

    def fmt(node, path, sig):
        var = "x_t" if sig == FRAME else "x"
        if isinstance(node, Hole):
            return f"??{node.signature}"
        if isinstance(node, Input):
            return var
        if isinstance(node, Affine):
            if params is None:
                return f"affine[{', '.join(name(c) for c in node.channels)}]({var})"
            wb = params[path_key(path)].data
            ws = ", ".join(f"{name(c)}: {_num(wv)}" for c, wv in zip(node.channels, wb[:-1]))
            return f"affine[{ws}; {_num(wb[-1])}]({var})"
        if isinstance(node, Select):
            return f"select[{name(node.channels[0])}]({var})"
        if isinstance(node, Op):
            return (f"{node.op}({fmt(node.left, path + (0,), sig)}, "
                    f"{fmt(node.right, path + (1,), sig)})")
        if isinstance(node, IfThenElse):
            parts = [fmt(c, path + (i,), sig) for i, c in enumerate(node.children)]
            return f"ite({', '.join(parts)})"
        if isinstance(node, MapAverage):
            return f"map_avg(fun x_t. {fmt(node.body, path + (0,), FRAME)})"
        raise TypeError(f"cannot print {node!r}")

    body = fmt(arch.root, (), arch.signature)
    if params is not None and HEAD_KEY in params:
        return f"1[> {_num(params[HEAD_KEY].data[0])}] {body}"
    return body


def pretty_print(arch: Architecture, params: ParameterStore,
                 schema: FeatureSchema | None = None) -> str:
    if not arch.is_complete:
        raise ValueError("only complete programs can be printed with parameters")
    return format_architecture(arch, params, schema)


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<head>1\[>)
  | (?P<hole>\?\?(?:seq|frame))
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[\[\](),:;.])
""", re.VERBOSE)


def _tokenize(text: str) -> list:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ProgramSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, schema):
        self.toks = _tokenize(text)
        self.i = 0
        self.schema = schema
        self.positions = {}   # path -> source position
        self.values = {}      # path -> np.ndarray for affine nodes
        self.inputs = {}      # path -> "x" | "x_t"

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value, kind=None):
        k, v, pos = self.next()
        if v != value or (kind and k != kind):
            shown = v or "end of input"
            raise ProgramSyntaxError(f"expected {value!r}, found {shown!r}", pos)
        return pos

    def number(self):
        k, v, pos = self.next()
        if k != "num":
            raise ProgramSyntaxError(f"expected a number, found {v or 'end of input'!r}", pos)
        return float(v)

    def feature(self):
        k, v, pos = self.next()
        if k != "name":
            raise ProgramSyntaxError(f"expected a feature name, found {v!r}", pos)
        try:
            return self.schema.index(v)
        except KeyError:
            raise UnknownFeatureError(f"unknown feature {v!r}", pos) from None

    def var(self):
        k, v, pos = self.next()
        if v not in ("x", "x_t"):
            raise ProgramSyntaxError(f"expected 'x' or 'x_t', found {v!r}", pos)
        return v, pos

    def expr(self, path):
        k, v, pos = self.next()
        self.positions[path] = pos
        if k == "hole":
            return Hole(v[2:])
        if v in ("x", "x_t") and k == "name":
            self.inputs[path] = v
            return Input()
        if v == "map_avg":
            self.expect("(")
            self.expect("fun")
            self.expect("x_t")
            self.expect(".")
            body = self.expr(path + (0,))
            self.expect(")")
            return MapAverage(body)
        if v in ("add", "mul"):
            self.expect("(")
            left = self.expr(path + (0,))
            self.expect(",")
            right = self.expr(path + (1,))
            self.expect(")")
            return Op(v, left, right)
        if v == "ite":
            self.expect("(")
            kids = [self.expr(path + (0,))]
            for i in (1, 2):
                self.expect(",")
                kids.append(self.expr(path + (i,)))
            self.expect(")")
            return IfThenElse(*kids)
        if v == "affine":
            self.expect("[")
            chans, weights = [], []
            while True:
                chans.append(self.feature())
                self.expect(":")
                weights.append(self.number())
                if self.peek()[1] == ";":
                    self.next()
                    break
                self.expect(",")
            bias = self.number()
            self.expect("]")
            self.expect("(")
            self.var()
            self.expect(")")
            self.values[path] = np.array(weights + [bias])
            return Affine(tuple(chans))
        if v == "select":
            self.expect("[")
            chan = self.feature()
            self.expect("]")
            self.expect("(")
            self.var()
            self.expect(")")
            return Select((chan,))
        raise ProgramSyntaxError(f"unexpected token {v or 'end of input'!r}", pos)

    def program(self):
        head = None
        if self.peek()[0] == "head":
            self.next()
            head = self.number()
            self.expect("]")
        root = self.expr(())
        k, v, pos = self.peek()
        if k != "eof":
            raise ProgramSyntaxError(f"trailing input {v!r}", pos)
        return head, root


def parse_program(text: str, grammar, schema: FeatureSchema | None = None):
    """Inverse of :func:`pretty_print` (parameters at printed precision).

    Returns ``(Architecture, ParameterStore)``.  Raises
    :class:`ProgramSyntaxError`, :class:`UnknownFeatureError` or
    :class:`ProgramTypeError`, each carrying a source position.
    """
    schema = schema or grammar.schema
    parser = _Parser(text, schema)
    head, root = parser.program()
    start = grammar.start if grammar is not None else SEQ

    def check(node, path, sig):
        pos = parser.positions.get(path, 0)
        if isinstance(node, Input) and (parser.inputs[path] == "x_t") != (sig == FRAME):
            raise ProgramTypeError(f"{parser.inputs[path]!r} used where a {sig} value is expected",
                                   pos)
        if isinstance(node, Hole):
            if node.signature != sig:
                raise ProgramTypeError(f"hole of type {node.signature} where {sig} is expected", pos)
            return
        if isinstance(node, MapAverage) and sig != SEQ:
            raise ProgramTypeError("map_avg cannot appear inside a per-timestep function", pos)
        if grammar is not None and grammar.rule_index(node, sig) is None:
            raise ProgramTypeError(f"{type(node).__name__.lower()} is not a {sig} rule of the grammar",
                                   pos)
        for i, (child, child_sig) in enumerate(zip(node.children, node.child_signatures(sig))):
            check(child, path + (i,), child_sig)

    check(root, (), start)
    arch = Architecture(root, start)
    params = ParameterStore({path_key(p): Param(v, path_key(p)) for p, v in parser.values.items()})
    if head is not None:
        params[HEAD_KEY] = Param(np.array([head]), HEAD_KEY)
    return arch, params
