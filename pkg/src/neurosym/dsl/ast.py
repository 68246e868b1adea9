"""Program architectures: typed AST nodes, holes, and parameter storage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from ..grad import Param

SEQ = "seq"      # sequence -> scalar
FRAME = "frame"  # timestep -> scalar
SIGNATURES = (SEQ, FRAME)
ALGEBRAIC_OPS = ("add", "mul")
HEAD_KEY = "head"


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    trajectory_length: int

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("schema needs at least one feature channel")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate feature names in {self.names}")
        if self.trajectory_length < 1:
            raise ValueError("trajectory_length must be >= 1")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}; schema has {list(self.names)}") from None

    def to_dict(self) -> dict:
        return {"names": list(self.names), "dim": self.dim,
                "trajectory_length": self.trajectory_length}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        schema = cls(tuple(d["names"]), int(d["trajectory_length"]))
        if "dim" in d and int(d["dim"]) != schema.dim:
            raise ValueError(f"schema dim {d['dim']} does not match {len(schema.names)} names")
        return schema


class Node:
    """Base for AST nodes.  Subclasses are frozen dataclasses."""

    children: tuple = ()

    def with_children(self, children) -> "Node":
        return self

    def child_signatures(self, signature: str) -> tuple:
        return ()


@dataclass(frozen=True)
class Input(Node):
    pass


@dataclass(frozen=True)
class Op(Node):
    op: str
    left: Node
    right: Node

    def __post_init__(self):
        if self.op not in ALGEBRAIC_OPS:
            raise ValueError(f"unknown algebraic op {self.op!r}")

    @property
    def children(self):
        return (self.left, self.right)

    def with_children(self, children):
        return replace(self, left=children[0], right=children[1])

    def child_signatures(self, signature):
        return (signature, signature)


@dataclass(frozen=True)
class Affine(Node):
    """Parameterized library function: w . x[S] + b on one frame."""

    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ValueError("affine needs at least one channel")


@dataclass(frozen=True)
class Select(Node):
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 1:
            raise ValueError("select must pick exactly one channel to yield a scalar")


@dataclass(frozen=True)
class IfThenElse(Node):
    cond: Node
    then: Node
    orelse: Node

    @property
    def children(self):
        return (self.cond, self.then, self.orelse)

    def with_children(self, children):
        return replace(self, cond=children[0], then=children[1], orelse=children[2])

    def child_signatures(self, signature):
        return (signature,) * 3


@dataclass(frozen=True)
class MapAverage(Node):
    body: Node

    @property
    def children(self):
        return (self.body,)

    def with_children(self, children):
        return replace(self, body=children[0])

    def child_signatures(self, signature):
        if signature != SEQ:
            raise TypeError("map_avg produces a sequence-level value")
        return (FRAME,)


@dataclass(frozen=True)
class Hole(Node):
    """An unexpanded nonterminal."""

    signature: str

    def __post_init__(self):
        if self.signature not in SIGNATURES:
            raise ValueError(f"unknown signature {self.signature!r}")


PARAMETERIZED = (Affine,)


def path_key(path: tuple) -> str:
    return ".".join(["n", *map(str, path)])


def skeleton(node: Node, signature: str) -> Node:
    """``node`` with every child replaced by a hole of the child's type."""
    sigs = node.child_signatures(signature)
    return node.with_children(tuple(Hole(s) for s in sigs))


@dataclass(frozen=True)
class Architecture:
    """A (possibly partial) program architecture.

    Structural equality ignores parameter values, which is what redundancy
    checks between learned programs rely on.
    """

    root: Node = field(default_factory=lambda: Hole(SEQ))
    signature: str = SEQ

    def walk(self) -> Iterator[tuple]:
        """Pre-order ``(path, node, signature)`` triples."""
        stack = [((), self.root, self.signature)]
        while stack:
            path, node, sig = stack.pop()
            yield path, node, sig
            kids = list(zip(node.children, node.child_signatures(sig)))
            for i in reversed(range(len(kids))):
                stack.append((path + (i,), kids[i][0], kids[i][1]))

    def holes(self) -> list:
        return [(p, n) for p, n, _ in self.walk() if isinstance(n, Hole)]

    @property
    def is_complete(self) -> bool:
        return not any(isinstance(n, Hole) for _, n, _ in self.walk())

    @property
    def firings(self) -> int:
        return sum(1 for _, n, _ in self.walk() if not isinstance(n, Hole))

    @property
    def depth(self) -> int:
        return max((len(p) + 1 for p, n, _ in self.walk() if not isinstance(n, Hole)),
                   default=0)

    def channels(self) -> set:
        return {c for _, n, _ in self.walk() for c in getattr(n, "channels", ())}

    def node_at(self, path: tuple) -> Node:
        node = self.root
        for i in path:
            node = node.children[i]
        return node

    def replace_at(self, path: tuple, new: Node) -> "Architecture":
        def rebuild(node, rest):
            if not rest:
                return new
            kids = list(node.children)
            kids[rest[0]] = rebuild(kids[rest[0]], rest[1:])
            return node.with_children(tuple(kids))

        return Architecture(rebuild(self.root, path), self.signature)


def is_complete(arch: Architecture) -> bool:
    return arch.is_complete


def structural_cost(arch: Architecture, penalty: float) -> float:
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    return penalty * arch.firings


class ParameterStore(dict):
    """Node key -> :class:`Param`.  ``"head"`` holds the output threshold."""

    def params(self) -> list:
        return [self[k] for k in sorted(self)]

    def arrays(self) -> dict:
        return {k: self[k].data.copy() for k in sorted(self)}

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: Param(v.data.copy(), k) for k, v in self.items()})

    def rounded(self, decimals: int = 2) -> "ParameterStore":
        return ParameterStore({k: Param(np.round(v.data, decimals), k) for k, v in self.items()})

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ParameterStore":
        return cls({k: Param(np.asarray(v, dtype=np.float64), k) for k, v in arrays.items()})

    def allclose(self, other: "ParameterStore", atol: float = 1e-12) -> bool:
        return set(self) == set(other) and all(
            self[k].data.shape == other[k].data.shape and np.allclose(self[k].data, other[k].data, atol=atol)
            for k in self)


def check_params(arch: Architecture, params: ParameterStore) -> None:
    """Raise if ``params`` does not cover exactly the parameterized nodes."""
    expected = {}
    for path, node, _ in arch.walk():
        if isinstance(node, Affine):
            expected[path_key(path)] = len(node.channels) + 1
    keys = set(params) - {HEAD_KEY}
    if keys != set(expected):
        raise ValueError(f"parameter keys {sorted(keys)} do not match nodes {sorted(expected)}")
    for k, n in expected.items():
        if params[k].data.shape != (n,):
            raise ValueError(f"parameter {k} has shape {params[k].data.shape}, expected ({n},)")


def init_params(arch: Architecture, rng, head: float = 0.0) -> ParameterStore:
    """Affine weights ~ U[-1/sqrt|S|, 1/sqrt|S|], biases 0, threshold ``head``."""
    store = ParameterStore()
    for path, node, _ in arch.walk():
        if isinstance(node, Affine):
            n = len(node.channels)
            bound = 1.0 / math.sqrt(n)
            store[path_key(path)] = Param(np.append(rng.uniform(-bound, bound, n), 0.0),
                                          path_key(path))
    store[HEAD_KEY] = Param(np.array([head]), HEAD_KEY)
    return store
