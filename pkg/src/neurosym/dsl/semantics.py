"""Differentiable semantics of architectures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import grad as G
from ..nets import make_standin
from .ast import (HEAD_KEY, SEQ, Affine, Architecture, FeatureSchema, Hole, IfThenElse,
                  Input, MapAverage, Op, ParameterStore, Select, check_params, init_params,
                  path_key)

DEFAULT_ITE_TEMPERATURE = 4.0


def smooth_ite(cond, then, orelse, temperature: float = DEFAULT_ITE_TEMPERATURE):
    """sigmoid(beta*c)*a + (1 - sigmoid(beta*c))*b"""
    gate = G.sigmoid(cond * temperature)
    return orelse + gate * (then - orelse)


def evaluate(arch: Architecture, params: ParameterStore, standins: dict, x, *,
             tape=None, schema: FeatureSchema | None = None,
             ite_temperature: float = DEFAULT_ITE_TEMPERATURE):
    """Logit of ``arch`` on one trajectory (T, D) or a batch (B, T, D).

    Returns a scalar for a single trajectory and shape (B,) for a batch.  With
    a ``tape`` every parameter and stand-in weight is watched.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (T, D) or (B, T, D) input, got shape {x.shape}")
    if schema is not None and (x.shape[2] != schema.dim or x.shape[1] != schema.trajectory_length):
        raise ValueError(f"input shape {x.shape[1:]} does not match schema "
                         f"({schema.trajectory_length}, {schema.dim})")
    hole_keys = {path_key(p) for p, _ in arch.holes()}
    if set(standins) != hole_keys:
        raise ValueError(f"stand-ins {sorted(standins)} do not match nonterminals {sorted(hole_keys)}")

    frame_paths = {p for p, _, sig in arch.walk() if sig != SEQ}

    def w(key):
        return params[key].data if tape is None else tape.watch(params[key])

    def ev(node, path):
        if isinstance(node, Hole):
            return standins[path_key(path)](tape, x)
        if isinstance(node, Input):
            if x.shape[2] != 1 or path not in frame_paths:
                raise TypeError("input node is only a scalar on one-channel frames")
            return x[..., 0]
        if isinstance(node, Affine):
            if max(node.channels) >= x.shape[2]:
                raise ValueError(f"channel {max(node.channels)} outside input with {x.shape[2]} channels")
            wb = w(path_key(path))
            n = len(node.channels)
            return G.matmul(x[..., list(node.channels)], wb[:n]) + wb[n]
        if isinstance(node, Select):
            if node.channels[0] >= x.shape[2]:
                raise ValueError(f"channel {node.channels[0]} outside input")
            return x[..., node.channels[0]]
        if isinstance(node, Op):
            a, b = ev(node.left, path + (0,)), ev(node.right, path + (1,))
            return a + b if node.op == "add" else a * b
        if isinstance(node, IfThenElse):
            return smooth_ite(ev(node.cond, path + (0,)), ev(node.then, path + (1,)),
                              ev(node.orelse, path + (2,)), ite_temperature)
        if isinstance(node, MapAverage):
            return G.mean(ev(node.body, path + (0,)), axis=-1)
        raise TypeError(f"cannot evaluate {node!r}")

    out = ev(arch.root, ())
    if HEAD_KEY in params:
        out = out - w(HEAD_KEY)[0]
    if single:
        out = out[0]
    return out


def make_standins(arch: Architecture, schema: FeatureSchema, hidden: int, rng,
                  shift=0.0, scale=1.0) -> dict:
    return {path_key(p): make_standin(h.signature, schema.dim, hidden, rng, shift, scale)
            for p, h in arch.holes()}


@dataclass
class Program:
    """Architecture, parameters and stand-ins evaluated together."""

    arch: Architecture
    params: ParameterStore
    schema: FeatureSchema
    standins: dict = field(default_factory=dict)
    ite_temperature: float = DEFAULT_ITE_TEMPERATURE

    def __post_init__(self):
        check_params(self.arch, self.params)

    @classmethod
    def initial(cls, arch, schema, rng, *, hidden=16, shift=0.0, scale=1.0,
                ite_temperature=DEFAULT_ITE_TEMPERATURE):
        return cls(arch, init_params(arch, rng), schema,
                   make_standins(arch, schema, hidden, rng, shift, scale), ite_temperature)

    @property
    def is_complete(self) -> bool:
        return self.arch.is_complete

    def logits(self, x, tape=None):
        return evaluate(self.arch, self.params, self.standins, x, tape=tape,
                        schema=self.schema, ite_temperature=self.ite_temperature)

    def parameters(self) -> list:
        out = self.params.params()
        for key in sorted(self.standins):
            out.extend(self.standins[key].parameters())
        return out

    def body_values(self, x):
        """Root value before the threshold is subtracted."""
        return self.logits(x) + self.params[HEAD_KEY].data[0]
