"""Small recurrent and feed-forward networks built on :mod:`neurosym.grad`.

Every ``forward``-style method takes ``tape`` first.  With ``tape=None`` the
same code runs on plain arrays, which is what inference uses.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import grad as G
from .grad import Param

CHECKPOINT_VERSION = 1


def _w(tape, param: Param):
    return param.data if tape is None else tape.watch(param)


class Module:
    """Container that finds :class:`Param` and sub-module attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Param):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_(self) -> "Module":
        for p in self.parameters():
            p.data[...] = 0.0
        return self


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng):
        self.weight = Param(_uniform(rng, (n_in, n_out), n_in), "weight")
        self.bias = Param(np.zeros(n_out), "bias")

    def __call__(self, tape, x):
        return G.matmul(x, _w(tape, self.weight)) + _w(tape, self.bias)


class GRUCell(Module):
    """Single-layer gated recurrent unit."""

    def __init__(self, n_in: int, hidden: int, rng):
        self.hidden = hidden
        self.w_in = Param(_uniform(rng, (n_in, 3 * hidden), hidden), "w_in")
        self.w_h = Param(_uniform(rng, (hidden, 3 * hidden), hidden), "w_h")
        self.b_in = Param(np.zeros(3 * hidden), "b_in")
        self.b_h = Param(np.zeros(3 * hidden), "b_h")

    def run(self, tape, xs, h0=None):
        """Unroll over ``xs`` (B, T, n_in); returns all states, (B, T, H)."""
        batch = G.data_of(xs).shape[0]
        gx = G.matmul(xs, _w(tape, self.w_in)) + _w(tape, self.b_in)
        if h0 is None:
            h0 = np.zeros((batch, self.hidden))
        return G.gru_sequence(gx, h0, _w(tape, self.w_h), _w(tape, self.b_h))


class RecurrentEncoder(Module):
    """GRU over the trajectory, then a tanh head to (mu, logvar)."""

    def __init__(self, n_features: int, z_dim: int, rnn_dim: int, h_dim: int, rng):
        self.z_dim = z_dim
        self.rnn = GRUCell(n_features, rnn_dim, rng)
        self.hidden = Linear(rnn_dim, h_dim, rng)
        self.mu = Linear(h_dim, z_dim, rng)
        self.logvar = Linear(h_dim, z_dim, rng)

    def __call__(self, tape, x):
        h_last = self.rnn.run(tape, x)[:, -1]
        feat = G.tanh(self.hidden(tape, h_last))
        return self.mu(tape, feat), self.logvar(tape, feat)


LOGVAR_BOUNDS = (-6.0, 6.0)


def gaussian_loglik(x, mean, logvar):
    """Elementwise diagonal-Gaussian log density."""
    diff = x - mean
    return -0.5 * (math.log(2 * math.pi) + logvar + diff * diff * G.exp(-logvar))


class RecurrentDecoder(Module):
    """Autoregressive Gaussian decoder conditioned on the full latent code.

    Step ``t`` sees ``[x_{t-1}, z]`` (``x_0 = 0``) and the initial hidden
    state is a linear map of ``z``.  The mean is predicted as an offset from
    the previous frame.
    """

    def __init__(self, n_features: int, z_total: int, rnn_dim: int, h_dim: int, rng):
        self.n_features = n_features
        self.z_total = z_total
        self.init_hidden = Linear(max(z_total, 1), rnn_dim, rng)
        self.rnn = GRUCell(n_features + z_total, rnn_dim, rng)
        self.hidden = Linear(rnn_dim, h_dim, rng)
        self.out = Linear(h_dim, 2 * n_features, rng)

    def step_params(self, tape, x, z):
        """Per-step (mean, logvar), each shaped like ``x`` = (B, T, D)."""
        x = np.asarray(x, dtype=np.float64)
        batch, steps, dim = x.shape
        if dim != self.n_features:
            raise ValueError(f"decoder expects {self.n_features} features, got {dim}")
        prev = np.concatenate([np.zeros((batch, 1, dim)), x[:, :-1]], axis=1)
        if self.z_total:
            z3 = G.reshape(z, (batch, 1, self.z_total))
            z_steps = z3 * np.ones((1, steps, 1))
            inputs = G.concatenate([prev, z_steps], axis=-1)
            h0 = self.init_hidden(tape, z)
        else:
            inputs = prev
            h0 = self.init_hidden(tape, np.zeros((batch, 1)))
        hs = self.rnn.run(tape, inputs, h0)
        out = self.out(tape, G.tanh(self.hidden(tape, hs)))
        mean = prev + out[..., :dim]
        logvar = G.clip(out[..., dim:], *LOGVAR_BOUNDS)
        return mean, logvar

    def loglik(self, tape, x, z):
        """Per-trajectory sum over t of log p(x_t | x_<t, z); shape (B,)."""
        mean, logvar = self.step_params(tape, x, z)
        return gaussian_loglik(np.asarray(x, dtype=np.float64), mean, logvar).sum(axis=(1, 2))


class Adversary(Module):
    """Feed-forward map from z_neural to per-bit probabilities.

    With ``conditioned=True`` the logit of bit ``i`` also gets a linear term in
    bits ``0..i-1`` (strictly lower-triangular ``cond``), so a bit that copies
    an earlier one is predictable from the earlier one.
    """

    def __init__(self, z_dim: int, k: int, adv_dim: int, rng, conditioned: bool = False):
        self.k = k
        self.conditioned = conditioned
        self.hidden = Linear(z_dim, adv_dim, rng)
        self.out = Linear(adv_dim, k, rng)
        if conditioned:
            self.cond = Param(np.zeros((k, k)), "cond")

    def grow(self) -> None:
        """Add one output bit whose weights start at zero."""
        out = self.out
        out.weight.data = np.hstack([out.weight.data, np.zeros((out.weight.data.shape[0], 1))])
        out.bias.data = np.append(out.bias.data, 0.0)
        if self.conditioned:
            c = np.zeros((self.k + 1, self.k + 1))
            c[:self.k, :self.k] = self.cond.data
            self.cond.data = c
        self.k += 1

    def logits(self, tape, z_neural, z_symb=None):
        out = self.out(tape, G.tanh(self.hidden(tape, z_neural)))
        if self.conditioned and self.k > 1:
            if z_symb is None:
                raise ValueError("a conditioned adversary needs the symbolic bits")
            mask = np.triu(np.ones((self.k, self.k)), 1)   # row j feeds column i > j
            out = out + G.matmul(z_symb, _w(tape, self.cond) * mask)
        return out

    def __call__(self, tape, z_neural, z_symb=None):
        return G.sigmoid(self.logits(tape, z_neural, z_symb))


class _Standardize:
    """Fixed input shift/scale for stand-ins (not trained)."""

    def _set_input_stats(self, shift, scale):
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    def _norm(self, x):
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale


class SequenceStandin(Module, _Standardize):
    """GRU stand-in for a sequence-to-scalar nonterminal."""

    signature = "seq"

    def __init__(self, n_features: int, hidden: int, rng, shift=0.0, scale=1.0):
        self.rnn = GRUCell(n_features, hidden, rng)
        self.out = Linear(hidden, 1, rng)
        self._set_input_stats(shift, scale)

    def __call__(self, tape, x):
        """x: (B, T, D) -> (B,)"""
        h = self.rnn.run(tape, self._norm(x))[:, -1]
        return self.out(tape, h)[:, 0]


class FrameStandin(Module, _Standardize):
    """One-hidden-layer network for a timestep-to-scalar nonterminal."""

    signature = "frame"

    def __init__(self, n_features: int, hidden: int, rng, shift=0.0, scale=1.0):
        self.hidden = Linear(n_features, hidden, rng)
        self.out = Linear(hidden, 1, rng)
        self._set_input_stats(shift, scale)

    def __call__(self, tape, x):
        """x: (..., D) -> (...)"""
        return self.out(tape, G.tanh(self.hidden(tape, self._norm(x))))[..., 0]


def make_standin(signature: str, n_features: int, hidden: int, rng, shift=0.0, scale=1.0):
    if signature == "seq":
        return SequenceStandin(n_features, hidden, rng, shift, scale)
    if signature == "frame":
        return FrameStandin(n_features, hidden, rng, shift, scale)
    raise ValueError(f"unsupported stand-in signature {signature!r}")


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write ``name -> array`` to an ``.npz`` with a JSON header entry."""
    header = {"format": "neurosym-checkpoint", "version": CHECKPOINT_VERSION,
              "shapes": {k: list(np.shape(v)) for k, v in arrays.items()},
              "meta": meta or {}}
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict, dict]:
    with np.load(path) as npz:
        if "__header__" not in npz:
            raise ValueError(f"{path}: not a neurosym checkpoint (no header)")
        header = json.loads(bytes(npz["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {k: npz[k] for k in npz.files if k != "__header__"}
    for k, shape in header["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"{path}: array {k!r} has shape {arrays[k].shape}, header says {shape}")
    return arrays, header["meta"]
