"""Reverse-mode gradients over numpy arrays.

A :class:`Tape` records every primitive applied to :class:`Value` objects in
execution order, so the record is already topologically sorted and
:func:`backward` only has to walk it in reverse.  Parameters live outside
tapes as :class:`Param` objects; ``tape.watch(param)`` turns one into a leaf
for the duration of a step.

All payloads are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Param:
    """A named, mutable parameter array owned by a network or program."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


@dataclass
class Tape:
    """Append-only record of primitive operations."""

    nodes: list = field(default_factory=list)
    _next_id: int = 0
    _watched: dict = field(default_factory=dict)

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def leaf(self, array) -> "Value":
        return Value(np.asarray(array, dtype=np.float64), self, self._new_id())

    def watch(self, param: Param) -> "Value":
        """Leaf bound to ``param``; repeated calls share one leaf."""
        entry = self._watched.get(id(param))
        if entry is None:
            entry = (Value(param.data, self, self._new_id()), param)
            self._watched[id(param)] = entry
        return entry[0]

    def watched(self, param: Param):
        entry = self._watched.get(id(param))
        return None if entry is None else entry[0]

    def record(self, data, parents, vjp) -> "Value":
        out = Value(data, self, self._new_id())
        self.nodes.append((out.id, tuple(parents), vjp))
        return out

    def __len__(self):
        return len(self.nodes)

    def param_grads(self, output: "Value", params) -> list:
        """Gradients of ``output`` for each :class:`Param`; zeros if unused."""
        leaves = [self.watched(p) for p in params]
        tracked = [v for v in leaves if v is not None]
        grads = iter(backward(self, output, tracked))
        return [np.zeros_like(p.data) if v is None else next(grads)
                for p, v in zip(params, leaves)]


class Value:
    """An array payload living on a tape."""

    __slots__ = ("data", "tape", "id")
    __array_priority__ = 100

    def __init__(self, data, tape: Tape, id_: int):
        self.data = data
        self.tape = tape
        self.id = id_

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Value(id={self.id}, shape={self.data.shape})"

    def item(self) -> float:
        return float(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Value) else -np.asarray(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Value):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _data(x):
    return x.data if isinstance(x, Value) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Value):
            return x.tape
    return None


def _lift(x):
    """Return a constant ndarray or the Value itself."""
    return x if isinstance(x, Value) else np.asarray(x, dtype=np.float64)


def _binary(a, b, data, da, db):
    tape = _tape_of(a, b)
    if tape is None:
        return data
    parents, fns = [], []
    for x, fn in ((a, da), (b, db)):
        if isinstance(x, Value):
            parents.append(x)
            fns.append((fn, x.data.shape))

    def vjp(g):
        return [_unbroadcast(fn(g), shape) for fn, shape in fns]

    return tape.record(data, parents, vjp)


def _unary(a, data, da):
    if not isinstance(a, Value):
        return data
    return a.tape.record(data, (a,), lambda g: [da(g)])


# primitives ---------------------------------------------------------------
def add(a, b):
    a, b = _lift(a), _lift(b)
    return _binary(a, b, _data(a) + _data(b), lambda g: g, lambda g: g)


def neg(a):
    return _unary(a, -_data(a), lambda g: -g)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = _data(a), _data(b)
    return _binary(a, b, ad * bd, lambda g: g * bd, lambda g: g * ad)


def reciprocal(a):
    ad = _data(a)
    out = 1.0 / ad
    return _unary(a, out, lambda g: -g * out * out)


def power(a, exponent: float):
    ad = _data(a)
    return _unary(a, ad ** exponent,
                  lambda g: g * exponent * ad ** (exponent - 1))


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = _data(a), _data(b)

    def da(g):
        if bd.ndim == 1:
            return np.multiply.outer(g, bd)
        return g @ np.swapaxes(bd, -1, -2)

    def db(g):
        if bd.ndim == 1:
            return np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim))))
        a2 = ad.reshape(-1, ad.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return a2.T @ g2

    tape = _tape_of(a, b)
    out = ad @ bd
    if tape is None:
        return out
    parents, fns = [], []
    if isinstance(a, Value):
        parents.append(a)
        fns.append(da)
    if isinstance(b, Value):
        if bd.ndim != 2 and bd.ndim != 1:
            raise ValueError("matmul supports a 1-D or 2-D right operand only")
        parents.append(b)
        fns.append(db)
    return tape.record(out, parents, lambda g: [fn(g) for fn in fns])


def sigmoid(a):
    out = _sigmoid_np(_data(a))
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def tanh(a):
    out = np.tanh(_data(a))
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def exp(a):
    out = np.exp(_data(a))
    return _unary(a, out, lambda g: g * out)


def log(a):
    ad = _data(a)
    return _unary(a, np.log(ad), lambda g: g / ad)


def softplus(a):
    """log(1 + exp(a)), computed without overflow."""
    ad = _data(a)
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    return _unary(a, out, lambda g: g * _sigmoid_np(ad))


def vabs(a):
    ad = _data(a)
    # subgradient 0 at the kink
    return _unary(a, np.abs(ad), lambda g: g * np.sign(ad))


def maximum(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = _data(a), _data(b)
    take_a = ad >= bd
    return _binary(a, b, np.where(take_a, ad, bd),
                   lambda g: np.where(take_a, g, 0.0),
                   lambda g: np.where(take_a, 0.0, g))


def clip(a, lo: float, hi: float):
    ad = _data(a)
    inside = (ad >= lo) & (ad <= hi)
    return _unary(a, np.clip(ad, lo, hi), lambda g: g * inside)


def vsum(a, axis=None):
    ad = _data(a)
    shape = ad.shape

    def da(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _unary(a, ad.sum(axis=axis), da)


def mean(a, axis=None):
    ad = _data(a)
    n = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])
    return vsum(a, axis) * (1.0 / n)


def reshape(a, shape):
    ad = _data(a)
    old = ad.shape
    return _unary(a, ad.reshape(shape), lambda g: g.reshape(old))


def getitem(a, index):
    ad = _data(a)

    def da(g):
        out = np.zeros_like(ad)
        if _needs_add_at(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return out

    return _unary(a, ad[index], da)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concatenate(values, axis: int = -1):
    datas = [_data(v) for v in values]
    out = np.concatenate(datas, axis=axis)
    tape = _tape_of(*values)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [d.shape[axis] for d in datas])
    parents = [(i, v) for i, v in enumerate(values) if isinstance(v, Value)]

    def vjp(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                for i, _ in parents]

    return tape.record(out, [v for _, v in parents], vjp)


def stack(values, axis: int = 0):
    expanded = []
    for v in values:
        shape = np.expand_dims(_data(v), axis).shape
        expanded.append(reshape(v, shape) if isinstance(v, Value) else _data(v).reshape(shape))
    return concatenate(expanded, axis=axis)


def gru_sequence(gx, h0, w_h, b_h):
    """Unrolled GRU recurrence as one primitive.

    ``gx`` holds the input projections for every step, shape (B, T, 3H) in
    (reset, update, candidate) order; ``h0`` is (B, H).  Returns all hidden
    states, shape (B, T, H).  Backward is backpropagation through time.
    """
    gx, h0, w_h, b_h = (_lift(v) for v in (gx, h0, w_h, b_h))
    gxd, h0d, whd, bhd = _data(gx), _data(h0), _data(w_h), _data(b_h)
    batch, steps, three_h = gxd.shape
    H = three_h // 3
    hs = np.empty((batch, steps, H))
    cache = []
    h = np.broadcast_to(h0d, (batch, H))
    for t in range(steps):
        gh = h @ whd + bhd
        r = _sigmoid_np(gxd[:, t, :H] + gh[:, :H])
        z = _sigmoid_np(gxd[:, t, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gxd[:, t, 2 * H:] + r * gh[:, 2 * H:])
        cache.append((h, gh, r, z, n))
        h = n + z * (h - n)
        hs[:, t] = h
    tape = _tape_of(gx, h0, w_h, b_h)
    if tape is None:
        return hs

    def vjp(g):
        dgx = np.empty_like(gxd)
        dwh = np.zeros_like(whd)
        dbh = np.zeros_like(bhd)
        dh = np.zeros((batch, H))
        dgh = np.empty((batch, three_h))
        for t in range(steps - 1, -1, -1):
            h_prev, gh, r, z, n = cache[t]
            dh = dh + g[:, t]
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dr = dn * gh[:, 2 * H:] * r * (1.0 - r)
            dgx[:, t, :H] = dr
            dgx[:, t, H:2 * H] = dz
            dgx[:, t, 2 * H:] = dn
            dgh[:, :H] = dr
            dgh[:, H:2 * H] = dz
            dgh[:, 2 * H:] = dn * r
            dwh += h_prev.T @ dgh
            dbh += dgh.sum(axis=0)
            dh = dh * z + dgh @ whd.T
        full = {id(gx): dgx, id(h0): _unbroadcast(dh, h0d.shape), id(w_h): dwh, id(b_h): dbh}
        return [full[id(p)] for p in parents]

    parents = [v for v in (gx, h0, w_h, b_h) if isinstance(v, Value)]
    return tape.record(hs, parents, vjp)


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def data_of(x) -> np.ndarray:
    """Payload of a Value or array-like, as float64 ndarray."""
    return _data(x)


# differentiation ------------------------------------------------------------
def backward(tape: Tape, output: Value, wrt) -> list:
    """Return d(output)/d(w) for each ``w`` in ``wrt``.

    ``output`` must be a scalar.  Values not on the path get zeros.
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.data.shape}")
    if output.tape is not tape:
        raise ValueError("output does not belong to this tape")
    grads = {output.id: np.ones_like(output.data)}
    for out_id, parents, vjp in reversed(tape.nodes):
        if out_id > output.id:
            continue
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for parent, pg in zip(parents, vjp(g)):
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg
    return [np.array(grads.get(w.id, np.zeros_like(w.data)), dtype=np.float64)
            .reshape(w.data.shape) for w in wrt]


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: tuple = ()

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(f, params, tolerance: float = 1e-4, eps: float = 1e-5,
               skip=None, floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f(tape, leaves)`` builds a scalar from leaf Values for the arrays in
    ``params``.  ``skip(i, index, value)`` can exclude coordinates sitting on
    a kink.  Relative error uses ``max(|a|, |b|, floor)`` as denominator.
    """
    arrays = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = f(tape, leaves)
    analytic = backward(tape, out, leaves)

    def evaluate(arrs):
        t = Tape()
        return float(data_of(f(t, [t.leaf(a) for a in arrs])))

    worst, max_err, n = (), 0.0, 0
    for i, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            if skip is not None and skip(i, idx, a[idx]):
                continue
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            exact = analytic[i][idx]
            err = abs(numeric - exact) / max(abs(numeric), abs(exact), floor)
            n += 1
            if err > max_err:
                max_err, worst = err, (i, idx, exact, numeric)
    return GradCheckReport(max_err, tolerance, n, worst)


def check_param_grads(build, params, tolerance: float = 1e-4, eps: float = 1e-5,
                      floor: float = 1e-6, max_coords: int | None = None, rng=None) -> GradCheckReport:
    """Finite-difference check of ``build(tape) -> scalar`` w.r.t. :class:`Param` objects.

    Parameters are perturbed in place and restored.  ``max_coords`` limits
    the check to a random sample of coordinates per parameter.
    """
    tape = Tape()
    analytic = tape.param_grads(build(tape), params)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst, max_err, n = (), 0.0, 0
    for i, p in enumerate(params):
        coords = list(np.ndindex(p.data.shape))
        if max_coords is not None and len(coords) > max_coords:
            coords = [coords[j] for j in rng.choice(len(coords), max_coords, replace=False)]
        for idx in coords:
            orig = p.data[idx]
            p.data[idx] = orig + eps
            up = float(data_of(build(None)))
            p.data[idx] = orig - eps
            down = float(data_of(build(None)))
            p.data[idx] = orig
            numeric = (up - down) / (2 * eps)
            exact = analytic[i][idx]
            err = abs(numeric - exact) / max(abs(numeric), abs(exact), floor)
            n += 1
            if err > max_err:
                max_err, worst = err, (p.name or i, idx, exact, numeric)
    return GradCheckReport(max_err, tolerance, n, worst)


def clip_grad_norm(grads: list, max_norm: float) -> float:
    """Scale ``grads`` in place to global norm ``max_norm``; return the raw norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class Adam:
    """Adam over a fixed list of :class:`Param` objects."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
