"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to a :class:`Var`.  Nodes are
appended in creation order, which is a topological order of the graph, so the
backward pass simply walks the list in reverse.

The module-level functions (``tanh``, ``matmul``, ``concat`` ...) accept plain
arrays as well as ``Var`` objects.  When no argument is a ``Var`` they fall
through to numpy, so network code can be written once and run either on the
tape (training) or directly on arrays (filtering).
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import ContractError
from . import linalg


class Tape:
    """Records the computation graph of one forward pass."""

    def __init__(self):
        self._nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def __len__(self):
        return len(self._nodes)

    def param(self, name: str, value) -> "Var":
        """Register a learnable leaf under ``name``."""
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        v = Var(np.array(value, dtype=float), (), "param", self, requires_grad=True)
        v.name = name
        self.params[name] = v
        return v

    def params_from(self, values: Mapping[str, np.ndarray]) -> dict[str, "Var"]:
        return {name: self.param(name, val) for name, val in values.items()}

    def constant(self, value) -> np.ndarray:
        return np.asarray(value, dtype=float)

    def backward(self, loss: "Var") -> dict[str, np.ndarray]:
        return backward(self, loss)

    def _record(self, node: "Var"):
        node.index = len(self._nodes)
        self._nodes.append(node)


class Var:
    """A node on a tape: forward value plus the vector-Jacobian products to its parents."""

    # make numpy defer to our reflected operators (ndarray @ Var -> Var.__rmatmul__)
    __array_ufunc__ = None

    def __init__(self, value, parents, op, tape, requires_grad=True):
        self.value = value
        self.parents = parents
        self.op = op
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = None
        self.index = -1
        tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


ArrayOrVar = "np.ndarray | Var"


def value_of(x):
    return x.value if isinstance(x, Var) else x


def is_var(x):
    return isinstance(x, Var)


def detach(x):
    """Plain-array copy of the forward value; cuts the graph."""
    return np.array(value_of(x), dtype=float)


def _tape_of(args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _make(value, args, vjps: Iterable[Callable], op):
    """Create an output node; ``vjps[i]`` maps the output adjoint to args[i]'s adjoint."""
    tape = _tape_of(args)
    parents = tuple(
        (a, f) for a, f in zip(args, vjps) if isinstance(a, Var) and a.requires_grad
    )
    if not parents:
        # no differentiable input: keep the value off the graph
        return Var(value, (), op, tape, requires_grad=False)
    return Var(value, parents, op, tape)


def _any_var(*args):
    return any(isinstance(a, Var) for a in args)


# --------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    if not _any_var(a, b):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _make(out, (a, b), (lambda g: _unbroadcast(g, np.shape(av)),
                               lambda g: _unbroadcast(g, np.shape(bv))), "add")


def sub(a, b):
    if not _any_var(a, b):
        return np.subtract(a, b)
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _make(out, (a, b), (lambda g: _unbroadcast(g, np.shape(av)),
                               lambda g: _unbroadcast(-g, np.shape(bv))), "sub")


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _make(out, (a, b), (lambda g: _unbroadcast(g * bv, np.shape(av)),
                               lambda g: _unbroadcast(g * av, np.shape(bv))), "mul")


def div(a, b):
    if not _any_var(a, b):
        return np.divide(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _make(out, (a, b), (lambda g: _unbroadcast(g / bv, np.shape(av)),
                               lambda g: _unbroadcast(-g * av / bv**2, np.shape(bv))),
                 "div")


def neg(a):
    if not _any_var(a):
        return np.negative(a)
    return _make(-a.value, (a,), (lambda g: -g,), "neg")


def power(a, p: float):
    if not _any_var(a):
        return np.power(a, p)
    av = a.value
    return _make(av**p, (a,), (lambda g: g * p * av ** (p - 1),), "pow")


def square(a):
    if not _any_var(a):
        return np.square(a)
    av = a.value
    return _make(av * av, (a,), (lambda g: 2.0 * g * av,), "square")


# --------------------------------------------------------------------------
# elementwise nonlinearities

def tanh(a):
    if not _any_var(a):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _make(out, (a,), (lambda g: g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    if not _any_var(a):
        return _sigmoid(a)
    out = _sigmoid(a.value)
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def exp(a):
    if not _any_var(a):
        return np.exp(a)
    out = np.exp(a.value)
    return _make(out, (a,), (lambda g: g * out,), "exp")


def log(a):
    if not _any_var(a):
        return np.log(a)
    av = a.value
    return _make(np.log(av), (a,), (lambda g: g / av,), "log")


def abs_(a):
    if not _any_var(a):
        return np.abs(a)
    av = a.value
    return _make(np.abs(av), (a,), (lambda g: g * np.sign(av),), "abs")


def where(cond, a, b):
    """Select elementwise; ``cond`` is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    if not _any_var(a, b):
        return np.where(cond, a, b)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    return _make(out, (a, b), (lambda g: _unbroadcast(np.where(cond, g, 0.0), np.shape(av)),
                               lambda g: _unbroadcast(np.where(cond, 0.0, g), np.shape(bv))),
                 "where")


# --------------------------------------------------------------------------
# reductions and shape manipulation

def sum_(a, axis=None, keepdims=False):
    if not _any_var(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _make(np.asarray(out, dtype=float), (a,), (vjp,), "sum")


def mean(a, axis=None, keepdims=False):
    n = np.size(value_of(a)) if axis is None else np.prod(
        [np.shape(value_of(a))[i] for i in np.atleast_1d(axis)])
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def reshape(a, shape):
    if not _any_var(a):
        return np.reshape(a, shape)
    av = a.value
    return _make(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),), "reshape")


def swapaxes(a, i, j):
    if not _any_var(a):
        return np.swapaxes(a, i, j)
    return _make(np.swapaxes(a.value, i, j), (a,), (lambda g: np.swapaxes(g, i, j),),
                 "swapaxes")


def transpose(a):
    """Swap the last two axes."""
    return swapaxes(a, -1, -2)


def expand_dims(a, axis):
    if not _any_var(a):
        return np.expand_dims(a, axis)
    av = a.value
    return _make(np.expand_dims(av, axis), (a,), (lambda g: g.reshape(av.shape),),
                 "expand_dims")


def getitem(a, idx):
    if not _any_var(a):
        return np.asarray(a)[idx]
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _make(np.array(av[idx]), (a,), (vjp,), "getitem")


def concat(items, axis=-1):
    items = list(items)
    if not _any_var(*items):
        return np.concatenate([np.asarray(x, dtype=float) for x in items], axis=axis)
    vals = [np.asarray(value_of(x), dtype=float) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _make(out, tuple(items), tuple(piece(i) for i in range(len(items))), "concat")


def broadcast_to(a, shape):
    if not _any_var(a):
        return np.broadcast_to(a, shape)
    av = a.value
    return _make(np.broadcast_to(av, shape).copy(), (a,),
                 (lambda g: _unbroadcast(g, av.shape),), "broadcast")


# --------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    if not _any_var(a, b):
        return np.matmul(a, b)
    av = np.asarray(value_of(a), dtype=float)
    bv = np.asarray(value_of(b), dtype=float)
    out = av @ bv

    def expand(g):
        if av.ndim == 1:
            g = np.expand_dims(g, -2)
        if bv.ndim == 1:
            g = np.expand_dims(g, -1)
        return g

    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv

    def vjp_a(g):
        ga = expand(g) @ np.swapaxes(b2, -1, -2)
        if av.ndim == 1:
            ga = ga[..., 0, :]
        return _unbroadcast(ga, av.shape)

    def vjp_b(g):
        gb = np.swapaxes(a2, -1, -2) @ expand(g)
        if bv.ndim == 1:
            gb = gb[..., :, 0]
        return _unbroadcast(gb, bv.shape)

    return _make(out, (a, b), (vjp_a, vjp_b), "matmul")


def cholesky(a, jitter: float = 0.0):
    """Lower Cholesky factor of ``a + jitter*I`` (batched over leading axes).

    The escalation policy lives in :func:`linalg.cholesky`; whatever jitter was
    finally used is treated as a constant by the backward pass.
    """
    if not _any_var(a):
        return linalg.cholesky(a, jitter)
    L = linalg.cholesky(a.value, jitter)

    def vjp(g):
        # symmetric adjoint of A = L L^T given the adjoint of L
        P = np.swapaxes(L, -1, -2) @ g
        P = np.tril(P)
        P = P - 0.5 * _diag_embed(np.diagonal(P, axis1=-2, axis2=-1))
        Linv = np.linalg.inv(L)
        S = np.swapaxes(Linv, -1, -2) @ P @ Linv
        return 0.5 * (S + np.swapaxes(S, -1, -2))

    return _make(L, (a,), (vjp,), "cholesky")


def _diag_embed(d):
    n = d.shape[-1]
    out = np.zeros(d.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = d
    return out


# --------------------------------------------------------------------------
# backward pass

def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Adjoints of ``loss`` with respect to every parameter registered on ``tape``.

    Parameters the loss does not depend on get zero adjoints.
    """
    if not isinstance(loss, Var):
        raise ContractError("loss is not a node on the tape")
    if loss.tape is not tape:
        raise ContractError("loss belongs to a different tape")
    if np.size(loss.value) != 1:
        raise ContractError(f"loss must be scalar, got shape {np.shape(loss.value)}")

    adjoints: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value, dtype=float)}
    nodes = tape._nodes
    for i in range(loss.index, -1, -1):
        g = adjoints.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        if node.op == "param":
            adjoints[i] = g  # keep for the result
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            j = parent.index
            if j in adjoints:
                adjoints[j] = adjoints[j] + contrib
            else:
                adjoints[j] = np.array(contrib, dtype=float)

    grads = {}
    for name, p in tape.params.items():
        g = adjoints.get(p.index)
        grads[name] = (np.zeros_like(p.value) if g is None
                       else np.asarray(g, dtype=float).reshape(p.value.shape))
    return grads
