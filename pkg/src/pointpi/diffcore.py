"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive evaluated on tensors that depend on a
watched leaf. Outside a tape, primitives evaluate eagerly with no bookkeeping,
which is the inference path.

    >>> with Tape() as tape:
    ...     x = tape.watch(np.array([1.0, 2.0]))
    ...     loss = (x * x).sum()
    >>> tape.gradient(loss, [x])[0]
    array([2., 4.])

Non-smooth primitives (relu, maximum, minimum, abs, clamp, sort) use fixed
subgradients: ties route gradient to the second argument of ``maximum`` and
``minimum``, ``relu`` and ``abs`` have slope 0 at 0, and ``sort`` breaks ties by
original index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParameterSet",
    "NonFiniteError",
    "UnsupportedPrimitive",
    "PRIMITIVES",
    "apply",
    "as_tensor",
    "eval_with_gradient",
    "finite_difference_check",
    "GradCheckResult",
    "tanh",
    "sigmoid",
    "softplus",
    "relu",
    "log",
    "exp",
    "maximum",
    "minimum",
    "absolute",
    "clamp",
    "sort",
    "concat",
]


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or infinity during the forward pass."""


class UnsupportedPrimitive(ValueError):
    """Raised when an expression asks for a primitive the tape cannot differentiate."""


_ACTIVE_TAPES: list["Tape"] = []


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _digest(*arrays):
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.digest()


# Each primitive maps input arrays to (output, vjp, kink_signature_fn or None).
PRIMITIVES: dict[str, Callable] = {}


def _primitive(name):
    def register(fn):
        PRIMITIVES[name] = fn
        return fn

    return register


@_primitive("add")
def _add(a, b):
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), None


@_primitive("sub")
def _sub(a, b):
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), None


@_primitive("neg")
def _neg(a):
    return -a, lambda g: (-g,), None


@_primitive("mul")
def _mul(a, b, needs=(True, True)):
    def vjp(g):
        ga = _unbroadcast(g * b, a.shape) if needs[0] else None
        gb = _unbroadcast(g * a, b.shape) if needs[1] else None
        return ga, gb

    return a * b, vjp, None


@_primitive("div")
def _div(a, b):
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)), None


@_primitive("matmul")
def _matmul(a, b, needs=(True, True)):
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape) if needs[0] else None
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape) if needs[1] else None
        return ga, gb

    return a @ b, vjp, None


@_primitive("pow")
def _pow(a, exponent):
    out = a**exponent
    return out, lambda g: (g * exponent * a ** (exponent - 1),), None


@_primitive("tanh")
def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),), None


def _expit(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@_primitive("sigmoid")
def _sigmoid(a):
    out = _expit(a)
    return out, lambda g: (g * out * (1.0 - out),), None


@_primitive("softplus")
def _softplus(a):
    return np.logaddexp(0.0, a), lambda g: (g * _expit(a),), None


@_primitive("relu")
def _relu(a):
    mask = a > 0
    return np.where(mask, a, 0.0), lambda g: (g * mask,), lambda: _digest(mask)


@_primitive("log")
def _log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a)
    return out, lambda g: (g / a,), None


@_primitive("exp")
def _exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a)
    return out, lambda g: (g * out,), None


@_primitive("maximum")
def _maximum(a, b):
    pick_a = a > b
    out = np.where(pick_a, a, b)

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return out, vjp, lambda: _digest(pick_a)


@_primitive("minimum")
def _minimum(a, b):
    pick_a = a < b
    out = np.where(pick_a, a, b)

    def vjp(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return out, vjp, lambda: _digest(pick_a)


@_primitive("abs")
def _abs(a):
    sign = np.sign(a)
    return np.abs(a), lambda g: (g * sign,), lambda: _digest(sign)


@_primitive("clamp")
def _clamp(a, lo=None, hi=None):
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (a >= lo_) & (a <= hi_)
    return np.clip(a, lo_, hi_), lambda g: (g * inside,), lambda: _digest(inside)


@_primitive("sum")
def _sum(a, axis=None, keepdims=False):
    out = a.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return out, vjp, None


@_primitive("mean")
def _mean(a, axis=None, keepdims=False):
    out = a.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1) if a.size else 1.0

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape),)

    return out, vjp, None


@_primitive("sort")
def _sort(a, axis=-1, descending=True):
    # stable argsort on the negated values keeps equal entries in index order
    order = np.argsort(-a if descending else a, axis=axis, kind="stable")
    out = np.take_along_axis(a, order, axis=axis)

    def vjp(g):
        grad = np.zeros_like(a)
        np.put_along_axis(grad, order, g, axis=axis)
        return (grad,)

    def signature():
        ties = np.any(np.diff(out, axis=axis) == 0)
        return _digest(order, np.array([ties]))

    return out, vjp, signature


@_primitive("reshape")
def _reshape(a, shape):
    return a.reshape(shape), lambda g: (g.reshape(a.shape),), None


@_primitive("getitem")
def _getitem(a, index):
    return a[index], lambda g: (_Scatter(index, g, a.shape),), None


@_primitive("swapaxes")
def _swapaxes(a, axis1, axis2):
    return np.swapaxes(a, axis1, axis2), lambda g: (np.swapaxes(g, axis1, axis2),), None


class _Scatter:
    """Gradient that is zero except at ``index``; added into a buffer without densifying."""

    __slots__ = ("index", "values", "shape")

    def __init__(self, index, values, shape):
        self.index, self.values, self.shape = index, values, shape

    def add_to(self, buf):
        parts = self.index if isinstance(self.index, tuple) else (self.index,)
        if any(isinstance(p, (list, np.ndarray)) for p in parts):
            np.add.at(buf, self.index, self.values)
        else:
            buf[self.index] += self.values
        return buf


def _concat(*arrays, axis=-1):
    sizes = [x.shape[axis] for x in arrays]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return np.concatenate(arrays, axis=axis), vjp, None


PRIMITIVES["concat"] = _concat


class Tensor:
    """A float64 array that remembers how it was produced while a tape is recording."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "parents", "vjp", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.vjp = None
        self.op = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def item(self):
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    def __rmul__(self, other):
        return apply("mul", other, self)

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __pow__(self, exponent):
        return apply("pow", self, exponent=float(exponent))

    def __abs__(self):
        return apply("abs", self)

    def __getitem__(self, index):
        return apply("getitem", self, index=index)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def swapaxes(self, axis1, axis2):
        return apply("swapaxes", self, axis1=axis1, axis2=axis2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_OPERAND_AWARE = {"matmul", "mul"}
# other primitives only propagate non-finite values that one of these already raised on
_CAN_CREATE_NONFINITE = {"log", "exp", "div", "pow", "matmul"}


def apply(name: str, *inputs, **params) -> Tensor:
    """Evaluate primitive ``name`` and record it on the active tape if needed."""
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise UnsupportedPrimitive(f"no differentiable primitive named {name!r}") from None
    tensors = [as_tensor(x) for x in inputs]
    if name in _OPERAND_AWARE:
        params["needs"] = tuple(t.requires_grad for t in tensors)
    out, vjp, kink = fn(*[t.data for t in tensors], **params)
    if name in _CAN_CREATE_NONFINITE and not np.isfinite(np.sum(out)) and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"primitive {name!r} produced a non-finite value")
    result = Tensor(out)
    tape = _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None
    if tape is not None and any(t.requires_grad for t in tensors):
        result.requires_grad = True
        result.parents = tuple(tensors)
        result.vjp = vjp
        result.op = name
        tape.nodes.append(result)
        if tape.track_kinks and kink is not None:
            tape.kinks.append((name, kink()))
    return result


def tanh(x):
    return apply("tanh", x)


def sigmoid(x):
    return apply("sigmoid", x)


def softplus(x):
    return apply("softplus", x)


def relu(x):
    return apply("relu", x)


def log(x):
    return apply("log", x)


def exp(x):
    return apply("exp", x)


def maximum(a, b):
    return apply("maximum", a, b)


def minimum(a, b):
    return apply("minimum", a, b)


def absolute(x):
    return apply("abs", x)


def clamp(x, lo=None, hi=None):
    return apply("clamp", x, lo=lo, hi=hi)


def sort(x, axis=-1, descending=True):
    return apply("sort", x, axis=axis, descending=descending)


def concat(tensors: Sequence, axis=-1):
    return apply("concat", *tensors, axis=axis)


class Tape:
    """Ordered record of primitives evaluated while the tape is active.

    Nodes are appended in evaluation order, so the list is already topologically
    sorted. The same tape may be differentiated from several outputs; gradients
    are accumulated in a per-call table and never stored on the nodes.
    """

    def __init__(self, track_kinks: bool = False):
        self.nodes: list[Tensor] = []
        self.kinks: list[tuple[str, bytes]] = []
        self.track_kinks = track_kinks

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def watch(self, value, name=None) -> Tensor:
        return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def kink_signature(self) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        for name, sig in self.kinks:
            h.update(name.encode())
            h.update(sig)
        return h.digest()

    def gradient(self, output: Tensor, wrt: Iterable[Tensor], seed=None) -> list[np.ndarray]:
        wrt = list(wrt)
        if seed is None:
            if output.size != 1:
                raise ValueError("gradient of a non-scalar output needs an explicit seed")
            seed = np.ones_like(output.data)
        grads = {id(output): np.asarray(seed, dtype=np.float64)}
        # arrays allocated here may be updated in place; others can alias vjp outputs
        owned = set()
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(g, _Scatter):
                g = g.add_to(np.zeros(g.shape))
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                current = grads.get(key)
                if current is None:
                    grads[key] = pg
                    continue
                if key not in owned:
                    current = current.add_to(np.zeros(current.shape)) if isinstance(current, _Scatter) else np.array(current)
                    owned.add(key)
                grads[key] = pg.add_to(current) if isinstance(pg, _Scatter) else np.add(current, pg, out=current)
        for key, g in grads.items():
            if isinstance(g, _Scatter):
                grads[key] = g.add_to(np.zeros(g.shape))
        return [np.array(grads.get(id(t), np.zeros_like(t.data)), dtype=np.float64) for t in wrt]


class ParameterSet:
    """Named trainable arrays plus non-trainable buffers (batch-norm statistics).

    Flattening concatenates the trainable arrays in insertion order.
    """

    def __init__(self, tensors: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None):
        self.tensors = {k: np.array(v, dtype=np.float64) for k, v in tensors.items()}
        self.buffers = {k: np.array(v, dtype=np.float64) for k, v in (buffers or {}).items()}

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def names(self):
        return list(self.tensors)

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def flatten(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def unflatten(self, flat) -> "ParameterSet":
        """New set with the same layout and buffers, holding the values in ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {flat.shape}")
        out, i = {}, 0
        for name, v in self.tensors.items():
            out[name] = flat[i : i + v.size].reshape(v.shape).copy()
            i += v.size
        return ParameterSet(out, self.buffers)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.tensors, self.buffers)

    def equals(self, other: "ParameterSet") -> bool:
        if self.names != other.names or list(self.buffers) != list(other.buffers):
            return False
        pairs = [(self.tensors[k], other.tensors[k]) for k in self.tensors]
        pairs += [(self.buffers[k], other.buffers[k]) for k in self.buffers]
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)


LossFn = Callable[[dict, object], Tensor]


def _evaluate(loss: LossFn, params: ParameterSet, batch, track_kinks=False):
    with Tape(track_kinks=track_kinks) as tape:
        leaves = {name: tape.watch(value, name) for name, value in params.tensors.items()}
        out = loss(leaves, batch)
    return tape, leaves, out


def eval_with_gradient(loss: LossFn, params: ParameterSet, batch=None) -> tuple[float, np.ndarray]:
    """Value of ``loss(leaves, batch)`` and its gradient flattened like ``params``.

    ``loss`` receives a dict of watched leaf tensors keyed by parameter name.
    """
    tape, leaves, out = _evaluate(loss, params, batch)
    if out.size != 1:
        raise ValueError(f"loss must be scalar, got shape {out.shape}")
    grads = tape.gradient(out, leaves.values())
    flat = np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0)
    return float(out), flat


@dataclass
class GradCheckResult:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    subgradient_points: list[int] = field(default_factory=list)

    def __float__(self):
        return self.max_rel_error


def finite_difference_check(
    loss: LossFn, params: ParameterSet, batch=None, step: float = 1e-6, coords=None
) -> GradCheckResult:
    """Compare the tape gradient with central differences, coordinate by coordinate.

    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    Coordinates whose perturbation flips a non-smooth primitive (sort order,
    max/min/clamp/relu/abs branch) are listed in ``subgradient_points`` and left
    out of the maximum.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = eval_with_gradient(loss, params, batch)
    base_tape, _, _ = _evaluate(loss, params, batch, track_kinks=True)
    base_sig = base_tape.kink_signature()
    theta = params.flatten()
    idx = range(theta.size) if coords is None else coords
    numeric = np.full(theta.size, np.nan)
    errors, kinked = [], []
    for i in idx:
        vals, sigs = [], []
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * step
            tape, _, out = _evaluate(loss, params.unflatten(shifted), batch, track_kinks=True)
            vals.append(float(out))
            sigs.append(tape.kink_signature())
        numeric[i] = (vals[0] - vals[1]) / (2.0 * step)
        if sigs[0] != base_sig or sigs[1] != base_sig:
            kinked.append(int(i))
            continue
        errors.append(abs(analytic[i] - numeric[i]) / max(1.0, abs(analytic[i])))
    return GradCheckResult(max(errors, default=0.0), analytic, numeric, kinked)
