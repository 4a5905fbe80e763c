"""A small reverse-mode automatic differentiation engine on top of numpy.

Tensors record the operation that produced them; :func:`backward` walks the
graph in reverse topological order and returns gradients for the leaf tensors
that were created with ``requires_grad=True``. Graph recording can be switched
off per thread with :func:`no_grad`, in which case the same operations run as
plain numpy.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, data, parents: tuple = (), grad_fn: Optional[Callable] = None,
                 requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is not None:
            data = np.asarray(data, dtype=dtype)
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def parameter(data, name: Optional[str] = None, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else np.asarray(data).dtype)
    return Tensor(arr, requires_grad=True, name=name)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data))


def lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _make(value: np.ndarray, parents: tuple, grad_fn: Callable, op: str, check: bool = True) -> Tensor:
    if check:
        _check_finite(value, op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(value, parents, grad_fn, True, op)
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.data * k, (a,), lambda g: (g * k,), "scale")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg = x < 0
    em1 = np.expm1(np.minimum(x, 0))
    y = np.where(neg, alpha * em1, x)
    return _make(y, (a,), lambda g: (g * np.where(neg, alpha * (em1 + 1.0), 1.0),), "elu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by the finiteness check
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _make(y, (a,), lambda g: (g / x,), "log")


# ---------------------------------------------------------------- reductions / shape


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), grad_fn, "sum")


def max_over_axis(a: Tensor, axis: int) -> Tensor:
    x = a.data
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    out = np.take_along_axis(x, idx, axis=axis).squeeze(axis)

    def grad_fn(g):
        grad = np.zeros_like(x)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _make(out, (a,), grad_fn, "max")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from e
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape", check=False)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose", check=False)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def grad_fn(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _make(np.array(out, copy=True) if np.ndim(out) else np.asarray(out), (a,), grad_fn, "getitem",
                 check=False)


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def grad_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _make(out, (table,), grad_fn, "gather", check=False)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), grad_fn, "concat", check=False)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [lift(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors])
    except ValueError as e:
        raise ShapeError(f"stack: {[t.shape for t in tensors]}") from e
    return _make(out, tuple(tensors), lambda g: tuple(g), "stack", check=False)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), grad_fn, "matmul")


def einsum(spec: str, *operands) -> Tensor:
    """Einstein summation over 1+ operands.

    Supported when no operand repeats an index and every operand index also
    appears in the output or another operand (true for all products used here).
    """
    operands = tuple(lift(o) for o in operands)
    lhs, out_idx = spec.replace(" ", "").split("->")
    in_idx = lhs.split(",")
    if len(in_idx) != len(operands):
        raise ShapeError(f"einsum {spec!r}: expected {len(in_idx)} operands")
    for k, sub_ in enumerate(in_idx):
        others = out_idx + "".join(s for j, s in enumerate(in_idx) if j != k)
        if len(set(sub_)) != len(sub_) or any(c not in others for c in sub_):
            raise ShapeError(f"einsum {spec!r}: unsupported index pattern for operand {k}")
    try:
        out = np.einsum(spec, *(o.data for o in operands), optimize=len(operands) > 2)
    except ValueError as e:
        raise ShapeError(f"einsum {spec!r}: {[o.shape for o in operands]}") from e

    def grad_fn(g):
        grads = []
        for k, o in enumerate(operands):
            if not o.requires_grad:
                grads.append(None)
                continue
            rest = [s for j, s in enumerate(in_idx) if j != k]
            spec_k = ",".join([out_idx] + rest) + "->" + in_idx[k]
            args = [g] + [op.data for j, op in enumerate(operands) if j != k]
            grads.append(np.einsum(spec_k, *args, optimize=len(args) > 2))
        return tuple(grads)

    return _make(np.asarray(out), operands, grad_fn, "einsum")


# ---------------------------------------------------------------- softmax family


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Log-softmax; entries where ``mask`` is True get exactly -inf (probability 0).

    Every slice along ``axis`` must keep at least one unmasked entry.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if mask.all(axis=axis).any():
            raise ValueError("log_softmax: every entry of a slice is masked")
        x = np.where(mask, -np.inf, x)
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    if mask is None:
        _check_finite(y, "log_softmax")
    else:
        _check_finite(y[~mask], "log_softmax")
    p = np.exp(y)

    def grad_fn(g):
        gg = g if mask is None else np.where(mask, 0.0, g)
        return (gg - p * gg.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), grad_fn, "log_softmax", check=False)


# ---------------------------------------------------------------- dropout


def dropout_mask_apply(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed (already rescaled) mask."""
    mask = np.asarray(mask, dtype=a.dtype)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "dropout", check=False)


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors by 1/(1-rate)."""
    if not training or rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return dropout_mask_apply(a, keep)


# ---------------------------------------------------------------- fused LSTM


def lstm_layer(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over the rows of ``x`` (T x d_in) from zero state.

    Gate layout along the 4H axis is input, forget, candidate, output. Returns
    the T x H hidden states in input order.
    """
    X = x.data
    T = X.shape[0]
    H = w_h.shape[0]
    if w_x.shape != (X.shape[1], 4 * H) or w_h.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_layer: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
    Wh = w_h.data
    Z = X @ w_x.data + b.data
    dt = Z.dtype
    steps = range(T - 1, -1, -1) if reverse else range(T)
    hs = np.zeros((T, H), dtype=dt)
    cs = np.zeros((T, H), dtype=dt)
    gates = np.zeros((T, 4 * H), dtype=dt)
    h_prev = np.zeros((T, H), dtype=dt)
    c_prev = np.zeros((T, H), dtype=dt)
    h = np.zeros(H, dtype=dt)
    c = np.zeros(H, dtype=dt)
    for t in steps:
        h_prev[t], c_prev[t] = h, c
        z = Z[t] + h @ Wh
        act = np.empty_like(z)
        act[:2 * H] = _sigmoid(z[:2 * H])
        act[2 * H:3 * H] = np.tanh(z[2 * H:3 * H])
        act[3 * H:] = _sigmoid(z[3 * H:])
        c = act[H:2 * H] * c + act[:H] * act[2 * H:3 * H]
        h = act[3 * H:] * np.tanh(c)
        gates[t], cs[t], hs[t] = act, c, h
    _check_finite(hs, "lstm_layer")

    def grad_fn(g):
        dZ = np.zeros_like(Z)
        dh_next = np.zeros(H, dtype=dt)
        dc_next = np.zeros(H, dtype=dt)
        for t in reversed(steps):
            i, f, cand, o = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
            tc = np.tanh(cs[t])
            dh = g[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dZ[t]
            dz[:H] = dc * cand * i * (1.0 - i)
            dz[H:2 * H] = dc * c_prev[t] * f * (1.0 - f)
            dz[2 * H:3 * H] = dc * i * (1.0 - cand * cand)
            dz[3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = Wh @ dz
        return dZ @ w_x.data.T, X.T @ dZ, h_prev.T @ dZ, dZ.sum(axis=0)

    return _make(hs, (x, w_x, w_h, b), grad_fn, "lstm_layer", check=False)


def lstm_cell(zx: Tensor, h: Tensor, c: Tensor, w_h: Tensor) -> Tensor:
    """One LSTM step given the already-projected input ``zx`` (4H, bias included).

    Returns the concatenation [h_new, c_new] of length 2H.
    """
    H = w_h.shape[0]
    if zx.shape != (4 * H,) or h.shape != (H,) or c.shape != (H,):
        raise ShapeError(f"lstm_cell: zx {zx.shape}, h {h.shape}, c {c.shape}, w_h {w_h.shape}")
    z = zx.data + h.data @ w_h.data
    act = np.empty_like(z)
    act[:2 * H] = _sigmoid(z[:2 * H])
    act[2 * H:3 * H] = np.tanh(z[2 * H:3 * H])
    act[3 * H:] = _sigmoid(z[3 * H:])
    i, f, cand, o = act[:H], act[H:2 * H], act[2 * H:3 * H], act[3 * H:]
    c_new = f * c.data + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc
    out = np.concatenate([h_new, c_new])
    _check_finite(out, "lstm_cell")

    def grad_fn(g):
        dh, dc_in = g[:H], g[H:]
        dc = dh * o * (1.0 - tc * tc) + dc_in
        dz = np.concatenate([
            dc * cand * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - cand * cand),
            dh * tc * o * (1.0 - o),
        ])
        return dz, w_h.data @ dz, dc * f, np.outer(h.data, dz)

    return _make(out, (zx, h, c, w_h), grad_fn, "lstm_cell", check=False)


# ---------------------------------------------------------------- backward


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    Returns a dict keyed by leaf tensor. Every tensor in ``params`` gets an
    entry; ones the loss does not depend on get zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad_fn is None:
                leaves[node] = leaves[node] + g if node in leaves else g
                continue
            for p, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is not None:
        for p in params:
            if p not in leaves:
                leaves[p] = np.zeros_like(p.data)
    return leaves


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: Optional[int] = 200, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be deterministic and continuous around the current parameter
    values (no argmax-style switching); run it in float64.
    Error per coordinate is |a - n| / max(1, |a|, |n|).
    """
    rng = rng or np.random.default_rng(0)
    analytic = backward(f(), params)
    coords = [(k, j) for k, p in enumerate(params) for j in range(p.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    with no_grad():
        for k, j in coords:
            flat = params[k].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            up = float(f().data)
            flat[j] = orig - eps
            down = float(f().data)
            flat[j] = orig
            num = (up - down) / (2 * eps)
            ana = float(analytic[params[k]].reshape(-1)[j])
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
    return worst
