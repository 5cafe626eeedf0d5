"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op appends one entry to a module-level tape.  ``backward``
walks the tape in reverse, accumulates gradients into ``Tensor.grad`` and then
clears the tape, so each training step starts from an empty recording.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class NumericError(ArithmeticError):
    """Raised when a NaN/Inf shows up where a finite value is required."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            label = self.name or "tensor"
            raise NumericError(f"non-finite value in {label} (shape {self.shape})")

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for tests and small expressions
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class _Tape:
    def __init__(self) -> None:
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Backward]] = []
        self.enabled = True

    def clear(self) -> None:
        self.entries.clear()


_tape = _Tape()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; ops inside return plain constant tensors."""
    prev = _tape.enabled
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def is_recording() -> bool:
    return _tape.enabled


def clear_tape() -> None:
    _tape.clear()


def tape_length() -> int:
    return len(_tape.entries)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Backward) -> Tensor:
    out = Tensor(data)
    if _tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _tape.entries.append((out, parents, backward))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; gradients are summed into ``.grad``."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.check_finite()
    if not loss.requires_grad:
        _tape.clear()
        return
    _accumulate(loss, np.ones_like(loss.data))
    for out, parents, fn in reversed(_tape.entries):
        if out.grad is None:
            continue
        grads = fn(out.grad)
        for p, g in zip(parents, grads):
            if g is not None and p.requires_grad:
                _accumulate(p, g)
    # intermediate grads are not needed after the sweep
    for out, _, _ in _tape.entries:
        out.grad = None
    _tape.clear()


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may match a trailing block of ``a`` (bias-add)."""
    if a.shape != b.shape and (
        len(b.shape) > len(a.shape) or a.shape[len(a.shape) - len(b.shape):] != b.shape
    ):
        raise DimensionError(f"add: cannot combine {a.shape} and {b.shape}")
    sb = b.shape

    def bw(g):
        return g, _sum_to(g, sb)

    return _result(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ {a.shape} vs {b.shape}")

    def bw(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_constant(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable array (same shape or trailing block)."""
    return _result(a.data + c, (a,), lambda g: (g,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tensor_sum(a: Tensor) -> Tensor:
    shp = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shp, float(g)),))


def mean(a: Tensor) -> Tensor:
    shp, n = a.shape, a.data.size
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shp, float(g) / n),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(data, tuple(ts), bw)


def tile_cols(w: Tensor, n: int) -> Tensor:
    """[r, c] -> [r, c*n] by repeating the column block ``n`` times."""
    if w.data.ndim != 2:
        raise DimensionError("tile_cols expects a matrix")
    c = w.shape[1]

    def bw(g):
        return (g.reshape(g.shape[0], n, c).sum(axis=1),)

    return _result(np.tile(w.data, (1, n)), (w,), bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: id out of range [0, {table.shape[0]})")
    nrows = table.shape[0]

    def bw(g):
        gt = np.zeros((nrows, g.shape[-1]))
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    return _result(table.data[ids], (table,), bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[..., m, k] @ [k, n], or batched with identical leading dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree {a.shape} x {b.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions disagree {a.shape} x {b.shape}")
    out = ad @ bd

    if bd.ndim == 2:
        def bw(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def bw(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) as a single tape entry."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0]:
        raise DimensionError(f"linear: input width {xd.shape[-1]} != weight rows {wd.shape[0]}")
    # flatten leading dims so each product is a single 2-D BLAS call
    x2 = np.ascontiguousarray(xd).reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw)


# ---------------------------------------------------------------------------
# normalisation / probability
# ---------------------------------------------------------------------------


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = x - np.max(x, axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= ax < x.data.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    y = softmax_array(x.data, ax)

    def bw(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _result(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        lead = g.reshape(-1, d)
        ggain = (lead * xhat.reshape(-1, d)).sum(axis=0)
        gbias = lead.sum(axis=0)
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _result(out, (x, gain, bias), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-softmax over rows whose target is not ``ignore_id``."""
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy expects [n, V] logits")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise DimensionError(f"cross_entropy: {n} rows but {targets.shape[0]} targets")
    valid = np.ones(n, dtype=bool) if ignore_id is None else targets != ignore_id
    count = int(valid.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is ignored, mean undefined")
    t = np.where(valid, targets, 0)
    if np.any((t < 0) | (t >= v)):
        raise DimensionError(f"cross_entropy: target outside [0, {v})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    rows = np.arange(n)
    nll = lse - z[rows, t]
    loss = float(nll[valid].sum() / count)

    def bw(g):
        p = softmax_array(z, 1)
        p[rows, t] -= 1.0
        p *= (valid / count)[:, None]
        return (p * float(g),)

    return _result(np.array(loss), (logits,), bw)


# ---------------------------------------------------------------------------
# attention and phrase pooling
# ---------------------------------------------------------------------------


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    b, t, w = x.shape
    return x.reshape(b, t, h, w // h).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, w = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * w)


def attention(
    q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None, num_heads: int
) -> tuple[Tensor, np.ndarray]:
    """Multi-head scaled dot-product attention.

    q: [B, Tq, h*dk], k: [B, Tk, h*dk], v: [B, Tk, h*dv]; ``mask`` is boolean,
    broadcastable to [B, Tq, Tk], True where attending is allowed.
    Returns the merged output [B, Tq, h*dv] and the probabilities [B, h, Tq, Tk].
    """
    if q.data.ndim != 3 or k.data.ndim != 3 or v.data.ndim != 3:
        raise DimensionError("attention expects rank-3 q/k/v")
    if k.shape[1] != v.shape[1]:
        raise DimensionError(f"attention: {k.shape[1]} keys but {v.shape[1]} values")
    if q.shape[2] != k.shape[2] or q.shape[2] % num_heads or v.shape[2] % num_heads:
        raise DimensionError(f"attention: query/key widths {q.shape[2]}/{k.shape[2]} incompatible")
    dk = q.shape[2] // num_heads
    sc = 1.0 / math.sqrt(dk)
    Q, K, V = (_split_heads(t.data, num_heads) for t in (q, k, v))
    s = Q @ K.transpose(0, 1, 3, 2)
    s *= sc
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not np.all(m.any(axis=-1)):
            raise ValueError("attention: a query has every key masked")
        # additive bias on the (smaller) unbroadcast mask is far cheaper than np.where
        s += np.where(m, 0.0, -np.inf)[:, None, :, :]
    p = softmax_array(s, -1)
    out = _merge_heads(p @ V)

    def bw(g):
        G = _split_heads(g, num_heads)
        dv = p.transpose(0, 1, 3, 2) @ G
        ds = G @ V.transpose(0, 1, 3, 2)
        ds -= (ds * p).sum(axis=-1, keepdims=True)
        ds *= p
        ds *= sc
        dq = ds @ K
        dk_ = ds.transpose(0, 1, 3, 2) @ Q
        return _merge_heads(dq), _merge_heads(dk_), _merge_heads(dv)

    return _result(out, (q, k, v), bw), p


def pool_spans(h: Tensor, spans: np.ndarray) -> Tensor:
    """Concatenate [max ; mean] over rows ``start..end`` of batch item ``b``.

    ``h`` is [B, T, d]; ``spans`` is an int array of (b, start, end) rows.
    Returns [L, 2d].
    """
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 3)
    hd = h.data
    d = hd.shape[-1]
    n = spans.shape[0]
    out = np.empty((n, 2 * d))
    arg = np.empty((n, d), dtype=np.int64)
    for i, (b, s, e) in enumerate(spans):
        if e <= s:
            raise ValueError(f"pool_spans: empty span [{s}, {e})")
        block = hd[b, s:e]
        j = block.argmax(axis=0)
        arg[i] = s + j
        out[i, :d] = block[j, np.arange(d)]
        out[i, d:] = block.mean(axis=0)

    def bw(g):
        gh = np.zeros_like(hd)
        cols = np.arange(d)
        for i, (b, s, e) in enumerate(spans):
            np.add.at(gh[b], (arg[i], cols), g[i, :d])
            gh[b, s:e] += g[i, d:] / (e - s)
        return (gh,)

    return _result(out, (h,), bw)
