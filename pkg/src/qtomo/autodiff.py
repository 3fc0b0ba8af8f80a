"""Minimal reverse-mode automatic differentiation over real float64 tensors.

A :class:`Tape` records operations in execution order (which is already a
topological order); :func:`backward` seeds the loss gradient and walks the
tape in reverse, accumulating gradients into every tensor that requires them.
Only the ops this package's networks and losses need are implemented, but each
op handles batched shapes and numpy broadcasting.

Complex matrices live on the tape as (real, imag) tensor pairs; the only op
that internally touches complex arithmetic is :func:`min_eig_herm`, whose
backward rule is the eigenvector outer product.
"""

from __future__ import annotations

import numpy as np

from . import linalg

_ACTIVE_TAPE = None


class Tensor:
    """A float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    __slots__ = ("ops",)

    def __init__(self):
        self.ops = []  # list of (inputs tuple, output, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already recording")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _record(inputs, out: Tensor, backward_fn):
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.ops.append((inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor):
    """Accumulate gradients of a scalar loss into every recorded tensor."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for inputs, out, backward_fn in reversed(tape.ops):
        if out.grad is None:
            continue  # not on any path to the loss
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            # rebinding (never in-place) keeps aliased gradient arrays safe
            t.grad = g if t.grad is None else t.grad + g


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def detach(x: Tensor) -> Tensor:
    """Copy of x cut off from the tape (gradients stop here)."""
    return Tensor(x.data.copy(), requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _record((a,), Tensor(-a.data), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    return _record(
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _record((a,), Tensor(a.data * c), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    return _record((a,), Tensor(a.data + c), lambda g: (g,))


def clip_min(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); gradient flows only where a exceeds the floor."""
    out = Tensor(np.maximum(a.data, c))
    mask = (a.data > c).astype(np.float64)
    return _record((a,), out, lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D (rows, k) @ (k, cols) or batched 3-D (B, n, m) @ (B, m, k)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        out = Tensor(ad @ bd)
        return _record((a, b), out, lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 3 and bd.ndim == 3:
        out = Tensor(ad @ bd)
        return _record(
            (a, b),
            out,
            lambda g: (g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g),
        )
    raise ValueError(f"unsupported matmul shapes {ad.shape} x {bd.shape}")


def transpose_last2(a: Tensor) -> Tensor:
    out = Tensor(np.swapaxes(a.data, -1, -2))
    return _record((a,), out, lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return _record((a,), out, lambda g: (g.reshape(old),))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record((a,), out, bwd)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = (a.data > 0).astype(np.float64)
    return _record((a,), out, lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    out = Tensor(y)
    return _record((a,), out, lambda g: (g * y * (1.0 - y),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-form GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _record((a,), out, bwd)


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    out = Tensor(a.data * s)
    return _record((a,), out, lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed in the overflow-safe split form."""
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
    return _record((a,), out, lambda g: (g * s,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity (and unrecorded) when not training."""
    if not training or rate <= 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask)
    return _record((a,), out, lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# structured ops for the Cholesky head
# ---------------------------------------------------------------------------


def gather_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select columns of a (B, n) tensor; idx entries must be unique."""
    out = Tensor(a.data[:, idx])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, idx] = g
        return (ga,)

    return _record((a,), out, bwd)


def scatter_matrix(a: Tensor, rows: np.ndarray, cols: np.ndarray, d: int) -> Tensor:
    """Place (B, k) values at positions (rows[i], cols[i]) of zero (B, d, d) matrices."""
    b = a.data.shape[0]
    out_data = np.zeros((b, d, d), dtype=np.float64)
    out_data[:, rows, cols] = a.data
    out = Tensor(out_data)
    return _record((a,), out, lambda g: (g[:, rows, cols],))


def trace_last2(a: Tensor) -> Tensor:
    out = Tensor(np.einsum("bii->b", a.data))
    d = a.data.shape[-1]
    eye = np.eye(d)
    return _record((a,), out, lambda g: (g[:, None, None] * eye,))


def min_eig_herm(re: Tensor, im: Tensor, degeneracy_tol: float = 1e-10) -> Tensor:
    """Minimum eigenvalue of the Hermitian part of re + i*im, per batch entry.

    Backward is first-order perturbation theory: the gradient with respect to
    the matrix is the outer product v v^dag of the minimal eigenvector. When
    the minimal eigenvalue is degenerate the averaged projector over the
    degenerate eigenspace is used, which makes the subgradient deterministic.
    """
    mats = re.data + 1j * im.data
    evals, vecs = linalg.eigh_batch(mats)
    lam_min = evals[:, 0]
    out = Tensor(lam_min)

    def bwd(g):
        mask = (evals - lam_min[:, None]) <= degeneracy_tol  # (B, D)
        k = mask.sum(axis=1).astype(np.float64)
        vm = vecs * mask[:, None, :]
        proj = vm @ np.conj(np.swapaxes(vm, -1, -2))  # averaged eigenspace projector * k
        w = proj / k[:, None, None]
        gb = g[:, None, None]
        return (gb * w.real, gb * w.imag)

    return _record((re, im), out, bwd)
