"""Dense float64 tensors with reverse-mode automatic differentiation.

Each primitive records its parents and a closure that pushes the output
gradient back onto them. ``backward`` orders the graph topologically and
replays the closures in reverse, which is the tape.

Broadcasting is supported where this model needs it: elementwise ops follow
numpy rules and gradients are summed back onto the broadcast dimensions.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Populate ``.grad`` of every reachable tensor that requires it.

        Leaf gradients add onto whatever is already stored, so call
        ``zero_grad`` (or the optimizer's) between steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = tape(self)
        # interior gradients are per pass; leaves accumulate until zero_grad
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.asarray(grad, dtype=np.float64).reshape(self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, idx: slice_(self, idx)


class Parameter(Tensor):
    """Learnable tensor with a unique name and the spec it was initialised from."""

    __slots__ = ("init_spec",)

    def __init__(self, data, name, init_spec="zeros"):
        super().__init__(data, requires_grad=True, name=name)
        self.init_spec = init_spec


def tape(root: Tensor):
    """Topological order of the graph feeding ``root`` (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    parents = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data, requires_grad=bool(parents), _parents=parents)
    if parents:
        out._backward = backward
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))

    return _result(x.data * cdf, (x,), backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        x._accumulate(g * 0.5 / out)

    return _result(out, (x,), backward)


# linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def affine(x, w, b=None) -> Tensor:
    """x W + b over the last axis."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum, e.g. ``'bkd,kde->bke'``.

    No index may repeat inside one operand; every input index must appear in
    the output or the other operand (true for contractions).
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_s = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    try:
        out = np.einsum(spec, a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"einsum {spec!r}: {exc} (shapes {a.shape}, {b.shape})") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out_s},{sb}->{sa}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{sa},{out_s}->{sb}", a.data, g))

    return _result(out, (a, b), backward)


# reductions and shape ops

def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(out, (x,), backward)


def mean_axis(x, axis, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g / n, x.shape))

    return _result(out, (x,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _result(out, tensors, backward)


def slice_(x, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _result(out, (x,), backward)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None

    def backward(g):
        x._accumulate(unbroadcast(g, x.shape))

    return _result(out, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


# operator-specific primitives

class SpectralBasis:
    """Truncated real DFT basis along the region axis.

    Forward coefficient k of a real field z is X_k = sum_x z_x exp(-2 pi i k x / V),
    stored as (Re, Im) = (C z, -S z). The inverse keeps K modes and doubles
    the interior ones (real-input inverse), scaled by 1/V.
    """

    def __init__(self, n_regions: int, modes: int):
        if not 0 <= modes <= n_regions // 2 + 1:
            raise ValueError(f"modes must lie in [0, {n_regions // 2 + 1}] for V={n_regions}, "
                             f"got {modes}")
        self.n_regions = n_regions
        self.modes = modes
        k = np.arange(modes)[:, None]
        x = np.arange(n_regions)[None, :]
        ang = 2.0 * np.pi * k * x / n_regions
        self.cos = np.cos(ang)                       # K x V
        self.sin = np.sin(ang)
        weight = np.full(modes, 2.0)
        if modes:
            weight[0] = 1.0
        if n_regions % 2 == 0 and modes == n_regions // 2 + 1:
            weight[-1] = 1.0
        self.inv_cos = (weight[:, None] * self.cos).T / n_regions   # V x K
        self.inv_sin = (weight[:, None] * self.sin).T / n_regions


def spectral_forward(z, basis: SpectralBasis):
    """First K Fourier coefficients along axis -2; returns (real, imag) tensors."""
    z = as_tensor(z)
    if z.shape[-2] != basis.n_regions:
        raise ShapeError(f"spectral_forward: field has {z.shape[-2]} regions, "
                         f"basis {basis.n_regions}")
    return matmul(Tensor(basis.cos), z), matmul(Tensor(-basis.sin), z)


def spectral_inverse(re, im, basis: SpectralBasis):
    """Band-limited real field from K complex coefficients (irfft convention)."""
    return sub(matmul(Tensor(basis.inv_cos), re), matmul(Tensor(basis.inv_sin), im))


def spectral_mix(re, im, w_re, w_im):
    """Per-mode complex channel mixing Y_k = X_k W_k ('bkd,kde->bke')."""
    yr = sub(einsum("bkd,kde->bke", re, w_re), einsum("bkd,kde->bke", im, w_im))
    yi = add(einsum("bkd,kde->bke", re, w_im), einsum("bkd,kde->bke", im, w_re))
    return yr, yi


def dft_naive(z):
    """O(V^2) complex DFT along axis 0, the reference for the spectral path."""
    z = np.asarray(z)
    v = z.shape[0]
    out = np.zeros((v,) + z.shape[1:], dtype=complex)
    for k in range(v):
        for x in range(v):
            out[k] += z[x] * np.exp(-2j * np.pi * k * x / v)
    return out


def diff_conv(z, kernel, h: float = 1.0) -> Tensor:
    """Mean-subtracted local convolution along axis -2, replicate padding.

    out[x] = (1/h) sum_i (Z[x+i] - Z[x]) (K_i - mean K), i = -c..c. The
    difference form equals the plain convolution with K - mean K (the
    centred weights sum to zero) and maps constants to exactly 0.
    """
    z, kernel = as_tensor(z), as_tensor(kernel)
    width = kernel.shape[0]
    if width % 2 == 0:
        raise ValueError(f"diff_conv kernel width must be odd, got {width}")
    if kernel.ndim != 3 or kernel.shape[1] != z.shape[-1]:
        raise ShapeError(f"diff_conv: kernel {kernel.shape} does not match field {z.shape}")
    v = z.shape[-2]
    c = width // 2
    kc = kernel.data - kernel.data.mean(axis=0, keepdims=True)
    rows = np.arange(v)
    idx = [np.clip(rows + i - c, 0, v - 1) for i in range(width)]
    diffs = [z.data[..., ix, :] - z.data for ix in idx]
    out = sum(d @ kc[i] for i, d in enumerate(diffs)) / h

    def backward(g):
        g = g / h
        if z.requires_grad:
            gz = np.zeros_like(z.data)
            for i, ix in enumerate(idx):
                gi = g @ kc[i].T
                np.add.at(gz, (Ellipsis, ix, slice(None)), gi)
                gz -= gi
            z._accumulate(gz)
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gk = np.stack([d.reshape(-1, d.shape[-1]).T @ g2 for d in diffs])
            kernel._accumulate(gk - gk.mean(axis=0, keepdims=True))

    return _result(out, (z, kernel), backward)


def graph_propagate(z, a_hat, w_self, w_nbr, b) -> Tensor:
    """Pre-activation Z W_self + A_hat Z W_nbr + b of one graph-kernel layer."""
    z = as_tensor(z)
    a_hat = as_tensor(a_hat)
    if a_hat.shape != (z.shape[-2], z.shape[-2]):
        raise ShapeError(f"graph_propagate: a_hat {a_hat.shape} does not match field {z.shape}")
    return add(add(matmul(z, w_self), matmul(matmul(a_hat, z), w_nbr)), b)
