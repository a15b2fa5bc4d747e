"""Tape-based reverse-mode differentiation over dense numpy arrays.

Only the operations needed by the generator, the discriminator and the two
losses are provided. Recording happens only while a :class:`Tape` is active::

    with Tape() as tape:
        y = tanh(dense(x, w, b))
        loss = l1_sum(y, target)
    tape.backward(loss)
    w.grad  # d loss / d w

Outside a tape every op is a plain forward computation.
"""

import numpy as np

from .errors import ContractError, DimensionError, TapeError

__all__ = [
    "Tensor", "Tape", "record", "backward", "dense", "conv2d", "conv_transpose2d",
    "leaky_relu", "relu", "tanh", "sigmoid", "channel_norm", "bce", "l1_sum",
    "grad_check", "BCE_EPS",
]

BCE_EPS = 1e-7

_active_tapes = []


def _as_array(value):
    arr = np.asarray(value)
    # float64 survives so finite-difference probes can run at higher precision
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32, copy=False)
    return arr


class Tensor:
    """A float32 array that can take part in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tsum(self) * (1.0 / self.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of executed ops; use as a context manager."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self._nodes)

    def clear(self):
        for node in self._nodes:
            node.out._tape = None
        self._nodes.clear()

    def _append(self, node):
        self._nodes.append(node)

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    if inp._tape is not self:
                        leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads[key].astype(leaf.data.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _current_tape():
    return _active_tapes[-1] if _active_tapes else None


def record(data, inputs, vjp):
    """Wrap ``data`` as the output of an op over ``inputs``.

    ``vjp(g)`` must return one gradient (or None) per input. Exposed so tests
    and callers can define extra ops.
    """
    out = Tensor(data)
    tape = _current_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._append(_Node(out, tuple(inputs), vjp))
    return out


def backward(loss):
    """Backpropagate from a scalar loss into every tensor on its tape."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward needs a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss is detached: no tape recorded it (or the tape was cleared)")
    loss._tape.backward(loss)


def _data(x):
    return x.data if isinstance(x, Tensor) else _as_array(x)


def _needs(x):
    return isinstance(x, Tensor) and x.requires_grad


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise plumbing ----------------------------------------------------

def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def vjp(g):
        return (_unbroadcast(g, ad.shape) if _needs(a) else None,
                _unbroadcast(g, bd.shape) if _needs(b) else None)

    return record(out, (a, b), vjp)


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if _needs(a) else None,
                _unbroadcast(g * ad, bd.shape) if _needs(b) else None)

    return record(out, (a, b), vjp)


def neg(a):
    return record(-_data(a), (a,), lambda g: (-g,))


def tsum(a):
    ad = _data(a)
    return record(ad.sum(), (a,), lambda g: (np.broadcast_to(g, ad.shape).copy(),))


def reshape(a, shape):
    ad = _data(a)
    return record(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


# -- layers ------------------------------------------------------------------

def dense(x, w, b):
    """Affine map ``x @ w + b`` for x of shape [N, I], w [I, O], b [O]."""
    xd, wd, bd = _data(x), _data(w), _data(b)
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0] or bd.shape != (wd.shape[1],):
        raise DimensionError(
            f"dense: x {xd.shape}, w {wd.shape}, b {bd.shape} do not conform")
    out = xd @ wd + bd

    def vjp(g):
        return (g @ wd.T if _needs(x) else None,
                xd.T @ g if _needs(w) else None,
                g.sum(axis=0) if _needs(b) else None)

    return record(out, (x, w, b), vjp)


def _conv_out(n, k, stride, pad, what):
    span = n + 2 * pad - k
    if stride < 1 or span < 0 or span % stride:
        raise DimensionError(
            f"{what}: size {n} with kernel {k}, stride {stride}, pad {pad} does not tile")
    return span // stride + 1


def _im2col(x, kh, kw, stride, pad, ho, wo):
    """[N, C, H, W] -> [N, C*kh*kw, ho*wo] patch matrix."""
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    hs, ws = stride * ho, stride * wo
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + hs:stride, j:j + ws:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, h, w, stride, pad):
    """Scatter-add [N, C, kh, kw, ho, wo] patches back onto [N, C, h, w]."""
    n, c, kh, kw, ho, wo = cols.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    hs, ws = stride * ho, stride * wo
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += cols[:, :, i, j]
    return out[:, :, pad:pad + h, pad:pad + w] if pad else out


def _correlate(cols, k, n, ho, wo):
    f = k.shape[0]
    return (k.reshape(f, -1) @ cols).reshape(n, f, ho, wo)


def _correlate_adjoint(y, k, stride, pad, h, w):
    """Adjoint of correlation with kernel k [F, C, kh, kw]: [N, F, ho, wo] -> [N, C, h, w]."""
    n, f, ho, wo = y.shape
    _, c, kh, kw = k.shape
    cols = k.reshape(f, -1).T @ y.reshape(n, f, ho * wo)
    return _col2im(cols.reshape(n, c, kh, kw, ho, wo), h, w, stride, pad)


def _kernel_grad(a, cols, kshape):
    # sum_n a[n] @ cols[n].T without materialising the batch of products
    n, c = a.shape[:2]
    return np.einsum("ncp,nkp->ck", a.reshape(n, c, -1), cols, optimize=True).reshape(kshape)


def conv2d(x, k, stride=1, pad=0):
    """2-D cross-correlation, x [N, C, H, W] with k [F, C, kh, kw], zero padding."""
    xd, kd = _data(x), _data(k)
    if xd.ndim != 4 or kd.ndim != 4 or xd.shape[1] != kd.shape[1]:
        raise DimensionError(f"conv2d: input {xd.shape} and kernel {kd.shape} do not conform")
    n, _, h, w = xd.shape
    kh, kw = kd.shape[2:]
    ho = _conv_out(h, kh, stride, pad, "conv2d")
    wo = _conv_out(w, kw, stride, pad, "conv2d")
    cols = _im2col(xd, kh, kw, stride, pad, ho, wo)
    out = _correlate(cols, kd, n, ho, wo)

    def vjp(g):
        dx = _correlate_adjoint(g, kd, stride, pad, h, w) if _needs(x) else None
        dk = _kernel_grad(g, cols, kd.shape) if _needs(k) else None
        return dx, dk

    return record(out, (x, k), vjp)


def conv_transpose2d(z, k, stride=1, pad=0):
    """Transposed convolution, z [N, C, H, W] with k [C, F, kh, kw].

    Forward equals the input-gradient of ``conv2d`` with the same kernel, so
    the output side is (H - 1) * stride - 2 * pad + kh.
    """
    zd, kd = _data(z), _data(k)
    if zd.ndim != 4 or kd.ndim != 4 or zd.shape[1] != kd.shape[0]:
        raise DimensionError(
            f"conv_transpose2d: input {zd.shape} and kernel {kd.shape} do not conform")
    if stride < 1:
        raise DimensionError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    n, _, h, w = zd.shape
    kh, kw = kd.shape[2:]
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    if ho <= 0 or wo <= 0:
        raise DimensionError(
            f"conv_transpose2d: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, "
            f"pad {pad} gives non-positive output {ho}x{wo}")
    out = _correlate_adjoint(zd, kd, stride, pad, ho, wo)

    def vjp(g):
        gcols = _im2col(g, kh, kw, stride, pad, h, w)
        dz = _correlate(gcols, kd, n, h, w) if _needs(z) else None
        dk = _kernel_grad(zd, gcols, kd.shape) if _needs(k) else None
        return dz, dk

    return record(out, (z, k), vjp)


# -- activations -------------------------------------------------------------

def leaky_relu(x, slope=0.2):
    xd = _data(x)
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return record(xd * scale, (x,), lambda g: (g * scale,))


def relu(x):
    xd = _data(x)
    mask = xd > 0
    return record(np.where(mask, xd, 0).astype(xd.dtype), (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(_data(x))
    return record(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x):
    xd = _data(x)
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(xd.dtype)
    return record(y, (x,), lambda g: (g * y * (1 - y),))


def channel_norm(x, gamma, beta, eps=1e-5, mean=None, var=None):
    """Per-channel standardisation over N, H, W followed by ``gamma * xhat + beta``.

    When ``mean`` and ``var`` are given they replace the batch statistics and
    the op becomes a fixed affine map of x.
    """
    if eps <= 0:
        raise ContractError(f"channel_norm: eps must be positive, got {eps}")
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    if xd.ndim != 4 or gd.shape != (xd.shape[1],) or bd.shape != (xd.shape[1],):
        raise DimensionError(
            f"channel_norm: x {xd.shape}, gamma {gd.shape}, beta {bd.shape} do not conform")
    batch_stats = mean is None
    if batch_stats:
        mu = xd.mean(axis=(0, 2, 3), keepdims=True)
        v = xd.var(axis=(0, 2, 3), keepdims=True)
    else:
        mu = np.asarray(mean, dtype=xd.dtype).reshape(1, -1, 1, 1)
        v = np.asarray(var, dtype=xd.dtype).reshape(1, -1, 1, 1)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (xd - mu) * inv
    g4, b4 = gd.reshape(1, -1, 1, 1), bd.reshape(1, -1, 1, 1)
    out = g4 * xhat + b4

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if _needs(gamma) else None
        dbeta = g.sum(axis=(0, 2, 3)) if _needs(beta) else None
        dx = None
        if _needs(x):
            dxhat = g * g4
            if batch_stats:
                m = xd.shape[0] * xd.shape[2] * xd.shape[3]
                dx = inv / m * (m * dxhat
                                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
            else:
                dx = dxhat * inv
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), vjp)


# -- losses ------------------------------------------------------------------

def bce(p, target):
    """Mean binary cross-entropy of probabilities p against a constant target."""
    pd = _data(p)
    pc = np.clip(pd, BCE_EPS, 1 - BCE_EPS)
    t = float(target)
    loss = -np.mean(t * np.log(pc) + (1 - t) * np.log1p(-pc))
    inside = (pd >= BCE_EPS) & (pd <= 1 - BCE_EPS)

    def vjp(g):
        dp = -(t / pc - (1 - t) / (1 - pc)) / pd.size
        return (g * dp * inside,)

    return record(np.asarray(loss, dtype=pd.dtype), (p,), vjp)


def l1_sum(a, b):
    """Sum of absolute differences; the subgradient at a == b is 0."""
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape:
        raise DimensionError(f"l1_sum: shapes {ad.shape} and {bd.shape} differ")
    diff = ad - bd
    sgn = np.sign(diff)

    def vjp(g):
        return (g * sgn if _needs(a) else None, -g * sgn if _needs(b) else None)

    return record(np.abs(diff).sum(), (a, b), vjp)


# -- verification ------------------------------------------------------------

def grad_check(f, x, eps=1e-3, seed=0):
    """Largest relative error between tape gradients and central differences.

    ``f`` maps a Tensor to a Tensor. Non-scalar outputs are contracted with a
    fixed random weighting. Analytic gradients run in float32; the difference
    quotients are evaluated in float64 so that roundoff stays below the step.
    Returns ``max |analytic - numeric| / max(1, |analytic|)``.
    """
    if not 0 < eps <= 1e-2:
        raise ContractError(f"grad_check: eps must lie in (0, 1e-2], got {eps}")
    x0 = np.array(_data(x), dtype=np.float64)
    probe = Tensor(x0.astype(np.float32), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        weights = np.random.default_rng(seed).standard_normal(y.shape)
        loss = tsum(mul(y, weights.astype(np.float32))) if y.size > 1 else reshape(y, ())
    tape.backward(loss)
    analytic = np.zeros_like(x0) if probe.grad is None else probe.grad.astype(np.float64)

    def value(v):
        out = _data(f(Tensor(v)))
        return float((out * weights).sum()) if out.size > 1 else float(out.reshape(()))

    numeric = np.empty_like(x0)
    flat, nflat = x0.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = value(x0)
        flat[i] = keep - eps
        down = value(x0)
        flat[i] = keep
        nflat[i] = (up - down) / (2 * eps)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
