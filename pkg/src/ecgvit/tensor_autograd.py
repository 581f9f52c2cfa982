"""Minimal dense-tensor autograd engine on numpy buffers.

Reverse-mode differentiation over a per-forward-pass graph. Every op
validates that its output is finite and raises FloatingPointError
otherwise, so numerical blowups surface at the op that produced them
instead of three modules later. The graph is freed during backward();
repeated forward/backward cycles accumulate into leaf gradients until
the caller resets them.

Broadcasting is deliberately restricted: elementwise ops require equal
shapes, and the single exception is bias-vector addition (a 1-d vector
added along the last axis).
"""

from __future__ import annotations

import json
import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "parameter", "constant",
    "add", "sub", "mul", "scale", "matmul", "reshape", "transpose",
    "concat", "split", "narrow", "mean_pool", "sum_all",
    "softmax_rows", "layer_norm", "gelu", "relu", "sigmoid", "exp", "log",
    "gather_rows", "conv2d",
    "backward", "gradient_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense n-d array plus the bookkeeping needed for reverse mode.

    Attributes
    ----------
    data : np.ndarray
        The value buffer (float32 or float64).
    requires_grad : bool
        Whether gradients should flow into this tensor.
    grad : np.ndarray or None
        Accumulated gradient, same shape as data. Lazily allocated.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, dtype=np.float64):
    """Leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def constant(data, dtype=None):
    """Leaf tensor excluded from differentiation."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, backward_fn):
    """Wrap an op result, wiring the graph only when a parent needs grads."""
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    """Elementwise a + b.

    Shapes must match exactly, except that b may be a 1-d bias vector
    whose length equals a's last axis; it is then added to every row.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    bias_mode = (b.data.ndim == 1 and a.data.ndim >= 2
                 and a.data.shape[-1] == b.data.shape[0])
    if not bias_mode and a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            if bias_mode:
                axes = tuple(range(out.grad.ndim - 1))
                b._accumulate(out.grad.sum(axis=axes))
            else:
                b._accumulate(out.grad)

    return _make(out_data, "add", (a, b), _bwd)


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    """Elementwise product. Shapes must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    return _make(a.data * b.data, "mul", (a, b), _bwd)


def scale(a, c):
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * c)

    return _make(a.data * c, "scale", (a,), _bwd)


def matmul(a, b):
    """2-d matrix product (m,k) @ (k,n) -> (m,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul: rank-2 operands only")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    return _make(a.data @ b.data, "matmul", (a, b), _bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad.reshape(old))

    return _make(a.data.reshape(shape), "reshape", (a,), _bwd)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad.transpose(inv))

    return _make(a.data.transpose(axes), "transpose", (a,), _bwd)


def concat(tensors, axis=0):
    """Concatenate along an existing axis. Inverse of split."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bwd(out):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(int(start), int(stop))
                t._accumulate(out.grad[tuple(sl)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, "concat", tuple(tensors), _bwd)


def split(a, sizes, axis=0):
    """Split into consecutive chunks of the given sizes. Inverse of concat."""
    a = _as_tensor(a)
    if sum(sizes) != a.data.shape[axis]:
        raise ValueError(f"split: sizes {sizes} do not tile axis {axis} "
                         f"of shape {a.data.shape}")
    outs = []
    start = 0
    for sz in sizes:
        outs.append(narrow(a, axis, start, sz))
        start += sz
    return outs


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(f"narrow: [{start}, {start + length}) out of bounds "
                         f"for axis {axis} of shape {a.data.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def _bwd(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[sl] = out.grad
            a._accumulate(g)

    return _make(a.data[sl].copy(), "narrow", (a,), _bwd)


def mean_pool(a, axes):
    """Mean over the given axes (dims dropped)."""
    a = _as_tensor(a)
    axes = tuple(sorted(int(ax) for ax in axes))
    count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def _bwd(out):
        if a.requires_grad:
            g = np.expand_dims(out.grad, axes)
            a._accumulate(np.broadcast_to(g, a.data.shape) / count)

    return _make(a.data.mean(axis=axes), "mean_pool", (a,), _bwd)


def sum_all(a):
    """Sum of all entries, as a scalar tensor."""
    a = _as_tensor(a)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, out.grad))

    return _make(np.asarray(a.data.sum(), dtype=a.data.dtype), "sum_all", (a,), _bwd)


def gather_rows(a, indices):
    """Pick a[i, indices[i]] for each row i of a 2-d tensor."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ValueError("gather_rows: need (n,c) tensor and (n,) index vector")
    rows = np.arange(a.data.shape[0])

    def _bwd(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (rows, idx), out.grad)
            a._accumulate(g)

    return _make(a.data[rows, idx].copy(), "gather_rows", (a,), _bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * mask)

    return _make(np.where(mask, a.data, 0.0), "relu", (a,), _bwd)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    # branch on sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * y * (1.0 - y))

    return _make(y, "sigmoid", (a,), _bwd)


def gelu(a):
    """Exact Gaussian error linear unit, x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * (cdf + x * pdf))

    return _make(x * cdf, "gelu", (a,), _bwd)


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * y)

    return _make(y, "exp", (a,), _bwd)


def log(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def _bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    return _make(y, "log", (a,), _bwd)


def softmax_rows(a):
    """Row-wise softmax of a 2-d tensor, stabilized by row-max subtraction."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("softmax_rows: rank-2 input only")
    z = a.data - a.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=1, keepdims=True)

    def _bwd(out):
        if a.requires_grad:
            dot = (out.grad * y).sum(axis=1, keepdims=True)
            a._accumulate(y * (out.grad - dot))

    return _make(y, "softmax_rows", (a,), _bwd)


def layer_norm(a, gain, bias, eps=1e-8):
    """Normalize the last axis to zero mean, unit variance, then affine.

    eps guards the variance; constant rows normalize to zeros and the
    affine part alone survives.
    """
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError("layer_norm: gain/bias must match the last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def _bwd(out):
        if gain.requires_grad:
            axes = tuple(range(out.grad.ndim - 1))
            gain._accumulate((out.grad * xhat).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(out.grad.ndim - 1))
            bias._accumulate(out.grad.sum(axis=axes))
        if a.requires_grad:
            gy = out.grad * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gy - m1 - xhat * m2))

    return _make(xhat * gain.data + bias.data, "layer_norm", (a, gain, bias), _bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(a, kernels, stride=1, padding=0):
    """2-d cross-correlation of one image with a kernel bank.

    Parameters
    ----------
    a : Tensor, shape (H, W, Cin)
    kernels : Tensor, shape (KH, KW, Cin, Cout)
    stride : int or (int, int)
    padding : int or (int, int), zero padding per spatial axis

    Returns
    -------
    Tensor, shape (H', W', Cout) with H' = (H + 2*ph - KH)//sh + 1.
    """
    a, kernels = _as_tensor(a), _as_tensor(kernels)
    if a.data.ndim != 3 or kernels.data.ndim != 4:
        raise ValueError("conv2d: expect (H,W,Cin) input and (KH,KW,Cin,Cout) kernels")
    kh, kw, cin, cout = kernels.data.shape
    if a.data.shape[2] != cin:
        raise ValueError(f"conv2d: input has {a.data.shape[2]} channels, "
                         f"kernels expect {cin}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    xp = np.pad(a.data, ((ph, ph), (pw, pw), (0, 0)))
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")

    patches = np.empty((ho, wo, kh, kw, cin), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patches[:, :, i, j, :] = xp[i:i + sh * (ho - 1) + 1:sh,
                                        j:j + sw * (wo - 1) + 1:sw, :]
    pm = patches.reshape(ho * wo, kh * kw * cin)
    km = kernels.data.reshape(kh * kw * cin, cout)
    out_data = (pm @ km).reshape(ho, wo, cout)

    def _bwd(out):
        gy = out.grad.reshape(ho * wo, cout)
        if kernels.requires_grad:
            kernels._accumulate((pm.T @ gy).reshape(kh, kw, cin, cout))
        if a.requires_grad:
            gp = (gy @ km.T).reshape(ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[i:i + sh * (ho - 1) + 1:sh,
                        j:j + sw * (wo - 1) + 1:sw, :] += gp[:, :, i, j, :]
            if ph or pw:
                gxp = gxp[ph:hp - ph, pw:wp - pw, :]
            a._accumulate(gxp)

    return _make(out_data, "conv2d", (a, kernels), _bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Reverse-mode pass from a scalar loss.

    Gradients accumulate into every tensor with requires_grad reachable
    from the loss. The graph is released as it is consumed, so each
    forward pass supports exactly one backward pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad")

    # iterative post-order: graphs from large batches overflow recursion
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)
        node._backward = None
        node._parents = ()


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

class GradCheckReport:
    """Outcome of a finite-difference gradient comparison."""

    def __init__(self, max_rel_error, num_checked, failures, tol):
        self.max_rel_error = max_rel_error
        self.num_checked = num_checked
        self.failures = failures
        self.tol = tol

    @property
    def ok(self):
        return not self.failures

    def __repr__(self):
        state = "ok" if self.ok else f"{len(self.failures)} failures"
        return (f"GradCheckReport({state}, max_rel_error={self.max_rel_error:.3e}, "
                f"checked={self.num_checked}, tol={self.tol:.1e})")


def gradient_check(fn, inputs, step=1e-3, tol=1e-4, sample=None, rng=None):
    """Compare analytic gradients of fn against central differences.

    Parameters
    ----------
    fn : callable(list[Tensor]) -> Tensor
        Must build a fresh graph per call and return a scalar.
    inputs : list[Tensor]
        Leaves with requires_grad=True; their data is perturbed in place
        and restored.
    step : float
        Central-difference step.
    tol : float
        Per-coordinate error bound. The error is |a - n| / max(1, |a|, |n|),
        i.e. relative for large gradients and absolute below one.
    sample : int or None
        If set, check only this many coordinates drawn uniformly over all
        inputs; otherwise check every coordinate.
    rng : np.random.Generator, used only when sampling.

    Returns
    -------
    GradCheckReport
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient_check: 64-bit inputs required")
        t.zero_grad()
    out = fn(inputs)
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    for t in inputs:
        t.zero_grad()

    coords = [(i, j) for i, t in enumerate(inputs) for j in range(t.data.size)]
    if sample is not None and sample < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picked = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[int(k)] for k in picked]

    failures = []
    max_err = 0.0
    for i, j in coords:
        flat = inputs[i].data.reshape(-1)
        saved = flat[j]
        flat[j] = saved + step
        f_plus = fn(inputs).item()
        flat[j] = saved - step
        f_minus = fn(inputs).item()
        flat[j] = saved
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        max_err = max(max_err, err)
        if err >= tol:
            failures.append((i, j, float(a), float(numeric), float(err)))
    for t in inputs:
        t.zero_grad()
    return GradCheckReport(max_err, len(coords), failures, tol)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params, path, extra=None):
    """Write named parameters to a self-describing JSON container.

    params maps parameter path -> Tensor (or ndarray). extra, if given,
    is a JSON-safe dict stored alongside (model config, notes).
    """
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "parameters": {},
    }
    if extra is not None:
        blob["extra"] = extra
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        blob["parameters"][name] = {
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "values": [float(v) for v in arr.reshape(-1)],
        }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint.

    Returns (params, extra) where params maps name -> Tensor with
    requires_grad=True. Rejects containers without a format_version.
    """
    with open(path) as fh:
        blob = json.load(fh)
    if "format_version" not in blob:
        raise ValueError(f"checkpoint {path}: missing format_version field")
    if blob["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint {path}: unsupported format_version "
                         f"{blob['format_version']}")
    params = {}
    for name, rec in blob["parameters"].items():
        arr = np.array(rec["values"], dtype=rec.get("dtype", "float64"))
        expect = int(np.prod(rec["shape"])) if rec["shape"] else 1
        if arr.size != expect:
            raise ValueError(f"checkpoint {path}: parameter '{name}' has "
                             f"{arr.size} values, shape says {expect}")
        params[name] = Tensor(arr.reshape(rec["shape"]), requires_grad=True)
    return params, blob.get("extra")
