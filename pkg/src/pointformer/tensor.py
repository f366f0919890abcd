"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous float32 (or float64) numpy array. Operations
executed while a ``Tape`` is active record their inputs together with a
backward rule; ``Tape.backward`` replays the rules in reverse and accumulates
d(loss)/d(leaf) into the ``grad`` slot of every leaf created with
``requires_grad=True``. Running ops with no active tape records nothing,
which is how inference avoids graph overhead.

Design notes:
  - float32 is the training dtype; float64 is used for gradient checking.
  - broadcasting is limited to leading batch dimensions (and trailing-aligned
    bias adds); backward rules reduce gradients back to the input shapes.
  - repeated ``backward`` calls accumulate into ``grad`` rather than
    overwrite, so one shared weight can receive contributions from several
    replay passes.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import GradientError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32

TensorLike = Union["Tensor", np.ndarray, float, int]


class Tensor:
    """A dense n-dimensional value with an optional gradient accumulator.

    ``requires_grad=True`` marks a leaf (a parameter or a checked input):
    only leaves carry a ``grad`` accumulator. Tensors produced by ops are
    tracked through the active tape instead.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        arr = arr.astype(dtype, copy=False)
        if not arr.flags.c_contiguous:  # 0-d arrays are always contiguous
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if self.requires_grad else None
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; constants are allowed on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_ACTIVE_TAPES: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tape:
    """Ordered record of executed operations and their backward rules.

    Use as a context manager around the forward computation, then call
    ``backward(loss)`` (inside or outside the ``with`` block). Replaying the
    records in reverse order propagates gradients from the scalar loss to
    every leaf that participated.
    """

    def __init__(self):
        # each record: (output, tensor_inputs, backward_fn)
        # backward_fn(grad_wrt_output) -> tuple of grads aligned with inputs
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(
        self,
        output: Tensor,
        inputs: Sequence[Tensor],
        backward: Callable[[np.ndarray], tuple],
    ) -> None:
        """Append one operation record. Public so custom ops can hook in."""
        self._records.append((output, tuple(inputs), backward))
        self._produced.add(id(output))

    def tracks(self, t: Tensor) -> bool:
        """Whether ``t`` was produced by an op recorded on this tape."""
        return id(t) in self._produced

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every participating leaf's grad.

        ``loss`` must be a scalar produced on this tape. Calling backward
        again without zeroing grads adds a second set of contributions.
        """
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.tracks(loss):
            raise GradientError("loss was not produced by an op recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for output, inputs, backward_fn in reversed(self._records):
            g = grads.pop(id(output), None)
            if g is None:
                continue  # this output does not influence the loss
            holders.pop(id(output), None)
            for inp, ig in zip(inputs, backward_fn(g)):
                if ig is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                    holders[key] = inp
        for key, g in grads.items():
            leaf = holders[key]
            if leaf.requires_grad:
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)
                leaf.grad += g


def backward(loss: Tensor) -> None:
    """Run backward on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise GradientError("backward called with no active tape")
    tape.backward(loss)


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------


def _data_of(x: TensorLike, dtype) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype)


def _ref_dtype(*xs: TensorLike):
    for x in xs:
        if isinstance(x, Tensor):
            return x.data.dtype
    return DEFAULT_DTYPE


def _record(out: Tensor, inputs: Sequence[TensorLike], backward_fn) -> Tensor:
    """Record an op on the active tape if any tensor input participates.

    ``backward_fn`` must return one gradient per entry of ``inputs`` (None
    for constants); non-Tensor inputs are dropped from the record.
    """
    tape = active_tape()
    if tape is not None:
        live = [
            t
            for t in inputs
            if isinstance(t, Tensor) and (t.requires_grad or tape.tracks(t))
        ]
        if live:
            tensor_inputs = tuple(t for t in inputs if isinstance(t, Tensor))
            positions = [i for i, t in enumerate(inputs) if isinstance(t, Tensor)]

            def filtered(g, _fn=backward_fn, _pos=positions):
                full = _fn(g)
                return tuple(full[i] for i in _pos)

            tape.record(out, tensor_inputs, filtered)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    dtype = _ref_dtype(a, b)
    ad, bd = _data_of(a, dtype), _data_of(b, dtype)
    out = Tensor(ad + bd)

    def bwd(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return _record(out, (a, b), bwd)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    dtype = _ref_dtype(a, b)
    ad, bd = _data_of(a, dtype), _data_of(b, dtype)
    out = Tensor(ad - bd)

    def bwd(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    return _record(out, (a, b), bwd)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    dtype = _ref_dtype(a, b)
    ad, bd = _data_of(a, dtype), _data_of(b, dtype)
    out = Tensor(ad * bd)

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), bwd)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    dtype = _ref_dtype(a, b)
    ad, bd = _data_of(a, dtype), _data_of(b, dtype)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {ad.shape} x {bd.shape}")
    if ad.ndim > 2 and bd.ndim == 2:
        # stacked (.., N, K) @ (K, M): one flat GEMM beats the matmul loop
        k, m = bd.shape
        out = Tensor((ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (m,)))

        def bwd(g):
            g2 = g.reshape(-1, m)
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, k).T @ g2
            return ga, gb

        return _record(out, (a, b), bwd)
    out = Tensor(ad @ bd)

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(out, (a, b), bwd)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # stable for both tails: exp(-|x|) never overflows
    e = np.exp(-np.abs(xd))
    out_data = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(out_data)

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def bwd(g):
        return (g * (x.data > 0),)

    return _record(out, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inverse),)

    return _record(out, (x,), bwd)


def tensor_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _record(out, (x,), bwd)


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def max_reduce(x: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max over one axis, returning (values, argmax indices).

    Ties break toward the lowest index. The backward rule routes the
    incoming gradient only to the argmax positions (one-hot per slice).
    """
    idx = np.argmax(x.data, axis=axis)
    values = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    out = Tensor(values)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _record(out, (x,), bwd), idx


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows along axis 0; duplicate indices are allowed."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(
            f"row index out of range for extent {x.data.shape[0]}: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = Tensor(x.data[idx])
    # strictly increasing indices cannot collide: plain assignment beats add.at
    unique_rows = idx.ndim == 1 and (idx.size < 2 or bool(np.all(np.diff(idx) > 0)))

    def bwd(g):
        gx = np.zeros_like(x.data)
        if unique_rows:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _record(out, (x,), bwd)


def scatter_rows(x: Tensor, indices, num_rows: int) -> Tensor:
    """Place row i of ``x`` at ``indices[i]`` of a ``num_rows``-row output.

    Duplicate destinations accumulate. With a permutation this inverts
    ``gather_rows``, restoring the original row order.
    """
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexError(
            f"destination index out of range for extent {num_rows}: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out_data = np.zeros((num_rows,) + x.data.shape[1:], dtype=x.data.dtype)
    np.add.at(out_data, idx, x.data)
    out = Tensor(out_data)

    def bwd(g):
        return (g[idx],)

    return _record(out, (x,), bwd)


def segment_max(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment channelwise max over rows of ``x``.

    ``segment_ids`` must be non-decreasing. Empty segments yield zero rows
    (and receive no gradient); ties break toward the lowest row index.
    """
    seg = np.asarray(segment_ids)
    if seg.size != x.data.shape[0]:
        raise ShapeError("segment_ids length must match the number of rows")
    if seg.size and np.any(np.diff(seg) < 0):
        raise ShapeError("segment_ids must be sorted (non-decreasing)")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexError(f"segment id out of range for {num_segments} segments")
    n_chan = x.data.shape[1:] if x.data.ndim > 1 else ()
    out_data = np.zeros((num_segments,) + n_chan, dtype=x.data.dtype)
    starts = np.searchsorted(seg, np.arange(num_segments), side="left")
    ends = np.searchsorted(seg, np.arange(num_segments), side="right")
    argrows = np.full((num_segments,) + n_chan, -1, dtype=np.int64)
    for s in range(num_segments):
        lo, hi = starts[s], ends[s]
        if lo == hi:
            continue
        block = x.data[lo:hi]
        local = np.argmax(block, axis=0)
        out_data[s] = np.take_along_axis(block, local[None], axis=0)[0]
        argrows[s] = lo + local
    out = Tensor(out_data)

    def bwd(g):
        gx = np.zeros_like(x.data)
        for s in range(num_segments):
            if starts[s] == ends[s]:
                continue
            if n_chan:
                gx[argrows[s], np.arange(x.data.shape[1])] += g[s]
            else:
                gx[argrows[s]] += g[s]
        return (gx,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# normalizing ops
# ---------------------------------------------------------------------------


def _check_finite(xd: np.ndarray, op: str) -> None:
    # one cheap reduction; the sum is non-finite whenever any entry is
    # (a finite-sum overflow would also be caught by the exact scan)
    if not np.isfinite(xd.sum()) and not np.all(np.isfinite(xd)):
        raise NumericError(f"{op} input contains non-finite values")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    xd = x.data
    _check_finite(xd, "softmax")
    ex = xd - xd.max(axis=axis, keepdims=True)  # fresh array, safe to reuse
    np.exp(ex, out=ex)
    out_data = ex / ex.sum(axis=axis, keepdims=True)
    out = Tensor(out_data)

    def bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _record(out, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    _check_finite(xd, "log_softmax")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - log_z
    out = Tensor(out_data)

    def bwd(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bwd)


def layer_norm(
    x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5
) -> Tensor:
    """Standardize slices along ``axis`` to mean 0 / variance 1, then affine.

    ``gain`` and ``bias`` are 1-d with the extent of ``axis``; ``eps`` sits
    inside the square root.
    """
    xd = x.data
    extent = xd.shape[axis]
    if extent < 2:
        raise ShapeError(f"layer_norm axis extent must be >= 2, got {extent}")
    if gain.data.shape != (extent,) or bias.data.shape != (extent,):
        raise ShapeError("gain/bias must be 1-d with the normalized extent")
    ax = axis % xd.ndim
    bshape = [1] * xd.ndim
    bshape[ax] = extent
    gd = gain.data.reshape(bshape)
    bd = bias.data.reshape(bshape)
    mu = xd.mean(axis=ax, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = Tensor(xn * gd + bd)
    reduce_axes = tuple(i for i in range(xd.ndim) if i != ax)

    def bwd(g):
        dgain = (g * xn).sum(axis=reduce_axes)
        dbias = g.sum(axis=reduce_axes)
        dxn = g * gd
        dx = inv * (
            dxn
            - dxn.mean(axis=ax, keepdims=True)
            - xn * (dxn * xn).mean(axis=ax, keepdims=True)
        )
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bwd)
