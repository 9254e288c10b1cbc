"""Reverse-mode differentiable numerics for the sequence models.

Tensors wrap float64 numpy arrays.  Operations executed while a Trace is
active append their output node to the tape; since parents are always created
before children, walking the tape backwards is a valid reverse-topological
order.  Each node carries a closure that routes its upstream gradient to its
parents.  Without an active trace the same operations run as plain forward
numpy code, which is what inference uses.

Ops accept both single vectors (1-D) and batches (2-D, rows are independent
samples); 3-D tensors appear only in the attention ops, where the middle axis
indexes sequence positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, VocabularyError

__all__ = [
    "Tensor",
    "Trace",
    "AdamState",
    "LSTMCellParams",
    "add",
    "mul",
    "scale",
    "matmul",
    "dense",
    "sigmoid",
    "tanh",
    "concat",
    "slice_cols",
    "reshape",
    "embedding_lookup",
    "lstm_cell",
    "blend",
    "softmax",
    "softmax_cross_entropy",
    "softmax_cross_entropy_rows",
    "attn_scores",
    "masked_softmax",
    "attn_combine",
    "stack_steps",
    "sum_all",
    "adam_step",
    "decay_lr",
    "zero_grads",
    "clip_gradients",
    "grad_check",
]

_ACTIVE_TRACE: "Trace | None" = None


class Tensor:
    """A float64 array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name or '<anonymous>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class Trace:
    """Tape of operations recorded in forward order.

    Usable as a context manager; ``backward(loss)`` seeds the scalar loss
    with gradient 1 and visits every recorded node exactly once in reverse
    order, accumulating gradients into parents.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Trace":
        global _ACTIVE_TRACE
        if _ACTIVE_TRACE is not None:
            raise NumericError("nested traces are not supported")
        _ACTIVE_TRACE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TRACE
        _ACTIVE_TRACE = None

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _tracing() -> bool:
    return _ACTIVE_TRACE is not None


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Own the buffer: closures may hand out views over arrays they still use.
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _tracing() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._backward = None
    if needs:
        out._backward = backward
        _ACTIVE_TRACE._nodes.append(out)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        # row-broadcast bias
        def backward(g):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _make_node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, g * bd)
        if b.requires_grad:
            _accum(b, g * ad)

    return _make_node(ad * bd, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * s)

    return _make_node(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ bd.T)
        if b.requires_grad:
            _accum(b, ad.T @ g)

    return _make_node(ad @ bd, (a, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b); x may be a single vector or a batch of rows."""
    if w.data.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got {w.shape}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: incompatible shapes {x.shape} and {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} does not match {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ wd.T)
        if w.requires_grad:
            _accum(w, np.outer(xd, g) if xd.ndim == 1 else xd.T @ g)
        if b is not None and b.requires_grad:
            _accum(b, g if g.ndim == 1 else g.sum(axis=0))

    return _make_node(out, parents, backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * s * (1.0 - s))

    return _make_node(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - t * t))

    return _make_node(t, (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    widths = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, np.take(g, np.arange(lo, hi), axis=axis))

    return _make_node(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"slice_cols: need 1-D or 2-D, got {a.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            _accum(a, full)

    return _make_node(np.ascontiguousarray(a.data[..., start:stop]), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(old))

    return _make_node(a.data.reshape(shape), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            _accum(a, np.full_like(a.data, float(g)))

    return _make_node(np.asarray(a.data.sum()), (a,), backward)


# ---------------------------------------------------------------------------
# embeddings


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table.

    Row 0 is the frozen pad row: it is returned for id 0 but never receives
    gradient.  Ids beyond the table raise ``VocabularyError``.
    """
    idx = np.asarray(ids, dtype=np.int64)
    scalar = idx.ndim == 0
    idx1 = idx.reshape(-1)
    n_rows = table.shape[0]
    if idx1.size and (idx1.min() < 0 or idx1.max() >= n_rows):
        bad = idx1[(idx1 < 0) | (idx1 >= n_rows)][0]
        raise VocabularyError(f"embedding id {int(bad)} outside table of {n_rows} rows")
    out = table.data[idx1]

    def backward(g):
        if table.requires_grad:
            g2 = g.reshape(idx1.size, -1)
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx1, g2)
            dt[0] = 0.0  # pad row stays frozen
            _accum(table, dt)

    node = _make_node(out[0] if scalar else out, (table,), backward)
    return node


# ---------------------------------------------------------------------------
# LSTM cell (fused into three nodes: gate pre-activations, cell state, output)


@dataclass
class LSTMCellParams:
    """Fused-gate LSTM parameters; gate layout along columns is [i | f | g | o]."""

    w_x: Tensor  # (input_size, 4H)
    w_h: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]


def _gate_affine(x: Tensor, h_prev: Tensor, p: LSTMCellParams) -> Tensor:
    xd, hd = x.data, h_prev.data
    wx, wh = p.w_x, p.w_h
    z = xd @ wx.data + hd @ wh.data + p.b.data

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ wx.data.T)
        if h_prev.requires_grad:
            _accum(h_prev, g @ wh.data.T)
        if wx.requires_grad:
            _accum(wx, np.outer(xd, g) if xd.ndim == 1 else xd.T @ g)
        if wh.requires_grad:
            _accum(wh, np.outer(hd, g) if hd.ndim == 1 else hd.T @ g)
        if p.b.requires_grad:
            _accum(p.b, g if g.ndim == 1 else g.sum(axis=0))

    return _make_node(z, (x, h_prev, wx, wh, p.b), backward)


def _cell_state(z: Tensor, c_prev: Tensor, hidden: int) -> Tensor:
    zd = z.data
    i = _sigmoid(zd[..., :hidden])
    f = _sigmoid(zd[..., hidden : 2 * hidden])
    gg = np.tanh(zd[..., 2 * hidden : 3 * hidden])
    c = f * c_prev.data + i * gg
    cp = c_prev.data

    def backward(g):
        if z.requires_grad:
            dz = np.zeros_like(zd)
            dz[..., :hidden] = g * gg * i * (1.0 - i)
            dz[..., hidden : 2 * hidden] = g * cp * f * (1.0 - f)
            dz[..., 2 * hidden : 3 * hidden] = g * i * (1.0 - gg * gg)
            _accum(z, dz)
        if c_prev.requires_grad:
            _accum(c_prev, g * f)

    return _make_node(c, (z, c_prev), backward)


def _cell_output(z: Tensor, c: Tensor, hidden: int) -> Tensor:
    o = _sigmoid(z.data[..., 3 * hidden : 4 * hidden])
    tc = np.tanh(c.data)

    def backward(g):
        if z.requires_grad:
            dz = np.zeros_like(z.data)
            dz[..., 3 * hidden : 4 * hidden] = g * tc * o * (1.0 - o)
            _accum(z, dz)
        if c.requires_grad:
            _accum(c, g * o * (1.0 - tc * tc))

    return _make_node(o * tc, (z, c), backward)


def lstm_cell(
    x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LSTMCellParams
) -> tuple[Tensor, Tensor]:
    """One standard LSTM step; works on single vectors or batches of rows."""
    hidden = params.hidden_size
    if x.shape[-1] != params.w_x.shape[0]:
        raise ShapeError(f"lstm_cell: input width {x.shape[-1]} != {params.w_x.shape[0]}")
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeError("lstm_cell: state width does not match hidden size")
    z = _gate_affine(x, h_prev, params)
    c = _cell_state(z, c_prev, hidden)
    h = _cell_output(z, c, hidden)
    return h, c


def blend(prev: Tensor, new: Tensor, keep_mask: np.ndarray) -> Tensor:
    """prev + m * (new - prev) with a constant 0/1 mask; exact pass-through at m=0."""
    m = np.asarray(keep_mask, dtype=np.float64)

    def backward(g):
        if prev.requires_grad:
            _accum(prev, g * (1.0 - m))
        if new.requires_grad:
            _accum(new, g * m)

    return _make_node(prev.data + m * (new.data - prev.data), (prev, new), backward)


# ---------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over the last axis (plain numpy)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy_rows(
    logits: Tensor, true_ids: np.ndarray
) -> tuple[Tensor, np.ndarray]:
    """Batched fused softmax + cross-entropy.

    ``true_ids`` holds 1-based class ids per row; id 0 marks a masked row,
    which contributes zero loss and zero gradient.  Returns the per-row loss
    tensor and the softmax probabilities as a plain array.
    """
    ids = np.asarray(true_ids, dtype=np.int64)
    ld = logits.data
    if ld.ndim != 2 or ids.shape != (ld.shape[0],):
        raise ShapeError(f"xent: logits {ld.shape} vs ids {ids.shape}")
    d = ld.shape[1]
    if ids.size and ids.max() > d:
        raise VocabularyError(f"true id {int(ids.max())} exceeds {d} classes")
    if ids.size and ids.min() < 0:
        raise VocabularyError(f"negative true id {int(ids.min())}")
    probs = softmax(ld)
    live = ids > 0
    rows = np.nonzero(live)[0]
    loss = np.zeros(ld.shape[0])
    loss[rows] = -np.log(np.maximum(probs[rows, ids[rows] - 1], 1e-300))

    def backward(g):
        if logits.requires_grad:
            dl = probs.copy()
            dl[rows, ids[rows] - 1] -= 1.0
            dl *= (g * live)[:, None]
            _accum(logits, dl)

    return _make_node(loss, (logits,), backward), probs


def softmax_cross_entropy(
    logits: Tensor, true_id: int, mask: bool = True
) -> tuple[Tensor, np.ndarray]:
    """Single-vector cross-entropy; masked calls yield zero loss and gradient."""
    if logits.data.ndim != 1:
        raise ShapeError(f"expected 1-D logits, got {logits.shape}")
    d = logits.shape[0]
    if mask and not 1 <= true_id <= d:
        raise VocabularyError(f"true id {true_id} outside 1..{d}")
    row = reshape(logits, (1, d))
    ids = np.array([true_id if mask else 0], dtype=np.int64)
    loss_rows, probs = softmax_cross_entropy_rows(row, ids)
    return sum_all(loss_rows), probs[0]


# ---------------------------------------------------------------------------
# attention primitives (batch, length, feature)


def stack_steps(steps: Sequence[Tensor]) -> Tensor:
    """Stack L tensors of shape (B, D) into (B, L, D)."""
    steps = list(steps)

    def backward(g):
        for l, s in enumerate(steps):
            if s.requires_grad:
                _accum(s, g[:, l, :])

    return _make_node(np.stack([s.data for s in steps], axis=1), steps, backward)


def attn_scores(query: Tensor, keys: Tensor) -> Tensor:
    """scores[b, l] = query[b] . keys[b, l];  query (B,H), keys (B,L,H)."""
    qd, kd = query.data, keys.data
    if qd.ndim != 2 or kd.ndim != 3 or qd.shape[0] != kd.shape[0] or qd.shape[1] != kd.shape[2]:
        raise ShapeError(f"attn_scores: {qd.shape} vs {kd.shape}")

    def backward(g):
        if query.requires_grad:
            _accum(query, np.einsum("bl,blh->bh", g, kd))
        if keys.requires_grad:
            _accum(keys, np.einsum("bl,bh->blh", g, qd))

    return _make_node(np.einsum("bh,blh->bl", qd, kd), (query, keys), backward)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax over positions where mask is true; masked weights are 0."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != scores.data.shape:
        raise ShapeError(f"masked_softmax: mask {m.shape} vs scores {scores.shape}")
    if not m.any(axis=-1).all():
        raise ShapeError("masked_softmax: a row has no unmasked position")
    s = np.where(m, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    w = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if scores.requires_grad:
            dot = (g * w).sum(axis=-1, keepdims=True)
            _accum(scores, w * (g - dot))

    return _make_node(w, (scores,), backward)


def attn_combine(weights: Tensor, values: Tensor) -> Tensor:
    """context[b] = sum_l weights[b, l] * values[b, l];  values (B,L,D)."""
    wd, vd = weights.data, values.data
    if wd.ndim != 2 or vd.ndim != 3 or wd.shape != vd.shape[:2]:
        raise ShapeError(f"attn_combine: {wd.shape} vs {vd.shape}")

    def backward(g):
        if weights.requires_grad:
            _accum(weights, np.einsum("bd,bld->bl", g, vd))
        if values.requires_grad:
            _accum(values, np.einsum("bl,bd->bld", wd, g))

    return _make_node(np.einsum("bl,bld->bd", wd, vd), (weights, values), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments and hyperparameters; effective lr = base_lr * decay**epoch."""

    base_lr: float
    decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def decay_lr(state: AdamState, epoch: int) -> float:
    if epoch < 0:
        raise NumericError(f"epoch must be >= 0, got {epoch}")
    return state.base_lr * state.decay**epoch


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def adam_step(params: Sequence[Tensor], state: AdamState, epoch: int = 0) -> None:
    """One Adam update with bias correction, in place, using ``p.grad``.

    Parameters with no gradient this step are skipped entirely (their moments
    do not decay), so frozen rows and unused tables stay put.
    """
    lr = decay_lr(state, epoch)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        key = p.name or f"param{i}"
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {key}")
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4
) -> float:
    """Compare analytic gradients of a traced scalar against central differences.

    Returns the max over all parameter entries of |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise NumericError(f"eps outside [1e-6, 1e-3]: {eps}")
    zero_grads(params)
    with Trace() as trace:
        loss = f()
    if not np.isfinite(loss.data):
        raise NumericError("non-finite loss in grad_check")
    trace.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(f().data)
            flat[k] = orig - eps
            down = float(f().data)
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError("non-finite loss in finite-difference probe")
            n = (up - down) / (2.0 * eps)
            av = a.reshape(-1)[k]
            worst = max(worst, abs(av - n) / max(abs(av), abs(n), 1e-8))
    zero_grads(params)
    return worst
