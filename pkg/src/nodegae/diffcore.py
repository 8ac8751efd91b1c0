"""Dense float64 tensors with recorded operations and reverse-mode gradients.

Every trainable part of the package (autoencoder, GNN heads) is built from the
operations in this module. Tensors are immutable after creation except for
their ``grad`` buffer; ``backward`` walks the recorded graph once per call and
accumulates into ``grad``, so calling it twice without zeroing doubles every
gradient exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

LAYERNORM_EPS = 1e-12

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DiffTensor:
    """A dense n-dimensional float64 value grid in a recorded computation.

    ``parents`` and ``backward_fn`` are populated by the op constructors below;
    leaf tensors created by callers have neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    # Small amount of sugar; the module-level functions are the real API.
    def __add__(self, other: "DiffTensor") -> "DiffTensor":
        return add(self, other)

    def __mul__(self, other: "DiffTensor") -> "DiffTensor":
        return mul(self, other)

    def __matmul__(self, other: "DiffTensor") -> "DiffTensor":
        return matmul(self, other)


def constant(data) -> DiffTensor:
    """A tensor that never receives gradients (masks, scales, frozen inputs)."""
    return DiffTensor(data, requires_grad=False)


def parameter(data) -> DiffTensor:
    """A trainable leaf tensor."""
    return DiffTensor(data, requires_grad=True)


def _record(out_data: np.ndarray, op: str, parents: Sequence[DiffTensor],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> DiffTensor:
    out = DiffTensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: cannot broadcast shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, "add", (a, b), backward_fn)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: cannot broadcast shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, "mul", (a, b), backward_fn)


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _record(out, "matmul", (a, b), backward_fn)


def relu(x: DiffTensor) -> DiffTensor:
    out = np.maximum(x.data, 0.0)

    def backward_fn(g):
        return (g * (x.data > 0.0),)

    return _record(out, "relu", (x,), backward_fn)


def gelu(x: DiffTensor) -> DiffTensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _record(out, "gelu", (x,), backward_fn)


def softmax_lastdim(x: DiffTensor) -> DiffTensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _record(out, "softmax_lastdim", (x,), backward_fn)


def layernorm_lastdim(x: DiffTensor) -> DiffTensor:
    """Normalize the last dimension to mean 0 and variance 1 (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    out = (x.data - mu) * inv

    def backward_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gym),)

    return _record(out, "layernorm_lastdim", (x,), backward_fn)


def embedding_lookup(table: DiffTensor, ids) -> DiffTensor:
    """Gather rows of a 2-D table; gradients scatter-add back into the table."""
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(ids)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("embedding_lookup: ids must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"embedding_lookup: ids out of range [0, {table.shape[0]})")
    out = table.data[idx]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, "embedding_lookup", (table,), backward_fn)


def mean_lastaxis(x: DiffTensor) -> DiffTensor:
    if x.ndim < 1 or x.shape[-1] == 0:
        raise DimensionError(f"mean_lastaxis: bad shape {x.shape}")
    n = x.shape[-1]
    out = x.data.mean(axis=-1)

    def backward_fn(g):
        return (np.broadcast_to(g[..., None] / n, x.shape).copy(),)

    return _record(out, "mean_lastaxis", (x,), backward_fn)


def reshape(x: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _record(out, "reshape", (x,), backward_fn)


def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    if not tensors:
        raise DimensionError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _record(out, "concat", tuple(tensors), backward_fn)


def transpose(x: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inv),)

    return _record(out, "transpose", (x,), backward_fn)


def transpose_last2(x: DiffTensor) -> DiffTensor:
    if x.ndim < 2:
        raise DimensionError(f"transpose_last2: need at least 2-D, got {x.shape}")
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def cross_entropy_logits(logits: DiffTensor, targets, ignore_index: int | None = None,
                         reduction: str = "mean") -> DiffTensor:
    """Negative log-likelihood of integer targets under softmax(logits).

    ``logits`` has shape (..., V) and ``targets`` the matching leading shape.
    Rows whose target equals ``ignore_index`` are dropped from both the sum
    and the denominator of the mean.
    """
    if reduction not in ("mean", "sum"):
        raise ContractError(f"cross_entropy_logits: unknown reduction {reduction!r}")
    t = np.asarray(targets)
    if not np.issubdtype(t.dtype, np.integer):
        raise ContractError("cross_entropy_logits: targets must be integers")
    if logits.ndim < 1 or t.shape != logits.shape[:-1]:
        raise DimensionError(
            f"cross_entropy_logits: targets shape {t.shape} does not match logits {logits.shape}")
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tf = t.reshape(-1)
    keep = np.ones(tf.shape, dtype=bool) if ignore_index is None else tf != ignore_index
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ContractError("cross_entropy_logits: no targets left after masking")
    if tf[keep].min() < 0 or tf[keep].max() >= vocab:
        raise ContractError(f"cross_entropy_logits: target id out of range [0, {vocab})")

    m = flat.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=-1))
    rows = np.arange(flat.shape[0])
    nll = lse[keep] - flat[keep, tf[keep]]
    total = nll.sum()
    out = total / n_keep if reduction == "mean" else total

    def backward_fn(g):
        p = np.exp(flat - lse[:, None])
        p[rows[keep], tf[keep]] -= 1.0
        p[~keep] = 0.0
        gs = float(np.asarray(g).reshape(()))
        scale = gs / n_keep if reduction == "mean" else gs
        return (np.ascontiguousarray((p * scale).reshape(logits.shape)),)

    return _record(np.float64(out), "cross_entropy_logits", (logits,), backward_fn)


def l2_normalize_lastdim(x: DiffTensor) -> DiffTensor:
    """Scale rows to unit Euclidean norm; errors on an exactly-zero row."""
    norm = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm < 1e-30):
        raise ContractError("l2_normalize_lastdim: zero-norm row")
    out = x.data / norm

    def backward_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - out * inner) / norm,)

    return _record(out, "l2_normalize_lastdim", (x,), backward_fn)


OP_KINDS = (
    "matmul", "add", "mul", "relu", "gelu", "softmax_lastdim", "layernorm_lastdim",
    "embedding_lookup", "mean_lastaxis", "reshape", "concat", "transpose_last2",
    "cross_entropy_logits",
)


def forward_op(op_kind: str, inputs: Sequence[DiffTensor], **kwargs) -> DiffTensor:
    """Dispatch one recorded operation by name.

    Non-tensor arguments (reshape target, lookup ids, targets) go through
    ``kwargs``. Unknown kinds raise ``ContractError``.
    """
    if op_kind == "matmul":
        return matmul(*inputs)
    if op_kind == "add":
        return add(*inputs)
    if op_kind == "mul":
        return mul(*inputs)
    if op_kind == "relu":
        return relu(*inputs)
    if op_kind == "gelu":
        return gelu(*inputs)
    if op_kind == "softmax_lastdim":
        return softmax_lastdim(*inputs)
    if op_kind == "layernorm_lastdim":
        return layernorm_lastdim(*inputs)
    if op_kind == "embedding_lookup":
        return embedding_lookup(inputs[0], kwargs["ids"])
    if op_kind == "mean_lastaxis":
        return mean_lastaxis(*inputs)
    if op_kind == "reshape":
        return reshape(inputs[0], kwargs["shape"])
    if op_kind == "concat":
        return concat(list(inputs), axis=kwargs.get("axis", 0))
    if op_kind == "transpose_last2":
        return transpose_last2(*inputs)
    if op_kind == "cross_entropy_logits":
        return cross_entropy_logits(inputs[0], kwargs["targets"],
                                    ignore_index=kwargs.get("ignore_index"),
                                    reduction=kwargs.get("reduction", "mean"))
    raise ContractError(f"forward_op: unknown op_kind {op_kind!r}")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
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


def backward(loss: DiffTensor) -> None:
    """Populate ``grad`` of every reachable requires_grad tensor with d(loss)/d(t).

    Adjoints are kept per call, so repeated calls add identical contributions.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + pg
            else:
                adjoint[pid] = pg


# ---------------------------------------------------------------------------
# Adam with linear warmup and global-norm clipping
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Optimizer state for a fixed list of parameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 1e-3
    warmup_steps: int = 0
    clip_norm: float | None = 1.0

    @classmethod
    def for_params(cls, params: Sequence[DiffTensor], base_lr: float,
                   warmup_steps: int = 0, clip_norm: float | None = 1.0,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            beta1=beta1, beta2=beta2, epsilon=epsilon,
            base_lr=base_lr, warmup_steps=warmup_steps, clip_norm=clip_norm,
        )

    @property
    def effective_lr(self) -> float:
        if self.warmup_steps > 0:
            return self.base_lr * min(1.0, self.step_count / self.warmup_steps)
        return self.base_lr


def global_grad_norm(params: Sequence[DiffTensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    return float(np.sqrt(total))


def adam_step(params: Sequence[DiffTensor], state: AdamState) -> None:
    """One in-place Adam update with bias correction; clears grads afterwards."""
    if len(params) != len(state.first_moment):
        raise ContractError(
            f"adam_step: {len(params)} params vs state for {len(state.first_moment)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {i} has no gradient")
        if p.grad.shape != state.first_moment[i].shape:
            raise ContractError(
                f"adam_step: moment shape {state.first_moment[i].shape} does not "
                f"match parameter shape {p.grad.shape}")

    grads = [p.grad for p in params]
    if state.clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
            grads = [g * scale for g in grads]

    state.step_count += 1
    t = state.step_count
    lr = state.effective_lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.grad = None


def zero_grads(params: Iterable[DiffTensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, "np.ndarray | DiffTensor"],
                    meta: dict | None = None) -> None:
    """Write named float arrays plus a JSON metadata block; round-trips bitwise."""
    payload = {}
    for name, value in tensors.items():
        arr = value.data if isinstance(value, DiffTensor) else np.asarray(value)
        payload["t:" + name] = np.ascontiguousarray(arr, dtype=np.float64)
    header = dict(meta or {})
    header["format_version"] = CHECKPOINT_FORMAT_VERSION
    payload["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as bundle:
        if "__meta__" not in bundle:
            raise ContractError(f"checkpoint {path}: missing metadata block")
        meta = json.loads(str(bundle["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ContractError(
                f"checkpoint {path}: unsupported format version {meta.get('format_version')}")
        tensors = {k[2:]: bundle[k].copy() for k in bundle.files if k.startswith("t:")}
    return tensors, meta
