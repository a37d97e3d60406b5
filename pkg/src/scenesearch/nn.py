"""Minimal dense-tensor runtime: tape-recorded ops, reverse-mode gradients, Adam.

Everything is float64.  A forward pass records closures on a :class:`Tape`;
:func:`backward` replays them in exact reverse order, accumulating gradients
additively, so a tensor reused by several ops receives the sum of its
downstream contributions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

BCE_CLAMP = 1e-7

CHECKPOINT_FORMAT_VERSION = 1


class NNError(Exception):
    pass


class ShapeError(NNError):
    pass


class MissingGradientError(NNError):
    pass


class Tensor:
    """A float64 array plus its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of operations for reverse-mode differentiation."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def record(self, out: Tensor, backward_fn) -> Tensor:
        self._records.append((out, backward_fn))
        return out

    def __len__(self):
        return len(self._records)

    def records(self):
        return self._records


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


# ---------------------------------------------------------------------------
# Parameter store and optimizer state
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class ParamStore:
    """Named parameter tensors plus optimizer state."""

    def __init__(self, adam: AdamState | None = None):
        self.params: dict[str, Tensor] = {}
        self.adam = adam if adam is not None else AdamState()

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise NNError(f"duplicate parameter name {name!r}")
        t = Tensor(data)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise NNError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)


def init_params(layer_specs, seed: int, zero_init=()) -> ParamStore:
    """Create a store from ``(name, shape)`` pairs.

    2-D shapes get Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))),
    1-D shapes are zero biases.  Names listed in ``zero_init`` are zeroed
    regardless of rank.  Deterministic for a given seed and spec order.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    zero_init = set(zero_init)
    for name, shape in layer_specs:
        shape = tuple(int(s) for s in shape)
        if name in zero_init:
            store.add(name, np.zeros(shape))
        elif len(shape) == 2:
            out_dim, in_dim = shape
            limit = math.sqrt(6.0 / (in_dim + out_dim))
            store.add(name, rng.uniform(-limit, limit, size=shape))
        elif len(shape) == 1:
            store.add(name, np.zeros(shape))
        else:
            raise ShapeError(f"unsupported parameter rank for {name!r}: {shape}")
    return store


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def linear(tape: Tape, params: ParamStore, name: str, x: Tensor) -> Tensor:
    """y = W x + b with W ``{name}/w`` of shape [out, in] and b ``{name}/b``."""
    w = params[f"{name}/w"]
    b = params[f"{name}/b"]
    if x.data.ndim != 1 or w.data.ndim != 2 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"linear {name!r}: W{w.data.shape} x{x.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"linear {name!r}: bias shape {b.data.shape}")
    out = Tensor(w.data @ x.data + b.data)

    def back(gout):
        _accumulate(w, np.outer(gout, x.data))
        _accumulate(b, gout)
        _accumulate(x, w.data.T @ gout)

    return tape.record(out, back)


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def back(gout):
        _accumulate(x, gout * mask)

    return tape.record(out, back)


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    z = x.data
    out_data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = Tensor(out_data)

    def back(gout):
        _accumulate(x, gout * out_data * (1.0 - out_data))

    return tape.record(out, back)


def elementwise_mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"elementwise_mul: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def back(gout):
        _accumulate(a, gout * b.data)
        _accumulate(b, gout * a.data)

    return tape.record(out, back)


def mean_vectors(tape: Tape, tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("mean_vectors of an empty list")
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ShapeError(f"mean_vectors: {t.data.shape} vs {shape}")
    n = len(tensors)
    out = Tensor(sum(t.data for t in tensors) / n)

    def back(gout):
        g = gout / n
        for t in tensors:
            _accumulate(t, g)

    return tape.record(out, back)


def concat(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError("concat expects 1-D tensors")
    na = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data]))

    def back(gout):
        _accumulate(a, gout[:na])
        _accumulate(b, gout[na:])

    return tape.record(out, back)


def bce_loss(tape: Tape, p: Tensor, label: int) -> Tensor:
    """Binary cross entropy of a scalar probability against a {0,1} label.

    The probability is clamped to [BCE_CLAMP, 1-BCE_CLAMP]; the gradient is
    zero in the clamped region.
    """
    if p.data.size != 1:
        raise ShapeError(f"bce_loss expects a scalar, got shape {p.data.shape}")
    if label not in (0, 1):
        raise NNError(f"label must be 0 or 1, got {label!r}")
    raw = float(p.data.reshape(()))
    clamped = min(max(raw, BCE_CLAMP), 1.0 - BCE_CLAMP)
    value = -(label * math.log(clamped) + (1 - label) * math.log(1.0 - clamped))
    out = Tensor(value)

    def back(gout):
        if BCE_CLAMP <= raw <= 1.0 - BCE_CLAMP:
            gscale = float(np.asarray(gout).reshape(()))
            g = (-label / clamped + (1 - label) / (1.0 - clamped)) * gscale
            _accumulate(p, np.full_like(p.data, g))

    return tape.record(out, back)


def backward(tape: Tape, loss: Tensor, params: ParamStore) -> None:
    """Populate parameter gradients of a scalar loss; parameters untouched.

    Single use per tape: gradients of the given parameters are reset first,
    then every recorded op is replayed in reverse.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    params.zero_grads()
    loss.grad = np.ones_like(loss.data)
    for out, back in reversed(tape.records()):
        if out.grad is None:
            continue
        back(out.grad)


def adam_step(params: ParamStore) -> None:
    """One Adam update over every parameter; increments t and zeroes grads."""
    st = params.adam
    for name, p in params.params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    st.t += 1
    b1t = 1.0 - st.beta1 ** st.t
    b2t = 1.0 - st.beta2 ** st.t
    for name, p in params.params.items():
        g = p.grad
        m = st.m.get(name)
        if m is None:
            m = st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        v = st.v[name]
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * g * g
        m_hat = m / b1t
        v_hat = v / b2t
        p.data -= st.alpha * m_hat / (np.sqrt(v_hat) + st.eps)
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_params(path, store: ParamStore, meta: dict | None = None) -> None:
    """Write a byte-deterministic JSON checkpoint (no optimizer state)."""
    record = {"format_version": CHECKPOINT_FORMAT_VERSION, "meta": meta or {}}
    record["params"] = {
        name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in store.params.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record, separators=(",", ":")))


def load_params(path) -> tuple[ParamStore, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    version = record.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise NNError(f"unsupported checkpoint format version {version!r}")
    store = ParamStore()
    for name, entry in record["params"].items():
        shape = tuple(entry["shape"])
        data = np.array(entry["data"], dtype=np.float64).reshape(shape)
        store.add(name, data)
    return store, record.get("meta", {})
