# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Dense float64 tensors on a reverse-mode tape, plus the layers built on them.

A ``Tape`` records every primitive in creation order, so walking the record
backwards is a reverse topological order. Leaves registered with
``Tape.parameter`` receive gradients; constants do not.
"""
import json
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

from qaoa_metaopt import util

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LSTM_GATES = ("i", "f", "o", "c")


class Tensor:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self):
        return f"Tensor(shape={self.shape}, index={self.index})"

    def __float__(self):
        return float(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self, tape=self.tape)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self, tape=self.tape)


@dataclass
class _Node:
    parents: tuple
    backward: object
    name: str = ""


class Tape:
    def __init__(self):
        self._nodes = []
        self._params = {}

    def __len__(self):
        return len(self._nodes)

    def _push(self, value, parents, backward, name=""):
        value = np.asarray(value, dtype=np.float64)
        if __debug__ and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"Non-finite value produced at tape node {len(self._nodes)}")
        self._nodes.append(_Node(tuple(parents), backward, name))
        return Tensor(value, self, len(self._nodes) - 1)

    def parameter(self, name, value):
        if name in self._params:
            raise ValueError(f"Parameter {name!r} is already on the tape")
        tensor = self._push(np.array(value, dtype=np.float64), (), None, name)
        self._params[name] = tensor
        return tensor

    def parameters(self, store):
        """Register every entry of a ParameterStore, returning name → Tensor"""
        return {name: self.parameter(name, value) for name, value in store.items()}

    def constant(self, value):
        return self._push(np.array(value, dtype=np.float64), (), None)

    def record(self, value, parents, backward):
        """Record a primitive whose ``backward(grad)`` returns one gradient per parent"""
        return self._push(value, [p.index for p in parents], backward)

    def backward(self, loss):
        """Gradients of a scalar ``loss`` for every parameter on the tape"""
        if loss.tape is not self:
            raise ValueError("Loss was recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError(f"Loss must be a scalar, got shape {loss.shape}")

        grads = [None] * len(self._nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for index in range(loss.index, -1, -1):
            grad = grads[index]
            node = self._nodes[index]
            if grad is None or node.backward is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward(grad)):
                if parent_grad is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = parent_grad
                else:
                    grads[parent] = grads[parent] + parent_grad

        out = {}
        for name, tensor in self._params.items():
            grad = grads[tensor.index]
            out[name] = np.zeros_like(tensor.value) if grad is None else np.asarray(grad)
        return out


def _tape_of(*items, tape=None):
    for item in items:
        if isinstance(item, Tensor):
            return item.tape
    if tape is None:
        raise ValueError("At least one operand must be a Tensor")
    return tape


def _lift(tape, item):
    return item if isinstance(item, Tensor) else tape.constant(item)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b, tape=None):
    tape = _tape_of(a, b, tape=tape)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b, tape=None):
    tape = _tape_of(a, b, tape=tape)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a, b, tape=None):
    tape = _tape_of(a, b, tape=tape)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, factor):
    return a.tape.record(a.value * factor, (a,), lambda g: (g * factor,))


def matmul(a, b, tape=None):
    tape = _tape_of(a, b, tape=tape)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D and 2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"Shape mismatch in matmul: {av.shape} @ {bv.shape}")

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return tape.record(av @ bv, (a, b), backward)


def sigmoid(a):
    out = np.exp(-np.logaddexp(0.0, -a.value))
    return a.tape.record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.value)
    return a.tape.record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    mask = a.value > 0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def total(a):
    shape = a.shape
    return a.tape.record(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a, axis=None):
    shape = a.shape
    count = a.value.size if axis is None else shape[axis]
    if count == 0:
        raise ValueError("Cannot take the mean of an empty axis")

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return a.tape.record(a.value.mean(axis=axis), (a,), backward)


def concat(tensors, axis=-1):
    tape = _tape_of(*tensors)
    tensors = [_lift(tape, t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    return tape.record(value, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def custom(tape, value, parents, backward):
    """Record an externally differentiated primitive"""
    return tape.record(value, parents, backward)


class ParameterStore(dict):
    """Named float64 arrays with fixed shapes"""

    def __init__(self, *args, **kwargs):
        super().__init__()
        for name, value in dict(*args, **kwargs).items():
            self[name] = value

    def __setitem__(self, name, value):
        value = np.array(value, dtype=np.float64)
        if name in self and self[name].shape != value.shape:
            raise ValueError(
                f"Shape of {name!r} is fixed at {self[name].shape}, got {value.shape}"
            )
        super().__setitem__(name, value)

    def copy(self):
        out = ParameterStore()
        for name, value in self.items():
            out[name] = value.copy()
        return out

    def shapes(self):
        return {name: value.shape for name, value in self.items()}

    def num_parameters(self):
        return int(sum(value.size for value in self.values()))


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store, name, fan_in, fan_out, rng, bias=True):
    bound = 1.0 / np.sqrt(fan_in)
    store[f"{name}.W"] = _uniform(rng, bound, (fan_out, fan_in))
    if bias:
        store[f"{name}.b"] = np.zeros(fan_out)
    return store


def init_lstm(store, prefix, input_size, hidden, rng):
    """Gate matrices uniform in ±1/√hidden, zero biases, forget bias 1"""
    bound = 1.0 / np.sqrt(hidden)
    for gate in LSTM_GATES:
        store[f"{prefix}.W_{gate}"] = _uniform(rng, bound, (hidden, input_size))
        store[f"{prefix}.U_{gate}"] = _uniform(rng, bound, (hidden, hidden))
        store[f"{prefix}.b_{gate}"] = np.ones(hidden) if gate == "f" else np.zeros(hidden)
    return store


def init_mlp(store, prefix, sizes, rng):
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{prefix}.{layer}", fan_in, fan_out, rng)
    return store


def linear(x, weights, name):
    """x Wᵀ + b for a row vector or a batch of rows"""
    out = matmul(x, _transpose(weights[f"{name}.W"]))
    bias = weights.get(f"{name}.b")
    return out if bias is None else out + bias


def _transpose(w):
    return w.tape.record(w.value.T, (w,), lambda g: (g.T,))


def lstm_cell_forward(z, h_prev, s_prev, weights, prefix="lstm"):
    """One LSTM step.

    Returns the new hidden and cell states and a cache of the gate
    activations.
    """
    hidden = weights[f"{prefix}.U_i"].shape[0]
    if h_prev.shape != (hidden,) or s_prev.shape != (hidden,):
        raise ValueError(
            f"Hidden/cell state shapes {h_prev.shape}, {s_prev.shape} do not match hidden={hidden}"
        )
    if z.shape != (weights[f"{prefix}.W_i"].shape[1],):
        raise ValueError(f"Input shape {z.shape} does not match the LSTM input size")

    pre = {
        gate: weights[f"{prefix}.W_{gate}"] @ z
        + weights[f"{prefix}.U_{gate}"] @ h_prev
        + weights[f"{prefix}.b_{gate}"]
        for gate in LSTM_GATES
    }
    i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    candidate = tanh(pre["c"])
    s = f * s_prev + i * candidate
    h = o * tanh(s)
    return h, s, dict(i=i, f=f, o=o, candidate=candidate)


def mlp_forward(x, weights, prefix, layers):
    """Affine layers with ReLU between them and an identity output"""
    for layer in range(layers):
        x = linear(x, weights, f"{prefix}.{layer}")
        if layer < layers - 1:
            x = relu(x)
    return x


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_step(params, grads, state, lr):
    """Update ``params`` in place with bias-corrected Adam"""
    for name, grad in grads.items():
        if name not in params:
            raise ValueError(f"Gradient for unknown parameter {name!r}")
        if params[name].shape != np.shape(grad):
            raise ValueError(
                f"Gradient shape {np.shape(grad)} does not match {name!r} {params[name].shape}"
            )
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def mean_gradients(grad_list):
    """Average gradient maps in list order"""
    if not grad_list:
        raise ValueError("No gradients to average")
    out = {name: np.zeros_like(g) for name, g in grad_list[0].items()}
    for grads in grad_list:
        for name, g in grads.items():
            out[name] = out[name] + g
    return {name: g / len(grad_list) for name, g in out.items()}


def save_checkpoint(store, path, global_step=0, config=None):
    """Write little-endian float64 blobs and a JSON manifest next to them.

    ``path`` names the manifest; the blob file shares its stem with a ``.bin``
    suffix.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = path.with_suffix(".bin")
    config = config or {}
    entries = []
    offset = 0
    with open(blob_path, "wb") as f:
        for name in sorted(store):
            data = np.ascontiguousarray(store[name], dtype="<f8").tobytes()
            f.write(data)
            entries.append(
                dict(name=name, shape=list(store[name].shape), offset=offset, byte_len=len(data))
            )
            offset += len(data)
    manifest = dict(
        blob=blob_path.name,
        global_step=int(global_step),
        config=config,
        config_hash=util.config_hash(config),
        tensors=entries,
    )
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint``.

    Returns
    -------
    tuple
        The ParameterStore and the manifest dict
    """
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    blob = (path.parent / manifest["blob"]).read_bytes()
    store = ParameterStore()
    for entry in manifest["tensors"]:
        chunk = blob[entry["offset"] : entry["offset"] + entry["byte_len"]]
        store[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"])
    if util.config_hash(manifest["config"]) != manifest["config_hash"]:
        raise ValueError(f"Checkpoint {path} has a corrupted config")
    return store, manifest
