"""Small from-scratch network toolkit: LSTM cells, dense layers, exact BPTT.

Everything is float64 numpy. Parameters live in dataclass containers that
expose a flat ``name -> array`` view through :meth:`ParamTree.tensors`, which
is what the optimizer, the gradient checker and the checkpoint writer consume.

Shapes follow the batch-first convention: a vector input is ``(features,)``
or ``(batch, features)``; sequences are ``(batch, steps, features)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

DTYPE = np.float64
ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")
INIT_SCALE = 0.08


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class StateError(RuntimeError):
    """Raised when backward is requested without a recorded forward pass."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``a`` and output ``y``."""
    if name == "linear":
        return np.ones_like(a)
    if name == "relu":
        return (a > 0.0).astype(DTYPE)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    raise ValueError(f"unknown activation {name!r}")


class ParamTree:
    """Mixin for dataclasses whose array fields are trainable tensors.

    Nested ``ParamTree`` fields are flattened with dotted names, e.g.
    ``lstm1.w_input``. Non-array fields (activation names) are carried along
    untouched by :meth:`replace_tensors`.
    """

    def tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ParamTree):
                out.update(value.tensors(prefix + f.name + "."))
            elif isinstance(value, np.ndarray):
                out[prefix + f.name] = value
        return out

    def replace_tensors(self, mapping: dict[str, np.ndarray], prefix: str = ""):
        changes = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ParamTree):
                changes[f.name] = value.replace_tensors(mapping, prefix + f.name + ".")
            elif isinstance(value, np.ndarray):
                new = np.asarray(mapping[prefix + f.name], dtype=DTYPE)
                if new.shape != value.shape:
                    raise ShapeError(
                        f"{prefix + f.name}: expected shape {value.shape}, got {new.shape}"
                    )
                changes[f.name] = new
        return dataclasses.replace(self, **changes)

    def map_tensors(self, fn: Callable[[np.ndarray], np.ndarray]):
        return self.replace_tensors({k: fn(v) for k, v in self.tensors().items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors().items()}


@dataclass
class DenseParams(ParamTree):
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"dense weight {self.weight.shape} incompatible with bias {self.bias.shape}"
            )

    @property
    def in_size(self) -> int:
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        return self.weight.shape[0]


@dataclass
class LstmCellParams(ParamTree):
    """Gate weights act on the concatenation ``[h_prev, x]``."""

    w_input: np.ndarray
    w_forget: np.ndarray
    w_output: np.ndarray
    w_candidate: np.ndarray
    b_input: np.ndarray
    b_forget: np.ndarray
    b_output: np.ndarray
    b_candidate: np.ndarray

    def __post_init__(self):
        shape = self.w_input.shape
        if len(shape) != 2 or shape[1] <= shape[0]:
            raise ShapeError(f"LSTM weight must be hidden x (hidden+input), got {shape}")
        for w in (self.w_forget, self.w_output, self.w_candidate):
            if w.shape != shape:
                raise ShapeError("LSTM gate weights must share one shape")
        for b in (self.b_input, self.b_forget, self.b_output, self.b_candidate):
            if b.shape != (shape[0],):
                raise ShapeError("LSTM biases must match the hidden size")

    @property
    def hidden_size(self) -> int:
        return self.w_input.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[1] - self.w_input.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Gate weights stacked as (4H, H+I) in i, f, o, c order."""
        w = np.concatenate([self.w_input, self.w_forget, self.w_output, self.w_candidate])
        b = np.concatenate([self.b_input, self.b_forget, self.b_output, self.b_candidate])
        return w, b

    def stacked_t(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(w, w.T, b)`` with both weight layouts C-contiguous."""
        w, b = self.stacked()
        return w, np.ascontiguousarray(w.T), b


def split_stacked_grads(dw: np.ndarray, db: np.ndarray, prefix: str) -> dict[str, np.ndarray]:
    h = db.shape[0] // 4
    out = {}
    for k, gate in enumerate(("input", "forget", "output", "candidate")):
        out[f"{prefix}w_{gate}"] = dw[k * h:(k + 1) * h]
        out[f"{prefix}b_{gate}"] = db[k * h:(k + 1) * h]
    return out


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def init_dense(rng: np.random.Generator, in_size: int, out_size: int,
               activation: str = "linear", scale: float = INIT_SCALE) -> DenseParams:
    return DenseParams(
        weight=rng.uniform(-scale, scale, size=(out_size, in_size)),
        bias=rng.uniform(-scale, scale, size=out_size),
        activation=activation,
    )


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int,
              scale: float = INIT_SCALE) -> LstmCellParams:
    shape = (hidden_size, hidden_size + input_size)
    ws = [rng.uniform(-scale, scale, size=shape) for _ in range(4)]
    bs = [rng.uniform(-scale, scale, size=hidden_size) for _ in range(4)]
    return LstmCellParams(*ws, *bs)


def zero_state(hidden_size: int, batch: int | None = None) -> LstmState:
    shape = (hidden_size,) if batch is None else (batch, hidden_size)
    return LstmState(np.zeros(shape, DTYPE), np.zeros(shape, DTYPE))


# ----------------------------------------------------------------------------
# single-step primitives with caches


def lstm_cell_forward(w_t: np.ndarray, b: np.ndarray, x: np.ndarray,
                      h_prev: np.ndarray, c_prev: np.ndarray):
    """One LSTM step on a batch.

    ``w_t`` is the *transposed* stacked gate weight, shape (H+I, 4H), ideally
    C-contiguous; ``b`` the stacked bias. Returns ``(h, c, cache)``.
    """
    hidden = b.shape[0] // 4
    z = np.concatenate([h_prev, x], axis=-1)
    a = z @ w_t + b
    i = sigmoid(a[..., :hidden])
    f = sigmoid(a[..., hidden:2 * hidden])
    o = sigmoid(a[..., 2 * hidden:3 * hidden])
    g = np.tanh(a[..., 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (z, i, f, o, g, c_prev, tc)


def lstm_cell_backward(w: np.ndarray, cache, dh: np.ndarray, dc: np.ndarray):
    """Backprop one step. Returns ``(da, dx, dh_prev, dc_prev)``.

    ``da`` is the gradient at the stacked gate pre-activations; the weight
    gradient is ``da.T @ z`` and is left to the caller so it can be batched
    over time.
    """
    z, i, f, o, g, c_prev, tc = cache
    hidden = i.shape[-1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    da = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
        axis=-1,
    )
    dz = da @ w
    return da, dz[..., hidden:], dz[..., :hidden], dc_prev


def dense_cached(params: DenseParams, x: np.ndarray):
    a = x @ params.weight.T + params.bias
    y = activate(params.activation, a)
    return y, (x, a, y)


def dense_backward(params: DenseParams, cache, dy: np.ndarray, need_param_grads: bool = True):
    """Returns ``(grads, dx)``; ``grads`` is empty when not requested."""
    x, a, y = cache
    da = dy * activation_grad(params.activation, a, y)
    grads = {}
    if need_param_grads:
        x2 = x.reshape(-1, x.shape[-1])
        da2 = da.reshape(-1, da.shape[-1])
        grads = {"weight": da2.T @ x2, "bias": da2.sum(axis=0)}
    return grads, da @ params.weight


# ----------------------------------------------------------------------------
# public forward operations


def _check_lstm_inputs(params: LstmCellParams, x: np.ndarray, prev: LstmState) -> None:
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"LSTM expects input size {params.input_size}, got {x.shape[-1]}")
    if prev.h.shape[-1] != params.hidden_size or prev.c.shape != prev.h.shape:
        raise ShapeError(
            f"LSTM state must have hidden size {params.hidden_size}, "
            f"got h{prev.h.shape} c{prev.c.shape}"
        )


def lstm_step(params: LstmCellParams, x: np.ndarray, prev: LstmState) -> LstmState:
    x = np.asarray(x, dtype=DTYPE)
    _check_lstm_inputs(params, x, prev)
    _, w_t, b = params.stacked_t()
    h, c, _ = lstm_cell_forward(w_t, b, x, prev.h, prev.c)
    return LstmState(h, c)


def lstm_sequence_forward(params: LstmCellParams, inputs: Iterable[np.ndarray],
                          init: LstmState | None = None) -> list[LstmState]:
    """Run one cell over a sequence; state t is computed from state t-1."""
    inputs = [np.asarray(x, dtype=DTYPE) for x in inputs]
    if not inputs:
        raise ValueError("input sequence is empty")
    if init is None:
        batch = None if inputs[0].ndim == 1 else inputs[0].shape[0]
        init = zero_state(params.hidden_size, batch)
    _check_lstm_inputs(params, inputs[0], init)
    _, w_t, b = params.stacked_t()
    states = []
    h, c = init.h, init.c
    for x in inputs:
        if x.shape[-1] != params.input_size:
            raise ShapeError(f"LSTM expects input size {params.input_size}, got {x.shape[-1]}")
        h, c, _ = lstm_cell_forward(w_t, b, x, h, c)
        states.append(LstmState(h, c))
    return states


def dense_forward(params: DenseParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != params.in_size:
        raise ShapeError(f"dense layer expects {params.in_size} inputs, got {x.shape[-1]}")
    return dense_cached(params, x)[0]


# ----------------------------------------------------------------------------
# recorded layers


class DenseLayer:
    """A dense layer that records its last forward pass for :func:`backward`."""

    def __init__(self, params: DenseParams):
        self.params = params
        self._tape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1] != self.params.in_size:
            raise ShapeError(f"dense layer expects {self.params.in_size} inputs, got {x.shape[-1]}")
        y, self._tape = dense_cached(self.params, x)
        return y

    def backward(self, dout: np.ndarray, need_param_grads: bool = True):
        if self._tape is None:
            raise StateError("backward called before forward")
        return dense_backward(self.params, self._tape, np.asarray(dout, DTYPE), need_param_grads)


class LstmLayer:
    """An LSTM cell unrolled over a whole sequence, starting from zero state.

    ``forward`` takes ``(batch, steps, input)`` and returns the hidden outputs
    ``(batch, steps, hidden)``; ``backward`` takes the gradient at those
    outputs and runs full, untruncated backprop through time.
    """

    def __init__(self, params: LstmCellParams):
        self.params = params
        self._tape = None

    def forward(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=DTYPE)
        if xs.ndim != 3 or xs.shape[1] == 0:
            raise ValueError("expected a non-empty (batch, steps, features) array")
        if xs.shape[-1] != self.params.input_size:
            raise ShapeError(f"LSTM expects input size {self.params.input_size}, got {xs.shape[-1]}")
        w, w_t, b = self.params.stacked_t()
        batch, steps, _ = xs.shape
        state = zero_state(self.params.hidden_size, batch)
        h, c = state.h, state.c
        hs = np.empty((batch, steps, self.params.hidden_size), DTYPE)
        caches = []
        for t in range(steps):
            h, c, cache = lstm_cell_forward(w_t, b, xs[:, t], h, c)
            hs[:, t] = h
            caches.append(cache)
        self._tape = (w, caches)
        return hs

    def backward(self, dhs: np.ndarray, need_param_grads: bool = True):
        if self._tape is None:
            raise StateError("backward called before forward")
        w, caches = self._tape
        batch, steps, hidden = dhs.shape
        dxs = np.empty((batch, steps, self.params.input_size), DTYPE)
        das = np.empty((steps, batch, 4 * hidden), DTYPE)
        dh_next = np.zeros((batch, hidden), DTYPE)
        dc_next = np.zeros((batch, hidden), DTYPE)
        for t in reversed(range(steps)):
            da, dx, dh_next, dc_next = lstm_cell_backward(w, caches[t], dhs[:, t] + dh_next, dc_next)
            das[t] = da
            dxs[:, t] = dx
        grads = {}
        if need_param_grads:
            zs = np.stack([cache[0] for cache in caches])
            dw = das.reshape(-1, 4 * hidden).T @ zs.reshape(steps * batch, -1)
            grads = split_stacked_grads(dw, das.sum(axis=(0, 1)), "")
        return grads, dxs


def backward(network, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the loss w.r.t. every parameter of ``network``.

    ``dout`` is the gradient of the loss at the network output of the most
    recent recorded forward pass.
    """
    grads, _ = network.backward(dout)
    return grads


# ----------------------------------------------------------------------------
# optimisation


def sgd_update(params: ParamTree, grads: dict[str, np.ndarray], lr: float) -> ParamTree:
    """Plain gradient step ``theta - lr * grad``; returns a new container."""
    if lr < 0 or not np.isfinite(lr):
        raise ValueError(f"learning rate must be a finite non-negative number, got {lr}")
    current = params.tensors()
    missing = set(current) - set(grads)
    if missing:
        raise ShapeError(f"missing gradients for {sorted(missing)}")
    return params.replace_tensors({k: v - lr * grads[k] for k, v in current.items()})


def lr_schedule(epoch: int, initial: float = 0.1, decay: float = 0.995) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return initial * decay ** epoch


# ----------------------------------------------------------------------------
# gradient checking


def numerical_gradient(loss_fn: Callable[[ParamTree], float], params: ParamTree,
                       eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of ``loss_fn`` for every parameter entry."""
    base = {k: v.copy() for k, v in params.tensors().items()}
    out = {}
    for name, value in base.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + eps
            up = loss_fn(params.replace_tensors(base))
            flat[idx] = old - eps
            down = loss_fn(params.replace_tensors(base))
            flat[idx] = old
            grad.reshape(-1)[idx] = (up - down) / (2 * eps)
        out[name] = grad
    return out


def max_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                       floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over every entry of every tensor."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
