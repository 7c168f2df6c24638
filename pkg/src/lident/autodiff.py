"""Dense float64 tensors with taped reverse-mode differentiation.

Just enough operations for a character-level conv + BiLSTM classifier:
1-D convolution, temporal max-pooling, an LSTM layer, dense layers, ReLU,
inverted dropout, stabilized softmax cross-entropy, and Adam. Everything is
double precision and deterministic given seeds; no operation reads global
state.

A `Tape` records one forward pass and is consumed by one `backward` call;
build a fresh tape per training step. Tensors wrapped as constants
(`Tensor(array)`) flow through the same operations without recording, which
is how evaluation-mode inference runs tape-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "add",
    "mul",
    "scale",
    "vsum",
    "sum_tensors",
    "relu",
    "sigmoid",
    "tanh",
    "dense",
    "conv1d",
    "maxpool1d",
    "dropout",
    "softmax_cross_entropy",
    "lstm_forward",
    "concat",
    "slice1d",
    "row",
    "stack_rows",
    "adam_step",
]


class Tensor:
    """A float64 ndarray plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "grad", "tape", "requires_grad")

    def __init__(self, data, tape: "Tape | None" = None, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of one forward pass; reversed exactly once by backward."""

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def leaf(self, data) -> Tensor:
        """Wrap an array as a differentiable leaf (no copy)."""
        if self._consumed:
            raise TapeError("tape already consumed by backward(); build a new tape per pass")
        return Tensor(data, tape=self, requires_grad=True)

    def _record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by backward(); build a new tape per pass")
        self._nodes.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into every leaf's `.grad`."""
        if self._consumed:
            raise TapeError("backward() may run only once per tape")
        if loss.tape is not self or not self._nodes:
            raise TapeError("loss was not recorded on this tape; run a forward pass first")
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, backward in reversed(self._nodes):
            if out.grad is not None:
                backward(out.grad)

    def grad(self, leaf: Tensor) -> np.ndarray:
        """Gradient of a leaf after backward; zeros if the loss never used it."""
        if not self._consumed:
            raise TapeError("gradients are only available after backward()")
        return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(inputs: Sequence[Tensor], data: np.ndarray, backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operation inputs were recorded on different tapes")
    requires = any(t.requires_grad for t in inputs)
    if not requires:
        return Tensor(data)
    if tape is None:
        raise TapeError("differentiable tensor without a tape; create leaves via Tape.leaf")
    out = Tensor(data, tape=tape, requires_grad=True)
    tape._record(out, backward)
    return out


# --- elementwise and reduction ops ---------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _result((a, b), a.data + b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * b_data)
        _accumulate(b, g * a_data)

    return _result((a, b), a_data * b_data, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * factor)

    return _result((x,), x.data * factor, backward)


def vsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, float(g)))

    return _result((x,), np.asarray(x.data.sum()), backward)


def sum_tensors(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise ShapeError("sum_tensors needs at least one term")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _result((x,), np.where(mask, x.data, 0.0), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = _stable_sigmoid(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _result((x,), out_data, backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - out_data * out_data))

    return _result((x,), out_data, backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- layers ---------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """weights @ x + bias for a 1-D input."""
    if x.data.ndim != 1 or weights.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("dense expects x[d_in], weights[d_out, d_in], bias[d_out]")
    d_out, d_in = weights.data.shape
    if x.data.shape != (d_in,) or bias.data.shape != (d_out,):
        raise ShapeError(
            f"dense shapes inconsistent: x{x.data.shape}, w{weights.data.shape}, b{bias.data.shape}"
        )
    x_data, w_data = x.data, weights.data

    def backward(g: np.ndarray) -> None:
        _accumulate(weights, np.outer(g, x_data))
        _accumulate(bias, g)
        _accumulate(x, w_data.T @ g)

    return _result((x, weights, bias), w_data @ x_data + bias.data, backward)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution, stride 1: out[t, o] = b[o] + sum_{w,c} x[t+w, c] k[o, w, c]."""
    if x.data.ndim != 2 or kernels.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeError("conv1d expects x[time, in_ch], kernels[out_ch, width, in_ch], bias[out_ch]")
    time, in_ch = x.data.shape
    out_ch, width, k_in = kernels.data.shape
    if k_in != in_ch or bias.data.shape != (out_ch,):
        raise ShapeError(
            f"conv1d shapes inconsistent: x{x.data.shape}, k{kernels.data.shape}, b{bias.data.shape}"
        )
    if time < width:
        raise ShapeError(f"conv1d input length {time} shorter than kernel width {width}")
    out_len = time - width + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (width, in_ch))
    windows = windows.reshape(out_len, width * in_ch)
    kmat = kernels.data.reshape(out_ch, width * in_ch)
    out_data = windows @ kmat.T + bias.data

    def backward(g: np.ndarray) -> None:
        _accumulate(kernels, (g.T @ windows).reshape(out_ch, width, in_ch))
        _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            g_windows = g @ kmat
            gx = np.zeros_like(x.data)
            for w in range(width):
                gx[w : w + out_len, :] += g_windows[:, w * in_ch : (w + 1) * in_ch]
            _accumulate(x, gx)

    return _result((x, kernels, bias), out_data, backward)


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping temporal max over windows of size `pool`; remainder dropped.

    The gradient routes to the first maximal position of each window.
    """
    if x.data.ndim != 2:
        raise ShapeError("maxpool1d expects x[time, ch]")
    if pool < 1:
        raise ShapeError(f"pool size must be >= 1, got {pool}")
    time, ch = x.data.shape
    if time < pool:
        raise ShapeError(f"maxpool1d input length {time} shorter than pool {pool}")
    out_len = time // pool
    view = x.data[: out_len * pool].reshape(out_len, pool, ch)
    out_data = view.max(axis=1)
    argmax = view.argmax(axis=1)  # first max on ties

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gview = gx[: out_len * pool].reshape(out_len, pool, ch)
        np.put_along_axis(gview, argmax[:, None, :], g[:, None, :], axis=1)
        _accumulate(x, gx)

    return _result((x,), out_data, backward)


def dropout(x: Tensor, rate: float, seed: int, train_mode: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate); eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    rng = np.random.default_rng(seed)
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * keep)

    return _result((x,), x.data * keep, backward)


def softmax_cross_entropy(logits: Tensor, target: int) -> tuple[Tensor, np.ndarray]:
    """Stabilized cross-entropy loss against one target class.

    Returns the scalar loss tensor and the softmax probabilities as a plain
    array (the probabilities are a diagnostic, not a differentiable output).
    """
    if logits.data.ndim != 1:
        raise ShapeError("softmax_cross_entropy expects 1-D logits")
    k = logits.data.shape[0]
    if not 0 <= target < k:
        raise IndexError(f"target {target} out of range for {k} classes")
    shifted = logits.data - logits.data.max()
    exps = np.exp(shifted)
    total = exps.sum()
    log_probs = shifted - np.log(total)
    probs = exps / total

    def backward(g: np.ndarray) -> None:
        d = probs.copy()
        d[target] -= 1.0
        _accumulate(logits, d * float(g))

    loss = _result((logits,), np.asarray(-log_probs[target]), backward)
    return loss, probs.copy()


# --- sequence plumbing ----------------------------------------------------


def row(x: Tensor, t: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("row expects a 2-D tensor")

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[t] = g
        _accumulate(x, gx)

    return _result((x,), x.data[t].copy(), backward)


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1:
        raise ShapeError("slice1d expects a 1-D tensor")

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        _accumulate(x, gx)

    return _result((x,), x.data[start:stop].copy(), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("concat expects one or more 1-D tensors")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[start:stop])

    return _result(tuple(parts), np.concatenate([p.data for p in parts]), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    if not rows or any(r.data.ndim != 1 for r in rows):
        raise ShapeError("stack_rows expects one or more 1-D tensors")

    def backward(g: np.ndarray) -> None:
        for t, r in enumerate(rows):
            _accumulate(r, g[t])

    return _result(tuple(rows), np.stack([r.data for r in rows]), backward)


def lstm_forward(x: Tensor, weights: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over x[time, d_in] and return the full hidden sequence.

    Gates are packed row-wise as [input; forget; output; candidate] in
    `weights[4H, d_in + H]` and `bias[4H]`, applied to the concatenation
    [x_t, h_{t-1}]. Initial state is zero. With `reverse`, time is processed
    back-to-front and the output re-reversed, so out[t] always corresponds to
    input position t; the final state of a reversed pass is therefore out[0].
    """
    if x.data.ndim != 2:
        raise ShapeError("lstm_forward expects x[time, d_in]")
    time, d_in = x.data.shape
    four_h, d_cat = weights.data.shape
    if four_h % 4 != 0:
        raise ShapeError(f"LSTM weight rows must be a multiple of 4, got {four_h}")
    hidden = four_h // 4
    if d_cat != d_in + hidden or bias.data.shape != (four_h,):
        raise ShapeError(
            f"LSTM shapes inconsistent: x{x.data.shape}, w{weights.data.shape}, b{bias.data.shape}"
        )
    h = Tensor(np.zeros(hidden))
    c = Tensor(np.zeros(hidden))
    outputs: list[Tensor | None] = [None] * time
    order = range(time - 1, -1, -1) if reverse else range(time)
    for t in order:
        z = dense(concat([row(x, t), h]), weights, bias)
        gate_in = sigmoid(slice1d(z, 0, hidden))
        gate_forget = sigmoid(slice1d(z, hidden, 2 * hidden))
        gate_out = sigmoid(slice1d(z, 2 * hidden, 3 * hidden))
        candidate = tanh(slice1d(z, 3 * hidden, 4 * hidden))
        c = add(mul(gate_forget, c), mul(gate_in, candidate))
        h = mul(gate_out, tanh(c))
        outputs[t] = h
    return stack_rows(outputs)  # type: ignore[arg-type]


# --- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    """Step counter and per-parameter moment estimates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls,
        params: dict[str, np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to `params` in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
