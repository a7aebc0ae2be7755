"""Dense float64 tensors with reverse-mode differentiation for the ConvNet layer set.

Feature maps use the layout ``[batch, channels, electrodes, time]``. Operations record
themselves on the thread's active :class:`ComputationTape` when any input requires a
gradient; with no active tape they only compute (evaluation mode).
"""

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from eeg_engine.errors import (
    DimensionError,
    LabelError,
    NumericalError,
    TooShortError,
    UninitializedStatisticsError,
)

DTYPE = np.float64
SAFE_LOG_FLOOR = 1e-6
BATCH_NORM_EPSILON = 1e-5
BATCH_NORM_MOMENTUM = 0.1


class Tensor:
    """A float64 array that may take part in gradient computation."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape: Optional["ComputationTape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with its gradient and Adam moment accumulators."""

    __slots__ = ("adam_m", "adam_v", "step_count", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0
        self.name = name

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return self.grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape}, step={self.step_count})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeRecord:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_active = threading.local()


class ComputationTape:
    """Ordered record of operations, replayed in reverse by :func:`backward`.

    Use as a context manager to make the tape active for the current thread.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._previous: List[Optional["ComputationTape"]] = []

    def __enter__(self) -> "ComputationTape":
        self._previous.append(getattr(_active, "tape", None))
        _active.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active.tape = self._previous.pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


def active_tape() -> Optional[ComputationTape]:
    return getattr(_active, "tape", None)


class no_grad:
    """Suspend recording on the current thread."""

    def __enter__(self) -> "no_grad":
        self._previous = active_tape()
        _active.tape = None
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active.tape = self._previous


def _emit(name: str, data: np.ndarray, inputs: Sequence[Optional[Tensor]], backward: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{name} produced non-finite values")
    out = Tensor(data)
    tape = active_tape()
    present = tuple(t for t in inputs if t is not None)
    if tape is not None and any(t.requires_grad for t in present):
        out.requires_grad = True
        out.tape = tape

        def rule(grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            grads = backward(grad)
            return [g for t, g in zip(inputs, grads) if t is not None]

        tape.records.append(TapeRecord(name, present, out, rule))
    return out


def _check_4d(name: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} expects [batch, channels, electrodes, time], got {x.shape}")


# Convolutions


def conv_temporal(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None, stride_t: int = 1) -> Tensor:
    """Valid convolution along time, shared across electrodes.

    ``x`` is ``[B, C_in, E, T]``, ``kernels`` is ``[C_out, C_in, 1, K]``.
    """
    _check_4d("conv_temporal", x)
    if kernels.ndim != 4 or kernels.shape[2] != 1 or kernels.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv_temporal kernels {kernels.shape} do not fit input {x.shape}"
        )
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv_temporal bias {bias.shape} for {kernels.shape[0]} filters")
    if stride_t < 1:
        raise DimensionError(f"conv_temporal stride must be positive, got {stride_t}")
    n_out, _, _, k = kernels.shape
    time = x.shape[3]
    if k > time:
        raise TooShortError(f"conv_temporal kernel length {k} exceeds time extent {time}")

    windows = sliding_window_view(x.data, k, axis=3)[:, :, :, ::stride_t, :]
    w2 = kernels.data[:, :, 0, :]
    # [B, E, T_out, C_out] -> [B, C_out, E, T_out]
    out = np.tensordot(windows, w2, axes=([1, 4], [1, 2])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    t_out = windows.shape[3]

    def backward(grad):
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, :]
        grad_b = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        grad_x = None
        if x.requires_grad:
            # [B, E, T_out, C_in, K]
            spread = np.tensordot(grad, w2, axes=([1], [0])).transpose(0, 3, 1, 2, 4)
            grad_x = np.zeros_like(x.data)
            span = stride_t * (t_out - 1) + 1
            for tap in range(k):
                grad_x[:, :, :, tap:tap + span:stride_t] += spread[..., tap]
        return grad_x, grad_w, grad_b

    return _emit("conv_temporal", np.ascontiguousarray(out), (x, kernels, bias), backward)


def conv_spatial(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None, stride_t: int = 1) -> Tensor:
    """Weighted combination over all electrodes and input channels.

    ``kernels`` is ``[C_out, C_in, E, 1]``; the electrode axis collapses to 1. ``stride_t``
    subsamples time.
    """
    _check_4d("conv_spatial", x)
    if kernels.ndim != 4 or kernels.shape[3] != 1 or kernels.shape[1] != x.shape[1]:
        raise DimensionError(f"conv_spatial kernels {kernels.shape} do not fit input {x.shape}")
    if kernels.shape[2] != x.shape[2]:
        raise DimensionError(
            f"conv_spatial kernel spans {kernels.shape[2]} electrodes, input has {x.shape[2]}"
        )
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv_spatial bias {bias.shape} for {kernels.shape[0]} filters")
    if stride_t < 1:
        raise DimensionError(f"conv_spatial stride must be positive, got {stride_t}")

    xs = x.data[:, :, :, ::stride_t]
    w3 = kernels.data[:, :, :, 0]
    # [C_out, B, T_out] -> [B, C_out, 1, T_out]
    out = np.tensordot(w3, xs, axes=([1, 2], [1, 2])).transpose(1, 0, 2)[:, :, None, :]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(grad):
        g = grad[:, :, 0, :]
        grad_w = np.tensordot(g, xs, axes=([0, 2], [0, 3]))[..., None]
        grad_b = g.sum(axis=(0, 2)) if bias is not None else None
        grad_x = None
        if x.requires_grad:
            grad_x = np.zeros_like(x.data)
            grad_x[:, :, :, ::stride_t] = np.tensordot(w3, g, axes=([0], [1])).transpose(2, 0, 1, 3)
        return grad_x, grad_w, grad_b

    return _emit("conv_spatial", np.ascontiguousarray(out), (x, kernels, bias), backward)


# Normalization


class RunningStats:
    """Per-channel running mean/variance of a batch-norm layer."""

    def __init__(self, n_channels: int, momentum: float = BATCH_NORM_MOMENTUM):
        self.mean = np.zeros(n_channels, dtype=DTYPE)
        self.var = np.ones(n_channels, dtype=DTYPE)
        self.momentum = momentum
        self.initialized = False

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray) -> None:
        if not self.initialized:
            self.mean = batch_mean.copy()
            self.var = batch_var_unbiased.copy()
            self.initialized = True
            return
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var_unbiased


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    training: bool,
    eps: float = BATCH_NORM_EPSILON,
) -> Tensor:
    """Normalize each channel over batch, electrodes and time."""
    _check_4d("batch_norm", x)
    n_channels = x.shape[1]
    if gamma.shape != (n_channels,) or beta.shape != (n_channels,):
        raise DimensionError(f"batch_norm affine {gamma.shape}/{beta.shape} for {n_channels} channels")
    axes = (0, 2, 3)
    count = x.data.size // n_channels

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        stats.update(mean, unbiased)
    else:
        if not stats.initialized:
            raise UninitializedStatisticsError("batch_norm evaluated before any training batch")
        mean, var = stats.mean, stats.var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def backward(grad):
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_x = None
        if x.requires_grad:
            g_hat = grad * gamma.data[None, :, None, None]
            if training:
                sum_g = g_hat.sum(axis=axes)[None, :, None, None]
                sum_gx = (g_hat * x_hat).sum(axis=axes)[None, :, None, None]
                grad_x = (inv_std[None, :, None, None] / count) * (count * g_hat - sum_g - x_hat * sum_gx)
            else:
                grad_x = g_hat * inv_std[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return _emit("batch_norm", out, (x, gamma, beta), backward)


# Elementwise nonlinearities


def elu(x: Tensor) -> Tensor:
    positive = x.data > 0
    exp_part = np.exp(np.minimum(x.data, 0.0))
    out = np.where(positive, x.data, exp_part - 1.0)

    def backward(grad):
        return (grad * np.where(positive, 1.0, exp_part),)

    return _emit("elu", out, (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(grad):
        return (2.0 * x.data * grad,)

    return _emit("square", x.data * x.data, (x,), backward)


def safe_log(x: Tensor, floor: float = SAFE_LOG_FLOOR) -> Tensor:
    """ln(max(x, floor)); the gradient is zero where the floor is active."""
    clamped = np.maximum(x.data, floor)
    above = x.data > floor

    def backward(grad):
        return (np.where(above, grad / clamped, 0.0),)

    return _emit("safe_log", np.log(clamped), (x,), backward)


def identity(x: Tensor) -> Tensor:
    return x


# Pooling


def _pool_windows(name: str, x: Tensor, pool_len: int, stride_t: int) -> np.ndarray:
    _check_4d(name, x)
    if pool_len < 1 or stride_t < 1:
        raise DimensionError(f"{name} needs positive length and stride, got {pool_len}/{stride_t}")
    if pool_len > x.shape[3]:
        raise TooShortError(f"{name} length {pool_len} exceeds time extent {x.shape[3]}")
    return sliding_window_view(x.data, pool_len, axis=3)[:, :, :, ::stride_t, :]


def max_pool_t(x: Tensor, pool_len: int, stride_t: int) -> Tensor:
    windows = _pool_windows("max_pool_t", x, pool_len, stride_t)
    # argmax picks the first maximal index on ties
    winner = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
    t_out = out.shape[3]

    def backward(grad):
        grad_x = np.zeros_like(x.data)
        span = stride_t * (t_out - 1) + 1
        for tap in range(pool_len):
            grad_x[:, :, :, tap:tap + span:stride_t] += np.where(winner == tap, grad, 0.0)
        return (grad_x,)

    return _emit("max_pool_t", np.ascontiguousarray(out), (x,), backward)


def mean_pool_t(x: Tensor, pool_len: int, stride_t: int) -> Tensor:
    windows = _pool_windows("mean_pool_t", x, pool_len, stride_t)
    out = windows.mean(axis=-1)
    t_out = out.shape[3]

    def backward(grad):
        grad_x = np.zeros_like(x.data)
        share = grad / pool_len
        span = stride_t * (t_out - 1) + 1
        for tap in range(pool_len):
            grad_x[:, :, :, tap:tap + span:stride_t] += share
        return (grad_x,)

    return _emit("mean_pool_t", out, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or for p == 0."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(grad):
        return (grad * keep,)

    return _emit("dropout", x.data * keep, (x,), backward)


# Classification head


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(grad):
        return (grad.reshape(shape),)

    return _emit("flatten", x.data.reshape(shape[0], -1), (x,), backward)


def dense(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x`` is ``[batch, features]``, ``weights`` is ``[out, features]``."""
    if x.ndim != 2 or weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise DimensionError(f"dense weights {weights.shape} do not fit input {x.shape}")
    if bias is not None and bias.shape != (weights.shape[0],):
        raise DimensionError(f"dense bias {bias.shape} for {weights.shape[0]} outputs")
    out = x.data @ weights.data.T
    if bias is not None:
        out = out + bias.data[None, :]

    def backward(grad):
        grad_x = grad @ weights.data if x.requires_grad else None
        grad_b = grad.sum(axis=0) if bias is not None else None
        return grad_x, grad.T @ x.data, grad_b

    return _emit("dense", out, (x, weights, bias), backward)


def log_softmax(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"log_softmax expects [batch, classes], got {x.shape}")
    out = x.data - logsumexp(x.data, axis=1, keepdims=True)

    def backward(grad):
        return (grad - np.exp(out) * grad.sum(axis=1, keepdims=True),)

    return _emit("log_softmax", out, (x,), backward)


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    labels = np.asarray(labels)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise DimensionError(f"nll_loss labels {labels.shape} for log-probs {log_probs.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[1]):
        raise LabelError(f"labels must lie in [0, {log_probs.shape[1] - 1}]")
    labels = labels.astype(np.intp)
    rows = np.arange(labels.size)
    batch = labels.size
    loss = -log_probs.data[rows, labels].mean()

    def backward(grad):
        grad_lp = np.zeros_like(log_probs.data)
        grad_lp[rows, labels] = -float(grad) / batch
        return (grad_lp,)

    return _emit("nll_loss", np.asarray(loss), (log_probs,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(grad):
        return (np.full(x.shape, float(grad)),)

    return _emit("sum_all", np.asarray(x.data.sum()), (x,), backward)


# Gradients and optimization


def backward(loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> None:
    """Propagate dLoss into every reachable tensor and clear the tape.

    Gradients of ``parameters`` and of every parameter seen on the tape are reset first, so
    parameters the loss does not depend on end up with zero gradients.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise DimensionError("loss was not recorded on a computation tape")

    touched = {id(p): p for p in parameters or ()}
    for record in tape.records:
        for t in record.inputs:
            if isinstance(t, Parameter):
                touched[id(t)] = t
    for param in touched.values():
        param.zero_grad()

    loss.grad = np.ones_like(loss.data)
    for record in reversed(tape.records):
        grad = record.output.grad
        if grad is None:
            continue
        for t, g in zip(record.inputs, record.backward(grad)):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(g, dtype=DTYPE)
            else:
                t.grad = t.grad + g
        if record.output is not loss:
            record.output.grad = None
    tape.clear()


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterwards."""
    for param in params:
        param.step_count += 1
        g = param.grad
        param.adam_m = beta1 * param.adam_m + (1.0 - beta1) * g
        param.adam_v = beta2 * param.adam_v + (1.0 - beta2) * g * g
        m_hat = param.adam_m / (1.0 - beta1 ** param.step_count)
        v_hat = param.adam_v / (1.0 - beta2 ** param.step_count)
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + epsilon)
        param.zero_grad()


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))
