"""From-scratch stacked LSTM with masked BCE, RMSProp, and patience schedule.

All math is float64 numpy.  Gate layout inside fused weight matrices is
[input, forget, cell, output].
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

PROB_CLAMP = 1e-7


@dataclass
class LayerParams:
    Wx: np.ndarray  # (in_dim, 4H)
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]


@dataclass
class LSTMStack:
    layers: list[LayerParams]
    Wy: np.ndarray  # (H_last, 1)
    by: np.ndarray  # (1,)

    @property
    def input_dim(self) -> int:
        return self.layers[0].Wx.shape[0]

    @property
    def hidden_sizes(self) -> list[int]:
        return [l.hidden for l in self.layers]

    def param_arrays(self) -> list[np.ndarray]:
        arrs = []
        for l in self.layers:
            arrs.extend([l.Wx, l.Wh, l.b])
        arrs.extend([self.Wy, self.by])
        return arrs

    def copy(self) -> "LSTMStack":
        return copy.deepcopy(self)


@dataclass
class TrainHyper:
    hidden_sizes: tuple = (128, 256, 128)
    batch_size: int = 12
    initial_lr: float = 9.6e-4
    patience: int = 10
    reduce_rate: float = 0.9
    max_reductions: int = 8
    dropout: float = 0.35
    recurrent_dropout: float = 0.2
    l2: float = 1e-4
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-7
    max_epochs: int | None = None
    freeze_transfer: bool = False


def _glorot_uniform(rng, fan_in, fan_out, shape):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def init_params(seed: int, input_dim: int, hidden_sizes) -> LSTMStack:
    """Deterministic scaled-uniform initialization; forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    layers = []
    in_dim = input_dim
    for H in hidden_sizes:
        Wx = _glorot_uniform(rng, in_dim, H, (in_dim, 4 * H))
        Wh = _glorot_uniform(rng, H, H, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        layers.append(LayerParams(Wx, Wh, b))
        in_dim = H
    Wy = _glorot_uniform(rng, in_dim, 1, (in_dim, 1))
    by = np.zeros(1)
    return LSTMStack(layers, Wy, by)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class DropoutMasks:
    """Variational masks: one input mask and one recurrent mask per layer,
    held fixed across all time steps of a sequence (inverted scaling)."""

    input_masks: list[np.ndarray]
    recurrent_masks: list[np.ndarray]


def apply_dropout_masks(
    seed: int,
    epoch: int,
    sequence_id: int,
    input_dim: int,
    hidden_sizes,
    p_in: float = 0.35,
    p_rec: float = 0.2,
) -> DropoutMasks:
    if not (0.0 <= p_in < 1.0 and 0.0 <= p_rec < 1.0):
        raise ValueError("dropout probabilities must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, sequence_id]))
    input_masks, recurrent_masks = [], []
    in_dim = input_dim
    for H in hidden_sizes:
        if p_in > 0:
            m = (rng.random(in_dim) >= p_in) / (1.0 - p_in)
        else:
            m = np.ones(in_dim)
        input_masks.append(m)
        if p_rec > 0:
            r = (rng.random(H) >= p_rec) / (1.0 - p_rec)
        else:
            r = np.ones(H)
        recurrent_masks.append(r)
        in_dim = H
    return DropoutMasks(input_masks, recurrent_masks)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # per layer: masked input sequence (T, in_dim)
    h: list[np.ndarray]  # per layer: (T, H)
    c: list[np.ndarray]
    gates: list[np.ndarray]  # per layer: (T, 4H) post-activation
    logits: np.ndarray  # (T,)
    probs: np.ndarray  # (T,) unclamped
    masks: DropoutMasks | None


def forward(stack: LSTMStack, matrix: np.ndarray,
            masks: DropoutMasks | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Run the stack over one sequence; returns per-step probabilities."""
    X = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in input matrix")
    T = X.shape[0]
    inputs, hs, cs, gates_all = [], [], [], []
    layer_in = X
    for li, layer in enumerate(stack.layers):
        H = layer.hidden
        if masks is not None:
            layer_in = layer_in * masks.input_masks[li]
            rmask = masks.recurrent_masks[li]
        else:
            rmask = None
        inputs.append(layer_in)
        h = np.zeros((T, H))
        c = np.zeros((T, H))
        gates = np.zeros((T, 4 * H))
        h_prev = np.zeros(H)
        c_prev = np.zeros(H)
        for t in range(T):
            hp = h_prev * rmask if rmask is not None else h_prev
            z = layer_in[t] @ layer.Wx + hp @ layer.Wh + layer.b
            i = _sigmoid(z[:H])
            f = _sigmoid(z[H : 2 * H])
            g = np.tanh(z[2 * H : 3 * H])
            o = _sigmoid(z[3 * H :])
            c_prev = f * c_prev + i * g
            h_prev = o * np.tanh(c_prev)
            gates[t, :H], gates[t, H : 2 * H] = i, f
            gates[t, 2 * H : 3 * H], gates[t, 3 * H :] = g, o
            h[t], c[t] = h_prev, c_prev
        hs.append(h)
        cs.append(c)
        gates_all.append(gates)
        layer_in = h
    logits = (hs[-1] @ stack.Wy + stack.by).ravel()
    probs = _sigmoid(logits)
    cache = ForwardCache(inputs, hs, cs, gates_all, logits, probs, masks)
    return probs, cache


def bce_masked(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over non-NaN labels; probabilities clamped
    away from {0, 1}."""
    labels = np.asarray(labels, dtype=float)
    mask = ~np.isnan(labels)
    if not mask.any():
        raise ValueError("all labels are NaN: no supervised steps")
    p = np.clip(probs[mask], PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels[mask]
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(stack: LSTMStack, cache: ForwardCache,
             labels: np.ndarray) -> list[np.ndarray]:
    """BPTT gradients of the masked BCE w.r.t. every parameter array,
    in the order of ``stack.param_arrays()`` (no L2 term)."""
    labels = np.asarray(labels, dtype=float)
    mask = ~np.isnan(labels)
    n_sup = int(mask.sum())
    if n_sup == 0:
        raise ValueError("all labels are NaN: no supervised steps")
    T = cache.probs.shape[0]

    p = cache.probs
    clamped_lo = p < PROB_CLAMP
    clamped_hi = p > 1.0 - PROB_CLAMP
    p_hat = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    dlogits = np.zeros(T)
    y = np.where(mask, np.nan_to_num(labels), 0.0)
    # d(BCE)/dp_hat * dp_hat/dp * dp/dz; the clamp zeroes the gradient
    dl_dphat = (p_hat - y) / (p_hat * (1.0 - p_hat)) / n_sup
    pass_through = ~(clamped_lo | clamped_hi)
    dlogits = np.where(mask & pass_through, dl_dphat * p * (1.0 - p), 0.0)

    gWy = cache.h[-1].T @ dlogits[:, None]
    gby = np.array([dlogits.sum()])
    dh_top = dlogits[:, None] * stack.Wy.T  # (T, H_last)

    grads_layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    dh_from_above = dh_top
    for li in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[li]
        H = layer.hidden
        x_seq = cache.inputs[li]
        h_seq, c_seq, gates = cache.h[li], cache.c[li], cache.gates[li]
        rmask = cache.masks.recurrent_masks[li] if cache.masks is not None else None
        imask = cache.masks.input_masks[li] if cache.masks is not None else None

        gWx = np.zeros_like(layer.Wx)
        gWh = np.zeros_like(layer.Wh)
        gb = np.zeros_like(layer.b)
        dx_seq = np.zeros_like(x_seq)
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i = gates[t, :H]
            f = gates[t, H : 2 * H]
            g = gates[t, 2 * H : 3 * H]
            o = gates[t, 3 * H :]
            c_prev = c_seq[t - 1] if t > 0 else np.zeros(H)
            tanh_c = np.tanh(c_seq[t])

            dh = dh_from_above[t] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c**2) + dc_next
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            dc_next = dc * f

            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ]
            )
            h_prev = h_seq[t - 1] if t > 0 else np.zeros(H)
            hp = h_prev * rmask if rmask is not None else h_prev
            gWx += np.outer(x_seq[t], dz)
            gWh += np.outer(hp, dz)
            gb += dz
            dh_next = dz @ layer.Wh.T
            if rmask is not None:
                dh_next = dh_next * rmask
            dx_seq[t] = dz @ layer.Wx.T
        grads_layers.append((gWx, gWh, gb))
        dh_from_above = dx_seq
        if imask is not None:
            # inputs were pre-masked before caching; downstream layer sees
            # the gradient through its own output, so apply the mask here
            dh_from_above = dh_from_above * imask

    grads: list[np.ndarray] = []
    for gWx, gWh, gb in reversed(grads_layers):
        grads.extend([gWx, gWh, gb])
    grads.extend([gWy, gby])
    return grads


def loss_with_l2(stack: LSTMStack, probs, labels, l2: float) -> float:
    loss = bce_masked(probs, labels)
    if l2 > 0:
        loss += l2 * sum(float(np.sum(a * a)) for a in stack.param_arrays())
    return loss


def add_l2_grads(stack: LSTMStack, grads: list[np.ndarray], l2: float) -> None:
    if l2 > 0:
        for g, a in zip(grads, stack.param_arrays()):
            g += 2.0 * l2 * a


@dataclass
class OptimizerState:
    accumulators: list[np.ndarray]
    rho: float = 0.9
    eps: float = 1e-7

    @classmethod
    def for_stack(cls, stack: LSTMStack, rho=0.9, eps=1e-7) -> "OptimizerState":
        return cls([np.zeros_like(a) for a in stack.param_arrays()], rho, eps)


def rmsprop_step(params: list[np.ndarray], grads: list[np.ndarray],
                 state: OptimizerState, lr: float) -> None:
    """In-place RMSProp update: s <- rho*s + (1-rho)*g^2;
    theta <- theta - lr*g/(sqrt(s)+eps)."""
    for theta, g, s in zip(params, grads, state.accumulators):
        s *= state.rho
        s += (1.0 - state.rho) * g * g
        theta -= lr * g / (np.sqrt(s) + state.eps)


@dataclass
class ScheduleState:
    initial_lr: float
    patience: int = 10
    reduce_rate: float = 0.9
    max_reductions: int = 8
    best_metric: float = -np.inf
    epochs_since_improvement: int = 0
    reductions_used: int = 0

    @property
    def current_lr(self) -> float:
        return self.initial_lr * self.reduce_rate**self.reductions_used


def schedule_update(state: ScheduleState, val_metric: float) -> tuple[bool, bool]:
    """Advance the patience schedule with one epoch's validation metric
    (higher is better).  Returns (improved, stop)."""
    if not np.isfinite(val_metric):
        raise ValueError("validation metric must be finite")
    if val_metric > state.best_metric:
        state.best_metric = val_metric
        state.epochs_since_improvement = 0
        return True, False
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= state.patience:
        if state.reductions_used >= state.max_reductions:
            return False, True
        state.reductions_used += 1
        state.epochs_since_improvement = 0
    return False, False
