"""Classical two-branch baseline with no connection between the branches.

Each branch is a 4-8-8-1 tanh perceptron seeing one half of the input;
a combiner forms f = w_a a + w_b b + w_ab ab + c from the branch outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .train import OptState, STEPS, TrainConfig, batch_indices

BRANCH_SHAPE = (4, 8, 8, 1)


def branch_param_count(shape=BRANCH_SHAPE) -> int:
    return sum((a + 1) * b for a, b in zip(shape[:-1], shape[1:]))


def dnn_param_count(shape=BRANCH_SHAPE) -> int:
    return 2 * branch_param_count(shape) + 4


def _layout(shape=BRANCH_SHAPE):
    """(W, b) slices into a flat branch vector, W stored (fan_out, fan_in)."""
    out, k = [], 0
    for a, b in zip(shape[:-1], shape[1:]):
        out.append(((k, k + a * b, (b, a)), (k + a * b, k + a * b + b)))
        k += a * b + b
    return out


@dataclass
class DNN:
    """Flat parameter vector: branch A, branch B, then (w_a, w_b, w_ab, c)."""

    params: np.ndarray
    shape: tuple[int, ...] = BRANCH_SHAPE

    @classmethod
    def init(cls, seed, shape=BRANCH_SHAPE) -> "DNN":
        """Glorot-uniform weights, zero biases, combiner (0, 0, 1, 0)."""
        rng = np.random.default_rng(seed)
        parts = []
        for _ in range(2):
            for (w0, w1, wshape), (b0, b1) in _layout(shape):
                lim = np.sqrt(6.0 / (wshape[0] + wshape[1]))
                parts += [rng.uniform(-lim, lim, w1 - w0), np.zeros(b1 - b0)]
        parts.append(np.array([0.0, 0.0, 1.0, 0.0]))
        return cls(np.concatenate(parts), tuple(shape))

    def branches(self) -> tuple[np.ndarray, np.ndarray]:
        n = branch_param_count(self.shape)
        return self.params[:n], self.params[n:2 * n]

    @property
    def combiner(self) -> np.ndarray:
        return self.params[-4:]


def _branch_forward(theta, x, shape):
    acts = [x]
    for (w0, w1, wshape), (b0, b1) in _layout(shape):
        W = theta[w0:w1].reshape(wshape)
        acts.append(np.tanh(acts[-1] @ W.T + theta[b0:b1]))
    return acts


def _branch_backward(theta, acts, dout, shape):
    grad = np.zeros_like(theta)
    delta = dout[:, None] * (1 - acts[-1] ** 2)
    for li in range(len(acts) - 2, -1, -1):
        (w0, w1, wshape), (b0, b1) = _layout(shape)[li]
        W = theta[w0:w1].reshape(wshape)
        grad[w0:w1] = (delta.T @ acts[li]).ravel()
        grad[b0:b1] = delta.sum(axis=0)
        if li:
            delta = (delta @ W) * (1 - acts[li] ** 2)
    return grad


def forward(net: DNN, x) -> np.ndarray:
    """Predictions f for an (N, 8) batch (or one sample)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    half = net.shape[0]
    ta, tb = net.branches()
    a = _branch_forward(ta, x[:, :half], net.shape)[-1][:, 0]
    b = _branch_forward(tb, x[:, half:], net.shape)[-1][:, 0]
    wa, wb, wab, c = net.combiner
    f = wa * a + wb * b + wab * a * b + c
    return f[0] if single else f


def backprop(net: DNN, x, labels) -> tuple[float, np.ndarray]:
    """Batch MSE and its exact gradient with respect to all parameters."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half = net.shape[0]
    ta, tb = net.branches()
    acts_a = _branch_forward(ta, x[:, :half], net.shape)
    acts_b = _branch_forward(tb, x[:, half:], net.shape)
    a, b = acts_a[-1][:, 0], acts_b[-1][:, 0]
    wa, wb, wab, c = net.combiner
    f = wa * a + wb * b + wab * a * b + c
    loss, df = model.loss_mse(labels, f)
    g_comb = np.array([df @ a, df @ b, df @ (a * b), df.sum()])
    ga = _branch_backward(ta, acts_a, df * (wa + wab * b), net.shape)
    gb = _branch_backward(tb, acts_b, df * (wb + wab * a), net.shape)
    return loss, np.concatenate([ga, gb, g_comb])


def train_dnn(config: TrainConfig, train_data, val_data=None) -> tuple[DNN, list[dict]]:
    """Same batching, optimiser and logging cadence as the quantum loop."""
    x_tr, y_tr = (np.asarray(a, dtype=float) for a in train_data)
    net = DNN.init(config.seed)
    opt = OptState.fresh(net.params)
    step = STEPS[config.optimizer]
    n = y_tr.size
    batch = max(1, int(round(config.batch_fraction * n)))
    history = []

    def log(it: int) -> None:
        cur = DNN(opt.params, net.shape)
        f = forward(cur, x_tr)
        row = {"iteration": it, "loss": model.loss_mse(y_tr, f)[0],
               "train_acc": model.accuracy(y_tr, f), "val_acc": None}
        if val_data is not None:
            row["val_acc"] = model.accuracy(val_data[1], forward(cur, val_data[0]))
        history.append(row)

    for it in range(config.iterations):
        if it % config.log_every == 0:
            log(it)
        idx = batch_indices(n, batch, config.seed, it)
        _, g = backprop(DNN(opt.params, net.shape), x_tr[idx], y_tr[idx])
        opt = step(opt, g, config.learning_rate)
    log(config.iterations)
    return DNN(opt.params, net.shape), history
