"""Training loop for the distributed classifier.

The trainable vector is the circuit parameters followed by the readout
parameters: four raw weights in ``free`` mode, one log-scale rho with
omega = exp(rho) in ``parity_trainable`` mode, nothing for the fixed unit
parity readout.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from math import tau
from pathlib import Path

import numpy as np

from . import model
from .circuit import CircuitConfig, assemble
from .engine import CompiledCircuit

OPTIMIZERS = ("adam", "sgd")
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.05
    iterations: int = 2000
    batch_fraction: float = 0.25
    seed: int = 0
    loss: str = "mse"
    omega_mode: str = "free"
    log_every: int = 10

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch_fraction must be in (0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.loss not in model.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.omega_mode not in model.WEIGHT_MODES:
            raise ValueError(f"unknown omega mode {self.omega_mode!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class OptState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params) -> "OptState":
        params = np.asarray(params, dtype=float)
        return cls(params.copy(), np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state: OptState, grad, lr: float = 0.05) -> OptState:
    """One bias-corrected Adam update."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {state.params.shape}")
    t = state.t + 1
    m = BETA1 * state.m + (1 - BETA1) * grad
    v = BETA2 * state.v + (1 - BETA2) * grad ** 2
    m_hat = m / (1 - BETA1 ** t)
    v_hat = v / (1 - BETA2 ** t)
    return OptState(state.params - lr * m_hat / (np.sqrt(v_hat) + EPS), m, v, t)


def sgd_step(state: OptState, grad, lr: float = 0.05) -> OptState:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {state.params.shape}")
    return OptState(state.params - lr * grad, state.m, state.v, state.t + 1)


STEPS = {"adam": adam_step, "sgd": sgd_step}


def init_params(n_params: int, seed) -> np.ndarray:
    """Uniform draws from [0, 2 pi)."""
    return np.random.default_rng(seed).uniform(0.0, tau, n_params)


def init_omega_raw(mode: str) -> np.ndarray:
    if mode == "free":
        return model.PARITY.copy()
    if mode == "parity_trainable":
        return np.zeros(1)          # omega = exp(0) = 1
    return np.zeros(0)


def omega_from_raw(mode: str, raw) -> tuple[np.ndarray, np.ndarray]:
    """Weights and their Jacobian d omega / d raw (4 x len(raw))."""
    raw = np.asarray(raw, dtype=float)
    if mode == "free":
        return raw.copy(), np.eye(4)
    if mode == "parity_trainable":
        w = np.exp(raw[0]) * model.PARITY
        return w, w[:, None]
    return model.PARITY.copy(), np.zeros((4, 0))


def weight_vector(mode: str, raw) -> model.WeightVector:
    w, _ = omega_from_raw(mode, raw)
    return model.WeightVector(mode, w)


def batch_indices(n: int, batch_size: int, seed, iteration: int) -> np.ndarray:
    """Rows for ``iteration``: consecutive slices of a per-epoch permutation.

    A trailing partial slice is dropped so every batch has the same size;
    the ordering depends only on (seed, epoch), which makes resuming exact.
    """
    per_epoch = max(n // batch_size, 1)
    epoch, slot = divmod(iteration, per_epoch)
    if batch_size >= n:
        return np.arange(n)
    perm = np.random.default_rng([int(seed), epoch]).permutation(n)
    return perm[slot * batch_size:(slot + 1) * batch_size]


@dataclass
class TrainState:
    opt: OptState
    n_circuit: int
    omega_mode: str
    iteration: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        return self.opt.params[:self.n_circuit]

    @property
    def omega_raw(self) -> np.ndarray:
        return self.opt.params[self.n_circuit:]

    @property
    def omega(self) -> model.WeightVector:
        return weight_vector(self.omega_mode, self.omega_raw)

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "n_circuit": self.n_circuit,
                "omega_mode": self.omega_mode, "params": self.params.tolist(),
                "omega_raw": self.omega_raw.tolist(), "omega": self.omega.values.tolist(),
                "adam_m": self.opt.m.tolist(), "adam_v": self.opt.v.tolist(), "adam_t": self.opt.t,
                "history": self.history}

    @classmethod
    def from_json(cls, data: dict) -> "TrainState":
        flat = np.array(data["params"] + data["omega_raw"], dtype=float)
        opt = OptState(flat, np.array(data["adam_m"], dtype=float),
                       np.array(data["adam_v"], dtype=float), int(data["adam_t"]))
        return cls(opt, int(data["n_circuit"]), data["omega_mode"], int(data["iteration"]),
                   list(data["history"]))


class Classifier:
    """A compiled circuit plus readout, evaluated on precomputed embeddings."""

    def __init__(self, circuit_config: CircuitConfig, omega_mode: str = "free"):
        self.config = circuit_config
        self.template = assemble(circuit_config)
        self.compiled = CompiledCircuit(self.template)
        self.omega_mode = omega_mode
        self.n_circuit = self.template.param_count
        self.n_omega = init_omega_raw(omega_mode).size

    def prepare(self, features) -> np.ndarray:
        return self.compiled.embed_phases(features)

    def expectations(self, flat, data) -> np.ndarray:
        w, _ = omega_from_raw(self.omega_mode, flat[self.n_circuit:])
        return self.compiled.probs(flat[:self.n_circuit], data) @ w

    def loss_and_grad(self, flat, data, labels, loss: str) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss, gradient over the flat vector, and the batch expectations."""
        w, dw = omega_from_raw(self.omega_mode, flat[self.n_circuit:])
        loss_fn = model.LOSSES[loss]
        box = {}

        def cotangent(probs):
            E = probs @ w
            value, dE = loss_fn(labels, E)
            box["E"], box["dw"] = E, probs.T @ dE
            return value, dE[:, None] * w[None, :]

        _, value, g_circ = self.compiled.probs_and_vjp(flat[:self.n_circuit], data, cotangent)
        g_omega = box["dw"] @ dw
        return value, np.concatenate([g_circ, g_omega]), box["E"]


def train(circuit_config: CircuitConfig, config: TrainConfig, train_data, val_data=None,
          state: TrainState | None = None, log_path=None) -> TrainState:
    """Optimise on ``train_data = (features, labels)``; ``state`` resumes a run.

    Every ``log_every`` iterations (and after the last) one history row of
    full-set loss and accuracies is recorded.
    """
    clf = Classifier(circuit_config, config.omega_mode)
    x_tr, y_tr = (np.asarray(a, dtype=float) for a in train_data)
    d_tr = clf.prepare(x_tr)
    if val_data is not None:
        x_va, y_va = (np.asarray(a, dtype=float) for a in val_data)
        d_va = clf.prepare(x_va)
    if state is None:
        flat = np.concatenate([init_params(clf.n_circuit, config.seed),
                               init_omega_raw(config.omega_mode)])
        state = TrainState(OptState.fresh(flat), clf.n_circuit, config.omega_mode)
    elif state.n_circuit != clf.n_circuit or state.omega_mode != config.omega_mode:
        raise ValueError("checkpoint does not match the circuit / omega configuration")
    n = y_tr.size
    batch = max(1, int(round(config.batch_fraction * n)))
    step = STEPS[config.optimizer]
    loss_fn = model.LOSSES[config.loss]

    def log() -> None:
        flat = state.opt.params
        E_tr = clf.expectations(flat, d_tr)
        row = {"iteration": state.iteration, "loss": loss_fn(y_tr, E_tr)[0],
               "train_acc": model.accuracy(y_tr, E_tr),
               "val_acc": model.accuracy(y_va, clf.expectations(flat, d_va)) if val_data is not None else None}
        state.history.append(row)

    while state.iteration < config.iterations:
        if state.iteration % config.log_every == 0 and (
                not state.history or state.history[-1]["iteration"] != state.iteration):
            log()
        idx = batch_indices(n, batch, config.seed, state.iteration)
        _, grad, _ = clf.loss_and_grad(state.opt.params, d_tr[idx], y_tr[idx], config.loss)
        state.opt = step(state.opt, grad, config.learning_rate)
        state.iteration += 1
    if not state.history or state.history[-1]["iteration"] != state.iteration:
        log()
    if log_path is not None:
        write_history(state.history, log_path)
    return state


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iteration", "loss", "train_acc", "val_acc"])
        w.writeheader()
        for row in history:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def save_checkpoint(state: TrainState, path, extra: dict | None = None) -> None:
    payload = state.to_json()
    if extra:
        payload["config"] = extra
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path) -> TrainState:
    return TrainState.from_json(json.loads(Path(path).read_text()))


def config_dict(config) -> dict:
    return asdict(config)
