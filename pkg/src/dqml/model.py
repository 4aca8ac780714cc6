"""Classifier read-out, losses and CHSH figures of merit.

Outcomes are indexed 2a + b, i.e. (0,0), (0,1), (1,0), (1,1). A bit maps to
the value m(bit) = 1 - 2 bit, so the parity weights are omega m(a) m(b).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import qsim

PARITY = np.array([1.0, -1.0, -1.0, 1.0])
WEIGHT_MODES = ("free", "parity_trainable", "parity_fixed_unit")
SUCCESS_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Readout weights omega_ab over the four joint outcomes."""

    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (4,):
            raise ValueError("weight vector needs four entries")
        if self.mode != "free":
            scale = values[0]
            if scale <= 0 or not np.allclose(values, scale * PARITY, rtol=0, atol=1e-12):
                raise ValueError("parity weights must be (w, -w, -w, w) with w > 0")
            if self.mode == "parity_fixed_unit" and abs(scale - 1.0) > 1e-12:
                raise ValueError("parity_fixed_unit requires w = 1")
        object.__setattr__(self, "values", values)

    @classmethod
    def parity(cls, scale: float = 1.0, trainable: bool = False) -> "WeightVector":
        mode = "parity_trainable" if trainable else "parity_fixed_unit"
        return cls(mode, scale * PARITY)

    @classmethod
    def free(cls, values=PARITY) -> "WeightVector":
        return cls("free", np.array(values, dtype=float))

    @property
    def scale(self) -> float:
        """|omega| for parity modes; for free weights the largest magnitude."""
        if self.mode == "free":
            return float(np.abs(self.values).max())
        return float(self.values[0])


def _weights(omega) -> np.ndarray:
    return omega.values if isinstance(omega, WeightVector) else np.asarray(omega, dtype=float)


def expectation(dist, omega) -> np.ndarray:
    """E = sum_ab omega_ab P(a, b); works on a single distribution or a batch."""
    return np.asarray(dist, dtype=float) @ _weights(omega)


def predict(E) -> np.ndarray:
    """sgn(E) with sgn(0) = +1."""
    return np.where(np.asarray(E) >= 0, 1, -1)


def _batch(labels, E) -> tuple[np.ndarray, np.ndarray]:
    labels = np.atleast_1d(np.asarray(labels, dtype=float))
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.shape != E.shape:
        raise ValueError(f"labels {labels.shape} and expectations {E.shape} differ in shape")
    return labels, E


def loss_product(labels, E) -> tuple[float, np.ndarray]:
    """-(1/N) sum L E and its gradient with respect to each E."""
    labels, E = _batch(labels, E)
    n = labels.size
    return float(-(labels * E).sum() / n), -labels / n


def loss_mse(labels, E) -> tuple[float, np.ndarray]:
    """(1/N) sum (L - E)^2 and its gradient with respect to each E."""
    labels, E = _batch(labels, E)
    n = labels.size
    diff = E - labels
    return float((diff ** 2).sum() / n), 2 * diff / n


LOSSES = {"product": loss_product, "mse": loss_mse}


def accuracy(labels, E) -> float:
    labels, E = _batch(labels, E)
    return float(np.mean(predict(E) == labels))


def chsh_success(E, label, omega_scale: float = 1.0):
    """Per-input success probability (1 + L E / omega) / 2, clamped to [0, 1]."""
    if omega_scale <= 0:
        raise ValueError("omega_scale must be positive")
    r = np.asarray(label) * np.asarray(E, dtype=float) / omega_scale
    if np.any(np.abs(r) > 1 + SUCCESS_TOL):
        raise ValueError("|E / omega| exceeds 1")
    out = np.clip((1 + r) / 2, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def chsh_correlator(e00: float, e01: float, e10: float, e11: float) -> tuple[float, float]:
    """S = <A0B0> + <A0B1> + <A1B0> - <A1B1> and P_win = 1/2 + S/8."""
    vals = np.array([e00, e01, e10, e11], dtype=float)
    if np.any(np.abs(vals) > 1 + SUCCESS_TOL):
        raise ValueError("correlators must lie in [-1, 1]")
    S = float(e00 + e01 + e10 - e11)
    return S, 0.5 + S / 8


def analytic_chsh_reference() -> np.ndarray:
    """<A_s (x) B_t> on |Phi+> for the Tsirelson-optimal observables, as [s, t]."""
    phi = np.array([1, 0, 0, 1], dtype=complex) / sqrt(2)
    out = np.empty((2, 2))
    for s, A in enumerate(qsim.CHSH_A):
        for t, B in enumerate(qsim.CHSH_B):
            out[s, t] = (phi.conj() @ np.kron(A, B) @ phi).real
    return out
