"""Reverse-mode (adjoint) differentiation of outcome probabilities.

Every trainable gate has the form U(theta) = exp(-i theta G / 2), where G is
a Pauli string or, for the pooling rotations, a control projector times a
Pauli. With psi_k the state just after gate k and lam_k the cotangent
dL/dpsi_k^* carried back to the same point, dL/dtheta_k = Im <lam_k|G|psi_k>.
This holds for controlled rotations too, which is why no shift rule is used.
"""
from __future__ import annotations

import numpy as np

from .circuit import CircuitTemplate, apply_generator, apply_op, bind, evaluate, run

FD_STEP = 1e-4


def backprop(ops, psi: np.ndarray, lam: np.ndarray, n_params: int,
             reduce_axes: tuple[int, ...] = ()) -> np.ndarray:
    """Walk ``ops`` backwards from the final state ``psi`` and cotangent ``lam``.

    ``lam`` may carry extra leading axes relative to ``psi`` (e.g. one per
    outcome). Returns gradients of shape ``lam.shape[:-1] + (n_params,)``
    with ``reduce_axes`` of that batch shape summed out.
    """
    batch = lam.shape[:-1]
    out_shape = tuple(s for i, s in enumerate(batch) if i not in reduce_axes)
    grads = np.zeros(out_shape + (n_params,))
    for op in reversed(ops):
        if op.param is not None:
            g = np.einsum("...i,...i->...", np.conj(lam), apply_generator(op, psi)).imag
            if reduce_axes:
                g = g.sum(axis=reduce_axes)
            grads[..., op.param] += g
        psi = apply_op(op, psi, inverse=True)
        lam = apply_op(op, lam, inverse=True)
    return grads


def outcome_masks(n_qubits: int, output_qubits) -> np.ndarray:
    """Boolean (4, 2**n) masks selecting basis states with (a, b) on the outputs."""
    basis = np.arange(1 << n_qubits)
    a = (basis >> output_qubits[0]) & 1
    b = (basis >> output_qubits[1]) & 1
    return np.stack([(a == i) & (b == j) for i in (0, 1) for j in (0, 1)])


def adjoint_gradient(template: CircuitTemplate, params, initial=None, data=None) -> np.ndarray:
    """dP(a,b)/dtheta as a (4, P) array (``(..., 4, P)`` for batched data)."""
    if initial is None:
        initial = template.initial_state()
    ops = bind(template, params, data)
    psi = run(ops, np.asarray(initial, dtype=complex))
    masks = outcome_masks(template.n_qubits, template.output_qubits)
    lam = masks.reshape((4,) + (1,) * (psi.ndim - 1) + masks.shape[-1:]) * psi
    grads = backprop(ops, psi, lam, template.param_count)
    return np.moveaxis(grads, 0, -2)


def finite_diff_gradient(template: CircuitTemplate, params, initial=None, data=None,
                         step: float = FD_STEP) -> np.ndarray:
    """Central-difference oracle with the same layout as :func:`adjoint_gradient`."""
    if step <= 0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=float)
    cols = []
    for k in range(params.size):
        shift = np.zeros_like(params)
        shift[k] = step
        plus = evaluate(template, params + shift, initial, data)
        minus = evaluate(template, params - shift, initial, data)
        cols.append((plus - minus) / (2 * step))
    if not cols:
        base = evaluate(template, params, initial, data)
        return np.zeros(base.shape + (0,))
    return np.stack(cols, axis=-1)


def probability_vjp(template: CircuitTemplate, params, cotangent, initial=None, data=None) -> np.ndarray:
    """sum_y cotangent[..., y] * dP_y/dtheta, summed over any data batch."""
    if initial is None:
        initial = template.initial_state()
    ops = bind(template, params, data)
    psi = run(ops, np.asarray(initial, dtype=complex))
    masks = outcome_masks(template.n_qubits, template.output_qubits)
    weights = np.asarray(cotangent, dtype=float) @ masks.astype(float)
    lam = weights * psi
    return backprop(ops, psi, lam, template.param_count, reduce_axes=tuple(range(lam.ndim - 1)))

