"""Batched evaluation exploiting the model's structure.

Every model template splits into three parts:

* a sample-independent prefix acting on the whole register (initial state,
  mixing layers, the fixed Hadamard layer),
* a data block that is either diagonal (Z/ZZ feature rotations) or a
  product of per-processor Haar unitaries,
* a sample-independent suffix that is a tensor product W_A (x) W_B of
  local unitaries (convolution and deferred pooling never cross processors).

Reshaping a joint amplitude vector to a matrix ``M[i_B, i_A]`` turns the
suffix into ``W_B @ M @ W_A.T``, so a batch of N samples costs a few
batched 16x16 matrix products instead of N full statevector runs. Results
agree with :func:`dqml.circuit.evaluate` and :mod:`dqml.grad`.
"""
from __future__ import annotations

import numpy as np

from . import qsim
from .circuit import CircuitTemplate, Op, apply_generator, apply_op, bind
from .grad import backprop


def _localize(op: Op, offset: int) -> Op:
    return Op(op.kind, tuple(q - offset for q in op.qubits), op.matrix, op.diagonal,
              op.control_value, op.param, op.generator)


class CompiledCircuit:
    """Fast forward, vector-Jacobian and Jacobian products for one template."""

    def __init__(self, template: CircuitTemplate):
        self.template = template
        qpp = template.config.qubits_per_proc
        self.qpp = qpp
        self.local_dim = 1 << qpp
        gates = template.gates
        data_idx = [i for i, g in enumerate(gates) if g.data_bound]
        if not data_idx:
            raise ValueError("template has no data-embedding block")
        lo, hi = data_idx[0], data_idx[-1] + 1
        if any(not g.data_bound for g in gates[lo:hi]):
            raise ValueError("data-bound gates must be contiguous")
        self._lo, self._hi = lo, hi
        self.haar = template.config.embedding == "haar_random"
        self._suffix_proc = []
        for g in gates[hi:]:
            if g.data_bound:
                raise ValueError("data-bound gate after the embedding block")
            procs = {q // qpp for q in g.qubits}
            if len(procs) != 1:
                raise ValueError(f"suffix gate {g} acts across processors")
            self._suffix_proc.append(procs.pop())
        if not self.haar and any(g.kind not in ("RZ", "RZZ") for g in gates[lo:hi]):
            raise ValueError("feature embedding must be diagonal")
        self.prefix_params = sorted({g.param for g in gates[:lo] if g.param is not None})
        self.n_params = template.param_count
        self._initial = template.initial_state()
        half = self.local_dim // 2
        self._half = half

    # -- pieces ------------------------------------------------------------

    def _split_ops(self, params):
        ops = bind(self.template, params, self._dummy_data())
        prefix = ops[:self._lo]
        suffix = ops[self._hi:]
        local = ([], [])
        for op, proc in zip(suffix, self._suffix_proc):
            local[proc].append(_localize(op, proc * self.qpp))
        return prefix, local

    def _dummy_data(self):
        if self.haar:
            eye = np.eye(self.local_dim, dtype=complex)
            return (eye, eye)
        return np.zeros(self.template.n_qubits)

    def embed_phases(self, features) -> np.ndarray:
        """Per-sample diagonal of the data block, shape (N, 2**n)."""
        features = np.atleast_2d(np.asarray(features, dtype=float))
        ops = bind(self.template, np.zeros(self.n_params), features)[self._lo:self._hi]
        n = self.template.n_qubits
        diag = np.ones((features.shape[0], 1 << n), dtype=complex)
        for op in ops:
            diag = diag * qsim.expand_diagonal(op.matrix, op.qubits, n)
        return diag

    def _local_unitary(self, ops) -> np.ndarray:
        rows = np.eye(self.local_dim, dtype=complex)
        for op in ops:
            rows = apply_op(op, rows)
        return rows.T

    def _embed(self, psi0: np.ndarray, data) -> np.ndarray:
        d = self.local_dim
        if self.haar:
            ua, ub = (np.asarray(u) for u in data)
            m0 = psi0.reshape(d, d)
            return ub @ m0 @ np.swapaxes(ua, -1, -2)
        return (data * psi0).reshape(-1, d, d)

    def _embed_adjoint(self, cot_m: np.ndarray, data) -> np.ndarray:
        d = self.local_dim
        if self.haar:
            ua, ub = (np.asarray(u) for u in data)
            g = np.conj(np.swapaxes(ub, -1, -2)) @ cot_m @ np.conj(ua)
            return g.reshape(-1, d * d).sum(axis=0)
        return (np.conj(data) * cot_m.reshape(-1, d * d)).sum(axis=0)

    def _probs_from_phi(self, phi: np.ndarray) -> np.ndarray:
        h = self._half
        q = (np.abs(phi) ** 2).reshape(-1, 2, h, 2, h).sum(axis=(2, 4))
        return np.swapaxes(q, 1, 2).reshape(-1, 4)

    def _forward(self, params, data):
        prefix, (ops_a, ops_b) = self._split_ops(params)
        psi0 = self._initial
        for op in prefix:
            psi0 = apply_op(op, psi0)
        wa = self._local_unitary(ops_a)
        wb = self._local_unitary(ops_b)
        m = self._embed(psi0, data)
        phi = wb @ m @ wa.T
        return prefix, ops_a, ops_b, psi0, wa, wb, m, phi

    # -- public API --------------------------------------------------------

    def probs(self, params, data) -> np.ndarray:
        """(N, 4) outcome distributions. ``data`` is an embed_phases array or,
        for Haar templates, a pair of (N, d, d) unitary stacks."""
        return self._probs_from_phi(self._forward(params, data)[-1])

    def probs_and_vjp(self, params, data, cotangent_fn):
        """Distributions plus the parameter gradient of a scalar loss.

        ``cotangent_fn(probs)`` returns ``(loss, dloss/dprobs)`` with the
        latter shaped (N, 4).
        """
        prefix, ops_a, ops_b, psi0, wa, wb, m, phi = self._forward(params, data)
        probs = self._probs_from_phi(phi)
        loss, cot = cotangent_fn(probs)
        h = self._half
        c = np.asarray(cot, dtype=float).reshape(-1, 2, 2)  # [n, a, b]
        cfull = np.broadcast_to(np.swapaxes(c, 1, 2)[:, :, None, :, None],
                                (c.shape[0], 2, h, 2, h)).reshape(phi.shape)
        gamma = cfull * phi
        grads = np.zeros(self.n_params)
        y = wb @ m                          # phi = y @ wa.T
        z = m @ wa.T                        # phi = wb @ z
        xi_a = np.einsum("nba,nbc->ac", gamma, np.conj(y))
        xi_b = np.einsum("nba,nca->bc", gamma, np.conj(z))
        grads += backprop(ops_a, wa.T, xi_a.T, self.n_params, reduce_axes=(0,))
        grads += backprop(ops_b, wb.T, xi_b.T, self.n_params, reduce_axes=(0,))
        if self.prefix_params:
            cot_m = np.conj(wb.T) @ gamma @ np.conj(wa)
            lam0 = self._embed_adjoint(cot_m, data)
            grads += backprop(prefix, psi0, lam0, self.n_params)
        return probs, loss, grads

    def jacobian(self, params, data) -> tuple[np.ndarray, np.ndarray]:
        """Distributions (N, 4) and dP/dtheta (N, 4, P) by forward mode."""
        prefix, ops_a, ops_b, psi0, wa, wb, m, phi = self._forward(params, data)
        probs = self._probs_from_phi(phi)
        n = phi.shape[0]
        jac = np.zeros((n, 4, self.n_params))
        conj_phi = np.conj(phi)

        def dprobs(dphi):
            # dphi: (N, K, d, d) -> (N, 4, K)
            h = self._half
            t = 2 * (conj_phi[:, None] * dphi).real
            t = t.reshape(n, -1, 2, h, 2, h).sum(axis=(3, 5))
            return np.moveaxis(np.swapaxes(t, 2, 3).reshape(n, -1, 4), 1, 2)

        y = wb @ m
        z = m @ wa.T
        for ops, w, side in ((ops_a, wa, "a"), (ops_b, wb, "b")):
            idx, dws = self._local_derivatives(ops, w)
            if not idx:
                continue
            if side == "a":
                dphi = np.einsum("nbi,kai->nkba", y, dws)
            else:
                dphi = np.einsum("kbc,nca->nkba", dws, z)
            np.add.at(jac, (slice(None), slice(None), idx), dprobs(dphi))
        if self.prefix_params:
            idx, tangents = self._prefix_tangents(prefix)
            dm = np.stack([self._embed(t, data) for t in tangents], axis=1)
            dphi = wb @ dm @ wa.T
            np.add.at(jac, (slice(None), slice(None), idx), dprobs(dphi))
        return probs, jac

    def _local_derivatives(self, ops, w):
        """dW/dtheta_k = -i/2 W R_k^dag G_k R_k for each parametrised op."""
        rows = np.eye(self.local_dim, dtype=complex)
        idx, mats = [], []
        for op in ops:
            rows = apply_op(op, rows)
            if op.param is not None:
                g_rows = apply_generator(op, rows)
                heis = np.conj(rows) @ g_rows.T
                idx.append(op.param)
                mats.append(-0.5j * w @ heis)
        return idx, (np.stack(mats) if mats else None)

    def _prefix_tangents(self, prefix):
        psi = self._initial
        idx, tangents = [], np.zeros((0, psi.size), dtype=complex)
        for op in prefix:
            psi = apply_op(op, psi)
            if len(tangents):
                tangents = apply_op(op, tangents)
            if op.param is not None:
                idx.append(op.param)
                tangents = np.vstack([tangents, -0.5j * apply_generator(op, psi)[None]])
        return idx, tangents
