"""Dense statevector kernel.

States are complex numpy arrays whose last axis holds the ``2**n``
amplitudes; any leading axes are treated as a batch. Qubit ``k`` is bit
``k`` of the basis index (qubit 0 least significant), so in the C-ordered
tensor view ``(2,) * n`` qubit ``k`` lives on axis ``n - 1 - k``.
"""
from __future__ import annotations

from math import cos, sin, sqrt

import numpy as np

MAX_QUBITS = 10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
ZZ = np.kron(Z, Z)

# CHSH observables: A0 = Z, A1 = X, B0 = (X + Z)/sqrt2, B1 = (Z - X)/sqrt2
CHSH_A = (Z, X)
CHSH_B = ((X + Z) / sqrt(2), (Z - X) / sqrt(2))


def rx(theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def rzz(theta: float) -> np.ndarray:
    """exp(-i theta Z⊗Z / 2) on basis order |q_a q_b> = 00, 01, 10, 11."""
    p, m = np.exp(-0.5j * theta), np.exp(0.5j * theta)
    return np.diag([p, m, m, p])


def num_qubits(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n:
        raise ValueError(f"state length {dim} is not a power of two")
    return n


def zero_state(n: int) -> np.ndarray:
    if not 0 <= n <= MAX_QUBITS:
        raise ValueError(f"supported register sizes are 0..{MAX_QUBITS} qubits, got {n}")
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    return psi


def init_bell(n_pairs: int, qubits_per_proc: int) -> np.ndarray:
    """Joint register with ``n_pairs`` |Phi+> pairs shared between processors.

    Pair ``j`` sits on qubits ``(j, qubits_per_proc + j)``; processor A owns
    qubits ``0..qpp-1`` and processor B owns ``qpp..2*qpp-1``. Unpaired
    qubits start in |0>.
    """
    if qubits_per_proc not in (2, 4):
        raise ValueError(f"qubits_per_proc must be 2 or 4, got {qubits_per_proc}")
    if not 0 <= n_pairs <= qubits_per_proc:
        raise ValueError(f"n_pairs must be in 0..{qubits_per_proc}, got {n_pairs}")
    n = 2 * qubits_per_proc
    psi = np.zeros(1 << n, dtype=complex)
    amp = 2.0 ** (-n_pairs / 2)
    for bits in range(1 << n_pairs):
        idx = 0
        for j in range(n_pairs):
            if bits >> j & 1:
                idx |= (1 << j) | (1 << (qubits_per_proc + j))
        psi[idx] = amp
    return psi


def _check_targets(n: int, targets) -> tuple[int, ...]:
    targets = tuple(int(q) for q in targets)
    if len(set(targets)) != len(targets):
        raise ValueError(f"repeated qubit in {targets}")
    for q in targets:
        if not 0 <= q < n:
            raise ValueError(f"qubit {q} out of range for {n}-qubit state")
    return targets


def apply_gate(state: np.ndarray, gate: np.ndarray, targets) -> np.ndarray:
    """Return ``gate`` applied on ``targets`` (first target = most significant
    bit of the gate's row index)."""
    state = np.asarray(state)
    n = num_qubits(state)
    targets = _check_targets(n, targets)
    k = len(targets)
    gate = np.asarray(gate)
    if gate.shape[-2:] != (1 << k, 1 << k):
        raise ValueError(f"gate of shape {gate.shape} does not act on {k} qubit(s)")
    batch = state.shape[:-1]
    if k == 1:
        q = targets[0]
        view = state.reshape(batch + (1 << (n - 1 - q), 2, 1 << q))
        if gate.ndim > 2:
            gate = gate[..., None, :, :]
        return np.matmul(gate, view).reshape(np.broadcast_shapes(gate.shape[:-3], batch) + state.shape[-1:])
    nb = len(batch)
    tensor = state.reshape(batch + (2,) * n)
    axes = [nb + n - 1 - q for q in targets]
    moved = np.moveaxis(tensor, axes, range(nb, nb + k))
    shp = moved.shape
    out = np.matmul(gate, moved.reshape(batch + (1 << k, -1)))
    shp = out.shape[:-2] + shp[nb:]
    nb = len(out.shape) - 2
    out = np.moveaxis(out.reshape(shp), range(nb, nb + k), [nb + n - 1 - q for q in targets])
    return np.ascontiguousarray(out).reshape(out.shape[:nb] + state.shape[-1:])


def apply_diagonal(state: np.ndarray, diag: np.ndarray, targets) -> np.ndarray:
    """Apply a diagonal gate given by its diagonal entries."""
    n = num_qubits(state)
    targets = _check_targets(n, targets)
    return state * expand_diagonal(np.asarray(diag), targets, n)


def expand_diagonal(diag: np.ndarray, targets, n: int) -> np.ndarray:
    """Full-register diagonal (length 2**n, batched over leading axes of
    ``diag``) of a diagonal gate acting on ``targets``."""
    k = len(targets)
    idx = np.zeros(1 << n, dtype=np.intp)
    basis = np.arange(1 << n)
    for pos, q in enumerate(targets):
        idx |= ((basis >> q) & 1) << (k - 1 - pos)
    return diag[..., idx]


def apply_controlled(state: np.ndarray, control: int, control_value: int,
                     gate: np.ndarray, target: int) -> np.ndarray:
    """Apply a single-qubit ``gate`` on ``target`` only where ``control`` == ``control_value``."""
    n = num_qubits(state)
    control, target = _check_targets(n, (control, target))
    if control_value not in (0, 1):
        raise ValueError("control_value must be 0 or 1")
    batch = state.shape[:-1]
    nb = len(batch)
    out = np.array(state, dtype=complex).reshape(batch + (2,) * n)
    sl = [slice(None)] * (nb + n)
    sl[nb + n - 1 - control] = control_value
    sub = out[tuple(sl)]
    # target axis index inside the sliced view
    t_ax = nb + n - 1 - target
    if target < control:
        t_ax -= 1
    sub = np.moveaxis(sub, t_ax, -1)
    out[tuple(sl)] = np.moveaxis(sub @ gate.T, -1, t_ax)
    return out.reshape(state.shape)


def marginal_probs(state: np.ndarray, qubits) -> np.ndarray:
    """Outcome distribution of ``qubits``; the first listed qubit is the most
    significant bit of the outcome index."""
    n = num_qubits(state)
    qubits = _check_targets(n, qubits)
    batch = state.shape[:-1]
    nb = len(batch)
    p = (np.abs(state) ** 2).reshape(batch + (2,) * n)
    keep = [nb + n - 1 - q for q in qubits]
    drop = tuple(ax for ax in range(nb, nb + n) if ax not in keep)
    p = p.sum(axis=drop)
    # remaining axes are in ascending axis order; reorder to the requested order
    remaining = sorted(keep)
    p = np.moveaxis(p, [nb + remaining.index(ax) for ax in keep], range(nb, nb + len(keep)))
    return p.reshape(batch + (1 << len(qubits),))


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from a complex Ginibre matrix via QR with the
    phase of R's diagonal divided out."""
    if dim < 2:
        raise ValueError(f"dimension must be >= 2, got {dim}")
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    return q * (d / np.abs(d))
