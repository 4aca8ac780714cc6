from functools import reduce
from math import pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from dqml import qsim

from oracles import full_operator


def random_state(rng, n):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


def test_init_bell_zero_pairs():
    psi = qsim.init_bell(0, 4)
    assert psi[0] == 1 and np.count_nonzero(psi) == 1


def test_init_bell_one_pair():
    psi = qsim.init_bell(1, 4)
    assert np.isclose(psi[0], 1 / sqrt(2)) and np.isclose(psi[17], 1 / sqrt(2))
    assert np.count_nonzero(psi) == 2


def test_init_bell_four_pairs_matches_kron():
    phi = np.array([1, 0, 0, 1], dtype=complex) / sqrt(2)
    # build pair tensor explicitly then permute to qubits (j, 4 + j)
    t = reduce(np.kron, [phi] * 4).reshape((2,) * 8)
    # kron order: pair 3 is most significant; within a pair the A half is first
    # axes: (A3, B3, A2, B2, A1, B1, A0, B0) -> want (B3, B2, B1, B0, A3, A2, A1, A0)
    want = t.transpose(1, 3, 5, 7, 0, 2, 4, 6).reshape(-1)
    got = qsim.init_bell(4, 4)
    assert np.allclose(got, want)
    assert np.count_nonzero(got) == 16 and np.allclose(got[got != 0], 0.25)
    idx = np.flatnonzero(got)
    assert all(((i >> j) & 1) == ((i >> (4 + j)) & 1) for i in idx for j in range(4))


@pytest.mark.parametrize("n_pairs,qpp", [(-1, 4), (5, 4), (3, 2), (1, 3)])
def test_init_bell_rejects(n_pairs, qpp):
    with pytest.raises(ValueError):
        qsim.init_bell(n_pairs, qpp)


def test_gate_definitions():
    for theta in (0.3, -1.2, 2.5):
        assert np.allclose(qsim.rx(theta), expm(-0.5j * theta * qsim.X), atol=1e-12)
        assert np.allclose(qsim.ry(theta), expm(-0.5j * theta * qsim.Y), atol=1e-12)
        assert np.allclose(qsim.rz(theta), expm(-0.5j * theta * qsim.Z), atol=1e-12)
        assert np.allclose(qsim.rzz(theta), expm(-0.5j * theta * qsim.ZZ), atol=1e-12)
    for g in (qsim.H, qsim.CZ, qsim.rx(0.7), qsim.rz(0.4)):
        assert np.allclose(g.conj().T @ g, np.eye(len(g)), atol=1e-12)


def test_apply_gate_examples():
    assert np.allclose(qsim.apply_gate(qsim.zero_state(1), qsim.H, [0]), [1 / sqrt(2)] * 2)
    s = np.zeros(4, dtype=complex)
    s[3] = 1
    assert np.isclose(qsim.apply_gate(s, qsim.CZ, [0, 1])[3], -1)
    assert np.isclose(qsim.apply_gate(qsim.zero_state(1), qsim.rx(pi), [0])[1], -1j)


def test_apply_gate_matches_dense_operator():
    rng = np.random.default_rng(3)
    n = 5
    for targets in ([0], [3], [1, 4], [4, 1], [2, 0, 3]):
        k = len(targets)
        g = qsim.haar_unitary(1 << k, rng)
        psi = random_state(rng, n)
        assert np.allclose(qsim.apply_gate(psi, g, targets), full_operator(g, targets, n) @ psi)


def test_apply_gate_batched_state_and_gate():
    rng = np.random.default_rng(4)
    psis = np.stack([random_state(rng, 3) for _ in range(3)])
    gates = np.stack([qsim.haar_unitary(4, rng) for _ in range(3)])
    out = qsim.apply_gate(psis, gates, [2, 0])
    for i in range(3):
        assert np.allclose(out[i], qsim.apply_gate(psis[i], gates[i], [2, 0]))


@pytest.mark.parametrize("targets", [[0, 0], [3], [-1]])
def test_apply_gate_bad_targets(targets):
    gate = np.eye(1 << len(targets))
    with pytest.raises(ValueError):
        qsim.apply_gate(qsim.zero_state(2), gate, targets)


def test_apply_gate_dimension_mismatch():
    with pytest.raises(ValueError):
        qsim.apply_gate(qsim.zero_state(2), qsim.CZ, [0])


def test_norm_preserved_over_long_sequence():
    rng = np.random.default_rng(5)
    psi = qsim.zero_state(8)
    for _ in range(100):
        k = int(rng.integers(1, 3))
        targets = rng.choice(8, size=k, replace=False)
        psi = qsim.apply_gate(psi, qsim.haar_unitary(1 << k, rng), targets)
    assert abs(np.vdot(psi, psi).real - 1) < 1e-9


def test_disjoint_gates_commute():
    rng = np.random.default_rng(6)
    psi = random_state(rng, 4)
    g1, g2 = qsim.haar_unitary(4, rng), qsim.haar_unitary(4, rng)
    a = qsim.apply_gate(qsim.apply_gate(psi, g1, [0, 1]), g2, [2, 3])
    b = qsim.apply_gate(qsim.apply_gate(psi, g2, [2, 3]), g1, [0, 1])
    assert np.allclose(a, b, atol=1e-12)


def test_apply_controlled_examples():
    s = qsim.zero_state(2)
    assert np.allclose(qsim.apply_controlled(s, 0, 1, qsim.rx(0.9), 1), s)
    out = qsim.apply_controlled(s, 0, 0, qsim.X, 1)
    assert np.isclose(out[2], 1)


def test_apply_controlled_matches_block_matrix():
    rng = np.random.default_rng(7)
    n = 4
    for control, value, target in ((0, 1, 1), (3, 0, 1), (1, 1, 3), (2, 0, 0)):
        g = qsim.haar_unitary(2, rng)
        proj = np.diag([1, 0]) if value == 0 else np.diag([0, 1])
        other = np.eye(2) - proj
        dense = full_operator(np.kron(proj, g) + np.kron(other, np.eye(2)), [control, target], n)
        psi = random_state(rng, n)
        assert np.allclose(qsim.apply_controlled(psi, control, value, g, target), dense @ psi)


def test_apply_controlled_half_rotation():
    psi = np.array([1, 1, 0, 0], dtype=complex) / sqrt(2)   # (|00> + |01>)/sqrt2, qubit 0 set in |01>
    out = qsim.apply_controlled(psi, 0, 1, qsim.rx(pi / 2), 1)
    dense = np.kron(np.eye(2), np.diag([1, 0])) + np.kron(qsim.rx(pi / 2), np.diag([0, 1]))
    assert np.allclose(out, dense @ psi)


def test_apply_controlled_rejects_same_qubit():
    with pytest.raises(ValueError):
        qsim.apply_controlled(qsim.zero_state(2), 1, 1, qsim.X, 1)


def test_marginal_probs_examples():
    phi = np.array([1, 0, 0, 1]) / sqrt(2)
    assert np.allclose(qsim.marginal_probs(phi, [0, 1]), [0.5, 0, 0, 0.5])
    rng = np.random.default_rng(8)
    psi = random_state(rng, 3)
    # listing qubits high-to-low reproduces the natural basis order
    assert np.allclose(qsim.marginal_probs(psi, [2, 1, 0]), np.abs(psi) ** 2)
    assert np.allclose(qsim.marginal_probs(qsim.init_bell(1, 4), [3, 7]), [1, 0, 0, 0])


def test_marginal_probs_order_of_qubits():
    psi = np.zeros(4, dtype=complex)
    psi[1] = 1   # qubit 0 = 1, qubit 1 = 0
    assert np.allclose(qsim.marginal_probs(psi, [0, 1]), [0, 0, 1, 0])
    assert np.allclose(qsim.marginal_probs(psi, [1, 0]), [0, 1, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_marginals_of_complementary_sets_normalised(seed, n):
    rng = np.random.default_rng(seed)
    psi = random_state(rng, n)
    cut = int(rng.integers(0, n + 1))
    perm = rng.permutation(n)
    for part in (perm[:cut], perm[cut:]):
        if len(part):
            p = qsim.marginal_probs(psi, part)
            assert p.min() >= 0 and abs(p.sum() - 1) < 1e-10


def test_haar_unitary_properties():
    u = qsim.haar_unitary(16, np.random.default_rng(1))
    assert np.abs(u.conj().T @ u - np.eye(16)).max() < 1e-12
    v = qsim.haar_unitary(16, np.random.default_rng(1))
    assert np.array_equal(u, v)
    with pytest.raises(ValueError):
        qsim.haar_unitary(1, np.random.default_rng(0))


def test_haar_first_moment():
    rng = np.random.default_rng(2)
    vals = [abs(qsim.haar_unitary(2, rng)[0, 0]) ** 2 for _ in range(100_000)]
    assert abs(np.mean(vals) - 0.5) < 0.01


def test_haar_left_invariance_second_moment():
    # E|U_00|^4 = 2 / (d (d + 1)) for Haar U, also after a fixed left rotation
    rng = np.random.default_rng(9)
    d = 4
    fixed = qsim.haar_unitary(d, np.random.default_rng(100))
    samples = [qsim.haar_unitary(d, rng) for _ in range(20_000)]
    plain = np.mean([abs(u[0, 0]) ** 4 for u in samples])
    rotated = np.mean([abs((fixed @ u)[0, 0]) ** 4 for u in samples])
    target = 2 / (d * (d + 1))
    assert abs(plain - target) < 0.1 * target
    assert abs(rotated - target) < 0.1 * target


def test_zero_state_limits():
    assert qsim.zero_state(10).size == 1024
    with pytest.raises(ValueError):
        qsim.zero_state(11)
