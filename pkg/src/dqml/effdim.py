"""Fisher information of the (a, b) output distribution and its rank.

The effective dimension of a model is the largest rank, over random
parameter draws, of the Fisher matrix averaged over an input ensemble. Here
the ensemble replaces the data embedding by independent Haar-random
unitaries on each processor.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from math import tau

import numpy as np

from . import qsim
from .circuit import CircuitConfig, CircuitTemplate, assemble
from .engine import CompiledCircuit

PROB_FLOOR = 1e-14


@dataclass(frozen=True)
class EDProtocol:
    n_haar: int = 100
    n_paramsets: int = 20
    rank_tol_rel: float = 1e-10
    seed: int = 0


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    n_inputs: int

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True)
class RankInfo:
    rank: int
    threshold: float
    # ratio of the smallest kept eigenvalue to the largest discarded one
    gap: float


@dataclass(frozen=True)
class EDResult:
    ed: int
    param_count: int
    ranks: tuple[int, ...]
    gap: float


def fisher_from_jacobian(probs, jac) -> np.ndarray:
    """(1/N) sum_n sum_y dP dP^T / P from (N, Y) probabilities and (N, Y, P)
    derivatives; outcomes with P < 1e-14 contribute nothing."""
    probs = np.asarray(probs, dtype=float)
    jac = np.asarray(jac, dtype=float)
    inv = np.where(probs > PROB_FLOOR, 1.0 / np.maximum(probs, PROB_FLOOR), 0.0)
    F = np.einsum("nyi,ny,nyj->ij", jac, inv, jac) / probs.shape[0]
    return 0.5 * (F + F.T)


def fisher_matrix(template: CircuitTemplate, params, inputs,
                  compiled: CompiledCircuit | None = None) -> FisherMatrix:
    """Input-averaged Fisher matrix.

    ``inputs`` is a (U_A, U_B) pair of (N, d, d) stacks for Haar templates or
    an (N, 2*qpp) feature array otherwise.
    """
    compiled = compiled or CompiledCircuit(template)
    if template.config.embedding == "haar_random":
        data = inputs
        n = np.asarray(inputs[0]).shape[0]
    else:
        data = compiled.embed_phases(inputs)
        n = data.shape[0]
    probs, jac = compiled.jacobian(np.asarray(params, dtype=float), data)
    return FisherMatrix(fisher_from_jacobian(probs, jac), n)


def numerical_rank(F, tol_rel: float = 1e-10) -> RankInfo:
    """Eigenvalues above ``tol_rel * lambda_max`` plus the gap at the cut."""
    if isinstance(F, FisherMatrix):
        F = F.matrix
    ev = np.linalg.eigvalsh(np.asarray(F, dtype=float))
    if ev.size == 0:
        return RankInfo(0, 0.0, float("inf"))
    thresh = tol_rel * max(ev[-1], 1e-300)
    kept = ev[ev > thresh]
    dropped = ev[ev <= thresh]
    if kept.size == 0:
        gap = 0.0
    elif dropped.size == 0:
        gap = float("inf")
    else:
        gap = float(kept.min() / max(abs(dropped).max(), 1e-300))
    return RankInfo(int(kept.size), float(thresh), gap)


def haar_ensemble(n: int, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    ua = np.stack([qsim.haar_unitary(dim, rng) for _ in range(n)])
    ub = np.stack([qsim.haar_unitary(dim, rng) for _ in range(n)])
    return ua, ub


def effective_dimension(config: CircuitConfig, protocol: EDProtocol = EDProtocol(),
                        rng: np.random.Generator | None = None) -> EDResult:
    """Max Fisher rank over ``n_paramsets`` uniform draws from [0, 2 pi).

    Stops early once a draw reaches full rank.
    """
    if config.embedding != "haar_random":
        raise ValueError("effective dimension uses the haar_random embedding")
    rng = rng if rng is not None else np.random.default_rng(protocol.seed)
    template = assemble(config)
    compiled = CompiledCircuit(template)
    inputs = haar_ensemble(protocol.n_haar, 1 << config.qubits_per_proc, rng)
    best, gap, ranks = -1, float("inf"), []
    for _ in range(protocol.n_paramsets):
        params = rng.uniform(0.0, tau, template.param_count)
        info = numerical_rank(fisher_matrix(template, params, inputs, compiled),
                              protocol.rank_tol_rel)
        ranks.append(info.rank)
        if info.rank > best:
            best, gap = info.rank, info.gap
        if best == template.param_count:
            break
    return EDResult(best, template.param_count, tuple(ranks), gap)


def depth_sweep(config: CircuitConfig, protocol: EDProtocol = EDProtocol(), d_max: int = 30,
                patience: int = 3, d_min: int = 1) -> list[dict]:
    """ED against total depth (mixing + conv layers), stopping after
    ``patience`` consecutive depths without an increase."""
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    rows, flat = [], 0
    start = max(d_min, config.mixing_depth + 1)
    for depth in range(start, d_max + 1):
        cfg = replace(config, depth=depth - config.mixing_depth)
        rng = np.random.default_rng([protocol.seed, config.n_bell, config.mixing_depth, depth])
        res = effective_dimension(cfg, protocol, rng)
        if rows and res.ed <= rows[-1]["ed"]:
            flat += 1
        else:
            flat = 0
        rows.append({"depth": depth, "n_bell": config.n_bell, "mixing_depth": config.mixing_depth,
                     "ed": res.ed, "param_count": res.param_count, "gap": res.gap})
        if flat >= patience:
            break
    return rows


SWEEP_FIELDS = ["depth", "n_bell", "mixing_depth", "ed", "param_count", "gap"]


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in SWEEP_FIELDS})
