"""Layer builders and the two-processor model circuit.

A :class:`CircuitTemplate` is an immutable gate list whose angles are bound
to one of: a fixed value, a trainable parameter index, an input feature, or
(for the Haar ensemble) a per-processor random unitary supplied at
evaluation time. Pooling is lowered to quantum-controlled rotations by
deferred measurement, so evaluation is a single pure-state simulation
followed by marginalisation onto the two output qubits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi

import numpy as np

from . import qsim

GATE_KINDS = ("H", "CZ", "RX", "RZ", "RZZ", "CONTROLLED_RX", "CONTROLLED_RZ", "HAAR_BLOCK")
EMBEDDINGS = ("chsh_optimal", "chsh_alternative", "feature_map", "haar_random")
PARAMETRIC = {"RX", "RZ", "RZZ", "CONTROLLED_RX", "CONTROLLED_RZ"}


@dataclass(frozen=True)
class GateSpec:
    """One gate of a template.

    ``angle`` is ``None`` for fixed gates (H, CZ) and otherwise one of
    ``("fixed", value)``, ``("param", k)``, ``("x", i)`` for feature ``i``,
    ``("zz", i, j)`` for the angle ``(pi - x_i)(pi - x_j) / 2``, or
    ``("haar", proc)`` for a HAAR_BLOCK. Controlled kinds list
    ``(control, target)`` in ``qubits``.
    """

    kind: str
    qubits: tuple[int, ...]
    angle: tuple | None = None
    control_value: int | None = None
    segment: str = ""

    @property
    def param(self) -> int | None:
        if self.angle is not None and self.angle[0] == "param":
            return self.angle[1]
        return None

    @property
    def data_bound(self) -> bool:
        return self.angle is not None and self.angle[0] in ("x", "zz", "haar")


@dataclass(frozen=True)
class CircuitConfig:
    qubits_per_proc: int = 4
    n_bell: int = 0
    depth: int = 1
    # None: the 2-qubit stage runs as many conv depths as the first stage
    second_stage_depth: int | None = None
    mixing_depth: int = 0
    mixing_scope: str = "global"
    embedding: str = "feature_map"
    # Hadamard layer ahead of the Z/ZZ feature rotations
    embed_hadamard: bool = True
    embed_zz: bool = True
    # order of the two conditioned rotations inside a pooling block
    pool_order: str = "ZX"

    def __post_init__(self):
        qpp = self.qubits_per_proc
        if qpp not in (2, 4):
            raise ValueError(f"qubits_per_proc must be 2 or 4, got {qpp}")
        if not 0 <= self.n_bell <= qpp:
            raise ValueError(f"n_bell must be in 0..{qpp}, got {self.n_bell}")
        for name in ("depth", "second_stage_depth", "mixing_depth"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0")
        if qpp == 2 and self.second_stage_depth:
            raise ValueError("second_stage_depth must be 0 for 2-qubit processors")
        if self.mixing_scope not in ("global", "local"):
            raise ValueError(f"unknown mixing scope {self.mixing_scope!r}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"unknown embedding {self.embedding!r}")
        if sorted(self.pool_order) != ["X", "Z"]:
            raise ValueError(f"pool_order must be 'XZ' or 'ZX', got {self.pool_order!r}")

    @property
    def n_qubits(self) -> int:
        return 2 * self.qubits_per_proc

    @property
    def stage2_depth(self) -> int:
        if self.qubits_per_proc == 2:
            return 0
        return self.depth if self.second_stage_depth is None else self.second_stage_depth


@dataclass(frozen=True)
class CircuitTemplate:
    config: CircuitConfig
    gates: tuple[GateSpec, ...]
    param_count: int
    segments: dict[str, tuple[int, int]]
    output_qubits: tuple[int, int]
    pooled_qubits: tuple[int, ...]

    @property
    def n_qubits(self) -> int:
        return self.config.n_qubits

    def initial_state(self) -> np.ndarray:
        return qsim.init_bell(self.config.n_bell, self.config.qubits_per_proc)

    def dump(self) -> str:
        """Human-readable gate listing, one gate per line."""
        lines = [f"# qubits={self.n_qubits} params={self.param_count} "
                 f"outputs={list(self.output_qubits)} pooled={list(self.pooled_qubits)}"]
        for name, (lo, hi) in self.segments.items():
            lines.append(f"# segment {name} params [{lo}, {hi})")
        for g in self.gates:
            q = ",".join(map(str, g.qubits))
            desc = f"{g.segment:<10} {g.kind:<14} q[{q}]"
            if g.control_value is not None:
                desc += f" if={g.control_value}"
            if g.angle is not None:
                desc += " " + _format_angle(g.angle)
            lines.append(desc.rstrip())
        return "\n".join(lines) + "\n"


def _format_angle(angle: tuple) -> str:
    tag = angle[0]
    if tag == "fixed":
        return f"angle={angle[1]:.12g}"
    if tag == "param":
        return f"theta[{angle[1]}]"
    if tag == "x":
        return f"x[{angle[1]}]"
    if tag == "zz":
        return f"(pi-x[{angle[1]}])(pi-x[{angle[2]}])/2"
    return f"U_haar[{angle[1]}]"


class _Counter:
    def __init__(self, start: int = 0):
        self.next = start

    def take(self) -> tuple:
        k = self.next
        self.next += 1
        return ("param", k)


def _param_count(gates) -> int:
    return len({g.param for g in gates if g.param is not None})


def _block(q1: int, q2: int, p1: tuple, p2: tuple, segment: str) -> list[GateSpec]:
    return [
        GateSpec("H", (q1,), segment=segment),
        GateSpec("H", (q2,), segment=segment),
        GateSpec("CZ", (q1, q2), segment=segment),
        GateSpec("RX", (q1,), p1, segment=segment),
        GateSpec("RX", (q2,), p2, segment=segment),
    ]


def brickwall_sublayers(n: int) -> list[list[tuple[int, int]]]:
    """Block placement for one depth on a closed chain of ``n`` qubits.

    Four or more qubits get two staggered sublayers, e.g. (0,1),(2,3) then
    (1,2),(3,0); two qubits form a single block.
    """
    if n == 2:
        return [[(0, 1)]]
    if n % 2:
        raise ValueError("brick-wall layers need an even number of qubits")
    return [[(i, i + 1) for i in range(0, n, 2)],
            [(i, (i + 1) % n) for i in range(1, n, 2)]]


def build_conv_layer(qubits_per_proc: int = 4, param_offset: int = 0,
                     qubits: list[int] | None = None, segment: str = "conv") -> list[GateSpec]:
    """One brick-wall depth.

    Every qubit carries one X-rotation angle per depth, shared by its
    rotations in both sublayers, so a depth adds ``len(qubits)`` parameters
    (4 on a 4-qubit processor, 2 on a 2-qubit one). ``qubits`` maps chain
    positions to register indices (default ``0..qubits_per_proc-1``).
    """
    qubits = list(range(qubits_per_proc)) if qubits is None else list(qubits)
    angle = {i: ("param", param_offset + i) for i in range(len(qubits))}
    gates: list[GateSpec] = []
    for sublayer in brickwall_sublayers(len(qubits)):
        for i, j in sublayer:
            gates += _block(qubits[i], qubits[j], angle[i], angle[j], segment)
    return gates


def _pool_pair(m: int, r: int, counter: _Counter, segment: str, order: str) -> list[GateSpec]:
    gates = []
    for value in (0, 1):
        for axis in order:
            gates.append(GateSpec(f"CONTROLLED_R{axis}", (m, r), counter.take(),
                                  control_value=value, segment=segment))
    return gates


def build_pool(qubits_per_proc: int, param_offset: int = 0, qubits: list[int] | None = None,
               segment: str = "pool", order: str = "ZX") -> list[GateSpec]:
    """Deferred-measurement pooling: measured qubit ``m`` conditions a pair of
    rotations on its neighbour ``r`` for each outcome (4 parameters per pair).

    Four qubits pool (0 -> 1) and (2 -> 3); two qubits pool (0 -> 1).
    """
    qubits = list(range(qubits_per_proc)) if qubits is None else list(qubits)
    counter = _Counter(param_offset)
    gates: list[GateSpec] = []
    for i in range(0, len(qubits), 2):
        gates += _pool_pair(qubits[i], qubits[i + 1], counter, segment, order)
    return gates


def build_embedding(features, config: CircuitConfig | None = None,
                    qubits_per_proc: int | None = None) -> list[GateSpec]:
    """Feature-embedding gates for both processors.

    ``features`` is either the per-processor feature count check value (an
    array of length ``2 * qpp``) or ``None`` to emit symbolic bindings only;
    the returned gates always reference features symbolically.
    """
    if config is None:
        config = CircuitConfig(qubits_per_proc=qubits_per_proc or 4)
    qpp = config.qubits_per_proc
    if features is not None:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != 2 * qpp:
            raise ValueError(f"expected {2 * qpp} features ({qpp} per processor), got {features.shape[-1]}")
    gates: list[GateSpec] = []
    if config.embedding == "haar_random":
        for proc in (0, 1):
            # most significant target first, so the block's row index equals
            # the processor-local basis index
            gates.append(GateSpec("HAAR_BLOCK", tuple(reversed(range(proc * qpp, (proc + 1) * qpp))),
                                  ("haar", proc), segment="embed"))
        return gates
    if config.embed_hadamard:
        gates += [GateSpec("H", (q,), segment="embed") for q in range(2 * qpp)]
    for proc in (0, 1):
        local = [proc * qpp + i for i in range(qpp)]
        gates += [GateSpec("RZ", (q,), ("x", q), segment="embed") for q in local]
        if config.embed_zz:
            for i in range(qpp - 1):
                gates.append(GateSpec("RZZ", (local[i], local[i + 1]),
                                      ("zz", local[i], local[i + 1]), segment="embed"))
    return gates


def build_mixing(mixing_depth: int, scope: str = "global", qubits_per_proc: int = 4,
                 param_offset: int = 0) -> list[GateSpec]:
    """Trainable conv-structured layers acting on the shared initial state.

    ``global`` treats all qubits of both processors as one closed chain;
    ``local`` applies an ordinary conv depth on each processor. Either way a
    depth adds one parameter per qubit.
    """
    if scope not in ("global", "local"):
        raise ValueError(f"unknown mixing scope {scope!r}")
    n = 2 * qubits_per_proc
    gates: list[GateSpec] = []
    offset = param_offset
    for _ in range(mixing_depth):
        if scope == "global":
            gates += build_conv_layer(n, offset, segment="mixing")
        else:
            for proc in (0, 1):
                local = [proc * qubits_per_proc + i for i in range(qubits_per_proc)]
                gates += build_conv_layer(qubits_per_proc, offset + proc * qubits_per_proc,
                                          qubits=local, segment="mixing")
        offset += n
    return gates


def assemble(config: CircuitConfig) -> CircuitTemplate:
    """Full model: mixing -> embedding -> [conv x depth -> pool] per stage.

    Four-qubit processors run two stages (4 -> 2 -> 1 qubits); two-qubit
    processors run one.
    """
    qpp = config.qubits_per_proc
    gates: list[GateSpec] = []
    segments: dict[str, tuple[int, int]] = {}
    offset = 0

    def add(name: str, new: list[GateSpec]) -> None:
        nonlocal offset
        count = _param_count(new)
        if count:
            segments[name] = (offset, offset + count)
            offset += count
        gates.extend(new)

    add("mixing", build_mixing(config.mixing_depth, config.mixing_scope, qpp, offset))
    gates.extend(build_embedding(None, config))

    stages = [(config.depth, list(range(qpp)))]
    if qpp == 4:
        stages.append((config.stage2_depth, [1, 3]))
    pooled: list[int] = []
    for stage, (depth, local) in enumerate(stages, start=1):
        for proc, tag in ((0, "A"), (1, "B")):
            qubits = [proc * qpp + i for i in local]
            layer: list[GateSpec] = []
            for _ in range(depth):
                layer += build_conv_layer(qpp, offset + _param_count(layer), qubits=qubits,
                                          segment=f"conv{tag}{stage}")
            add(f"conv{tag}{stage}", layer)
        for proc, tag in ((0, "A"), (1, "B")):
            qubits = [proc * qpp + i for i in local]
            add(f"pool{tag}{stage}", build_pool(qpp, offset, qubits=qubits,
                                                segment=f"pool{tag}{stage}", order=config.pool_order))
            pooled += qubits[0::2]
    outputs = (qpp - 1, 2 * qpp - 1)
    return CircuitTemplate(config, tuple(gates), offset, segments, outputs, tuple(pooled))


def parameter_count(config: CircuitConfig) -> int:
    """Closed-form parameter count, independent of :func:`assemble`."""
    qpp = config.qubits_per_proc
    mixing = 2 * qpp * config.mixing_depth
    if qpp == 2:
        per_proc = 2 * config.depth + 4
    else:
        per_proc = 4 * config.depth + 8 + 2 * config.stage2_depth + 4
    return mixing + 2 * per_proc


# ---------------------------------------------------------------------------
# binding and evaluation

@dataclass
class Op:
    """A gate with its angle resolved to a concrete matrix.

    ``matrix`` holds the diagonal entries when ``diagonal`` is set. It may
    carry leading batch axes for data-bound gates.
    """

    kind: str
    qubits: tuple[int, ...]
    matrix: np.ndarray
    diagonal: bool = False
    control_value: int | None = None
    param: int | None = None
    generator: np.ndarray | None = field(default=None, repr=False)


_GENERATORS = {"RX": qsim.X, "RZ": np.array([1, -1], dtype=complex),
               "RZZ": np.array([1, -1, -1, 1], dtype=complex),
               "CONTROLLED_RX": qsim.X, "CONTROLLED_RZ": qsim.Z}


def _angle_value(angle: tuple, params: np.ndarray, features: np.ndarray | None):
    tag = angle[0]
    if tag == "fixed":
        return angle[1]
    if tag == "param":
        return params[angle[1]]
    if features is None:
        raise ValueError("template needs input features but none were given")
    if tag == "x":
        return features[..., angle[1]]
    return 0.5 * (pi - features[..., angle[1]]) * (pi - features[..., angle[2]])


def _rz_diag(theta) -> np.ndarray:
    theta = np.asarray(theta)[..., None]
    return np.exp(-0.5j * theta * np.array([1, -1]))


def _rzz_diag(theta) -> np.ndarray:
    theta = np.asarray(theta)[..., None]
    return np.exp(-0.5j * theta * np.array([1, -1, -1, 1]))


def bind(template: CircuitTemplate, params, data=None) -> list[Op]:
    """Resolve every gate of ``template`` to an :class:`Op`.

    ``data`` is a feature array of shape ``(..., 2*qpp)`` for feature
    embeddings, or a pair ``(U_A, U_B)`` of (optionally batched) unitaries
    for the Haar embedding.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (template.param_count,):
        raise ValueError(f"expected {template.param_count} parameters, got shape {params.shape}")
    haar = None
    features = None
    if template.config.embedding == "haar_random":
        haar = data
    elif data is not None:
        features = np.asarray(data, dtype=float)
        if features.shape[-1] != template.n_qubits:
            raise ValueError(f"expected {template.n_qubits} features, got {features.shape[-1]}")
    ops = []
    for g in template.gates:
        k = g.kind
        if k == "H":
            ops.append(Op(k, g.qubits, qsim.H))
        elif k == "CZ":
            ops.append(Op(k, g.qubits, np.array([1, 1, 1, -1], dtype=complex), diagonal=True))
        elif k == "HAAR_BLOCK":
            if haar is None:
                raise ValueError("Haar-embedding template needs a (U_A, U_B) pair")
            ops.append(Op(k, g.qubits, np.asarray(haar[g.angle[1]])))
        else:
            theta = _angle_value(g.angle, params, features)
            gen = _GENERATORS[k]
            if k == "RX" or k == "CONTROLLED_RX":
                mat = qsim.rx(float(theta))
                ops.append(Op(k, g.qubits, mat, control_value=g.control_value, param=g.param, generator=gen))
            elif k == "CONTROLLED_RZ":
                ops.append(Op(k, g.qubits, qsim.rz(float(theta)), control_value=g.control_value,
                              param=g.param, generator=gen))
            elif k == "RZ":
                ops.append(Op(k, g.qubits, _rz_diag(theta), diagonal=True, param=g.param, generator=gen))
            else:
                ops.append(Op(k, g.qubits, _rzz_diag(theta), diagonal=True, param=g.param, generator=gen))
    return ops


def apply_op(op: Op, state: np.ndarray, inverse: bool = False) -> np.ndarray:
    mat = op.matrix
    if inverse:
        mat = np.conj(mat) if op.diagonal else np.conj(np.swapaxes(mat, -1, -2))
    if op.control_value is not None:
        return qsim.apply_controlled(state, op.qubits[0], op.control_value, mat, op.qubits[1])
    if op.diagonal:
        return state * qsim.expand_diagonal(mat, op.qubits, qsim.num_qubits(state))
    return qsim.apply_gate(state, mat, op.qubits)


def apply_generator(op: Op, state: np.ndarray) -> np.ndarray:
    """Hermitian generator G of ``op`` (U = exp(-i theta G / 2)) applied to ``state``.

    For a controlled rotation G is the control projector times the Pauli.
    """
    n = qsim.num_qubits(state)
    if op.control_value is not None:
        ctrl, target = op.qubits
        out = qsim.apply_gate(state, op.generator, (target,))
        keep = ((np.arange(1 << n) >> ctrl) & 1) == op.control_value
        return out * keep
    if op.diagonal:
        return state * qsim.expand_diagonal(op.generator, op.qubits, n)
    return qsim.apply_gate(state, op.generator, op.qubits)


def run(ops: list[Op], state: np.ndarray) -> np.ndarray:
    for op in ops:
        state = apply_op(op, state)
    return state


def evaluate(template: CircuitTemplate, params, initial: np.ndarray | None = None,
             data=None) -> np.ndarray:
    """Joint output distribution P(a, b), ordered (0,0), (0,1), (1,0), (1,1).

    Batched ``data`` yields a batch of distributions.
    """
    if initial is None:
        initial = template.initial_state()
    ops = bind(template, params, data)
    state = run(ops, np.asarray(initial, dtype=complex))
    return qsim.marginal_probs(state, template.output_qubits)


def _measure(state: np.ndarray, qubit: int) -> tuple[float, np.ndarray, np.ndarray]:
    """P(qubit = 0) and the two renormalised post-measurement states."""
    bit = (np.arange(state.size) >> qubit) & 1
    p0 = float(np.sum(np.abs(state[bit == 0]) ** 2))
    post = []
    for value, p in ((0, p0), (1, 1.0 - p0)):
        s = np.where(bit == value, state, 0)
        post.append(s / np.sqrt(p) if p > 0 else s)
    return p0, post[0], post[1]


def sample_measured(template: CircuitTemplate, params, shots: int, rng: np.random.Generator,
                    initial: np.ndarray | None = None, data=None) -> np.ndarray:
    """Outcome counts (4,) from shot sampling with real mid-circuit measurements.

    Instead of controlled rotations, each pooled qubit is measured when its
    first conditioned gate is reached and only the rotations for the observed
    outcome are applied. Shots that share a measurement history share a
    trajectory, so counts are split binomially at each measurement; the
    result has the same distribution as simulating every shot separately.
    Test oracle for the deferred-measurement lowering used by :func:`evaluate`.
    """
    if initial is None:
        initial = template.initial_state()
    ops = bind(template, params, data)
    counts = np.zeros(4, dtype=np.int64)

    def walk(start: int, state: np.ndarray, n: int, outcomes: dict) -> None:
        for k in range(start, len(ops)):
            op = ops[k]
            if op.control_value is None:
                state = apply_op(op, state)
                continue
            ctrl, target = op.qubits
            if ctrl not in outcomes:
                p0, s0, s1 = _measure(state, ctrl)
                n0 = int(rng.binomial(n, min(max(p0, 0.0), 1.0)))
                for value, m, s in ((0, n0, s0), (1, n - n0, s1)):
                    if m:
                        walk(k, s, m, {**outcomes, ctrl: value})
                return
            if outcomes[ctrl] == op.control_value:
                state = qsim.apply_gate(state, op.matrix, (target,))
        p = qsim.marginal_probs(state, template.output_qubits)
        counts[:] += rng.multinomial(n, np.clip(p, 0, None) / p.sum())

    walk(0, np.asarray(initial, dtype=complex), int(shots), {})
    return counts
