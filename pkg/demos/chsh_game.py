"""Train the two-processor circuit on the extended CHSH game.

With one shared Bell pair the per-input success approaches cos^2(pi/8);
without it the circuit cannot beat the classical 3/4.
"""
from math import cos, pi

import numpy as np

from dqml import datasets, model
from dqml.circuit import CircuitConfig
from dqml.train import Classifier, TrainConfig, train

x, y = datasets.chsh_dataset("optimal")
cfg = TrainConfig(iterations=2000, loss="product", omega_mode="parity_fixed_unit", seed=1)

for bell in (0, 1):
    circ = CircuitConfig(qubits_per_proc=2, n_bell=bell, depth=10)
    state = train(circ, cfg, (x, y))
    clf = Classifier(circ, cfg.omega_mode)
    E = clf.expectations(state.opt.params, clf.prepare(x))
    succ = model.chsh_success(E, y).mean()
    print(f"Bell-{bell}: success {succ:.4f}  accuracy {model.accuracy(y, E):.3f}")

print(f"classical bound 0.75, quantum bound {cos(pi / 8) ** 2:.4f}")
