"""Synthetic 8-feature task: Bell-0 vs Bell-1 vs the classical baseline."""
from dqml import datasets, dnn
from dqml.circuit import CircuitConfig
from dqml.train import TrainConfig, train

data = datasets.gen_synthetic(seed=0)
print(f"{data.train[1].size} training / {data.val[1].size} validation samples")

for bell in (0, 1):
    # a few hundred steps is enough to see the gap
    state = train(CircuitConfig(qubits_per_proc=4, n_bell=bell, depth=6),
                  TrainConfig(iterations=300, seed=0), data.train, data.val)
    print(f"Bell-{bell}: val acc {state.history[-1]['val_acc']:.3f}")

net, hist = dnn.train_dnn(TrainConfig(learning_rate=0.01, seed=0), data.train, data.val)
print(f"DNN ({net.params.size} params): val acc {hist[-1]['val_acc']:.3f}")
