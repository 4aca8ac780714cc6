"""Fisher rank against depth for Bell-0 and Bell-4.

Both climb by 8 per layer; Bell-4 stalls at 100 once depth reaches 10.
Takes a couple of minutes.
"""
import numpy as np

from dqml import effdim
from dqml.circuit import CircuitConfig

protocol = effdim.EDProtocol(n_haar=100, n_paramsets=5)
for bell in (0, 4):
    eds = []
    for depth in (1, 2, 3, 9, 10, 11):
        cfg = CircuitConfig(qubits_per_proc=4, n_bell=bell, depth=depth, embedding="haar_random")
        eds.append(effdim.effective_dimension(cfg, protocol, np.random.default_rng(depth)).ed)
    print(f"Bell-{bell}: depths 1,2,3,9,10,11 -> {eds}")
