"""Walk through the round-robin polling schedule on a small network.

Shows the cyclic shift, polled-neighbor selection, held-sample timestamps
and the bandwidth ledger against all-neighbor broadcast.
"""

import numpy as np

from rrlmi import protocol
from rrlmi.model import LargeScaleSystem, SubsystemModel, example2_system

# a 4-subsystem star: subsystem 4 polls neighbors {1, 2, 3} in turn
subs = [
    SubsystemModel(i, -np.eye(1), {j: np.zeros((1, 1)) for j in nbrs},
                   np.eye(1), np.eye(1), np.eye(1), np.zeros((1, 1)))
    for i, nbrs in ((1, (2,)), (2, (1,)), (3, (4,)), (4, (1, 2, 3)))
]
star = LargeScaleSystem(subs, [(2,), (1,), (4,), (1, 2, 3)], delta=0.1)

print("ordered neighbor set of subsystem 4:", star.neighbors(4))
for k in range(4):
    shifted = protocol.shift_permutation(list(star.neighbors(4)), k)
    polled = protocol.polled_neighbor(4, k, star)
    print(f"  step {k}: shifted set {shifted}, polled neighbor {polled}")

print("\npositions of each neighbor in the shifted set (step 1 and 2):")
for k in (1, 2):
    positions = {j: protocol.neighbor_index(j, k, 4, star) for j in star.neighbors(4)}
    print(f"  step {k}: {positions}")

print("\nheld-sample timestamps of subsystem 4 over ten steps:")
for k in range(10):
    stamps = {j: protocol.held_timestamp(4, j, k, star) for j in star.neighbors(4)}
    print(f"  during [t_{k}, t_{k+1}): {stamps}")
print(f"staleness never reaches tau_4 = {star.polling_period(4)}")

chain = example2_system(N=10)
print("\nbandwidth on the 10-subsystem chain:", protocol.bandwidth_summary(chain))
chain100 = example2_system(N=100)
print("bandwidth on the 100-subsystem chain:", protocol.bandwidth_summary(chain100))
