"""
Capsule routing by agreement
============================

A capsule's pose vector length encodes how strongly it believes its entity
is present; the squash nonlinearity keeps that length below 1. Routing by
agreement then decides, iteration by iteration, which higher capsule each
lower capsule should report to.

This script shows the squash saturation curve and a 2-lower / 2-higher
routing instance where the agreeing capsule wins the coupling.
"""

import numpy as np

from capsyolo import Tensor, route, squash

# Squash: input norms from 0 to 10 map into [0, 1).
for norm in (0.0, 0.5, 1.0, 2.0, 10.0):
    v = np.zeros(4)
    v[0] = norm
    out = np.linalg.norm(squash(Tensor(v)).data)
    print(f"|s| = {norm:5.2f}  ->  |squash(s)| = {out:.4f}")

# Two lower capsules cast predictions for two higher capsules. They agree
# about higher capsule 0 (same vector) and disagree about higher capsule 1
# (opposite vectors).
predictions = np.zeros((2, 2, 2))
predictions[0, 0] = [1.0, 0.0]
predictions[1, 0] = [1.0, 0.0]
predictions[0, 1] = [0.0, 1.0]
predictions[1, 1] = [0.0, -1.0]

state = route(Tensor(predictions), iterations=3)
print("\ncoupling per iteration (lower capsule 0):")
for i, coupling in enumerate(state.coupling_history, start=1):
    print(f"  iteration {i}: towards higher 0: {coupling[0, 0]:.3f}, "
          f"towards higher 1: {coupling[0, 1]:.3f}")

norms = np.linalg.norm(state.higher_poses.data, axis=-1)
print(f"\nfinal pose norms: agreeing capsule {norms[0]:.3f}, "
      f"conflicted capsule {norms[1]:.3f}")
print("agreement concentrated the coupling and the conflicted capsule collapsed.")
