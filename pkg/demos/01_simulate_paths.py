"""Simulate a two-server queue and look at the path and its observations.

Draws one exact path, prints the jump skeleton, then observes the path on a
regular grid the way the inference tools consume it.
"""

import numpy as np

from ctmcinfer import builtin_model, gillespie, sample_dataset

net = builtin_model("mmc", c=2)
theta = [1.5, 1.0]  # arrivals per unit time, per-server service rate

rng = np.random.default_rng(7)
path = gillespie(net, theta, x0=(0,), t_end=10.0, rng=rng)
print(f"path made {path.n_jumps} jumps on [0, 10]")
for t, x in list(zip(path.jump_times, path.states))[:8]:
    print(f"  t={t:6.3f}  queue length {x[0]}")
print("  ...")

# the same generator drives dataset sampling, so a fixed seed is reproducible
rng = np.random.default_rng(7)
data = sample_dataset(net, theta, x0=(0,), schedule=np.arange(11.0), rng=rng,
                      seed=7)
print(f"\nobserved every 1.0 time units: {data.states.ravel().tolist()}")
print(f"{data.n_observations} transitions for the likelihood")
