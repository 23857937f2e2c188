"""Exact stochastic simulation of reaction networks and dataset generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .reaction import ReactionNetwork

__all__ = ["PathSample", "gillespie", "sample_dataset"]

DEFAULT_JUMP_CAP = 10_000_000


@dataclass(frozen=True)
class PathSample:
    """A right-continuous jump path: state states[i] holds on [jump_times[i], jump_times[i+1])."""

    jump_times: np.ndarray
    states: np.ndarray
    t_end: float

    @property
    def n_jumps(self) -> int:
        return self.jump_times.shape[0] - 1

    def state_at(self, t) -> np.ndarray:
        """Right-continuous evaluation at one time or an array of times."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_end):
            raise ValueError("query time outside the simulated horizon")
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[idx]


def gillespie(net: ReactionNetwork, theta, x0, t_end: float, rng,
              max_jumps: int = DEFAULT_JUMP_CAP) -> PathSample:
    """Simulate one path on [0, t_end].

    Holding times are exponential with the total propensity as rate; states
    with zero total rate are absorbing and hold forever. Raises RuntimeError
    if the path exceeds max_jumps, the guard against explosive dynamics.
    """
    theta = net.validate_theta(theta)
    x = np.asarray(x0, dtype=np.int64)
    if not net.in_bounds(x):
        raise ValueError(f"initial state {tuple(x)} outside the state-space bounds")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    times = [0.0]
    states = [x.copy()]
    t = 0.0
    while True:
        rates = net.propensity_vector(x, theta)
        total = float(rates.sum())
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > t_end:
            break
        cum = np.cumsum(rates)
        r = int(np.searchsorted(cum, rng.uniform() * total, side="right"))
        r = min(r, net.n_reactions - 1)
        x = x + net.update_matrix[r]
        times.append(t)
        states.append(x.copy())
        if len(times) - 1 > max_jumps:
            raise RuntimeError(
                f"jump cap {max_jumps} exceeded before t={t_end}; "
                "the chain may be explosive"
            )
    return PathSample(
        jump_times=np.asarray(times),
        states=np.asarray(states, dtype=np.int64),
        t_end=float(t_end),
    )


def sample_dataset(net: ReactionNetwork, theta, x0, schedule, rng,
                   max_jumps: int = DEFAULT_JUMP_CAP, seed=None) -> Dataset:
    """Simulate one path and observe it at the given schedule of times."""
    schedule = np.asarray(schedule, dtype=float)
    if schedule.ndim != 1 or schedule.size < 2:
        raise ValueError("schedule must hold at least two times")
    if schedule[0] < 0 or not np.all(np.diff(schedule) > 0):
        raise ValueError("schedule must be nonnegative and strictly increasing")
    path = gillespie(net, theta, x0, float(schedule[-1]), rng, max_jumps)
    observed = path.state_at(schedule)
    meta = {
        "lower_bounds": list(net.lower_bounds),
        "upper_bounds": [float(b) for b in net.upper_bounds],
        "theta": np.asarray(theta, dtype=float).tolist(),
        "x0": [int(v) for v in np.asarray(x0)],
        "seed": seed,
        "model_params": {k: v for k, v in net.model_params.items()
                         if not isinstance(v, np.ndarray)},
    }
    return Dataset(times=schedule, states=observed, model=net.name, meta=meta)
