"""Exact path simulation and schedule-based dataset generation."""

import math

import numpy as np
import pytest

from ctmcinfer import (
    ReactionNetwork,
    Truncation,
    assemble,
    builtin_model,
    gillespie,
    oracle_expm,
    sample_dataset,
)


def _pure_death():
    return ReactionNetwork(
        update_matrix=np.array([[-1]]),
        propensities=(lambda x, th: th[0] * x[0],),
        lower_bounds=(0,),
        upper_bounds=(None,),
        param_dim=1,
        name="death",
    )


def test_gillespie_validates_inputs():
    net = builtin_model("mmc", c=1, upper_bounds=(3,))
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        gillespie(net, [1.0, 1.0], [7], 1.0, rng)
    with pytest.raises(ValueError):
        gillespie(net, [1.0, 1.0], [1], -1.0, rng)
    with pytest.raises(ValueError):
        gillespie(net, [1.0, -1.0], [1], 1.0, rng)


def test_gillespie_absorbing_state_holds_forever():
    net = _pure_death()
    rng = np.random.default_rng(1)
    still = gillespie(net, [2.0], [0], 5.0, rng)
    assert still.n_jumps == 0
    assert still.state_at(4.5).tolist() == [0]
    decayed = gillespie(net, [2.0], [3], 200.0, rng)
    assert decayed.n_jumps == 3
    assert decayed.state_at(200.0).tolist() == [0]


def test_gillespie_path_structure_and_right_continuity():
    net = builtin_model("mmc", c=1)
    rng = np.random.default_rng(3)
    path = gillespie(net, [2.0, 1.0], [0], 4.0, rng)
    assert path.jump_times[0] == 0.0
    assert np.all(np.diff(path.jump_times) > 0)
    steps = np.diff(path.states[:, 0])
    assert set(steps).issubset({-1, 1})
    # at a jump time the post-jump state is reported
    if path.n_jumps > 0:
        t1 = path.jump_times[1]
        assert path.state_at(t1).tolist() == path.states[1].tolist()
        assert path.state_at(t1 - 1e-12).tolist() == path.states[0].tolist()
    with pytest.raises(ValueError):
        path.state_at(4.5)


def test_gillespie_is_reproducible():
    net = builtin_model("mmc", c=2)
    a = gillespie(net, [2.0, 1.0], [1], 6.0, np.random.default_rng(9))
    b = gillespie(net, [2.0, 1.0], [1], 6.0, np.random.default_rng(9))
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.states, b.states)


def test_gillespie_jump_cap_guards_against_explosions():
    net = builtin_model("mmc", c=1)
    with pytest.raises(RuntimeError):
        gillespie(net, [500.0, 0.1], [0], 10.0, np.random.default_rng(0),
                  max_jumps=20)


def test_gillespie_counts_match_poisson_in_the_pure_birth_case():
    # with service off, arrivals by time t are Poisson(theta_1 t)
    net = builtin_model("mmc", c=1)
    rng = np.random.default_rng(4)
    counts = [
        gillespie(net, [3.0, 0.0], [0], 2.0, rng).state_at(2.0)[0]
        for _ in range(5000)
    ]
    assert np.mean(counts) == pytest.approx(6.0, abs=0.15)
    assert np.var(counts) == pytest.approx(6.0, rel=0.1)


def test_gillespie_marginal_matches_the_exact_kernel():
    # 4-state queue: empirical law of X_t against the matrix exponential row
    net = builtin_model("mmc", c=1, upper_bounds=(3,))
    theta = [0.8, 0.6]
    t = 0.6
    full = Truncation(states=((0,), (1,), (2,), (3,)))
    P = oracle_expm(assemble(net, full, theta).to_dense(), t)
    rng = np.random.default_rng(8)
    n_paths = 20000
    hits = np.zeros(4)
    for _ in range(n_paths):
        hits[gillespie(net, theta, [1], t, rng).state_at(t)[0]] += 1
    tv = 0.5 * np.abs(hits / n_paths - P[1]).sum()
    assert tv < 0.015


# ---------------------------------------------------------------------------
# dataset generation


def test_sample_dataset_shapes_and_metadata():
    net = builtin_model("mmc", c=1, upper_bounds=(5,))
    schedule = [0.0, 0.5, 1.0, 1.5]
    data = sample_dataset(net, [1.5, 1.0], [2], schedule,
                          np.random.default_rng(5), seed=5)
    assert data.model == "mmc"
    assert data.times.tolist() == schedule
    assert data.states.shape == (4, 1)
    assert data.n_observations == 3
    assert data.meta["theta"] == [1.5, 1.0]
    assert data.meta["x0"] == [2]
    assert data.meta["seed"] == 5
    assert data.meta["upper_bounds"] == [5.0]
    assert data.meta["model_params"]["c"] == 1
    for x_from, x_to, dt in data.intervals():
        assert dt == pytest.approx(0.5)
        assert 0 <= x_from[0] <= 5 and 0 <= x_to[0] <= 5


def test_sample_dataset_observes_the_underlying_path():
    net = builtin_model("mmc", c=1)
    schedule = np.linspace(0.0, 3.0, 7)
    path = gillespie(net, [2.0, 1.0], [0], 3.0, np.random.default_rng(11))
    data = sample_dataset(net, [2.0, 1.0], [0], schedule,
                          np.random.default_rng(11))
    assert np.array_equal(data.states, path.state_at(schedule))


def test_sample_dataset_rejects_bad_schedules():
    net = builtin_model("mmc", c=1)
    rng = np.random.default_rng(0)
    for schedule in ([0.0], [0.0, 1.0, 1.0], [-1.0, 0.5], [[0.0, 1.0]]):
        with pytest.raises(ValueError):
            sample_dataset(net, [1.0, 1.0], [0], schedule, rng)
