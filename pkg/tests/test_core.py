import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedfreq.core import (DiscountConfig, MixedDataset, Trajectory, Transition, canonical_dt,
                            discounted_return, merge_datasets, per_step_discount)
from mixedfreq.storage import dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset


def make_traj(dt, rewards, tid="t0", dim=2, seed=0, terminal_last=False):
    rng = np.random.default_rng(seed)
    T = len(rewards)
    s = rng.standard_normal((T + 1, dim))
    term = np.zeros(T, dtype=bool)
    if T:
        term[-1] = terminal_last
    return Trajectory(dt, s[:-1], rng.uniform(-1, 1, (T, 1)), np.asarray(rewards, float), s[1:], term, tid)


SCALED = DiscountConfig(0.99, 0.02, True, True)


def test_per_step_discount_examples():
    assert per_step_discount(SCALED, 0.02) == pytest.approx(0.99, abs=1e-15)
    assert per_step_discount(DiscountConfig(0.99, 0.02, True, False), 0.02) == 0.99
    expected = float(mpmath.mpf("0.99") ** mpmath.mpf("0.5"))
    assert per_step_discount(SCALED, 0.01) == pytest.approx(expected, rel=1e-14)
    assert per_step_discount(SCALED, 0.01) == pytest.approx(0.994987, abs=1e-6)


@pytest.mark.parametrize("dt", [0.0, -0.01])
def test_per_step_discount_rejects_nonpositive_dt(dt):
    with pytest.raises(ValueError):
        per_step_discount(SCALED, dt)


def test_per_step_discount_rejects_dt_above_max_when_scaled():
    with pytest.raises(ValueError):
        per_step_discount(SCALED, 0.04)


def test_discounted_return_examples():
    assert discounted_return(make_traj(0.01, [0.0] * 7), SCALED) == 0.0
    assert discounted_return(make_traj(0.02, [100.0]), SCALED) == pytest.approx(2.0, rel=1e-15)
    mpmath.mp.dps = 40
    g = mpmath.mpf("0.99") ** mpmath.mpf("0.5")
    expected = float(mpmath.mpf("0.01") * (1 + g + g ** 2))
    assert discounted_return(make_traj(0.01, [1.0, 1.0, 1.0]), SCALED) == pytest.approx(expected, rel=1e-14)


def test_discounted_return_unscaled_reward():
    cfg = DiscountConfig(0.9, 1.0, scale_rewards_by_dt=False, scale_discount_by_dt=False)
    assert discounted_return(make_traj(0.5, [1.0, 2.0]), cfg) == pytest.approx(1.0 + 0.9 * 2.0)


@given(st.floats(0.5, 0.999), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_per_step_discount_monotone_in_dt(gamma, a, b):
    cfg = DiscountConfig(gamma, 1.0)
    lo, hi = sorted((a, b))
    assert per_step_discount(cfg, lo) >= per_step_discount(cfg, hi)
    if hi > lo * 1.01:
        assert per_step_discount(cfg, lo) > per_step_discount(cfg, hi)


rewards_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=40)


@given(rewards_st, st.floats(-10, 10, allow_nan=False))
def test_return_is_linear_in_rewards(rewards, a):
    t1, t2 = make_traj(0.01, rewards), make_traj(0.01, [a * r for r in rewards])
    lhs, rhs = discounted_return(t2, SCALED), a * discounted_return(t1, SCALED)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=50)
@given(rewards_st, st.integers(1, 39), st.sampled_from([0.005, 0.01, 0.02]))
def test_return_telescopes(rewards, k, dt):
    k = min(k, len(rewards) - 1)
    full = make_traj(dt, rewards)
    head = make_traj(dt, rewards[:k])
    tail = make_traj(dt, rewards[k:])
    g = per_step_discount(SCALED, dt)
    total = discounted_return(head, SCALED) + g ** k * discounted_return(tail, SCALED)
    ref = discounted_return(full, SCALED)
    scale = dt * sum(abs(r) for r in rewards) + 1e-300
    assert abs(total - ref) <= 1e-9 * max(abs(ref), scale)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        make_traj(0.0, [1.0])
    with pytest.raises(ValueError):
        make_traj(0.01, [])
    with pytest.raises(ValueError):
        make_traj(0.01, [1.0, math.inf])
    s = np.zeros((3, 2))
    with pytest.raises(ValueError, match="following state"):
        Trajectory(0.01, s, np.zeros((3, 1)), np.zeros(3), s + 1, np.zeros(3, bool), "x")


def test_trajectory_from_transitions_round_trip():
    traj = make_traj(0.01, [1.0, 2.0, 3.0], terminal_last=True)
    again = Trajectory.from_transitions(0.01, traj.transitions, traj.id)
    assert again.same_content(traj)
    assert isinstance(traj.transitions[0], Transition)
    assert traj.transitions[-1].terminal


def test_dt_canonical_rounding_groups_trajectories():
    a = make_traj(0.1 + 0.2, [1.0], "a")
    b = make_traj(0.3, [1.0], "b")
    ds = MixedDataset((a, b))
    assert ds.delta_set == (0.3,)
    assert canonical_dt(0.30000000004) == 0.3


def test_merge_examples():
    d = MixedDataset((make_traj(0.02, [1.0, 0.0], "a"),))
    assert merge_datasets([d]) is d
    e = MixedDataset((make_traj(0.01, [1.0], "b"),))
    m = merge_datasets([d, e])
    assert m.delta_set == (0.01, 0.02)
    assert m.num_transitions == 3
    with pytest.raises(ValueError, match="duplicate"):
        merge_datasets([d, MixedDataset((make_traj(0.01, [1.0], "a"),))])
    with pytest.raises(ValueError, match="dims"):
        merge_datasets([d, MixedDataset((make_traj(0.01, [1.0], "c", dim=3),))])


def test_delta_set_and_groups():
    ds = MixedDataset((make_traj(0.02, [1.0], "a"), make_traj(0.01, [1.0] * 3, "b"),
                       make_traj(0.01, [1.0] * 2, "c")))
    assert ds.delta_set == (0.01, 0.02)
    assert ds.transitions_per_dt() == {0.01: 5, 0.02: 1}
    assert [t.id for t in ds.group(0.01)] == ["b", "c"]
    assert ds.subset(0.02).delta_set == (0.02,)
    with pytest.raises(KeyError):
        ds.group(0.005)


def test_dataset_round_trip_is_bit_exact(tmp_path):
    ds = MixedDataset((make_traj(0.02, [1.5, -0.0, 3.25], "a", seed=1),
                       make_traj(0.005, np.random.default_rng(3).standard_normal(5), "b", seed=2,
                                 terminal_last=True)))
    raw = dataset_to_bytes(ds, {"note": "x"})
    back, meta = dataset_from_bytes(raw)
    assert meta == {"note": "x"}
    assert back.same_content(ds)
    assert dataset_to_bytes(back, {"note": "x"}) == raw
    for a, b in zip(ds.trajectories, back.trajectories):
        assert a.states.tobytes() == b.states.tobytes()
        assert a.rewards.tobytes() == b.rewards.tobytes()
    path = save_dataset(ds, tmp_path / "d.mxd")
    again, _ = load_dataset(path)
    assert again.same_content(ds)


def test_dataset_file_rejects_garbage():
    with pytest.raises(ValueError, match="magic"):
        dataset_from_bytes(b"not a dataset file")
