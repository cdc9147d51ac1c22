import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robust_dsm.errors import DimensionMismatch, EmptyUserSet, NonPositiveAggregateLoad
from robust_dsm.model import (AggregateState, ErrorProfile, GridCostParams, LoadProfile, TimeGrid,
                              aggregate_load, as_matrix, grid_cost, total_grid_cost, user_costs,
                              user_day_ahead_cost, user_sum)


def test_time_grid_defaults_and_labels():
    g = TimeGrid()
    assert g.slot_count == 24
    assert list(g.slot_indices) == list(range(1, 25))
    assert list(g.night_slots) == list(range(8))
    with pytest.raises(ValueError):
        TimeGrid(0)


def test_params_validation():
    GridCostParams(k=[1.0], alpha=[1.0], beta_m=0.0)
    with pytest.raises(ValueError):
        GridCostParams(k=[0.0], alpha=[1.0])
    with pytest.raises(ValueError):
        GridCostParams(k=[1.0], alpha=[-1.0])
    with pytest.raises(ValueError):
        GridCostParams(k=[1.0], alpha=[1.0], beta_m=-0.1)
    with pytest.raises(DimensionMismatch):
        GridCostParams(k=[1.0, 2.0], alpha=[1.0])


def test_params_are_read_only():
    p = GridCostParams(k=[1.0, 2.0], alpha=[1.0, 1.0])
    with pytest.raises(ValueError):
        p.k[0] = 5.0


def test_aggregate_two_users_single_slot():
    state = aggregate_load([LoadProfile(0, [3.0]), LoadProfile(1, [4.0])])
    assert isinstance(state, AggregateState)
    assert state.total_load.tolist() == [7.0]


def test_aggregate_single_user_identity():
    assert aggregate_load(np.array([[5.0, 5.0]])).total_load.tolist() == [5.0, 5.0]


def test_aggregate_nonpositive_raises_with_slot():
    with pytest.raises(NonPositiveAggregateLoad) as exc:
        aggregate_load([LoadProfile(0, [1.0]), LoadProfile(1, [-1.0])])
    assert exc.value.slot == 0


def test_aggregate_empty_and_ragged():
    with pytest.raises(EmptyUserSet):
        aggregate_load([])
    with pytest.raises(DimensionMismatch):
        as_matrix([LoadProfile(0, [1.0]), LoadProfile(1, [1.0, 2.0])])


def test_aggregate_with_errors():
    state = aggregate_load(np.ones((2, 3)), [ErrorProfile(0, [0.1] * 3), ErrorProfile(1, [0.2] * 3)])
    np.testing.assert_allclose(state.total_error, 0.3)


@pytest.mark.parametrize("k,L,ds,expected", [(0.1, 10.0, 0.0, 10.0), (1.0, 2.0, 1.0, 9.0)])
def test_grid_cost_examples(k, L, ds, expected):
    p = GridCostParams(k=[k], alpha=[1.0])
    assert grid_cost(0, L, ds, p) == pytest.approx(expected, rel=1e-15)


def test_day_slot_costs_one_and_a_half_times_night():
    p = GridCostParams(k=[0.02, 0.03], alpha=[1.0, 1.0])
    assert grid_cost(1, 7.0, 0.5, p) == pytest.approx(1.5 * grid_cost(0, 7.0, 0.5, p), rel=1e-14)


def test_user_cost_examples():
    loads = np.array([[1.0], [1.0]])
    p0 = GridCostParams(k=[1.0], alpha=[1.0], beta_m=0.0)
    assert user_day_ahead_cost(0, loads, None, p0) == pytest.approx(2.0)
    p1 = GridCostParams(k=[1.0], alpha=[1.0], beta_m=0.001)
    errs = np.array([[0.1], [-0.1]])
    assert user_day_ahead_cost(0, loads, errs, p1) == pytest.approx(2.20001, rel=1e-12)


def test_user_cost_dimension_mismatch():
    p = GridCostParams(k=[1.0, 1.0], alpha=[1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        user_day_ahead_cost(0, np.ones((2, 2)), np.ones((3, 2)), p)
    with pytest.raises(DimensionMismatch):
        user_costs(np.ones((2, 3)), None, p)


def test_user_sum_is_left_fold():
    rows = np.array([[1e16], [1.0], [-1e16]])
    assert user_sum(rows)[0] == (1e16 + 1.0) - 1e16


def _instances():
    return st.tuples(st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))


@settings(max_examples=60, deadline=None)
@given(_instances())
def test_proportional_split_sums_to_grid_cost(inst):
    D, H, seed = inst
    rng = np.random.default_rng(seed)
    loads = rng.uniform(0.1, 3.0, (D, H))
    errs = rng.uniform(-0.2, 0.5, (D, H))
    p = GridCostParams(k=rng.uniform(0.01, 1.0, H), alpha=np.ones(H), beta_m=0.0)
    # independent evaluation of the per-slot grid cost
    per_slot = [p.k[h] * (loads[:, h].sum() + errs[:, h].sum()) ** 2 for h in range(H)]
    total = sum(user_day_ahead_cost(n, loads, errs, p) for n in range(D))
    assert total == pytest.approx(sum(per_slot), rel=1e-12)
    assert total_grid_cost(loads, errs, p) == pytest.approx(sum(per_slot), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 10), st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5))
def test_grid_cost_convex_in_load(k, L1, L2, ds):
    p = GridCostParams(k=[k], alpha=[1.0])
    mid = grid_cost(0, 0.5 * (L1 + L2), ds, p)
    assert mid <= 0.5 * (grid_cost(0, L1, ds, p) + grid_cost(0, L2, ds, p)) + 1e-9


@settings(max_examples=40, deadline=None)
@given(_instances())
def test_user_cost_second_difference_is_two_k(inst):
    D, H, seed = inst
    rng = np.random.default_rng(seed)
    loads = rng.uniform(0.5, 2.0, (D, H))
    errs = rng.uniform(0.0, 0.3, (D, H))
    p = GridCostParams(k=rng.uniform(0.1, 1.0, H), alpha=np.ones(H), beta_m=0.01)
    n, h, step = int(rng.integers(D)), int(rng.integers(H)), 1e-2

    def f(shift):
        l = loads.copy()
        l[n, h] += shift
        return user_day_ahead_cost(n, l, errs, p)

    second = (f(step) - 2 * f(0.0) + f(-step)) / step**2
    assert second == pytest.approx(2 * p.k[h], rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 8), st.integers(1, 4)),
              elements=st.floats(0.01, 100.0)), st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(loads, rnd):
    perm = list(range(loads.shape[0]))
    rnd.shuffle(perm)
    a = aggregate_load(loads).total_load
    b = aggregate_load(loads[perm]).total_load
    np.testing.assert_allclose(a, b, rtol=1e-12)
