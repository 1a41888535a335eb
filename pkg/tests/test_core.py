import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lowrank_bandit.core import (
    ActionSpace,
    AlgorithmConfig,
    ContextBatch,
    History,
    RepresentationMatrix,
    RewardSample,
    as_action,
    context_sum,
    expected_reward,
)
from lowrank_bandit.errors import DataError, ShapeError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=6):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


# -- RepresentationMatrix ----------------------------------------------------

def test_matrix_rejects_non_finite_and_empty():
    with pytest.raises(DataError):
        RepresentationMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        RepresentationMatrix(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        RepresentationMatrix(np.zeros(3))


def test_matrix_is_immutable():
    m = RepresentationMatrix(np.eye(2))
    with pytest.raises(ValueError):
        m.entries[0, 0] = 5.0


@given(matrices())
def test_svd_reconstructs_and_is_sorted(m):
    theta = RepresentationMatrix(m)
    u, s, v = theta.svd()
    assert np.all(s >= 0)
    assert np.all(np.diff(s) <= 0)
    err = np.linalg.norm((u * s) @ v.T - m)
    assert err <= 1e-8 * max(1.0, np.linalg.norm(m))


@given(matrices())
def test_svd_sign_convention(m):
    u, s, _ = RepresentationMatrix(m).svd()
    for j in range(s.shape[0]):
        k = np.argmax(np.abs(u[:, j]))
        assert u[k, j] >= 0


def test_norms():
    m = RepresentationMatrix(np.diag([3.0, 4.0]))
    assert m.nuclear_norm() == pytest.approx(7.0)
    assert m.frobenius_norm() == pytest.approx(5.0)
    assert m.shape == (2, 2)


# -- context_sum / expected_reward -------------------------------------------

def test_context_sum_single_target():
    np.testing.assert_array_equal(context_sum(ContextBatch(1, [[1.0, 2.0]])), [1.0, 2.0])


def test_context_sum_cancellation():
    np.testing.assert_array_equal(context_sum(ContextBatch(1, [[1.0, 0.0], [-1.0, 0.0]])), [0.0, 0.0])


def test_context_sum_matches_scalar_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5))
    want = [sum(x[l, j] for l in range(3)) for j in range(5)]
    np.testing.assert_allclose(context_sum(ContextBatch(2, x)), want, rtol=0, atol=1e-15)


@given(arrays(np.float64, (4, 3), elements=finite), st.randoms(use_true_random=False))
def test_context_sum_permutation_invariant(x, rnd):
    perm = list(range(4))
    rnd.shuffle(perm)
    a = context_sum(ContextBatch(0, x))
    b = context_sum(ContextBatch(0, x[perm]))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_expected_reward_identity():
    assert expected_reward(RepresentationMatrix(np.eye(2)), [1, 0], [0, 1]) == 0.0
    assert expected_reward(RepresentationMatrix(np.eye(2)), [1, 0], [1, 0]) == 1.0


def test_expected_reward_rank_one():
    rng = np.random.default_rng(1)
    u, v, a, x = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(3)
    got = expected_reward(np.outer(u, v), a, x)
    assert abs(got - (a @ u) * (v @ x)) <= 1e-12


def test_expected_reward_shape_error():
    with pytest.raises(ShapeError):
        expected_reward(np.eye(2), [1, 0, 0], [1, 0])


@given(
    arrays(np.float64, (3, 4), elements=finite),
    arrays(np.float64, 3, elements=finite),
    arrays(np.float64, 4, elements=finite),
    st.floats(-100, 100),
)
def test_bilinearity(theta, a, x, alpha):
    lhs = expected_reward(theta, alpha * a, x)
    rhs = alpha * expected_reward(theta, a, x)
    scale = np.abs(alpha) * np.abs(a) @ np.abs(theta) @ np.abs(x)
    assert abs(lhs - rhs) <= 8 * np.finfo(float).eps * scale


# -- small types -------------------------------------------------------------

def test_batch_validation():
    with pytest.raises(DataError):
        ContextBatch(-1, [[1.0]])
    with pytest.raises(DataError):
        ContextBatch(1, [[np.inf]])
    with pytest.raises(ShapeError):
        ContextBatch(1, [1.0, 2.0])
    b = ContextBatch(3, np.ones((2, 4)))
    assert (b.L, b.d_x) == (2, 4)


def test_reward_sample_validation():
    RewardSample(1, 1, 0.5)
    with pytest.raises(DataError):
        RewardSample(1, 1, float("nan"))
    with pytest.raises(DataError):
        RewardSample(1, 0, 0.5)


def test_as_action():
    assert as_action([1, 2], 2).tolist() == [1.0, 2.0]
    with pytest.raises(ShapeError):
        as_action([1, 2], 3)
    with pytest.raises(DataError):
        as_action([np.nan])


# -- History -----------------------------------------------------------------

def test_history_append_and_views():
    h = History(2, 3, 2, capacity=1)
    rng = np.random.default_rng(0)
    rows = [(rng.standard_normal(2), rng.standard_normal((2, 3)), rng.standard_normal(2)) for _ in range(5)]
    for t, (a, x, y) in enumerate(rows, start=1):
        h.append(a, x, y, round=t)
    assert len(h) == 5
    np.testing.assert_array_equal(h.actions, [r[0] for r in rows])
    np.testing.assert_array_equal(h.contexts, [r[1] for r in rows])
    np.testing.assert_array_equal(h.rewards, [r[2] for r in rows])
    np.testing.assert_array_equal(h.rounds, [1, 2, 3, 4, 5])
    with pytest.raises(ValueError):
        h.actions[0, 0] = 1.0


def test_history_rejects_bad_input():
    h = History(2, 3, 1)
    with pytest.raises(ShapeError):
        h.append(np.zeros(3), np.zeros((1, 3)), [0.0])
    with pytest.raises(ShapeError):
        h.append(np.zeros(2), np.zeros((2, 3)), [0.0])
    h.append(np.zeros(2), np.zeros((1, 3)), [0.0], round=4)
    with pytest.raises(DataError):
        h.append(np.zeros(2), np.zeros((1, 3)), [0.0], round=4)
    with pytest.raises(DataError):
        h.append(np.zeros(2), np.zeros((1, 3)), [np.nan], round=5)


def test_history_without_round_and_head():
    rng = np.random.default_rng(2)
    A, X, Y = rng.standard_normal((4, 2)), rng.standard_normal((4, 1, 3)), rng.standard_normal((4, 1))
    h = History.from_arrays(A, X, Y)
    drop = h.without_round(2)
    np.testing.assert_array_equal(drop.rounds, [1, 3, 4])
    np.testing.assert_array_equal(drop.actions, A[[0, 2, 3]])
    np.testing.assert_array_equal(h.head(2).rewards, Y[:2])
    b = h.batch(2)
    assert b.round == 3
    np.testing.assert_array_equal(b.contexts, X[2])


def test_sufficient_stats_match_design_and_update():
    from oracles import vec_design

    rng = np.random.default_rng(3)
    A, X, Y = rng.standard_normal((6, 3)), rng.standard_normal((6, 2, 4)), rng.standard_normal((6, 2))
    h = History.from_arrays(A[:4], X[:4], Y[:4])
    h.sufficient_stats()
    for i in (4, 5):
        h.append(A[i], X[i], Y[i], round=i + 1)
    gram, zy, yy = h.sufficient_stats()
    Z, y = vec_design(A, X, Y)
    np.testing.assert_allclose(gram, Z.T @ Z, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(zy, Z.T @ y, rtol=1e-12, atol=1e-12)
    assert yy == pytest.approx(y @ y, rel=1e-12)


# -- ActionSpace / AlgorithmConfig ------------------------------------------

def test_box_requires_ordered_bounds():
    with pytest.raises(DataError):
        ActionSpace.box([1.0, 0.0], [0.0, 1.0])


def test_ball_contains_exactly_unit_ball():
    ball = ActionSpace.unit_ball()
    assert ball.contains([0.6, 0.8])
    assert not ball.contains([0.6, 0.81])


def test_samples_are_feasible():
    rng = np.random.default_rng(0)
    ball = ActionSpace.unit_ball()
    box = ActionSpace.box([-1.0, 2.0], [0.0, 3.0])
    interval = ActionSpace.lifted_interval(0.5, 1.5)
    for _ in range(200):
        assert ball.contains(ball.sample(rng, 5))
        assert box.contains(box.sample(rng, 2))
        a = interval.sample(rng, 2)
        assert interval.contains(a)
        assert a[1] == a[0] ** 2


def test_ball_sampling_radius_distribution():
    # uniform on the ball: P(||a|| <= r) = r^d
    rng = np.random.default_rng(1)
    ball = ActionSpace.unit_ball()
    norms = np.array([np.linalg.norm(ball.sample(rng, 3)) for _ in range(20000)])
    assert abs(np.mean(norms <= 0.5) - 0.125) < 0.01


def test_lifted_interval_encoding():
    sp = ActionSpace.lifted_interval(0.0, 2.0, powers=(1, 2, 3))
    np.testing.assert_array_equal(sp.encode(2.0), [2.0, 4.0, 8.0])
    assert sp.scalar_of([1.5, 2.25, 3.375]) == 1.5
    assert sp.dim == 3


def test_config_validation():
    AlgorithmConfig()
    for bad in (dict(t_init=0), dict(h=0.0), dict(exploration_exponent=1.0), dict(lambda0=-1.0),
                dict(perturbation="other"), dict(refit_every=0), dict(lambda0_factor=0.0)):
        with pytest.raises(DataError):
            AlgorithmConfig(**bad)
