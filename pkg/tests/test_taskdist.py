import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skilldyn.taskdist import (EmptyDistributionError, InfeasibleOrthogonalizationError, TaskDistribution,
                               correlation_matrix, make_explicit, make_exponential, make_powerlaw,
                               make_task_vectors, rng_from_seed)

# mean |cos| between independent random unit vectors in 10 dimensions,
# Monte-Carlo with 4e5 pairs (0.25835 +- 0.0003); closed form 0.25869
E_ABS_COS_10 = 0.2584


def test_powerlaw_single_task():
    assert make_powerlaw(1, 2.0).p.tolist() == [1.0]


def test_powerlaw_two_tasks():
    np.testing.assert_allclose(make_powerlaw(2, 1.0).p, [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_powerlaw_uniform_limit():
    assert make_powerlaw(4, 0.0).p.tolist() == [0.25] * 4


def test_powerlaw_unnormalized():
    np.testing.assert_allclose(make_powerlaw(3, 2.0, normalize=False).p, [1, 1 / 4, 1 / 9])


def test_powerlaw_errors():
    with pytest.raises(EmptyDistributionError):
        make_powerlaw(0, 1.0)
    with pytest.raises(ValueError):
        make_powerlaw(3, -0.5)


def test_exponential_shape():
    d = make_exponential(4, 0.5)
    np.testing.assert_allclose(d.p[1:] / d.p[:-1], np.exp(-0.5))
    assert abs(d.p.sum() - 1) < 1e-12


def test_distribution_invariants_enforced():
    with pytest.raises(ValueError):
        TaskDistribution(np.array([0.2, 0.8]))
    with pytest.raises(ValueError):
        TaskDistribution(np.array([1.0, 0.0]))
    with pytest.raises(EmptyDistributionError):
        make_explicit([])
    # unordered lists are allowed only when asked for
    assert make_explicit([0.2, 0.3, 0.5], ordered=False).p.tolist() == [0.2, 0.3, 0.5]


def test_distribution_dict_round_trip():
    for d in (make_powerlaw(5, 1.5), make_explicit([1, 2, 3], normalize=True, ordered=False)):
        back = TaskDistribution.from_dict(json.loads(json.dumps(d.to_dict())))
        assert back.p.tolist() == d.p.tolist() and back.kind == d.kind and back.ordered == d.ordered


def test_distribution_is_immutable():
    d = make_powerlaw(3, 1.0)
    with pytest.raises(ValueError):
        d.p[0] = 5.0


@given(st.integers(1, 200), st.floats(0, 6))
def test_powerlaw_invariants(n, alpha):
    d = make_powerlaw(n, alpha)
    assert abs(d.p.sum() - 1) <= 1e-12
    assert np.all(np.diff(d.p) <= 0) and np.all(d.p > 0)
    ratio = d.p / np.arange(1, n + 1, dtype=float) ** (-alpha)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)


@given(st.integers(2, 50), st.floats(0, 5), st.floats(0.01, 3))
def test_powerlaw_first_share_grows_with_alpha(n, a, da):
    assert make_powerlaw(n, a + da).p[0] >= make_powerlaw(n, a).p[0]


def test_onehot_vectors():
    assert make_task_vectors(2, 2, "onehot", 0).vectors.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_orthogonalized_pair():
    t = make_task_vectors(2, 1000, "orthogonalized", 7).vectors
    assert abs(t[0] @ t[1]) < 1e-9
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0, atol=1e-9)


def test_orthogonalization_keeps_first_direction():
    raw = make_task_vectors(3, 20, "random", 11).vectors
    orth = make_task_vectors(3, 20, "orthogonalized", 11).vectors
    np.testing.assert_allclose(orth[0], raw[0], atol=1e-12)


def test_random_vectors_mean_abs_cosine():
    t = make_task_vectors(100, 10, "random", 3).vectors
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0, atol=1e-9)
    g = np.abs(t @ t.T)[np.triu_indices(100, 1)]
    assert abs(g.mean() - E_ABS_COS_10) < 0.02


def test_infeasible_modes():
    with pytest.raises(InfeasibleOrthogonalizationError):
        make_task_vectors(5, 3, "orthogonalized", 0)
    with pytest.raises(ValueError):
        make_task_vectors(5, 3, "onehot", 0)


def test_vectors_reproducible():
    a = make_task_vectors(10, 30, "orthogonalized", 5).vectors
    b = make_task_vectors(10, 30, "orthogonalized", 5).vectors
    assert a.tobytes() == b.tobytes()
    c = make_task_vectors(10, 30, "orthogonalized", 6).vectors
    assert a.tobytes() != c.tobytes()


def test_rng_is_pcg64():
    assert isinstance(rng_from_seed(0).bit_generator, np.random.PCG64)
    assert rng_from_seed(3).random() == rng_from_seed(3).random()


def test_correlation_identity_cases():
    assert np.array_equal(correlation_matrix(make_task_vectors(4, 6, "onehot", 0)), np.eye(4))
    np.testing.assert_allclose(correlation_matrix(make_task_vectors(4, 50, "orthogonalized", 0)), np.eye(4), atol=1e-9)


def _brute_corr(t):
    n = t.shape[0]
    return np.array([[sum(t[i, k] * t[j, k] for k in range(t.shape[1])) for j in range(n)] for i in range(n)])


def test_correlation_random_small():
    tv = make_task_vectors(3, 2, "random", 4)
    np.testing.assert_allclose(correlation_matrix(tv), _brute_corr(tv.vectors), atol=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_correlation_matches_brute_force(n_task, n_dim, seed):
    tv = make_task_vectors(n_task, n_dim, "random", seed)
    c = correlation_matrix(tv)
    np.testing.assert_allclose(c, _brute_corr(tv.vectors), atol=1e-12)
    np.testing.assert_allclose(np.diag(c), 1.0, atol=1e-9)
    assert np.array_equal(c, c.T)
