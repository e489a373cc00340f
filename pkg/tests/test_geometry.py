import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skilldyn import geometry as G
from skilldyn.optimizers import OptimizerSpec
from skilldyn.taskdist import make_explicit, make_powerlaw, make_task_vectors
from skilldyn.trajectory import Trajectory


def _system(n_task, n_dim, mode="orthogonalized", loss="mse", p=None, seed=0, **kw):
    dist = make_explicit(p, normalize=True) if p is not None else make_powerlaw(n_task, 1.0)
    return G.GeometrySystem(make_task_vectors(n_task, n_dim, mode, seed), dist, loss, **kw)


def _fd_grad(sys, h=1e-6):
    th = sys.theta
    g = np.zeros_like(th)
    for j in range(th.size):
        e = np.zeros_like(th)
        e[j] = h
        g[j] = (sys.loss_at(th + e) - sys.loss_at(th - e)) / (2 * h)
    return g


def test_fresh_system_has_zero_skills():
    assert np.array_equal(_system(3, 10).skill_levels(), np.zeros(3))


def test_skill_along_first_vector():
    sys = _system(3, 10)
    sys.theta = sys.theta0 + sys.tv.vectors[0]
    np.testing.assert_allclose(sys.skill_levels(), [1, 0, 0], atol=1e-12)


def test_skill_levels_brute_force():
    sys = _system(3, 4, mode="random", seed=5)
    t = sys.tv.vectors
    sys.theta = sys.theta0 + 0.5 * t[0] + 0.25 * t[1]
    d = sys.theta - sys.theta0
    brute = [sum(d[k] * t[i, k] for k in range(4)) for i in range(3)]
    np.testing.assert_allclose(G.skill_levels(sys), brute, atol=1e-14)


def test_nonzero_theta0_offsets_skills():
    tv = make_task_vectors(2, 6, "random", 1)
    sys = G.GeometrySystem(tv, make_powerlaw(2, 1.0), theta0=np.arange(6.0))
    assert np.allclose(sys.skill_levels(), 0.0)


def test_single_task_gradients_at_zero():
    for loss, coef in (("mse", -2.0), ("xent", -0.5)):
        sys = _system(1, 8, loss=loss, p=[1.0])
        np.testing.assert_allclose(G.batch_gradient(sys), coef * sys.tv.vectors[0], atol=1e-15)


@pytest.mark.parametrize("loss", ["mse", "xent"])
def test_gradient_matches_finite_differences(loss):
    sys = _system(3, 12, mode="random", loss=loss, seed=2)
    rng = np.random.default_rng(9)
    sys.theta = sys.theta0 + rng.normal(0, 0.5, sys.n_dim)
    g, fd = G.batch_gradient(sys), _fd_grad(sys)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 10), st.sampled_from(["mse", "xent"]), st.integers(0, 10 ** 6))
def test_gradient_matches_finite_differences_random(n_task, n_dim, loss, seed):
    sys = _system(n_task, n_dim, mode="random", loss=loss, p=list(range(n_task, 0, -1)), seed=seed)
    sys.theta = sys.theta0 + np.random.default_rng(seed).normal(0, 1, n_dim)
    g, fd = G.batch_gradient(sys), _fd_grad(sys)
    scale = max(np.max(np.abs(fd)), 1e-3)
    assert np.max(np.abs(g - fd)) / scale < 1e-5


def test_batch_frequencies_unbiased():
    # mean of the sampled task weights over many batches stays within 3 standard errors of p * L'(0)
    sys = _system(3, 5, p=[0.6, 0.3, 0.1])
    rng = np.random.default_rng(0)
    sys.batch_size = 32
    w = np.array([sys.task_weights(rng) for _ in range(4000)])
    expect = sys.dist.p * -2.0
    se = 2.0 * np.sqrt(sys.dist.p * (1 - sys.dist.p) / 32) / math.sqrt(4000)
    assert np.all(np.abs(w.mean(axis=0) - expect) < 3 * se)


def test_noise_is_seeded():
    sys = _system(2, 50, p=[0.5, 0.5], noise_sigma=0.3)
    assert np.array_equal(G.batch_gradient(sys, seed=4), G.batch_gradient(sys, seed=4))
    assert not np.array_equal(G.batch_gradient(sys, seed=4), G.batch_gradient(sys, seed=5))
    resid = G.batch_gradient(sys, seed=4) - sys.tv.vectors.T @ sys.task_weights()
    assert 0.2 < resid.std() < 0.4


def test_n_align_examples():
    g = np.random.default_rng(1).standard_normal(1000)
    assert G.n_align(g, g) == 1000
    assert G.n_align(g, -g) == -1000
    a = np.random.default_rng(2).choice([-1.0, 1.0], 1000)
    b = np.random.default_rng(3).choice([-1.0, 1.0], 1000)
    # binomial sum of 1000 independent +-1 terms has std sqrt(1000) ~ 31.6
    assert abs(G.n_align(a, b)) < 100
    assert G.n_align(np.array([0.0, 1.0]), np.array([1.0, 1.0])) == 1


def test_single_task_signgd_steps_by_l1_norm():
    # while s < 1 every coordinate moves by lr against sign(t_1), so s grows by lr * |t_1|_1 per step
    sys = _system(1, 1000, p=[1.0], mode="random", seed=0)
    lr = 3e-4
    tr = G.run(sys, OptimizerSpec("signgd", lr=lr), 200, 1)
    l1 = np.abs(sys.tv.vectors[0]).sum()
    k_cross = math.ceil(0.99 / (lr * l1))
    assert np.all(np.diff(tr.skills[:k_cross + 1, 0]) > 0)
    np.testing.assert_allclose(tr.skills[:k_cross, 0], np.arange(k_cross) * lr * l1, rtol=1e-9, atol=1e-12)
    assert tr.first_crossing(0, skill_above=0.99) == k_cross


@pytest.mark.xfail(strict=True, reason="crossing is near 0.99 / (lr |t_1|_1) ~ 131 steps, not 1 / (2 sqrt(n_dim) lr) ~ 53")
def test_single_task_crossing_near_synchronized_time():
    sys = _system(1, 1000, p=[1.0], mode="random", seed=0)
    tr = G.run(sys, OptimizerSpec("signgd", lr=3e-4), 400, 1)
    predicted = 1.0 / (2 * math.sqrt(1000) * 3e-4)
    assert abs(tr.first_crossing(0, skill_above=0.99) - predicted) <= 0.1 * predicted


def test_symmetric_tasks_learn_together():
    sys = _system(2, 1000, p=[0.5, 0.5], seed=3, batch_size=128)
    tr = G.run(sys, OptimizerSpec("signgd", lr=3e-4), 400, 10, seed=4)
    assert np.max(np.abs(tr.skills[:, 0] - tr.skills[:, 1])) < 0.15
    t1, t2 = (tr.first_crossing(i, loss_below=0.01) for i in (0, 1))
    assert abs(t1 - t2) <= 0.15 * max(t1, t2)


def test_two_task_ratio_under_signgd():
    t1, t2, _ = G.two_task_times(0.9, OptimizerSpec("signgd", lr=3e-4), seed=0, n_steps=5000)
    assert t2 <= 2.5 * t1


def test_full_batch_total_loss_consistent():
    sys = _system(4, 40, loss="xent", p=[4, 3, 2, 1])
    tr = G.run(sys, OptimizerSpec("adam", lr=1e-2), 50, 7)
    recomputed = G.task_loss(tr.skills, "xent") @ sys.dist.p
    np.testing.assert_allclose(tr.total_loss, recomputed, atol=1e-9)
    assert tr.steps[0] == 0 and tr.steps[-1] == 50


def test_sgd_decouples_orthogonal_tasks():
    sys = _system(4, 30, p=[4, 3, 2, 1])
    lr = 0.05
    tr = G.run(sys, OptimizerSpec("sgd", lr=lr), 60, 1)
    p = sys.dist.p
    s = np.zeros(4)
    ref = [s.copy()]
    for _ in range(60):
        s = s + 2 * lr * p * (1 - s)
        ref.append(s.copy())
    np.testing.assert_allclose(tr.skills, np.array(ref), atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(2.0, 5.0), st.integers(2, 5), st.integers(0, 1000))
def test_domino_ordering_signgd(alpha, n_task, seed):
    sys = G.build_system(n_task, 400, alpha, batch_size=0, seed=seed)
    tr = G.run(sys, OptimizerSpec("signgd", lr=1e-3), 40_000, 1, stop_below=0.1)
    half = [tr.first_crossing(i, skill_above=0.5) for i in range(n_task)]
    assert None not in half
    assert all(a <= b for a, b in zip(half, half[1:]))


def test_align_bound_and_handoff():
    sys = _system(2, 1000, p=[0.9, 0.1], seed=1, batch_size=128)
    tr = G.run(sys, OptimizerSpec("signgd", lr=3e-4), 1500, 5, record_align=True, seed=2)
    assert np.all(np.abs(tr.n_align).sum(axis=1) <= 1000 * 2)
    d1, d2 = np.diff(tr.n_align[:, 0].astype(float)), np.diff(tr.n_align[:, 1].astype(float))
    assert np.corrcoef(d1, d2)[0, 1] < 0


def test_learning_curve_collapse():
    # the collapse sharpens with dimension: sup deviation ~0.18 at n_dim 1e3, ~0.003 at 1e4
    sys = G.build_system(5, 10_000, 2.0, batch_size=0, seed=0)
    tr = G.run(sys, OptimizerSpec("signgd", lr=1e-4), 20_000, 2, stop_below=1e-3)
    p = sys.dist.p
    C = np.clip(1 - tr.skills, 0, None) ** (1 / p)
    k = int(0.8 * len(tr))
    keep = [i for i in range(5) if p[i] >= 0.05]
    worst = max(np.max(np.abs(C[:k, i] - C[:k, j])) for i in keep for j in keep)
    assert worst < 0.1


def test_run_is_deterministic():
    def go():
        sys = _system(3, 100, batch_size=16, noise_sigma=0.1)
        return G.run(sys, OptimizerSpec("adam", lr=1e-3), 100, 10, record_align=True, seed=5)
    a, b = go(), go()
    assert a.skills.tobytes() == b.skills.tobytes() and a.n_align.tobytes() == b.n_align.tobytes()


def test_run_rejects_zero_steps():
    with pytest.raises(ValueError):
        G.run(_system(1, 3, p=[1.0]), OptimizerSpec("sgd", lr=0.1), 0)


def test_loss_vs_dim_orthogonalized_overparametrized_reaches_zero():
    sweep = G.DimSweep([20, 40], n_task=10, alpha=1.0, opt=OptimizerSpec("sgd", lr=0.5), n_steps=2000,
                       batch_size=0, mode="orthogonalized", record_every=100, tail=0.0)
    table = G.loss_vs_dim_sweep(sweep, workers=1)
    assert [d for d, _ in table] == [20, 40]
    assert all(loss < 1e-8 for _, loss in table)


def test_trajectory_round_trip(tmp_path):
    sys = _system(3, 30, batch_size=8)
    tr = G.run(sys, OptimizerSpec("signgd", lr=1e-3), 30, 3, record_align=True, seed=1)
    back = Trajectory.from_json(tr.to_json(tmp_path / "t.json"))
    assert np.array_equal(back.skills, tr.skills) and np.array_equal(back.n_align, tr.n_align)
    assert back.meta["optimizer"]["algo"] == "signgd"
    csv_back = Trajectory.from_csv(tr.to_csv(tmp_path / "t.csv"))
    np.testing.assert_allclose(csv_back.skills, tr.skills, rtol=1e-15)
    assert list(csv_back.steps) == list(tr.steps)
