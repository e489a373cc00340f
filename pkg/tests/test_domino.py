import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skilldyn import domino as D
from skilldyn import resource as R
from skilldyn.scaling import fit_powerlaw
from skilldyn.taskdist import make_explicit, make_powerlaw


def test_skill_curve_examples():
    cfg = D.DominoConfig(5, t0=2.0)
    assert D.skill_curve(cfg, 1, 0.0) == 0.0
    assert D.skill_curve(cfg, 1, 1.0) == pytest.approx(0.5)
    assert D.skill_curve(cfg, 3, 5.0) == pytest.approx(0.5)
    assert D.skill_curve(cfg, 3, 4.0) == 0.0
    assert D.skill_curve(cfg, 3, 6.0) == 1.0
    assert D.skill_curve(cfg, 3, 100.0) == 1.0


def test_skill_curve_unlearnable_tasks_stay_zero():
    cfg = D.DominoConfig(10, 1.0, n_learnable=4)
    t = np.linspace(0, 50, 201)
    assert np.all(D.skill_curve(cfg, 5, t) == 0.0)
    assert D.skill_curve(cfg, 4, 4.0) == 1.0


def test_skill_curve_rejects_bad_arguments():
    cfg = D.DominoConfig(3)
    with pytest.raises(ValueError):
        D.skill_curve(cfg, 0, 1.0)
    with pytest.raises(ValueError):
        D.skill_curve(cfg, 4, 1.0)
    with pytest.raises(ValueError):
        D.skill_curve(cfg, 1, -1.0)
    with pytest.raises(ValueError):
        D.DominoConfig(3, t0=0.0)
    with pytest.raises(ValueError):
        D.DominoConfig(3, n_learnable=4)


def test_total_time_examples():
    assert D.total_time(D.DominoConfig(1, 1.5)) == 1.5
    assert D.total_time(D.DominoConfig(10, 2.0)) == 20.0
    assert D.total_time(D.DominoConfig(10, 2.0, n_learnable=5)) == 10.0


def test_loss_curve_endpoints():
    dist = make_powerlaw(20, 1.5)
    cfg = D.DominoConfig(20, 1.0)
    ell = D.loss_curve(cfg, dist, [0.0, 1e6])
    assert ell[0] == pytest.approx(1.0, abs=1e-12)
    assert ell[1] == 0.0


def test_loss_curve_unlearned_override():
    dist = make_explicit([0.5, 0.3, 0.2])
    cfg = D.DominoConfig(3, 1.0, n_learnable=2)
    ell = D.loss_curve(cfg, dist, [10.0], loss_at_unlearned=2.0)
    assert ell[0] == pytest.approx(0.4)
    assert D.loss_curve(cfg, dist, [10.0])[0] == pytest.approx(0.2)


def test_loss_curve_xent_starts_at_log2():
    dist = make_powerlaw(5, 2.0)
    ell = D.loss_curve(D.DominoConfig(5), dist, [0.0], loss_kind="xent")
    assert ell[0] == pytest.approx(math.log(2.0))


def test_loss_curve_alpha3_slope():
    dist = make_powerlaw(1000, 3.0)
    cfg = D.DominoConfig(1000, 1.0)
    t = np.geomspace(10, 300, 200)
    fit = fit_powerlaw(t, D.loss_curve(cfg, dist, t))
    assert abs(fit.exponent - 2.0) <= 0.2


def test_scaling_exponents_examples():
    e = D.scaling_exponents(2.0)
    assert e.quanta == (1.0, 0.5) and e.domino == (1.0, 1.0) and not e.degenerate
    e = D.scaling_exponents(1.0)
    assert e.quanta == (0.0, 0.0) and e.domino == (0.0, 0.0) and e.degenerate
    e = D.scaling_exponents(4.0)
    assert e.quanta == (3.0, 0.75) and e.domino == (3.0, 3.0)


def test_modular_speedup_examples():
    assert D.modular_speedup(1, 64).ratio == 1.0
    assert D.modular_speedup(100, 1000).ratio == 10.0
    assert D.modular_speedup(7, 700).ratio == math.sqrt(7)
    m = D.modular_speedup(100, 400)
    assert m.T_nonmodular / m.T_modular == pytest.approx(10.0, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.floats(0.1, 10.0), st.floats(0.0, 1.0))
def test_strict_sequentiality(n, t0, frac):
    cfg = D.DominoConfig(n, t0)
    t = frac * n * t0
    if abs(t / t0 - round(t / t0)) < 1e-9:
        return
    s = D.skill_matrix(cfg, [t])[0]
    assert np.sum((s > 0) & (s < 1)) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.floats(0.1, 10.0), st.floats(0.0, 1.0))
def test_resource_fully_used(n, t0, frac):
    cfg = D.DominoConfig(n, t0)
    t = frac * n * t0
    s = D.skill_matrix(cfg, [t])[0]
    assert s.sum() == pytest.approx(t / t0, rel=1e-12, abs=1e-12)


def test_strong_hierarchy_limit_of_resource_model():
    r = 1e-3
    dist = make_explicit([1.0, r, r * r], normalize=True)
    tr = R.integrate(R.ResourceSystem(dist, 1.0, 0.0), 4.0, n_out=4001)
    ref = D.skill_matrix(D.DominoConfig(3, 1.0), tr.steps)
    assert np.max(np.abs(tr.skills - ref)) < 0.02


def test_trajectory_shape_and_meta():
    dist = make_powerlaw(4, 2.0)
    tr = D.trajectory(D.DominoConfig(4, 0.5), dist, np.linspace(0, 3, 31))
    assert tr.skills.shape == (31, 4)
    np.testing.assert_allclose(tr.total_loss, tr.task_losses @ dist.p)
    assert tr.meta["model"] == "domino"
