import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustdga import embedding_attacks as ea
from robustdga.embedding_attacks import AttackConfig, bce_malicious, project

from helpers import LinearSurrogate, random_rows, small_model


def flat_norm(x, norm):
    x = x.reshape(len(x), -1)
    return np.abs(x).max(axis=1) if norm == "linf" else np.sqrt((x ** 2).sum(axis=1))


def test_grid_values():
    assert ea.hyperparameter_grid(ea.PGD_LINF)[0].epsilon == 0.01
    assert ea.hyperparameter_grid(ea.CW_L2)[9].kappa == 100
    assert ea.hyperparameter_grid(ea.PGD_L2)[9].epsilon == pytest.approx(math.sqrt(8064))
    assert [c.epsilon for c in ea.hyperparameter_grid(ea.BAT_LINF)] == \
        [0.01, 0.02, 0.03, 0.05, 0.08, 0.15, 0.25, 0.5, 0.7, 1]
    assert [c.epsilon for c in ea.hyperparameter_grid(ea.BAT_L2)][:9] == \
        [0.5, 0.9, 1.6, 2.8, 5, 9, 16, 32, 50]
    assert [c.kappa for c in ea.hyperparameter_grid(ea.CW_L2)] == \
        [0, 0.03, 0.08, 0.2, 0.6, 1.7, 4.6, 13, 36, 100]
    for kind in ea.KINDS:
        grid = ea.hyperparameter_grid(kind)
        assert len(grid) == 10 and all(c.iterations == 50 for c in grid)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("fgsm")
    with pytest.raises(ValueError):
        AttackConfig(ea.PGD_L2, epsilon=0)
    with pytest.raises(ValueError):
        AttackConfig(ea.CW_L2, kappa=-1)
    with pytest.raises(ValueError):
        AttackConfig(ea.PGD_L2, iterations=0)
    AttackConfig(ea.CW_L2, epsilon=0)  # epsilon is unused by C&W


@pytest.mark.parametrize("kind", [ea.PGD_L2, ea.PGD_LINF, ea.BAT_L2, ea.BAT_LINF])
def test_tiny_ball_returns_origin(kind):
    m = LinearSurrogate(0)
    V0 = m.embed(random_rows(np.random.default_rng(0), 4, 3, 12))
    out = ea.run_attack(m, V0, AttackConfig(kind, epsilon=1e-9, iterations=5))
    assert np.abs(out - V0).max() <= 1e-8


@pytest.mark.parametrize("kind", [ea.PGD_L2, ea.PGD_LINF, ea.BAT_L2, ea.BAT_LINF])
def test_outputs_stay_inside_ball(kind):
    m = small_model(1)
    rng = np.random.default_rng(2)
    V0 = m.embed(random_rows(rng, 1000, 3, 20))
    norm = "linf" if kind.endswith("linf") else "l2"
    for eps in (0.05, 2.0) if norm == "l2" else (0.01, 0.5):
        out = ea.run_attack(m, V0, AttackConfig(kind, epsilon=eps, iterations=3), rng)
        assert flat_norm(out - V0, norm).max() <= eps + 1e-6


def test_linear_model_step_direction():
    m = LinearSurrogate(3)
    V = m.embed(random_rows(np.random.default_rng(3), 2, 5, 9))
    z, f, g = ea._loss_grad(m, V, "bce")
    # d/dV softplus(-z) = (sigmoid(z) - 1) * A, so ascent moves against A
    assert np.array_equal(ea._step_direction(g, "linf"), -np.sign(np.broadcast_to(m.A, V.shape)))
    unit = ea._step_direction(g, "l2")
    assert np.allclose(unit, -m.A / np.linalg.norm(m.A))


@pytest.mark.parametrize("norm", ["l2", "linf"])
def test_pgd_single_step_matches_closed_form(norm):
    m = LinearSurrogate(4)
    V0 = m.embed(random_rows(np.random.default_rng(4), 3, 5, 9))
    eps = 0.3 if norm == "linf" else 2.0
    kind = ea.PGD_LINF if norm == "linf" else ea.PGD_L2
    cfg = AttackConfig(kind, epsilon=eps, iterations=1)
    out = ea.pgd(m, V0, cfg, np.random.default_rng(9))
    d0 = project(ea._random_init(np.random.default_rng(9), V0.shape, eps, norm), eps, norm)
    step = -np.sign(m.A) if norm == "linf" else -m.A / np.linalg.norm(m.A)
    d1 = project(d0 + 2.5 * eps * step, eps, norm)
    # linear model: the loss is largest at the lowest logit among the candidates
    cands = np.stack([np.zeros_like(V0), d0, d1])
    z = np.stack([m.logits(V0 + c) for c in cands])
    expected = V0 + cands[np.argmin(z, axis=0), np.arange(len(V0))]
    assert np.allclose(out, expected, atol=1e-12)


def test_cw_returns_origin_when_already_satisfied():
    m = LinearSurrogate(5)
    V0 = m.embed(random_rows(np.random.default_rng(5), 6, 5, 9))
    z0 = m.logits(V0)
    m.b -= z0.max() + 3.0  # every input now has z <= -3
    out, ok = ea.cw_l2(m, V0, AttackConfig(ea.CW_L2, kappa=1.0))
    assert ok.all() and np.array_equal(out, V0)


@pytest.mark.parametrize("kappa,make", [(0.0, small_model), (0.2, small_model),
                                        (4.6, LinearSurrogate), (36.0, LinearSurrogate)])
def test_cw_successes_meet_confidence(kappa, make):
    m = make(6)
    V0 = m.embed(random_rows(np.random.default_rng(6), 16, 5, 15))
    out, ok = ea.cw_l2(m, V0, AttackConfig(ea.CW_L2, kappa=kappa, iterations=30, search_steps=3))
    z = m.logit_grad(out)[0]
    assert ok.any()
    assert (z[ok] <= -kappa + 1e-4).all()


def test_cw_one_dimensional_boundary_projection():
    # z depends on one coordinate, z = v[0, 0] + b; the closest point with
    # z <= -kappa moves only that coordinate, by exactly z0 + kappa
    m = LinearSurrogate(7)
    m.A[:] = 0.0
    m.A[0, 0] = 1.0
    V0 = m.embed(random_rows(np.random.default_rng(7), 4, 5, 9))
    m.b = -float(V0[:, 0, 0].max()) - 1.0
    z0 = m.logits(V0)
    kappa = 0.3 - z0  # boundary 0.3 away for every sample
    out, ok = ea.cw_l2(m, V0, AttackConfig(ea.CW_L2), kappa=kappa)
    assert ok.all()
    delta = out - V0
    assert np.allclose(delta[:, 0, 0], -0.3, atol=0.01)
    delta[:, 0, 0] = 0.0
    assert np.abs(delta).max() == 0.0


def test_bat_dominates_pgd_on_most_samples():
    m = small_model(3)
    V0 = m.embed(random_rows(np.random.default_rng(0), 500, 5, 20))
    for kind, pkind, eps in ((ea.BAT_LINF, ea.PGD_LINF, 0.05), (ea.BAT_L2, ea.PGD_L2, 0.5)):
        fb = bce_malicious(m.logit_grad(ea.bat(m, V0, AttackConfig(kind, epsilon=eps)))[0])
        fp = bce_malicious(m.logit_grad(ea.pgd(m, V0, AttackConfig(pkind, epsilon=eps)))[0])
        assert np.mean(fb >= fp) >= 0.9


def test_apgd_unconstrained_trace_is_monotone():
    m = small_model(8)
    V0 = m.embed(random_rows(np.random.default_rng(8), 20, 5, 20))
    for loss in ("bce", "margin"):
        _, f_best, trace = ea.apgd(m, V0, ea.FULL_L2, "l2", 50, loss)
        assert len(trace) == len(ea._checkpoints(50)) + 1
        assert (np.diff(trace, axis=0) >= 0).all()
        assert np.array_equal(trace[-1], f_best)


def test_checkpoint_schedule():
    assert ea._checkpoints(100) == [22, 41, 57, 70, 80, 87, 93, 99]
    assert ea._checkpoints(50)[0] == 11 and ea._checkpoints(50)[-1] == 50


@pytest.mark.parametrize("kind", [ea.PGD_L2, ea.PGD_LINF, ea.BAT_L2, ea.BAT_LINF])
def test_attack_never_lowers_loss_or_mutates(kind):
    m = small_model(9)
    V0 = m.embed(random_rows(np.random.default_rng(9), 12, 5, 20))
    before, params = V0.copy(), {k: v.copy() for k, v in m.params.items()}
    out = ea.run_attack(m, V0, AttackConfig(kind, epsilon=0.1, iterations=5))
    assert (bce_malicious(m.logit_grad(out)[0]) >= bce_malicious(m.logit_grad(V0)[0])).all()
    assert np.array_equal(V0, before)
    for k in params:
        assert np.array_equal(m.params[k], params[k])


def test_strongest_is_last_grid_entry():
    assert ea.strongest(ea.PGD_L2).epsilon == pytest.approx(ea.FULL_L2)
    assert ea.strongest(ea.CW_L2, iterations=7).kappa == 100
    assert ea.strongest(ea.CW_L2, iterations=7).iterations == 7


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-3, 10), st.sampled_from(["l2", "linf"]))
def test_projection_idempotent_and_contained(seed, eps, norm):
    x = np.random.default_rng(seed).normal(0, 3, (3, 5, 4))
    p = project(x, eps, norm)
    assert np.allclose(project(p, eps, norm), p, rtol=0, atol=1e-12)
    assert flat_norm(p, norm).max() <= eps * (1 + 1e-12)
    inside = flat_norm(x, norm) <= eps
    assert np.array_equal(p[inside], x[inside])
