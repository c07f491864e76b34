import math

import numpy as np
import pytest

from olion import matcore
from olion.errors import OutOfRange, ShapeMismatch
from olion.optimizers import (
    BlockState, HyperParams, LrSchedule, Optimizer, ParamBlock, adamw_step,
    default_hyperparams, fallback_step_1d, lion_step, muon_step, olion_step,
    rms_gamma, schedule_lr, signsgd_step,
)

from conftest import polar_via_eigh


def _block(X, name="W"):
    return ParamBlock(name, np.array(X, dtype=float))


def _fresh(shape, adam=False):
    return BlockState.zeros(shape, second_moment=adam)


# ---------------------------------------------------------------- OLion

def test_olion_zero_grad_only_shrinks(rng):
    X = rng.standard_normal((4, 3))
    hp = HyperParams(weight_decay=0.1)
    out, st, art = olion_step(_block(X), np.zeros_like(X), _fresh(X.shape), hp, 0.5)
    np.testing.assert_array_equal(out.matrix, X - 0.1 * 0.5 * X)
    assert art.gamma == 0.0 and not np.any(art.D)
    assert st.step == 1


def test_olion_gamma_equals_target_for_dense_sign(rng):
    X = rng.standard_normal((8, 5))
    hp = HyperParams(rms_target=0.2)
    _, _, art = olion_step(_block(X), rng.standard_normal(X.shape), _fresh(X.shape), hp, 1e-2)
    assert np.all(art.S != 0)
    assert art.gamma == pytest.approx(0.2, abs=1e-15)
    assert math.sqrt(np.mean(art.D ** 2)) == pytest.approx(0.2, rel=1e-14)


def test_olion_single_step_composed_oracle(rng):
    A = rng.standard_normal((6, 4))
    X0 = rng.standard_normal((6, 4))
    grad = X0 - A
    hp = HyperParams(beta1=0.0, beta2=0.0, weight_decay=0.0, polar_mode="exact")
    eta = 0.03
    out, _, art = olion_step(_block(X0), grad, _fresh(X0.shape), hp, eta)
    S = np.sign(polar_via_eigh(grad))
    gamma = 0.2 * math.sqrt(24) / math.sqrt(np.sum(S * S))
    np.testing.assert_allclose(out.matrix, X0 - eta * gamma * S, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(art.S, S)


def test_olion_rejects_1d_and_mismatch():
    with pytest.raises(ShapeMismatch):
        olion_step(_block(np.ones((1, 4))), np.ones((1, 4)), _fresh((1, 4)), HyperParams(), 0.1)
    with pytest.raises(ShapeMismatch):
        olion_step(_block(np.ones((3, 4))), np.ones((4, 3)), _fresh((3, 4)), HyperParams(), 0.1)


def test_olion_state_momentum_update_first(rng):
    X = rng.standard_normal((3, 3))
    g = rng.standard_normal((3, 3))
    m0 = rng.standard_normal((3, 3))
    hp = HyperParams(beta1=0.9, beta2=0.99)
    _, st, art = olion_step(_block(X), g, BlockState(m0.copy()), hp, 0.1)
    m = 0.99 * m0 + 0.01 * g
    np.testing.assert_allclose(st.m, m, rtol=1e-15)
    np.testing.assert_allclose(art.G_tilde, 0.1 * g + 0.9 * m, rtol=1e-15)


# ---------------------------------------------------------------- Lion

def test_lion_all_positive_grad_gives_ones():
    X = np.zeros((3, 4))
    _, _, art = lion_step(_block(X), np.full((3, 4), 0.7), _fresh((3, 4)), HyperParams(), 0.1)
    np.testing.assert_array_equal(art.S, np.ones((3, 4)))


def test_lion_matches_olion_on_orthogonal_momentum(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    hp = HyperParams(beta1=0.0, beta2=0.0, ns_steps=12)
    X = np.zeros((8, 8))
    _, _, a = olion_step(_block(X), 3.0 * Q, _fresh(X.shape), hp, 0.1)
    _, _, b = lion_step(_block(X), 3.0 * Q, _fresh(X.shape), hp, 0.1)
    np.testing.assert_array_equal(a.S, b.S)


def _lion_reference(A, X, hp, eta, steps):
    M = np.zeros_like(X)
    traj = []
    for _ in range(steps):
        g = X - A
        M = hp.beta2 * M + (1 - hp.beta2) * g
        G = (1 - hp.beta1) * g + hp.beta1 * M
        S = np.sign(G)
        D = hp.rms_target * math.sqrt(S.size) / np.linalg.norm(S) * S
        X = X - eta * D - hp.weight_decay * eta * X
        traj.append(X.copy())
    return traj


def _muon_reference(A, X, hp, eta, steps):
    M = np.zeros_like(X)
    traj = []
    for _ in range(steps):
        g = X - A
        M = hp.beta2 * M + (1 - hp.beta2) * g
        G = (1 - hp.beta1) * g + hp.beta1 * M
        Q = polar_via_eigh(G)
        D = hp.rms_target * math.sqrt(Q.size) / np.linalg.norm(Q) * Q
        X = X - eta * D - hp.weight_decay * eta * X
        traj.append(X.copy())
    return traj


@pytest.mark.parametrize("name", ["lion", "muon"])
def test_ten_step_trajectory_matches_reference(rng, name):
    A = rng.standard_normal((7, 5))
    X0 = rng.standard_normal((7, 5))
    hp = default_hyperparams(name, polar_mode="exact", weight_decay=0.05)
    ref = (_lion_reference if name == "lion" else _muon_reference)(A, X0.copy(), hp, 0.05, 10)
    opt = Optimizer(name, hp)
    P = {"W": X0.copy()}
    for k in range(10):
        opt.step(P, {"W": P["W"] - A}, 0.05)
        np.testing.assert_allclose(P["W"], ref[k], rtol=0, atol=1e-12)


# ---------------------------------------------------------------- Muon

def test_muon_rms_alignment_on_orthogonal(rng):
    d = 16
    Qo, _ = np.linalg.qr(rng.standard_normal((d, d)))
    hp = HyperParams(beta1=0.0, beta2=0.0, polar_mode="exact")
    _, _, art = muon_step(_block(np.zeros((d, d))), Qo, _fresh((d, d)), hp, 0.1)
    assert math.sqrt(np.mean(art.Q ** 2)) == pytest.approx(1 / math.sqrt(d), rel=1e-12)
    assert math.sqrt(np.mean(art.D ** 2)) == pytest.approx(0.2, rel=1e-12)


def test_muon_no_momentum_direction_is_polar(rng):
    g = rng.standard_normal((9, 4))
    hp = HyperParams(beta1=0.0, beta2=0.0, polar_mode="exact")
    _, _, art = muon_step(_block(np.zeros((9, 4))), g, _fresh((9, 4)), hp, 0.1)
    P = polar_via_eigh(g)
    np.testing.assert_allclose(art.D / np.linalg.norm(art.D), P / np.linalg.norm(P), atol=1e-12)


# ---------------------------------------------------------------- AdamW / signSGD

def test_adamw_first_step_reference(rng):
    g = rng.standard_normal((3, 5))
    hp = HyperParams(beta1=0.9, beta2=0.95, weight_decay=0.0, adam_eps=1e-8)
    X = rng.standard_normal((3, 5))
    out, st, _ = adamw_step(_block(X), g, _fresh(g.shape, adam=True), hp, 0.01)
    # after bias correction the first step is g/(|g| + eps)
    np.testing.assert_allclose(out.matrix, X - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-13)
    assert st.step == 1


def test_adamw_two_steps_constant_grad_closed_form():
    hp = HyperParams(beta1=0.9, beta2=0.95, weight_decay=0.0, adam_eps=1e-8)
    X = np.zeros((2, 2))
    G = np.array([[2.0, -0.5], [0.25, 4.0]])
    block, st = _block(X), _fresh(X.shape, adam=True)
    for _ in range(2):
        block, st, art = adamw_step(block, G, st, hp, 1.0)
    # constant gradient: m_hat = g, v_hat = g^2 for every t
    np.testing.assert_allclose(art.Q, G, rtol=1e-14)
    np.testing.assert_allclose(block.matrix, -2 * G / (np.abs(G) + 1e-8), rtol=1e-13)


def test_signsgd_negative_identity():
    hp = HyperParams(weight_decay=0.0)
    out, _, _ = signsgd_step(_block(np.zeros((3, 3))), -np.eye(3), _fresh((3, 3)), hp, 0.25)
    np.testing.assert_array_equal(out.matrix, 0.25 * np.eye(3))


def test_fallback_1d_is_adamw_with_adam_betas(rng):
    g = rng.standard_normal((1, 6))
    X = rng.standard_normal((1, 6))
    hp = HyperParams(beta1=0.5, beta2=0.5, adam_beta1=0.9, adam_beta2=0.95)
    a, _, _ = fallback_step_1d(_block(X), g, _fresh(g.shape, adam=True), hp, 0.01)
    b, _, _ = adamw_step(_block(X), g, _fresh(g.shape, adam=True), hp, 0.01, betas=(0.9, 0.95))
    np.testing.assert_array_equal(a.matrix, b.matrix)
    with pytest.raises(ShapeMismatch):
        fallback_step_1d(_block(np.ones((2, 2))), np.ones((2, 2)), _fresh((2, 2), True), hp, 0.01)


def test_optimizer_routes_vectors_to_fallback(rng):
    opt = Optimizer("olion", HyperParams())
    P = {"W": rng.standard_normal((4, 4)), "b": rng.standard_normal(4)}
    opt.step(P, {"W": rng.standard_normal((4, 4)), "b": rng.standard_normal(4)}, 0.01)
    assert P["b"].shape == (4,)
    assert opt.state.blocks["b"].v is not None
    assert opt.state.step_count == 1


# ---------------------------------------------------------------- invariants

@pytest.mark.parametrize("name", ["olion", "lion", "muon", "signsgd"])
def test_weight_decay_decoupling(rng, name):
    X0 = rng.standard_normal((5, 3))
    opt = Optimizer(name, HyperParams(weight_decay=0.1))
    P = {"W": X0.copy()}
    for _ in range(20):
        opt.step(P, {"W": np.zeros_like(X0)}, 0.3)
    expected = X0.copy()
    for _ in range(20):
        expected = expected - 0.1 * 0.3 * expected
    np.testing.assert_array_equal(P["W"], expected)
    np.testing.assert_allclose(P["W"], (1 - 0.03) ** 20 * X0, rtol=1e-13)


def test_ns0_olion_sign_equals_lion(rng):
    hp = HyperParams(ns_steps=0)
    a, b = _block(np.zeros((6, 4))), _block(np.zeros((6, 4)))
    sa, sb = _fresh((6, 4)), _fresh((6, 4))
    for _ in range(20):
        g = rng.standard_normal((6, 4))
        a, sa, aa = olion_step(a, g, sa, hp, 0.01)
        b, sb, ab = lion_step(b, g, sb, hp, 0.01)
        np.testing.assert_array_equal(aa.S, ab.S)


def test_positive_scaling_of_history_keeps_S(rng):
    hp = HyperParams()
    grads = [rng.standard_normal((8, 6)) for _ in range(10)]
    a, b = _block(np.zeros((8, 6))), _block(np.zeros((8, 6)))
    sa, sb = _fresh((8, 6)), _fresh((8, 6))
    for g in grads:
        a, sa, aa = olion_step(a, g, sa, hp, 0.01)
        b, sb, ab = olion_step(b, 8.0 * g, sb, hp, 0.01)
        np.testing.assert_array_equal(aa.S, ab.S)
        np.testing.assert_array_equal(aa.D, ab.D)


def test_rms_gamma_zero_sign():
    assert rms_gamma(np.zeros((2, 2)), 0.2) == 0.0


def test_hyperparams_validation():
    for bad in ({"lr": 0}, {"beta1": 1.0}, {"weight_decay": -1}, {"ns_steps": 1.5}, {"rms_target": 0}):
        with pytest.raises(ValueError):
            HyperParams(**bad)


def test_determinism(rng):
    g = [rng.standard_normal((5, 5)) for _ in range(5)]
    outs = []
    for _ in range(2):
        opt = Optimizer("olion", HyperParams())
        P = {"W": np.ones((5, 5))}
        for gi in g:
            opt.step(P, {"W": gi}, 0.01)
        outs.append(P["W"].tobytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------- schedule

def test_schedule_warmup_and_cosine_end():
    s = LrSchedule("warmup_cosine", warmup_steps=10, total_steps=100, lr_max=1e-2, lr_min=1e-4)
    assert schedule_lr(s, 0) == pytest.approx(1e-3)
    assert schedule_lr(s, 9) == pytest.approx(1e-2)
    assert schedule_lr(s, 10) == pytest.approx(1e-2)
    assert abs(schedule_lr(s, 99) - 1e-4) < 1e-9
    mid = 10 + 89 / 2
    assert schedule_lr(s, 10) > schedule_lr(s, int(mid)) > schedule_lr(s, 99)


def test_schedule_linear_and_constant():
    s = LrSchedule("warmup_linear", warmup_steps=0, total_steps=11, lr_max=1.0, lr_min=0.0)
    assert [schedule_lr(s, t) for t in (0, 5, 10)] == pytest.approx([1.0, 0.5, 0.0])
    assert schedule_lr(LrSchedule("constant", 0, 5, 0.3), 4) == 0.3


def test_schedule_out_of_range():
    s = LrSchedule("constant", 0, 5, 0.1)
    for t in (-1, 5):
        with pytest.raises(OutOfRange):
            schedule_lr(s, t)
    with pytest.raises(ValueError):
        LrSchedule("warmup_cosine", warmup_steps=6, total_steps=5)
