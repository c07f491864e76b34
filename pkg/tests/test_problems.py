import math

import numpy as np
import pytest

from olion import problems as pb
from olion.errors import ConfigInvalid, InvalidDim
from olion.optimizers import LrSchedule, Optimizer, default_hyperparams, schedule_lr


@pytest.fixture
def quad():
    return pb.build_problem("quadratic", rows=6, cols=5, data_seed=3)


def test_quadratic_minimizer(quad):
    f, g = quad.loss_and_grad({"X": quad.A.copy()})
    assert f == 0.0 and not np.any(g["X"])


def test_quadratic_gradient_lipschitz_exactly_one(quad, rng):
    X, Y = rng.standard_normal(quad.A.shape), rng.standard_normal(quad.A.shape)
    dg = np.linalg.norm(quad.grad({"X": X})["X"] - quad.grad({"X": Y})["X"])
    assert dg == pytest.approx(np.linalg.norm(X - Y), rel=1e-14)
    assert quad.L_constant == 1.0


def test_quadratic_fd(quad):
    P = quad.init(0)
    assert pb.finite_difference_check(quad, P) < 1e-7
    assert pb.finite_difference_check(quad, P, h=1e-6) < 1e-5


def test_mf_exact_factorization_is_zero():
    rng = np.random.default_rng(1)
    W1, W2 = rng.standard_normal((6, 2)), rng.standard_normal((2, 5))
    p = pb.make_matrix_factorization(W1 @ W2, 2)
    assert p.loss({"W1": W1, "W2": W2}) == pytest.approx(0.0, abs=1e-25)


def test_mf_gradient_formula_and_fd():
    p = pb.build_problem("matrix_factorization", rows=8, cols=7, rank=3, k=3)
    P = p.init(4)
    R = P["W1"] @ P["W2"] - p.Y
    np.testing.assert_allclose(p.grad(P)["W1"], R @ P["W2"].T, rtol=1e-14)
    assert pb.finite_difference_check(p, P) < 1e-6


def test_mf_invalid_dim():
    with pytest.raises(InvalidDim):
        pb.make_matrix_factorization(np.ones((3, 4)), 5)


def test_mf_local_L_estimate_is_finite():
    p = pb.build_problem("matrix_factorization")
    L = pb.estimate_local_L(p, p.init(0), n_pairs=32)
    assert 0.0 < L < np.inf


def test_mf_olion_converges_in_500_steps():
    p = pb.build_problem("matrix_factorization")
    P = p.init(0)
    opt = Optimizer("olion", default_hyperparams("olion", weight_decay=0.0))
    sched = LrSchedule("warmup_cosine", 50, 500, 0.05, 5e-4)
    for t in range(500):
        opt.step(P, p.grad(P), schedule_lr(sched, t))
    assert p.loss(P) < 1e-2


def test_softmax_uniform_at_zero():
    p = pb.make_softmax_classifier(10, 5, 100, data_seed=2)
    assert p.loss({"W": np.zeros((5, 10))}) == pytest.approx(math.log(5), rel=1e-14)


def test_softmax_fd_at_zero_and_random():
    p = pb.build_problem("softmax")
    assert pb.finite_difference_check(p, p.init(0)) < 1e-5
    W = np.random.default_rng(8).standard_normal(p.blocks[0].shape)
    assert pb.finite_difference_check(p, {"W": W}) < 1e-5


def test_softmax_L_bounds_gradient_differences():
    p = pb.build_problem("softmax")
    rng = np.random.default_rng(0)
    for _ in range(50):
        A, B = (rng.standard_normal(p.blocks[0].shape) for _ in range(2))
        num = np.linalg.norm(p.grad({"W": A})["W"] - p.grad({"W": B})["W"])
        assert num <= p.L_constant * np.linalg.norm(A - B) * (1 + 1e-12)


def test_softmax_requires_two_classes():
    with pytest.raises(InvalidDim):
        pb.make_softmax_classifier(4, 1, 10, 0)


def test_mlp_at_teacher_is_zero():
    p = pb.build_problem("mlp")
    f, g = p.loss_and_grad(p.teacher)
    assert f == 0.0
    assert all(not np.any(v) for v in g.values())


def test_mlp_fd_per_block():
    p = pb.build_problem("mlp", init_scale=1.0)
    P = p.init(0)
    for name in p.block_names():
        sub = pb.finite_difference_check(_OneBlock(p, P, name), {name: P[name]})
        assert sub < 1e-4, name


def test_mlp_fd_absolute_at_small_init():
    # gradients near 1e-7 at the default init make relative errors rounding-bound,
    # so compare absolute errors against the cancellation floor ulp(f) / h
    p = pb.build_problem("mlp")
    P = p.init(0)
    G = p.grad(P)
    floor = 10 * np.spacing(p.loss(P)) / 1e-6
    rng = np.random.default_rng(0)
    for name in p.block_names():
        X = P[name]
        for _ in range(40):
            idx = tuple(rng.integers(0, n) for n in X.shape)
            h = pb.fd_step(X[idx])
            Xp, Xm = X.copy(), X.copy()
            Xp[idx] += h
            Xm[idx] -= h
            fd = (p.loss({**P, name: Xp}) - p.loss({**P, name: Xm})) / (Xp[idx] - Xm[idx])
            assert abs(fd - G[name][idx]) < floor + 1e-6 * abs(G[name][idx])


class _OneBlock(pb.Problem):
    """Restricts a problem to one block so the checker walks only its entries."""

    def __init__(self, base, P, name):
        self.base, self.P, self.key = base, P, name
        super().__init__([])

    def loss_and_grad(self, Q):
        full = dict(self.P)
        full[self.key] = Q[self.key]
        f, g = self.base.loss_and_grad(full)
        return f, {self.key: g[self.key]}


def test_mlp_has_tall_and_wide_blocks():
    shapes = [b.shape for b in pb.build_problem("mlp").blocks]
    assert any(r > c for r, c in shapes) and any(r < c for r, c in shapes)


@pytest.mark.parametrize("name", ["softmax", "mlp"])
def test_minibatch_epoch_average_equals_full(name):
    p = pb.build_problem(name)
    P = p.init(1) if name == "mlp" else {"W": np.random.default_rng(2).standard_normal(p.blocks[0].shape)}
    bs = 32
    nb = p.n_samples // bs
    acc = {k: np.zeros_like(v) for k, v in P.items()}
    for step in range(nb):
        g = p.minibatch_grad(P, p.batch_indices(step, 9, bs))
        for k in acc:
            acc[k] += g[k] / nb
    full = p.grad(P)
    for k in acc:
        assert np.max(np.abs(acc[k] - full[k])) < 1e-10


def test_batches_cover_epoch_disjointly():
    p = pb.build_problem("softmax")
    idx = np.concatenate([p.batch_indices(s, 0, 64) for s in range(4)])
    assert sorted(idx.tolist()) == list(range(256))
    assert not np.array_equal(p.batch_indices(0, 0, 64), p.batch_indices(4, 0, 64))


@pytest.mark.parametrize("name", ["quadratic", "matrix_factorization", "softmax", "mlp"])
def test_data_is_pure_function_of_seed(name):
    a, b = pb.build_problem(name), pb.build_problem(name)
    Pa, Pb = a.init(3), b.init(3)
    for k in Pa:
        assert Pa[k].tobytes() == Pb[k].tobytes()
    assert a.loss(Pa) == b.loss(Pb)


@pytest.mark.parametrize("name", ["quadratic", "matrix_factorization", "softmax", "mlp"])
def test_lower_bound_on_random_probes(name):
    p = pb.build_problem(name)
    rng = np.random.default_rng(0)
    n = 10_000 if name in ("quadratic", "softmax") else 1000
    for _ in range(n):
        P = {b.name: 3.0 * rng.standard_normal(b.shape) for b in p.blocks}
        assert p.loss(P) >= p.f_lower_bound


def test_registry_errors():
    with pytest.raises(ConfigInvalid):
        pb.build_problem("resnet")
    with pytest.raises(ConfigInvalid):
        pb.build_problem("quadratic", depth=3)


def test_fd_rejects_bad_step(quad):
    with pytest.raises(ValueError):
        pb.finite_difference_check(quad, quad.init(0), h=0.0)
