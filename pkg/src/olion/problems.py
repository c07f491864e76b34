"""Small differentiable objectives with matrix-shaped parameters.

Every problem exposes ``loss``, ``grad`` and ``minibatch_grad`` over a dict of
named blocks, a deterministic ``init(seed)``, and its smoothness constant when
one is known analytically.  Data depends only on ``data_seed``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, InvalidDim


_INIT_STREAM = 0x5EED


def init_rng(seed):
    """Generator for parameter init, independent of any ``data_seed`` stream."""
    return np.random.default_rng([int(seed), _INIT_STREAM])


@dataclass(frozen=True)
class BlockSpec:
    name: str
    shape: tuple


class Problem:
    name = "problem"
    L_constant = None
    f_lower_bound = 0.0
    n_samples = None

    def __init__(self, blocks, params=None):
        self.blocks = list(blocks)
        self.params = dict(params or {})

    def block_names(self):
        return [b.name for b in self.blocks]

    def init(self, seed):
        raise NotImplementedError

    def loss(self, P):
        return self.loss_and_grad(P)[0]

    def grad(self, P):
        return self.loss_and_grad(P)[1]

    def loss_and_grad(self, P):
        raise NotImplementedError

    def minibatch_grad(self, P, indices):
        """Gradient on the sample subset ``indices``; data-free problems return the full gradient."""
        return self.grad(P)

    def batch_indices(self, step, seed, batch_size):
        """Disjoint batches of a seeded per-epoch permutation; a trailing partial batch is dropped."""
        if self.n_samples is None:
            return None
        n_batches = self.n_samples // batch_size
        if n_batches < 1:
            raise ConfigInvalid("batch size larger than the dataset")
        epoch, pos = divmod(step, n_batches)
        perm = np.random.default_rng([seed, epoch]).permutation(self.n_samples)
        return perm[pos * batch_size:(pos + 1) * batch_size]


class Quadratic(Problem):
    """f(X) = 1/2 ||X - A||_F^2 with L = 1 and f_inf = 0."""

    name = "quadratic"
    L_constant = 1.0

    def __init__(self, A, params=None):
        self.A = np.array(A, dtype=np.float64, ndmin=2)
        super().__init__([BlockSpec("X", self.A.shape)], params)

    def init(self, seed):
        return {"X": init_rng(seed).standard_normal(self.A.shape)}

    def loss_and_grad(self, P):
        R = P["X"] - self.A
        return 0.5 * float(np.sum(R * R)), {"X": R}


def make_quadratic(A):
    return Quadratic(A)


class MatrixFactorization(Problem):
    """f(W1, W2) = 1/2 ||W1 W2 - Y||_F^2; not globally smooth."""

    name = "matrix_factorization"

    def __init__(self, Y, k, init_scale=0.1, params=None):
        self.Y = np.array(Y, dtype=np.float64, ndmin=2)
        m, n = self.Y.shape
        if not 1 <= k <= min(m, n):
            raise InvalidDim(f"inner dim k={k} must be in [1, {min(m, n)}]")
        self.k = k
        self.init_scale = init_scale
        super().__init__([BlockSpec("W1", (m, k)), BlockSpec("W2", (k, n))], params)

    def init(self, seed):
        rng = init_rng(seed)
        return {b.name: self.init_scale * rng.standard_normal(b.shape) for b in self.blocks}

    def loss_and_grad(self, P):
        W1, W2 = P["W1"], P["W2"]
        R = W1 @ W2 - self.Y
        return 0.5 * float(np.sum(R * R)), {"W1": R @ W2.T, "W2": W1.T @ R}


def make_matrix_factorization(Y, k):
    return MatrixFactorization(Y, k)


def estimate_local_L(problem, center, radius=0.5, n_pairs=256, seed=0):
    """Largest observed ||grad(X) - grad(Y)|| / ||X - Y|| over pairs in a ball.

    An estimate, not a certified constant.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        X = {k: v + radius * rng.uniform(-1, 1, v.shape) for k, v in center.items()}
        Y = {k: v + radius * rng.uniform(-1, 1, v.shape) for k, v in center.items()}
        gX, gY = problem.grad(X), problem.grad(Y)
        num = np.sqrt(sum(np.sum((gX[k] - gY[k]) ** 2) for k in center))
        den = np.sqrt(sum(np.sum((X[k] - Y[k]) ** 2) for k in center))
        if den > 0:
            best = max(best, float(num / den))
    return best


def _blobs(n_features, n_classes, n_samples, rng, separation):
    means = separation * rng.standard_normal((n_classes, n_features)) / np.sqrt(n_features)
    labels = np.arange(n_samples) % n_classes
    X = means[labels] + rng.standard_normal((n_samples, n_features)) / np.sqrt(n_features)
    return X, labels


class SoftmaxClassifier(Problem):
    """Mean cross-entropy of a bias-free linear softmax model on Gaussian blobs."""

    name = "softmax"

    def __init__(self, n_features=16, n_classes=4, n_samples=256, data_seed=0,
                 separation=4.0, n_heldout=0, params=None):
        if n_classes < 2:
            raise InvalidDim("need at least two classes")
        rng = np.random.default_rng(data_seed)
        self.X, self.labels = _blobs(n_features, n_classes, n_samples, rng, separation)
        self.n_samples = n_samples
        self.n_classes = n_classes
        self.Y = np.eye(n_classes)[self.labels]
        self.heldout = None
        if n_heldout:
            # held-out points reuse the training class means
            hrng = np.random.default_rng([data_seed, 1])
            means = separation * np.random.default_rng(data_seed).standard_normal(
                (n_classes, n_features)) / np.sqrt(n_features)
            labels_h = np.arange(n_heldout) % n_classes
            Xh = means[labels_h] + hrng.standard_normal((n_heldout, n_features)) / np.sqrt(n_features)
            self.heldout = (Xh, np.eye(n_classes)[labels_h])
        # softmax Hessian blocks are bounded by 1/2 in operator norm
        self.L_constant = 0.5 * float(np.linalg.eigvalsh(self.X.T @ self.X)[-1]) / n_samples
        super().__init__([BlockSpec("W", (n_classes, n_features))], params)

    def init(self, seed):
        return {"W": np.zeros(self.blocks[0].shape)}

    @staticmethod
    def _ce(W, X, Y):
        logits = X @ W.T
        logits = logits - logits.max(axis=1, keepdims=True)
        logZ = np.log(np.sum(np.exp(logits), axis=1, keepdims=True))
        logp = logits - logZ
        n = X.shape[0]
        loss = -float(np.sum(Y * logp)) / n
        G = (np.exp(logp) - Y).T @ X / n
        return loss, G

    def loss_and_grad(self, P):
        loss, G = self._ce(P["W"], self.X, self.Y)
        return loss, {"W": G}

    def minibatch_grad(self, P, indices):
        return {"W": self._ce(P["W"], self.X[indices], self.Y[indices])[1]}

    def heldout_loss(self, P):
        if self.heldout is None:
            return None
        return self._ce(P["W"], *self.heldout)[0]


def make_softmax_classifier(n_features, n_classes, n_samples, data_seed, **kw):
    return SoftmaxClassifier(n_features, n_classes, n_samples, data_seed, **kw)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(np.float64)),
}


class TinyMLP(Problem):
    """Squared-loss regression of a bias-free MLP onto a seeded teacher of the same shape."""

    name = "mlp"
    f_lower_bound = 0.0

    def __init__(self, widths=(8, 32, 32, 16, 4), activation="tanh", n_samples=256,
                 data_seed=0, init_scale=0.1, n_heldout=0, params=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 3:
            raise InvalidDim("need at least two layers")
        if activation not in _ACTIVATIONS:
            raise ConfigInvalid(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.n_samples = n_samples
        self.init_scale = init_scale
        specs = [BlockSpec(f"W{i}", (widths[i + 1], widths[i])) for i in range(len(widths) - 1)]
        super().__init__(specs, params)
        rng = np.random.default_rng(data_seed)
        self.teacher = self._random_weights(rng, 1.0)
        self.X = rng.standard_normal((n_samples, widths[0]))
        self.T = self.forward(self.teacher, self.X)[-1][1]
        self.heldout = None
        if n_heldout:
            Xh = np.random.default_rng([data_seed, 1]).standard_normal((n_heldout, widths[0]))
            self.heldout = (Xh, self.forward(self.teacher, Xh)[-1][1])

    def _random_weights(self, rng, scale):
        return {b.name: scale * rng.standard_normal(b.shape) / np.sqrt(b.shape[1]) for b in self.blocks}

    def init(self, seed):
        return self._random_weights(init_rng(seed), self.init_scale)

    def forward(self, P, X):
        act = _ACTIVATIONS[self.activation][0]
        cache = []
        h = X
        last = len(self.blocks) - 1
        for i, b in enumerate(self.blocks):
            a = h @ P[b.name].T
            out = a if i == last else act(a)
            cache.append((h, out, a))
            h = out
        # per layer: (input, output, pre-activation)
        return cache

    def _loss_grad(self, P, X, T):
        dact = _ACTIVATIONS[self.activation][1]
        cache = self.forward(P, X)
        n = X.shape[0]
        R = cache[-1][1] - T
        loss = 0.5 * float(np.sum(R * R)) / n
        grads = {}
        delta = R / n
        for i in range(len(self.blocks) - 1, -1, -1):
            h_in, out, a = cache[i]
            if i != len(self.blocks) - 1:
                delta = delta * dact(a, out)
            name = self.blocks[i].name
            grads[name] = delta.T @ h_in
            delta = delta @ P[name]
        return loss, grads

    def loss_and_grad(self, P):
        return self._loss_grad(P, self.X, self.T)

    def minibatch_grad(self, P, indices):
        return self._loss_grad(P, self.X[indices], self.T[indices])[1]

    def heldout_loss(self, P):
        if self.heldout is None:
            return None
        return self._loss_grad(P, *self.heldout)[0]


def make_tiny_mlp(widths, activation="tanh", n_samples=256, data_seed=0, **kw):
    return TinyMLP(widths, activation, n_samples, data_seed, **kw)


def fd_step(x):
    return 1e-6 * (1.0 + abs(x))


def finite_difference_check(problem, P, h=None, mode="central", floor=1e-8):
    """Max relative error between central differences and the analytic gradient.

    ``h`` defaults to 1e-6 * (1 + |x_ij|) per entry; errors are relative to
    max(|analytic|, |numeric|, floor).
    """
    if mode != "central":
        raise ValueError("only central differences are supported")
    if h is not None and not h > 0:
        raise ValueError("h must be positive")
    G = problem.grad(P)
    worst = 0.0
    for name, X in P.items():
        X = np.array(X, dtype=np.float64)
        for idx in np.ndindex(X.shape):
            step = fd_step(X[idx]) if h is None else h
            Pp = dict(P)
            Pm = dict(P)
            Xp, Xm = X.copy(), X.copy()
            Xp[idx] += step
            Xm[idx] -= step
            Pp[name], Pm[name] = Xp, Xm
            fd = (problem.loss(Pp) - problem.loss(Pm)) / (Xp[idx] - Xm[idx])
            g = G[name][idx]
            err = abs(fd - g) / max(abs(g), abs(fd), floor)
            worst = max(worst, err)
    return worst


def _quadratic_from_config(rows=8, cols=4, data_seed=0, scale=1.0):
    A = scale * np.random.default_rng(data_seed).standard_normal((rows, cols))
    return Quadratic(A)


def _mf_from_config(rows=20, cols=20, rank=5, k=5, data_seed=0, init_scale=0.1):
    rng = np.random.default_rng(data_seed)
    Y = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols)) / np.sqrt(rank)
    return MatrixFactorization(Y, k, init_scale)


REGISTRY = {
    "quadratic": _quadratic_from_config,
    "matrix_factorization": _mf_from_config,
    "softmax": SoftmaxClassifier,
    "mlp": TinyMLP,
}


def build_problem(name, **params):
    """Construct a registered problem from config parameters."""
    if name not in REGISTRY:
        raise ConfigInvalid(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}")
    try:
        p = REGISTRY[name](**params)
    except TypeError as exc:
        raise ConfigInvalid(f"bad parameters for problem {name!r}: {exc}") from exc
    p.params = dict(params)
    return p
