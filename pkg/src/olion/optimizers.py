"""Step rules for OLion, Lion, Muon, signSGD and AdamW on matrix blocks.

Every ``*_step`` function is pure: it takes a block, its gradient, the
block's state and hyperparameters and returns a new block, a new state and
the intermediate artifacts of the step.  :class:`Optimizer` dispatches a
whole parameter dict and routes 1-D blocks to the AdamW fallback.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import matcore
from .errors import OutOfRange, ShapeMismatch

OPTIMIZERS = ("olion", "lion", "muon", "adamw", "signsgd")

# name -> (beta1, beta2)
_DEFAULT_BETAS = {
    "olion": (0.95, 0.98),
    "lion": (0.9, 0.99),
    "muon": (0.95, 0.95),
    "adamw": (0.9, 0.95),
    "signsgd": (0.0, 0.0),
}


@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-3
    beta1: float = 0.95
    beta2: float = 0.98
    weight_decay: float = 0.1
    ns_steps: int = 5
    rms_target: float = 0.2
    adam_eps: float = 1e-8
    # used by the AdamW fallback on 1-D blocks of non-Adam optimizers
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    polar_mode: str = "newton_schulz"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for name in ("beta1", "beta2", "adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if int(self.ns_steps) != self.ns_steps or self.ns_steps < 0:
            raise ValueError("ns_steps must be a non-negative integer")
        if not self.rms_target > 0 or not self.adam_eps > 0:
            raise ValueError("rms_target and adam_eps must be positive")
        if self.polar_mode not in ("exact", "newton_schulz"):
            raise ValueError(f"unknown polar_mode {self.polar_mode!r}")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_hyperparams(optimizer, **overrides):
    """Hyperparameters with the per-optimizer default betas."""
    if optimizer not in _DEFAULT_BETAS:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    b1, b2 = _DEFAULT_BETAS[optimizer]
    kw = {"beta1": b1, "beta2": b2}
    kw.update(overrides)
    return HyperParams(**kw)


@dataclass
class ParamBlock:
    name: str
    matrix: np.ndarray
    kind: str = ""

    def __post_init__(self):
        self.matrix = matcore.as_matrix(self.matrix)
        if not self.kind:
            self.kind = "fallback_1d" if min(self.matrix.shape) == 1 else "matrix_shaped"
        if self.kind == "fallback_1d" and min(self.matrix.shape) != 1:
            raise ValueError("fallback_1d blocks must have a single row or column")
        if self.kind not in ("matrix_shaped", "fallback_1d"):
            raise ValueError(f"unknown block kind {self.kind!r}")


@dataclass
class BlockState:
    m: np.ndarray
    v: np.ndarray = None
    step: int = 0

    @classmethod
    def zeros(cls, shape, second_moment=False):
        return cls(np.zeros(shape), np.zeros(shape) if second_moment else None, 0)


@dataclass
class StepArtifacts:
    G_tilde: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    D: np.ndarray
    gamma: float


def _check(block, grad):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != block.matrix.shape:
        raise ShapeMismatch(f"{block.name}: grad {grad.shape} vs block {block.matrix.shape}")
    return grad


def _momentum(state, grad, hp):
    m = hp.beta2 * state.m + (1.0 - hp.beta2) * grad
    g_tilde = (1.0 - hp.beta1) * grad + hp.beta1 * m
    return m, g_tilde


def rms_gamma(S, rms_target):
    """Scalar making RMS(gamma * S) equal ``rms_target``; 0 for an all-zero S."""
    norm = math.sqrt(float(np.sum(S * S)))
    if norm == 0.0:
        return 0.0
    return rms_target * math.sqrt(S.size) / norm


def _apply(block, D, hp, eta):
    X = block.matrix
    return replace(block, matrix=X - eta * D - hp.weight_decay * eta * X)


def _orthogonalize(G, hp):
    if not np.any(G):
        return np.zeros_like(G)
    if hp.polar_mode == "exact":
        return matcore.polar_factor_exact(G)
    return matcore.newton_schulz(G, hp.ns_steps)


def olion_step(block, grad, state, hp, eta):
    """One OLion update: momentum, Nesterov mix, orthogonalize, sign, RMS-align."""
    grad = _check(block, grad)
    if block.kind != "matrix_shaped":
        raise ShapeMismatch(f"{block.name}: OLion needs a matrix-shaped block")
    m, g_tilde = _momentum(state, grad, hp)
    Q = _orthogonalize(g_tilde, hp)
    S = np.sign(Q)
    gamma = rms_gamma(S, hp.rms_target)
    D = gamma * S
    new_state = BlockState(m, state.v, state.step + 1)
    return _apply(block, D, hp, eta), new_state, StepArtifacts(g_tilde, Q, S, D, gamma)


def lion_step(block, grad, state, hp, eta):
    """OLion's pipeline with the orthogonalization skipped (Q = G_tilde)."""
    grad = _check(block, grad)
    m, g_tilde = _momentum(state, grad, hp)
    S = np.sign(g_tilde)
    gamma = rms_gamma(S, hp.rms_target)
    D = gamma * S
    new_state = BlockState(m, state.v, state.step + 1)
    return _apply(block, D, hp, eta), new_state, StepArtifacts(g_tilde, g_tilde, S, D, gamma)


def muon_step(block, grad, state, hp, eta):
    grad = _check(block, grad)
    if block.kind != "matrix_shaped":
        raise ShapeMismatch(f"{block.name}: Muon needs a matrix-shaped block")
    m, g_tilde = _momentum(state, grad, hp)
    Q = _orthogonalize(g_tilde, hp)
    gamma = rms_gamma(Q, hp.rms_target)
    D = gamma * Q
    new_state = BlockState(m, state.v, state.step + 1)
    return _apply(block, D, hp, eta), new_state, StepArtifacts(g_tilde, Q, np.sign(Q), D, gamma)


def signsgd_step(block, grad, state, hp, eta):
    grad = _check(block, grad)
    S = np.sign(grad)
    new_state = BlockState(state.m, state.v, state.step + 1)
    return _apply(block, S, hp, eta), new_state, StepArtifacts(grad, grad, S, S, 1.0)


def adamw_step(block, grad, state, hp, eta, betas=None):
    """AdamW with bias correction and decoupled weight decay.

    ``betas`` overrides ``(hp.beta1, hp.beta2)``; the fallback path passes the
    Adam-specific pair.
    """
    grad = _check(block, grad)
    b1, b2 = betas if betas is not None else (hp.beta1, hp.beta2)
    t = state.step + 1
    v_prev = state.v if state.v is not None else np.zeros_like(grad)
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * v_prev + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    D = m_hat / (np.sqrt(v_hat) + hp.adam_eps)
    return _apply(block, D, hp, eta), BlockState(m, v, t), StepArtifacts(grad, m_hat, np.sign(D), D, 1.0)


def fallback_step_1d(block, grad, state, hp, eta):
    if block.kind != "fallback_1d":
        raise ShapeMismatch(f"{block.name}: fallback path is for 1-D blocks")
    return adamw_step(block, grad, state, hp, eta, betas=(hp.adam_beta1, hp.adam_beta2))


STEP_RULES = {
    "olion": olion_step,
    "lion": lion_step,
    "muon": muon_step,
    "adamw": adamw_step,
    "signsgd": signsgd_step,
}


@dataclass
class OptimizerState:
    blocks: dict = field(default_factory=dict)
    step_count: int = 0


class Optimizer:
    """Applies one named step rule to every block of a parameter dict."""

    def __init__(self, name, hp):
        if name not in STEP_RULES:
            raise ValueError(f"unknown optimizer {name!r}; choose from {OPTIMIZERS}")
        self.name = name
        self.hp = hp
        self.state = OptimizerState()

    def _rule(self, block):
        if block.kind == "fallback_1d" and self.name not in ("adamw", "signsgd"):
            return fallback_step_1d
        return STEP_RULES[self.name]

    def step(self, params, grads, eta):
        """Update ``params`` (name -> array) in place; return name -> StepArtifacts."""
        artifacts = {}
        for name, X in params.items():
            block = ParamBlock(name, X)
            st = self.state.blocks.get(name)
            if st is None:
                st = BlockState.zeros(block.matrix.shape, second_moment=self.name == "adamw")
            rule = self._rule(block)
            if rule is fallback_step_1d and st.v is None:
                st = BlockState(st.m, np.zeros_like(st.m), st.step)
            new_block, new_state, art = rule(block, grads[name], st, self.hp, eta)
            params[name] = new_block.matrix.reshape(np.shape(X))
            self.state.blocks[name] = new_state
            artifacts[name] = art
        self.state.step_count += 1
        return artifacts


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"
    warmup_steps: int = 0
    total_steps: int = 1
    lr_max: float = 1e-3
    lr_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "warmup_cosine", "warmup_linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if not 0 <= self.lr_min <= self.lr_max:
            raise ValueError("need 0 <= lr_min <= lr_max")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def schedule_lr(s, t):
    """Learning rate at step ``t``.

    Warmup is ``lr_max * (t + 1) / warmup_steps`` so step 0 is not dead; the
    decay phase reaches ``lr_min`` exactly at ``t = total_steps - 1``.
    """
    if not 0 <= t < s.total_steps:
        raise OutOfRange(f"step {t} outside [0, {s.total_steps})")
    if s.kind == "constant":
        return s.lr_max
    if t < s.warmup_steps:
        return s.lr_max * (t + 1) / s.warmup_steps
    span = s.total_steps - 1 - s.warmup_steps
    if span <= 0:
        return s.lr_max
    p = (t - s.warmup_steps) / span
    if s.kind == "warmup_cosine":
        return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + math.cos(math.pi * p))
    return s.lr_max + (s.lr_min - s.lr_max) * p
