"""Monte-Carlo checks of diagonal isotropy for Haar-random singular vectors."""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import fmt, isotropy_from_factors
from .errors import InsufficientGrid, InvalidRank


@dataclass(frozen=True)
class HaarPair:
    U: np.ndarray
    V: np.ndarray
    seed: int


def _haar_stiefel(rng, d, r):
    A = rng.standard_normal((d, r))
    Q, R = np.linalg.qr(A)
    # non-negative diag(R) makes the Q-factor Haar rather than merely orthonormal
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def sample_haar_pair(d1, d2, r, seed):
    if not 1 <= r <= min(d1, d2):
        raise InvalidRank(f"need 1 <= r <= min(d1, d2), got r={r}, d1={d1}, d2={d2}")
    rng = np.random.default_rng(seed)
    U = _haar_stiefel(rng, d1, r)
    V = _haar_stiefel(rng, d2, r)
    return HaarPair(U, V, seed)


def _trial(args):
    d1, d2, r, seed = args
    pair = sample_haar_pair(d1, d2, r, seed)
    rep = isotropy_from_factors(pair.U, pair.V)
    return rep.epsilon, rep.q_l1


def epsilon_mc(d1, d2, r, trials, seed=0, workers=1):
    """Sample epsilon over ``trials`` Haar pairs; trial i uses seed ``seed + i``."""
    if r < 2:
        raise InvalidRank("the random model needs r >= 2")
    args = [(d1, d2, r, seed + i) for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_trial, args))
    else:
        out = [_trial(a) for a in args]
    eps = np.array([e for e, _ in out])
    q_l1 = np.array([q for _, q in out])
    return {"mean_eps": float(eps.mean()), "std_eps": float(eps.std(ddof=1)) if trials > 1 else 0.0,
            "samples": eps, "q_l1": q_l1}


def law_scale(d1, d2, r):
    """sqrt(r log r / (d1 d2)), the predicted scale of epsilon."""
    return math.sqrt(r * math.log(r) / (d1 * d2))


@dataclass
class ScalingStudy:
    grid: list
    trials: int
    eps_samples: list = field(default_factory=list)
    q_l1_samples: list = field(default_factory=list)
    fitted_slope: float = float("nan")
    fitted_intercept: float = float("nan")
    r_squared: float = float("nan")

    def mean_eps(self):
        return [float(np.mean(s)) for s in self.eps_samples]


def run_study(grid, trials, seed=0, workers=1):
    grid = [tuple(int(v) for v in cell) for cell in grid]
    study = ScalingStudy(grid, trials)
    for d1, d2, r in grid:
        res = epsilon_mc(d1, d2, r, trials, seed, workers)
        study.eps_samples.append(res["samples"])
        study.q_l1_samples.append(res["q_l1"])
    return study


def fit_scaling_law(study, min_trials=30):
    """OLS of log(mean eps) on log(sqrt(r log r / d1 d2)) over grid cells."""
    if len(study.grid) < 4:
        raise InsufficientGrid("need at least 4 grid cells")
    sizes = [d1 * d2 for d1, d2, _ in study.grid]
    if max(sizes) < 8 * min(sizes):
        raise InsufficientGrid("grid must span at least 8x in d1*d2")
    if study.trials < min_trials:
        raise InsufficientGrid(f"need at least {min_trials} trials per cell")
    x = np.log([law_scale(*cell) for cell in study.grid])
    y = np.log(study.mean_eps())
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    study.fitted_slope, study.fitted_intercept, study.r_squared = float(slope), float(intercept), r2
    return {"slope": float(slope), "intercept": float(intercept), "r_squared": r2}


def write_study(study, csv_path, json_path):
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["d1", "d2", "r", "trial", "eps", "q_l1"])
        for (d1, d2, r), eps, ql1 in zip(study.grid, study.eps_samples, study.q_l1_samples):
            for i, (e, q) in enumerate(zip(eps, ql1)):
                w.writerow([d1, d2, r, i, fmt(e), fmt(q)])
    summary = {
        "slope": study.fitted_slope,
        "intercept": study.fitted_intercept,
        "r_squared": study.r_squared,
        "grid": [list(c) for c in study.grid],
        "mean_eps": study.mean_eps(),
        "trials": study.trials,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
