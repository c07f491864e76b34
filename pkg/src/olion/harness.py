"""Training loop, checkpoint/resume, learning-rate sweeps and distribution dumps."""

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diagnostics, matcore
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .diagnostics import TrajectoryRecorder, fmt
from .errors import ConfigInvalid, NonFiniteLoss, UnknownBlock
from .optimizers import Optimizer, default_hyperparams, schedule_lr
from .problems import build_problem

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "loss", "lr", "grad_norm")


@dataclass
class RunSummary:
    final_loss: float
    loss_curve: list
    diagnostics_csv_path: str
    checkpoint_paths: list
    output_dir: str
    status: str = "ok"
    diverged_step: int = None
    start_step: int = 0
    end_step: int = 0
    final_grad_norm: float = float("nan")
    grad_norm_curve: list = field(default_factory=list)
    descent_residuals: list = field(default_factory=list)
    summed_bound: dict = None
    heldout_loss: float = None
    params: dict = field(default=None, repr=False)

    def to_json_dict(self):
        d = asdict(self)
        d.pop("params")
        d.pop("loss_curve")
        d.pop("grad_norm_curve")
        d.pop("descent_residuals")
        res = [r for r in self.descent_residuals if not math.isnan(r)]
        d["max_descent_residual"] = max(res) if res else None
        d["descent_violations"] = sum(r > 0 for r in res)
        return d


def _global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def _audit_enabled(config, problem):
    if config.audit == "off":
        return False
    if config.audit == "on":
        if problem.L_constant is None:
            raise ConfigInvalid("audit=on needs a problem with a known smoothness constant")
        return True
    return config.optimizer == "olion" and problem.L_constant is not None


def _descent_terms(grads, artifacts, eta):
    """Sum over blocks of eta_b * Phi_b and eta_b^2 * d1 * d2 with eta_b = eta * gamma_b.

    Phi is evaluated on the full gradient with the exact polar factor.
    """
    eta_phi = 0.0
    eta_sq_size = 0.0
    for name, G in grads.items():
        eta_b = eta * artifacts[name].gamma
        if np.any(G) and eta_b != 0.0:
            eta_phi += eta_b * diagnostics.stationarity_phi(G)["phi"]
        eta_sq_size += eta_b * eta_b * G.size
    return eta_phi, eta_sq_size


def _write_loss_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for step, loss, lr, gn in rows:
            w.writerow([step, fmt(loss), fmt(lr), fmt(gn)])


# divergence is reported through NonFiniteLoss, so overflow warnings are noise
@np.errstate(over="ignore", invalid="ignore")
def _train(config, problem, params, opt, start, end, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(config.to_json() + "\n")
    recorder = TrajectoryRecorder(config.diag_interval, config.track_blocks)
    audit = _audit_enabled(config, problem)
    L = problem.L_constant
    rows, ckpts, residuals = [], [], []
    sum_eta_phi = 0.0
    sum_eta_sq_size = 0.0
    status, diverged = "ok", None
    loss, grads = problem.loss_and_grad(params)
    f0 = loss
    t = start
    try:
        for t in range(start, end):
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(t, loss)
            lr = schedule_lr(config.schedule, t)
            gnorm = _global_norm(grads)
            rows.append((t, loss, lr, gnorm))
            if config.batch == "full":
                g_step = grads
            else:
                idx = problem.batch_indices(t, config.seed, config.batch)
                g_step = problem.minibatch_grad(params, idx)
            if config.grad_clip is not None:
                norm = _global_norm(g_step)
                if norm > config.grad_clip:
                    g_step = {k: v * (config.grad_clip / norm) for k, v in g_step.items()}
            artifacts = opt.step(params, g_step, lr)
            new_loss, new_grads = problem.loss_and_grad(params)
            residual = float("nan")
            if audit:
                eta_phi, eta_sq = _descent_terms(grads, artifacts, lr)
                if math.isfinite(new_loss):
                    residual = new_loss - (loss - eta_phi + 0.5 * L * eta_sq)
                sum_eta_phi += eta_phi
                sum_eta_sq_size += eta_sq
                if residual > 0:
                    log.info("descent violation at step %d: residual %.3e", t, residual)
            residuals.append(residual)
            if recorder.due(t):
                recorder.record_trajectory(t, params, artifacts, lr, residual)
            loss, grads = new_loss, new_grads
            if config.checkpoint_interval and (t + 1) % config.checkpoint_interval == 0 and t + 1 < end:
                ckpts.append(_checkpoint(out_dir, t + 1, params, opt.state, config))
        t = end
        if not math.isfinite(loss):
            raise NonFiniteLoss(end, loss)
    except NonFiniteLoss as exc:
        status, diverged = "diverged", exc.step
        log.warning("run diverged at step %d", exc.step)
    if status == "ok":
        ckpts.append(_checkpoint(out_dir, end, params, opt.state, config))

    loss_path = os.path.join(out_dir, "loss.csv")
    _write_loss_csv(loss_path, rows)
    diag_path = os.path.join(out_dir, "diagnostics.csv")
    recorder.write_csv(diag_path)
    summed = None
    if audit:
        summed = {"lhs": sum_eta_phi,
                  "rhs": f0 - problem.f_lower_bound + 0.5 * L * sum_eta_sq_size,
                  "f0": f0}
    heldout = getattr(problem, "heldout_loss", None)
    summary = RunSummary(
        final_loss=float(loss),
        loss_curve=[r[1] for r in rows],
        diagnostics_csv_path=diag_path,
        checkpoint_paths=ckpts,
        output_dir=out_dir,
        status=status,
        diverged_step=diverged,
        start_step=start,
        end_step=t,
        final_grad_norm=_global_norm(grads) if status == "ok" else float("nan"),
        grad_norm_curve=[r[3] for r in rows],
        descent_residuals=residuals,
        summed_bound=summed,
        heldout_loss=heldout(params) if heldout and status == "ok" else None,
        params=params,
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary.to_json_dict(), fh, indent=2, sort_keys=True, default=str)
    if status == "diverged":
        err = NonFiniteLoss(diverged, float("nan"))
        err.summary = summary
        raise err
    return summary


def _checkpoint(out_dir, step, params, state, config):
    path = os.path.join(out_dir, "checkpoints", f"step_{step:06d}")
    return save_checkpoint(path, step, params, state, config.to_dict())


def _build(config):
    problem = build_problem(config.problem_name, **config.problem_params)
    if config.track_blocks is not None:
        missing = set(config.track_blocks) - set(problem.block_names())
        if missing:
            raise ConfigInvalid(f"track_blocks names unknown blocks {sorted(missing)}")
    return problem


def run(config):
    """Train from ``problem.init(seed)`` for ``config.steps`` steps."""
    if isinstance(config, dict):
        config = RunConfig.from_dict(config)
    problem = _build(config)
    params = problem.init(config.seed)
    opt = Optimizer(config.optimizer, config.hyperparams)
    return _train(config, problem, params, opt, 0, config.steps, config.output_dir)


def resume(checkpoint_path, remaining_steps, output_dir=None, overrides=None):
    """Continue a checkpointed run for ``remaining_steps`` more steps.

    ``overrides`` may only touch keys that do not change the trajectory's
    identity; changing the problem is rejected.
    """
    manifest, params, state = load_checkpoint(checkpoint_path)
    raw = manifest["config"]
    if overrides:
        from .config import apply_overrides
        new = apply_overrides(raw, overrides)
        if new["problem"] != raw["problem"]:
            raise ConfigInvalid(
                f"checkpoint was written for problem {raw['problem'].get('name')!r}, "
                f"got {new['problem'].get('name')!r}")
        raw = new
    if int(remaining_steps) < 1:
        raise ConfigInvalid("remaining steps must be >= 1")
    start = int(manifest["step"])
    end = start + int(remaining_steps)
    raw = dict(raw)
    raw["steps"] = end
    sched = dict(raw.get("schedule") or {})
    if sched.get("kind", "constant") == "constant":
        sched["total_steps"] = max(int(sched.get("total_steps") or 0), end)
    elif int(sched.get("total_steps", 0)) < end:
        raise ConfigInvalid(f"schedule ends at step {sched.get('total_steps')}, cannot resume to {end}")
    raw["schedule"] = sched
    if output_dir is None:
        output_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(checkpoint_path))),
                                  f"resume_from_{start:06d}")
    raw["output_dir"] = output_dir
    config = RunConfig.from_dict(raw)
    problem = _build(config)
    expected = {b.name: tuple(b.shape) for b in problem.blocks}
    got = {k: v.shape for k, v in params.items()}
    if expected != got:
        raise ConfigInvalid(f"checkpoint blocks {got} do not match problem blocks {expected}")
    opt = Optimizer(config.optimizer, config.hyperparams)
    opt.state = state
    return _train(config, problem, params, opt, start, end, output_dir)


def _sweep_cell(args):
    sweep, optimizer, lr, out = args
    config = sweep.cell_config(optimizer, lr, out)
    try:
        s = run(config)
        return optimizer, lr, s.final_loss, "ok", None
    except NonFiniteLoss as exc:
        return optimizer, lr, float("nan"), "divergent", exc.step


def lr_sweep(sweep, output_dir=None):
    """One run per (optimizer, lr); writes ``sweep.csv`` and returns its rows."""
    output_dir = output_dir or sweep.base.get("output_dir", "runs/sweep")
    os.makedirs(output_dir, exist_ok=True)
    cells = [(sweep, opt, lr, os.path.join(output_dir, f"{opt}_lr{lr:g}"))
             for opt in sweep.optimizers for lr in sweep.lr_grid]
    if sweep.workers > 1:
        with ProcessPoolExecutor(sweep.workers) as ex:
            results = list(ex.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = [{"optimizer": o, "lr": lr, "loss": loss, "status": st, "diverged_step": ds}
            for o, lr, loss, st, ds in results]
    with open(os.path.join(output_dir, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["optimizer", "lr", "metric_step", "loss", "status", "diverged_step"])
        for r in rows:
            w.writerow([r["optimizer"], fmt(r["lr"]), sweep.metric_step, fmt(r["loss"]), r["status"],
                        "" if r["diverged_step"] is None else r["diverged_step"]])
    return rows


HIST_BINS = 64


def block_distribution(X, bins=HIST_BINS):
    X = matcore.as_matrix(X)
    sigma = np.linalg.svd(X, compute_uv=False)
    A = np.abs(X)
    top = float(A.max())
    counts, edges = np.histogram(A, bins=bins, range=(0.0, top if top > 0 else 1.0))
    return {"singular_values": sigma, "abs_entries_histogram": (edges, counts)}


def dump_distributions(checkpoint_path, block_names=None, output_dir=None):
    """Singular values and a 64-bin |entry| histogram per checkpointed block."""
    _, params, _ = load_checkpoint(checkpoint_path)
    names = list(params) if not block_names else list(block_names)
    for n in names:
        if n not in params:
            raise UnknownBlock(f"no block {n!r} in checkpoint; have {sorted(params)}")
    output_dir = output_dir or os.path.join(checkpoint_path, "distributions")
    os.makedirs(output_dir, exist_ok=True)
    out = {}
    for n in names:
        dist = block_distribution(params[n])
        out[n] = dist
        with open(os.path.join(output_dir, f"{n}_singular_values.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "sigma"])
            for i, s in enumerate(dist["singular_values"]):
                w.writerow([i, fmt(s)])
        edges, counts = dist["abs_entries_histogram"]
        with open(os.path.join(output_dir, f"{n}_abs_hist.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "left_edge", "right_edge", "count"])
            for i, c in enumerate(counts):
                w.writerow([i, fmt(edges[i]), fmt(edges[i + 1]), int(c)])
    return out


@np.errstate(over="ignore", invalid="ignore")
def train_to_target(problem, optimizer, hp, params, target, max_steps, lr=None):
    """Full-batch constant-lr training until ``loss <= target``; returns ``(steps, loss)``.

    ``params`` is updated in place.
    """
    opt = Optimizer(optimizer, hp)
    lr = hp.lr if lr is None else lr
    for t in range(max_steps):
        loss, grads = problem.loss_and_grad(params)
        if not math.isfinite(loss):
            raise NonFiniteLoss(t, loss)
        if loss <= target:
            return t, loss
        opt.step(params, grads, lr)
    return max_steps, problem.loss(params)


def implicit_bias_study(optimizers=("olion", "muon", "lion"), seeds=(0, 1, 2), lr=3e-3,
                        target_fraction=0.05, max_steps=4000, problem_params=None,
                        hyperparams=None, output_csv=None):
    """Train each optimizer to a matched loss on the tiny MLP and record final norms.

    The matched target is ``target_fraction`` times the loss of the all-zero
    network.  Returns rows of ``{optimizer, seed, block, steps, loss, linf, spectral}``.
    """
    problem = build_problem("mlp", **(problem_params or {}))
    zero = {b.name: np.zeros(b.shape) for b in problem.blocks}
    target = target_fraction * problem.loss(zero)
    rows = []
    for seed in seeds:
        for name in optimizers:
            hp = default_hyperparams(name, lr=lr, **(hyperparams or {}))
            params = problem.init(seed)
            steps, loss = train_to_target(problem, name, hp, params, target, max_steps)
            for block, X in params.items():
                norms = matcore.norm_suite(X)
                rows.append({"optimizer": name, "seed": seed, "block": block, "steps": steps,
                             "loss": loss, "linf": norms["linf"], "spectral": norms["spectral"]})
    if output_csv:
        with open(output_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["optimizer", "seed", "block", "steps", "loss", "linf", "spectral"])
            for r in rows:
                w.writerow([r["optimizer"], r["seed"], r["block"], r["steps"], fmt(r["loss"]),
                            fmt(r["linf"]), fmt(r["spectral"])])
    return rows


def mean_block_norms(rows, optimizer, norm):
    """Per-block mean of ``norm`` over seeds for one optimizer."""
    acc = {}
    for r in rows:
        if r["optimizer"] == optimizer:
            acc.setdefault(r["block"], []).append(r[norm])
    return {b: float(np.mean(v)) for b, v in acc.items()}
