"""Run and sweep configuration: YAML/JSON in, canonical JSON echo out."""

import copy
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigInvalid
from .optimizers import OPTIMIZERS, HyperParams, LrSchedule, default_hyperparams


@dataclass
class RunConfig:
    problem: dict
    optimizer: str
    hyperparams: HyperParams
    schedule: LrSchedule
    steps: int
    batch: object = "full"
    seed: int = 0
    diag_interval: int = 10
    output_dir: str = "runs/run"
    checkpoint_interval: int = None
    polar_mode: str = "newton_schulz"
    grad_clip: float = None
    audit: str = "auto"
    track_blocks: list = None

    @property
    def problem_name(self):
        return self.problem["name"]

    @property
    def problem_params(self):
        return {k: v for k, v in self.problem.items() if k != "name"}

    def to_dict(self):
        return {
            "problem": copy.deepcopy(self.problem),
            "optimizer": self.optimizer,
            "hyperparams": self.hyperparams.to_dict(),
            "schedule": {k: v for k, v in self.schedule.to_dict().items() if k != "lr_max"},
            "steps": self.steps,
            "batch": self.batch,
            "seed": self.seed,
            "diag_interval": self.diag_interval,
            "output_dir": self.output_dir,
            "checkpoint_interval": self.checkpoint_interval,
            "polar_mode": self.polar_mode,
            "grad_clip": self.grad_clip,
            "audit": self.audit,
            "track_blocks": self.track_blocks,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw):
        raw = copy.deepcopy(raw)
        try:
            return _build_run_config(raw)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigInvalid(str(exc)) from exc


def _as_int(raw, key, minimum, default=None):
    val = raw.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or int(val) != val:
        raise ConfigInvalid(f"{key} must be an integer, got {val!r}")
    val = int(val)
    if val < minimum:
        raise ConfigInvalid(f"{key} must be >= {minimum}, got {val}")
    return val


_KNOWN_KEYS = {
    "problem", "optimizer", "hyperparams", "schedule", "steps", "batch", "seed",
    "diag_interval", "output_dir", "checkpoint_interval", "polar_mode", "grad_clip",
    "audit", "track_blocks",
}


def _build_run_config(raw):
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    problem = raw.get("problem")
    if isinstance(problem, str):
        problem = {"name": problem}
    if not isinstance(problem, dict) or "name" not in problem:
        raise ConfigInvalid("problem must be a mapping with a 'name'")
    optimizer = raw.get("optimizer", "olion")
    if optimizer not in OPTIMIZERS:
        raise ConfigInvalid(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
    steps = _as_int(raw, "steps", 1)
    if steps is None:
        raise ConfigInvalid("steps is required")
    polar_mode = raw.get("polar_mode", "newton_schulz")
    if polar_mode not in ("exact", "newton_schulz"):
        raise ConfigInvalid(f"polar_mode must be 'exact' or 'newton_schulz', got {polar_mode!r}")
    hp_raw = dict(raw.get("hyperparams") or {})
    hp_raw["polar_mode"] = polar_mode
    hp = default_hyperparams(optimizer, **hp_raw)

    sched_raw = dict(raw.get("schedule") or {"kind": "constant"})
    sched_raw.pop("lr_max", None)
    sched_raw.setdefault("total_steps", steps)
    if sched_raw.get("total_steps") is None:
        sched_raw["total_steps"] = steps
    schedule = LrSchedule(lr_max=hp.lr, **sched_raw)
    if schedule.kind != "constant" and schedule.total_steps < steps:
        raise ConfigInvalid("schedule.total_steps is shorter than steps")

    batch = raw.get("batch", "full")
    if isinstance(batch, dict):
        batch = batch.get("minibatch")
    if batch != "full":
        if isinstance(batch, bool) or not isinstance(batch, int) or batch < 1:
            raise ConfigInvalid(f"batch must be 'full' or a positive batch size, got {batch!r}")

    audit = raw.get("audit", "auto")
    if audit not in ("auto", "on", "off"):
        raise ConfigInvalid("audit must be auto, on or off")
    grad_clip = raw.get("grad_clip")
    if grad_clip is not None and not float(grad_clip) > 0:
        raise ConfigInvalid("grad_clip must be positive")
    track = raw.get("track_blocks")
    return RunConfig(
        problem=problem,
        optimizer=optimizer,
        hyperparams=hp,
        schedule=schedule,
        steps=steps,
        batch=batch,
        seed=_as_int(raw, "seed", 0, 0),
        diag_interval=_as_int(raw, "diag_interval", 1, 10),
        output_dir=str(raw.get("output_dir", "runs/run")),
        checkpoint_interval=_as_int(raw, "checkpoint_interval", 1),
        polar_mode=polar_mode,
        grad_clip=None if grad_clip is None else float(grad_clip),
        audit=audit,
        track_blocks=None if track is None else list(track),
    )


@dataclass
class SweepConfig:
    base: dict
    lr_grid: list
    metric_step: int
    optimizers: list = field(default_factory=list)
    per_optimizer: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if not self.lr_grid:
            raise ConfigInvalid("lr_grid must be non-empty")
        if any(not float(lr) > 0 for lr in self.lr_grid):
            raise ConfigInvalid("learning rates must be positive")
        if int(self.metric_step) < 1:
            raise ConfigInvalid("metric_step must be >= 1")
        if not self.optimizers:
            self.optimizers = [self.base.get("optimizer", "olion")]
        bad = [o for o in self.optimizers if o not in OPTIMIZERS]
        if bad:
            raise ConfigInvalid(f"unknown optimizers {bad}")

    def cell_config(self, optimizer, lr, output_dir):
        raw = copy.deepcopy(self.base)
        raw["optimizer"] = optimizer
        hp = dict(raw.get("hyperparams") or {})
        hp.update(self.per_optimizer.get(optimizer, {}))
        hp["lr"] = float(lr)
        raw["hyperparams"] = hp
        raw["steps"] = int(self.metric_step)
        sched = dict(raw.get("schedule") or {"kind": "constant"})
        sched["total_steps"] = int(self.metric_step)
        raw["schedule"] = sched
        raw["output_dir"] = output_dir
        return RunConfig.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        raw = copy.deepcopy(raw)
        try:
            sweep = raw.pop("sweep")
        except KeyError as exc:
            raise ConfigInvalid("sweep config needs a 'sweep' section") from exc
        try:
            return cls(
                base=raw,
                lr_grid=[float(x) for x in sweep["lr_grid"]],
                metric_step=int(sweep["metric_step"]),
                optimizers=list(sweep.get("optimizers") or []),
                per_optimizer=dict(sweep.get("per_optimizer") or {}),
                workers=int(sweep.get("workers", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad sweep section: {exc}") from exc


def load_document(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a key-value document")
    return doc


def apply_overrides(doc, overrides):
    """Set dotted keys, e.g. ``{"hyperparams.lr": "0.01"}``; values are YAML-parsed."""
    doc = copy.deepcopy(doc)
    for key, value in overrides.items():
        if isinstance(value, str):
            value = yaml.safe_load(value)
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            if isinstance(node.get(p), str) and p == "problem":
                node[p] = {"name": node[p]}
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"cannot override {key}: {p} is not a mapping")
        node[parts[-1]] = value
    return doc
