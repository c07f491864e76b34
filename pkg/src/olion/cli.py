"""Command-line entry point: ``olion run|resume|sweep|dump-dist|theory-lab|verify``."""

import argparse
import json
import logging
import os
import sys

from . import harness, theory_lab
from .config import RunConfig, SweepConfig, apply_overrides, load_document
from .errors import ConfigInvalid, OlionError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parse_overrides(extra):
    """Turn ``--a.b value`` pairs into a dict."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigInvalid(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigInvalid(f"missing value for --{key}") from None
        out[key] = value
    return out


def _cmd_run(args, overrides):
    doc = apply_overrides(load_document(args.config), overrides)
    summary = harness.run(RunConfig.from_dict(doc))
    print(json.dumps(summary.to_json_dict(), indent=2, sort_keys=True, default=str))


def _cmd_resume(args, overrides):
    summary = harness.resume(args.checkpoint, args.steps, args.output_dir, overrides or None)
    print(json.dumps(summary.to_json_dict(), indent=2, sort_keys=True, default=str))


def _cmd_sweep(args, overrides):
    doc = apply_overrides(load_document(args.config), overrides)
    sweep = SweepConfig.from_dict(doc)
    rows = harness.lr_sweep(sweep, args.output_dir)
    for r in rows:
        print(f"{r['optimizer']},{r['lr']:g},{r['loss']:.17g},{r['status']}")


def _cmd_dump(args, overrides):
    blocks = [b for b in (args.blocks or "").split(",") if b]
    out = harness.dump_distributions(args.checkpoint, blocks, args.output_dir)
    for name, dist in out.items():
        s = dist["singular_values"]
        print(f"{name}: sigma_max={s[0]:.6g} n_sigma={len(s)}")


def _cmd_theory_lab(args, overrides):
    doc = apply_overrides(load_document(args.config), overrides)
    try:
        if "grid" in doc:
            grid = [tuple(c) for c in doc["grid"]]
        else:
            r = int(doc.get("r", 8))
            grid = [(int(d), int(d), r) for d in doc["sizes"]]
        trials = int(doc.get("trials", 50))
        seed = int(doc.get("seed", 0))
        workers = int(doc.get("workers", 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad theory-lab config: {exc}") from exc
    out = args.output_dir or doc.get("output_dir", "runs/theory_lab")
    os.makedirs(out, exist_ok=True)
    study = theory_lab.run_study(grid, trials, seed, workers)
    if len(grid) >= 4:
        theory_lab.fit_scaling_law(study)
    summary = theory_lab.write_study(study, os.path.join(out, "study.csv"), os.path.join(out, "fit.json"))
    print(json.dumps(summary, indent=2, sort_keys=True))


def _cmd_verify(args, overrides):
    from .verify import run_checks
    results = run_checks(args.seed)
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if not all(ok for _, ok in results):
        raise RuntimeError("invariant check failed")


def build_parser():
    p = argparse.ArgumentParser(prog="olion", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train from a config file")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)

    r = sub.add_parser("resume", help="continue from a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=_cmd_resume)

    r = sub.add_parser("sweep", help="learning-rate grid sweep")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=_cmd_sweep)

    r = sub.add_parser("dump-dist", help="singular values and |entry| histograms")
    r.add_argument("checkpoint")
    r.add_argument("--blocks", default="")
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=_cmd_dump)

    r = sub.add_parser("theory-lab", help="Monte-Carlo isotropy scaling study")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=_cmd_theory_lab)

    r = sub.add_parser("verify", help="run the invariant checks")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=_cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_overrides(extra)
        args.func(args, overrides)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OlionError, OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
