# felrl/commands/run.py

import dataclasses
from pathlib import Path

from ..config import load_config
from ..harness import config_from_manifest, run_experiment
from ..records import MANIFEST_FILE


def load_experiment(path: str):
    """A YAML config, or the manifest.json of an earlier run (exact rerun)."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_FILE
    if p.suffix == ".json":
        return config_from_manifest(p)
    return load_config(p)


def setup(app, subparsers):
    cmd = subparsers.add_parser("run", help="Train and verify every seed of an experiment")
    cmd.add_argument("config", help="YAML config, or a manifest.json / artifact directory to rerun")
    cmd.add_argument("--output", help="Artifact root (default: config output_dir, then FELRL_OUTPUT_DIR)")
    cmd.add_argument("--seed", type=int, action="append", dest="seeds",
                     help="Seed override; repeat for several seeds")
    cmd.add_argument("--max-wall-clock", type=float, help="Seconds per seed before aborting")
    cmd.add_argument("--workers", type=int, default=app.workers, help="Worker processes for seeds")

    def handler(args):
        config = load_experiment(args.config)
        overrides = {}
        if args.seeds:
            overrides["seeds"] = tuple(args.seeds)
        if args.max_wall_clock is not None:
            overrides["max_wall_clock"] = args.max_wall_clock
        if overrides:
            config = dataclasses.replace(config, **overrides)
        root = args.output or config.output_dir or app.output_dir
        out = run_experiment(config, root, workers=args.workers)
        print(f"✅ {config.experiment_id}: {len(config.seeds)} seed(s) written to {out}")

    cmd.set_defaults(handler=handler)
