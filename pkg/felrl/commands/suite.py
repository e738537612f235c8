# felrl/commands/suite.py

from ..harness import SUITES, ablation_suite, run_experiment, write_suite


def setup(app, subparsers):
    cmd = subparsers.add_parser("suite", help="List, write or run the configs of an ablation suite")
    cmd.add_argument("name", choices=sorted(SUITES))
    cmd.add_argument("--write", metavar="DIR", help="Write one YAML config per experiment into DIR")
    cmd.add_argument("--run", action="store_true", help="Run every experiment of the suite")
    cmd.add_argument("--output", help="Artifact root for --run (default: FELRL_OUTPUT_DIR)")
    cmd.add_argument("--workers", type=int, default=app.workers)

    def handler(args):
        configs = ablation_suite(args.name)
        if args.write:
            for path in write_suite(args.name, args.write):
                print(f"✅ wrote {path}")
        if args.run:
            for config in configs:
                out = run_experiment(config, args.output or app.output_dir, workers=args.workers)
                print(f"✅ {config.experiment_id} → {out}")
        if not (args.write or args.run):
            for config in configs:
                print(f"{config.experiment_id}: {config.algorithm} on {config.env.name}, "
                      f"{len(config.seeds)} seeds")

    cmd.set_defaults(handler=handler)
