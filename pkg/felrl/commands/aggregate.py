# felrl/commands/aggregate.py

from ..harness import aggregate_curves


def setup(app, subparsers):
    cmd = subparsers.add_parser("aggregate", help="Mean/std curve across seed runs")
    cmd.add_argument("runs", nargs="+", help="episodes.csv or epochs.csv files, one per seed")
    cmd.add_argument("--output", required=True, help="Summary CSV to write")

    def handler(args):
        summary = aggregate_curves(args.runs, args.output)
        print(f"✅ {len(args.runs)} run(s) aggregated into {len(summary)} rows: {args.output}")

    cmd.set_defaults(handler=handler)
