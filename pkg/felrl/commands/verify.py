# felrl/commands/verify.py

from ..config import FEL_VERIFICATION_HORIZON, EnvConfig
from ..envs import ENV_NAMES
from ..harness import verify


def setup(app, subparsers):
    cmd = subparsers.add_parser("verify", help="Run a saved policy greedily and report episode statistics")
    cmd.add_argument("policy", help="policy.npz checkpoint")
    cmd.add_argument("--env", choices=ENV_NAMES, default="fel-sim")
    cmd.add_argument("--obs-noise", type=float, default=0.0)
    cmd.add_argument("--episodes", type=int, default=50)
    cmd.add_argument("--seed", type=int, default=0)
    cmd.add_argument("--horizon", type=int, help="Episode cap (default: 200 on fel-sim, env horizon otherwise)")
    cmd.add_argument("--output", help="Write the per-episode rows to this CSV")

    def handler(args):
        horizon = args.horizon
        if horizon is None and args.env == "fel-sim":
            horizon = FEL_VERIFICATION_HORIZON
        report = verify(args.policy, EnvConfig(args.env, obs_noise=args.obs_noise),
                        args.episodes, args.seed, horizon)
        if args.output:
            report.to_csv(args.output)
        agg = report.aggregates()
        print(
            f"✅ {len(report)} episodes: "
            f"length {agg['length_mean']:.2f} ± {agg['length_std']:.2f}, "
            f"cumulative reward {agg['cumulative_reward_mean']:.3f} ± {agg['cumulative_reward_std']:.3f}, "
            f"final reward {agg['final_reward_mean']:.3f} ± {agg['final_reward_std']:.3f}, "
            f"success {100 * agg['success_rate']:.0f}%"
        )

    cmd.set_defaults(handler=handler)
