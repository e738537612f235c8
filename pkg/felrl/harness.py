# felrl/harness.py
"""
Experiment runner: per-seed training, verification of the final policy,
curve aggregation across seeds and the ablation suites.

Artifact layout of one experiment:

    <root>/<experiment_id>/
        config.yaml, manifest.json
        seed_<n>/episodes.csv | epochs.csv, policy.npz, verification.csv, [FAILED]
"""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import pandas as pd

from . import __version__
from .aedyna import AedynaConfig, epoch_columns, run_aedyna
from .config import EnvConfig, ExperimentConfig, config_from_mapping, dump_config
from .dynamics import NOISY_SIGMA, EnsembleConfig
from .envs import FEL_COLLECT_HORIZON
from .errors import ConfigError, RunFailure, SchemaMismatchError, UnknownSuiteError
from .naf import EPISODE_COLUMNS, NAF_VARIANTS, NafConfig, train_naf
from .policy import Policy
from .records import (
    EPISODES_CSV,
    EPOCHS_CSV,
    FAILED_MARKER,
    MANIFEST_FILE,
    POLICY_FILE,
    VERIFICATION_CSV,
    RunRecord,
    config_hash,
    file_sha256,
    write_csv,
    write_json,
)
from .sac import SacConfig

log = logging.getLogger(__name__)

# Offset between a training seed and the seed of its verification env
VERIFY_SEED_OFFSET = 10_000
PENDULUM_GAMMA = 0.99
# Pendulum rewards reach −16 per step; NAF learns V on a tenth of that
PENDULUM_REWARD_SCALE = 0.1
# FEL suite beam width; the simulator default 0.2 leaves most of the box on a
# reward plateau near −1
FEL_SUITE_BEAM_WIDTH = 1.0


# ─────────────────────────────────────────────────────────────────────────────
# Verification
# ─────────────────────────────────────────────────────────────────────────────
VERIFICATION_COLUMNS = ["episode", "length", "cumulative_reward", "final_reward", "success"]


@dataclass
class VerificationReport:
    """Greedy-policy episodes and their mean ± std aggregates."""
    rows: list[dict[str, Any]] = field(default_factory=list)
    data_points: int | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.asarray([r[name] for r in self.rows], dtype=np.float64)

    def aggregates(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name in ("length", "cumulative_reward", "final_reward"):
            values = self.column(name)
            out[f"{name}_mean"] = float(np.mean(values)) if len(values) else float("nan")
            out[f"{name}_std"] = float(np.std(values)) if len(values) else float("nan")
        out["success_rate"] = float(np.mean(self.column("success"))) if self.rows else float("nan")
        return out

    def summary(self) -> dict[str, Any]:
        return {"episodes": len(self), "data_points": self.data_points, **self.aggregates()}

    def to_csv(self, path: str | PathLike) -> None:
        write_csv(path, VERIFICATION_COLUMNS, self.rows)


def verify(
    policy_path: str | PathLike,
    env_config: EnvConfig,
    n_episodes: int,
    seed: int,
    horizon: int | None = None,
    data_points: int | None = None,
) -> VerificationReport:
    """
    Run the saved policy greedily; no learning happens here.

    :param horizon: Episode cap; the environment horizon when None.
    :param data_points: Training env steps, carried into the report.
    """
    policy = Policy.load(policy_path)
    if horizon is not None:
        env_config = dataclasses.replace(env_config, horizon=horizon)
    env = env_config.build(seed)
    policy.check_spec(env.spec)
    report = VerificationReport(data_points=data_points)
    for episode in range(n_episodes):
        obs = env.reset()
        length, total, reward, success = 0, 0.0, float("nan"), False
        while True:
            res = env.step(policy.act(obs))
            length += 1
            total += res.reward
            reward = res.reward
            obs = res.obs
            if res.done:
                success = res.terminal
                break
        report.rows.append({
            "episode": episode,
            "length": length,
            "cumulative_reward": total,
            "final_reward": reward,
            "success": success,
        })
    agg = report.aggregates()
    log.info("verified %d episodes: length %.2f ± %.2f, success %.0f%%",
             n_episodes, agg["length_mean"], agg["length_std"], 100 * agg["success_rate"])
    return report


# ─────────────────────────────────────────────────────────────────────────────
# Running experiments
# ─────────────────────────────────────────────────────────────────────────────
def _wall_clock_guard(limit: float | None) -> Callable[[], None] | None:
    if limit is None:
        return None
    started = time.monotonic()

    def check() -> None:
        if time.monotonic() - started > limit:
            raise RunFailure(f"wall-clock limit of {limit:g}s exceeded")

    return check


def run_seed(config: ExperimentConfig, seed: int, seed_dir: str | PathLike) -> dict[str, Any]:
    """
    Train, checkpoint and verify one seed inside `seed_dir`.

    On failure the finished rows, a FAILED marker with the traceback and a
    RunFailure are left behind.
    """
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    env = config.env.build(seed)
    stop_check = _wall_clock_guard(config.max_wall_clock)

    if config.algorithm == "naf2":
        record, csv_name = RunRecord("naf2", list(EPISODE_COLUMNS)), EPISODES_CSV
    else:
        record, csv_name = RunRecord("aedyna", epoch_columns(config.ensemble.n_models)), EPOCHS_CSV

    try:
        # 1) train
        if config.algorithm == "naf2":
            _, agent = train_naf(env, config.naf, config.episodes, seed, stop_check, record)
            data_points = env.steps_taken
        else:
            _, agent, ensemble = run_aedyna(
                env, config.aedyna, config.ensemble, config.sac, seed, stop_check, record
            )
            data_points = int(record.summary.get("data_points", 0))
            ensemble.save(seed_dir / "ensemble.npz")
        record.to_csv(seed_dir / csv_name)

        # 2) checkpoint
        policy_path = seed_dir / POLICY_FILE
        agent.policy().save(policy_path)

        # 3) verify
        report = verify(
            policy_path, config.env, config.verification_episodes, seed + VERIFY_SEED_OFFSET,
            config.resolved_verification_horizon(env), data_points,
        )
        report.to_csv(seed_dir / VERIFICATION_CSV)
    except Exception as exc:
        record.to_csv(seed_dir / csv_name)
        (seed_dir / FAILED_MARKER).write_text(traceback.format_exc())
        log.error("seed %d failed: %s", seed, exc)
        raise RunFailure(f"seed {seed} failed: {exc}") from exc

    summary = {
        "seed": seed,
        "real_steps": env.steps_taken,
        "data_points": data_points,
        "wall_clock_s": round(time.monotonic() - started, 3),
        "policy_sha256": file_sha256(policy_path),
        "training": {k: v for k, v in record.summary.items() if not isinstance(v, dict)},
        "verification": report.summary(),
    }
    log.info("seed %d done: %d real steps, verification success %.0f%%",
             seed, env.steps_taken, 100 * report.aggregates()["success_rate"])
    return summary


def _manifest(config: ExperimentConfig, seeds: dict[int, Any], wall_clock: float) -> dict[str, Any]:
    cfg = config.to_dict()
    return {
        "experiment_id": config.experiment_id,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seeds": list(config.seeds),
        "runs": {str(s): seeds[s] for s in config.seeds},
        "versions": {
            "felrl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
        "wall_clock_s": round(wall_clock, 3),
    }


def run_experiment(config: ExperimentConfig, output_root: str | PathLike, workers: int = 1) -> Path:
    """
    Run every seed of `config` and write the artifact directory.

    Seeds fan out to a process pool when `workers` > 1; results are merged
    in seed order.

    :return: The experiment's artifact directory.
    :raises RunFailure: When any seed failed (its partial artifacts stay on disk).
    """
    root = Path(output_root) / config.experiment_id
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.yaml").write_text(dump_config(config))
    started = time.monotonic()
    seed_dirs = {seed: root / f"seed_{seed}" for seed in config.seeds}

    results: dict[int, Any] = {}
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(config.seeds))) as pool:
            futures = {seed: pool.submit(run_seed, config, seed, seed_dirs[seed]) for seed in config.seeds}
            for seed, future in futures.items():
                try:
                    results[seed] = future.result()
                except RunFailure as exc:
                    results[seed] = {"seed": seed, "failed": str(exc)}
    else:
        for seed in config.seeds:
            try:
                results[seed] = run_seed(config, seed, seed_dirs[seed])
            except RunFailure as exc:
                results[seed] = {"seed": seed, "failed": str(exc)}

    write_json(root / MANIFEST_FILE, _manifest(config, results, time.monotonic() - started))
    failed = [s for s, r in results.items() if "failed" in r]
    if failed:
        raise RunFailure(f"{config.experiment_id}: seeds {failed} failed, see {root}")
    log.info("experiment %s finished in %s", config.experiment_id, root)
    return root


def config_from_manifest(path: str | PathLike) -> ExperimentConfig:
    """The exact config an artifact directory was produced with."""
    try:
        manifest = json.loads(Path(path).read_text())
        return config_from_mapping(manifest["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


# ─────────────────────────────────────────────────────────────────────────────
# Aggregation across seeds
# ─────────────────────────────────────────────────────────────────────────────
INDEX_COLUMNS = ("episode", "epoch")


def aggregate_curves(paths: Iterable[str | PathLike], output: str | PathLike | None = None) -> pd.DataFrame:
    """
    Mean and population std per episode/epoch index across runs.

    Shorter runs are padded with their last row; `padded` counts the runs
    padded at that index.
    """
    paths = list(paths)
    if not paths:
        raise SchemaMismatchError("no run files given")
    frames = [pd.read_csv(p) for p in paths]
    columns = list(frames[0].columns)
    for p, frame in zip(paths[1:], frames[1:]):
        if list(frame.columns) != columns:
            raise SchemaMismatchError(f"{p} does not share the columns of {paths[0]}")
    index = next((c for c in INDEX_COLUMNS if c in columns), None)
    if index is None:
        raise SchemaMismatchError(f"run files carry none of the index columns {INDEX_COLUMNS}")
    metrics = [c for c in columns if c != index]

    non_empty = [f for f in frames if len(f)]
    length = max((len(f) for f in non_empty), default=0)
    out_cols = [index] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")] + ["n_runs", "padded"]
    if length == 0:
        summary = pd.DataFrame(columns=out_cols)
    else:
        stacked, padded = [], np.zeros(length, dtype=int)
        for frame in non_empty:
            values = frame[metrics].astype(float).to_numpy()
            padded[len(values):] += 1
            tail = np.repeat(values[-1:], length - len(values), axis=0)
            stacked.append(np.vstack([values, tail]))
        cube = np.stack(stacked)
        summary = pd.DataFrame({index: np.arange(length)})
        # untested epochs hold NaN; all-NaN slices stay NaN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for j, m in enumerate(metrics):
                summary[f"{m}_mean"] = np.nanmean(cube[:, :, j], axis=0)
                summary[f"{m}_std"] = np.nanstd(cube[:, :, j], axis=0)
        summary["n_runs"] = len(non_empty)
        summary["padded"] = padded
    if output is not None:
        summary.to_csv(output, index=False, float_format="%.12g")
    return summary


# ─────────────────────────────────────────────────────────────────────────────
# Ablation suites
# ─────────────────────────────────────────────────────────────────────────────
def pendulum_naf(variant: str = "clipping", **overrides) -> NafConfig:
    return NafConfig.variant(variant, gamma=PENDULUM_GAMMA, reward_scale=PENDULUM_REWARD_SCALE, **overrides)


def _naf_variants(noise: float) -> list[ExperimentConfig]:
    suffix = "-noise" if noise else ""
    return [
        ExperimentConfig(
            experiment_id=f"naf-variants{suffix}-{name}",
            algorithm="naf2",
            env=EnvConfig("pendulum", obs_noise=noise),
            episodes=100,
            verification_episodes=10,
            naf=pendulum_naf(name),
        )
        for name in NAF_VARIANTS
    ]


def _pendulum_aedyna(experiment_id: str, noise: float, max_real_steps: int,
                     **ensemble_fields) -> ExperimentConfig:
    noise_sigma = NOISY_SIGMA if noise else EnsembleConfig().noise_sigma
    return ExperimentConfig(
        experiment_id=experiment_id,
        algorithm="aedyna-sac",
        env=EnvConfig("pendulum", obs_noise=noise),
        verification_episodes=10,
        ensemble=EnsembleConfig(noise_sigma=noise_sigma, **ensemble_fields),
        aedyna=AedynaConfig(controller_steps=3000, max_real_steps=max_real_steps),
    )


def _ensemble_size() -> list[ExperimentConfig]:
    return [_pendulum_aedyna(f"ensemble-size-{m}", 0.0, 2000, n_models=m) for m in (1, 3, 10)]


def _naf_vs_aedyna() -> list[ExperimentConfig]:
    naf = ExperimentConfig(
        experiment_id="naf-vs-aedyna-naf2",
        algorithm="naf2",
        env=EnvConfig("pendulum", obs_noise=NOISY_SIGMA),
        episodes=100,
        verification_episodes=10,
        naf=pendulum_naf(),
    )
    return [naf, _pendulum_aedyna("naf-vs-aedyna-aedyna-sac", NOISY_SIGMA, 4000)]


def _anchoring() -> list[ExperimentConfig]:
    return [
        _pendulum_aedyna(f"anchoring-{'anchored' if flag else 'plain'}", NOISY_SIGMA, 4000, anchored=flag)
        for flag in (True, False)
    ]


def fel_suite_env(horizon: int | None = None) -> EnvConfig:
    return EnvConfig("fel-sim", horizon=horizon, fel={"beam_width": FEL_SUITE_BEAM_WIDTH})


def _fel_verification() -> list[ExperimentConfig]:
    # 50 episodes of at most 20 steps keep NAF2 within 1000 training steps
    naf = ExperimentConfig(
        experiment_id="fel-verification-naf2",
        algorithm="naf2",
        env=fel_suite_env(horizon=20),
        episodes=50,
        verification_episodes=100,
        naf=NafConfig.variant("clipping", updates_per_step=5),
    )
    aedyna = ExperimentConfig(
        experiment_id="fel-verification-aedyna-sac",
        algorithm="aedyna-sac",
        env=fel_suite_env(),
        verification_episodes=50,
        sac=SacConfig(auto_alpha=True),
        aedyna=AedynaConfig(max_real_steps=500, test_horizon=FEL_COLLECT_HORIZON),
    )
    return [naf, aedyna]


SUITES: dict[str, Callable[[], list[ExperimentConfig]]] = {
    "naf-variants": lambda: _naf_variants(0.0),
    "naf-variants-noise": lambda: _naf_variants(NOISY_SIGMA),
    "ensemble-size": _ensemble_size,
    "naf-vs-aedyna": _naf_vs_aedyna,
    "anchoring": _anchoring,
    "fel-verification": _fel_verification,
}


def ablation_suite(name: str) -> list[ExperimentConfig]:
    try:
        builder = SUITES[name]
    except KeyError:
        raise UnknownSuiteError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}") from None
    return builder()


def write_suite(name: str, directory: str | PathLike) -> list[Path]:
    """Write one YAML config per suite member; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for config in ablation_suite(name):
        path = directory / f"{config.experiment_id}.yaml"
        path.write_text(dump_config(config))
        paths.append(path)
    return paths
