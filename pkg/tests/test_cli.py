import pytest

from felrl.core import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main
from felrl.records import EPISODES_CSV, MANIFEST_FILE, POLICY_FILE

TINY = """\
experiment_id: cli
algorithm: naf2
env:
  name: pendulum
  horizon: 10
seeds: [0]
episodes: 1
verification_episodes: 1
naf:
  hidden_sizes: [8]
  batch_size: 4
  eval_states: 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cli.yaml"
    path.write_text(TINY)
    return path


def test_run_writes_artifacts(tiny_config, tmp_path, capsys):
    assert main(["run", str(tiny_config), "--output", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "cli" / "seed_0" / POLICY_FILE).exists()
    assert "✅" in capsys.readouterr().out


def test_seed_override(tiny_config, tmp_path):
    assert main(["run", str(tiny_config), "--output", str(tmp_path), "--seed", "4", "--seed", "6"]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "cli").glob("seed_*")) == ["seed_4", "seed_6"]


def test_rerun_from_artifact_directory(tiny_config, tmp_path):
    assert main(["run", str(tiny_config), "--output", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(tmp_path / "a" / "cli"), "--output", str(tmp_path / "b")]) == EXIT_OK
    first = (tmp_path / "a" / "cli" / "seed_0" / EPISODES_CSV).read_text()
    assert first == (tmp_path / "b" / "cli" / "seed_0" / EPISODES_CSV).read_text()


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(TINY + "learning_rate: 0.1\n")
    assert main(["run", str(path), "--output", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "❌" in err and "line 13" in err


def test_missing_config_is_a_config_error(tmp_path):
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG


def test_aborted_run_exits_with_failure(tiny_config, tmp_path, capsys):
    code = main(["run", str(tiny_config), "--output", str(tmp_path), "--max-wall-clock", "1e-9"])
    assert code == EXIT_FAILURE
    assert "❌" in capsys.readouterr().err
    assert (tmp_path / "cli" / MANIFEST_FILE).exists()


def test_verify_reports_statistics(tiny_config, tmp_path, capsys):
    main(["run", str(tiny_config), "--output", str(tmp_path)])
    capsys.readouterr()
    policy = tmp_path / "cli" / "seed_0" / POLICY_FILE
    code = main(["verify", str(policy), "--env", "pendulum", "--episodes", "2", "--horizon", "5",
                 "--output", str(tmp_path / "v.csv")])
    assert code == EXIT_OK
    assert "2 episodes" in capsys.readouterr().out
    assert (tmp_path / "v.csv").exists()


def test_verify_rejects_mismatched_policy(tiny_config, tmp_path):
    main(["run", str(tiny_config), "--output", str(tmp_path)])
    policy = tmp_path / "cli" / "seed_0" / POLICY_FILE
    assert main(["verify", str(policy), "--env", "fel-sim", "--episodes", "1"]) == EXIT_FAILURE


def test_verify_missing_policy(tmp_path):
    assert main(["verify", str(tmp_path / "none.npz"), "--episodes", "1"]) == EXIT_FAILURE


def test_aggregate_command(tiny_config, tmp_path):
    main(["run", str(tiny_config), "--output", str(tmp_path), "--seed", "0", "--seed", "1"])
    runs = [str(tmp_path / "cli" / f"seed_{s}" / EPISODES_CSV) for s in (0, 1)]
    assert main(["aggregate", *runs, "--output", str(tmp_path / "summary.csv")]) == EXIT_OK
    assert (tmp_path / "summary.csv").exists()


def test_suite_write(tmp_path, capsys):
    assert main(["suite", "ensemble-size", "--write", str(tmp_path)]) == EXIT_OK
    assert len(list(tmp_path.glob("*.yaml"))) == 3
    assert capsys.readouterr().out.count("✅") == 3


def test_suite_listing(capsys):
    assert main(["suite", "naf-variants"]) == EXIT_OK
    assert "naf-variants-clipping" in capsys.readouterr().out


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["train"])
