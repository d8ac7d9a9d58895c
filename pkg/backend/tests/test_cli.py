import json

import pytest

from levelloop import cli
from levelloop.services import experiments
from levelloop.services.experiments import REGISTRY, Experiment
from levelloop.services.statistics import ReportBuilder


def _passing(ctx):
    report = ReportBuilder("loop_laws.passing", "always passes")
    report.gate("ok", 0.0, True)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.setattr("levelloop.config.LEVELLOOP_SEED", None)


def test_list_prints_the_registry(capsys):
    assert cli.main(["--list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(REGISTRY)


def test_command_is_required():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["sequence"])


def test_invalid_replicas_exit_code(tmp_path):
    assert cli.main(["loop_laws", "--replicas", "0", "--no-db", "--out", str(tmp_path)]) == cli.CONFIG_ERROR_EXIT


def test_invalid_height_difference_exit_code(tmp_path):
    assert cli.main(["sequence_laws", "--r", "1", "--no-db", "--out", str(tmp_path)]) == cli.CONFIG_ERROR_EXIT


def test_missing_config_exit_code(tmp_path):
    code = cli.main(["loop_laws", "--config", str(tmp_path / "absent.cfg"), "--no-db", "--out", str(tmp_path)])
    assert code == cli.CONFIG_ERROR_EXIT


def test_suite_run(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(
        experiments, "REGISTRY", (Experiment("loop_laws.passing", "loop_laws", "always passes", experiments.EXACT, _passing),)
    )
    code = cli.main(["loop_laws", "--seed", "3", "--replicas", "4", "--workers", "1", "--no-db", "--no-artifacts", "--out", str(tmp_path)])
    assert code == 0
    (line,) = (tmp_path / "reports.jsonl").read_text().splitlines()
    report = json.loads(line)
    assert report["seeds"] == {"seed": 3, "first_replica": 0, "count": 4}
    assert "PASS" in capsys.readouterr().out
