"""Suite runner: configuration resolution, experiment execution and report output."""

import json
import logging
from pathlib import Path
from typing import Optional

from sqlalchemy.orm import Session

from levelloop import crud
from levelloop.config import env_seed
from levelloop.errors import ConfigError, LevelLoopError
from levelloop.schemas import ExperimentConfig, McReport, RunCreate
from levelloop.services import export
from levelloop.services.experiments import (
    Experiment,
    RunContext,
    experiments_for,
    params_from_config,
    replica_count,
)
from levelloop.services.rng import StreamId
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import ReplicaOutcome

logger = logging.getLogger(__name__)

REPORTS_FILE = "reports.jsonl"
ARTIFACT_STREAM = 1_000_000
REPLICA_PREFIX = "replicas."


def load_config_file(path: Path) -> dict:
    """Flat key=value text; `#` starts a comment and `replicas.<experiment_id>` sets an override."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    values: dict = {}
    overrides: dict[str, str] = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith(REPLICA_PREFIX):
            overrides[key[len(REPLICA_PREFIX) :]] = value
        elif key in ExperimentConfig.model_fields and key != "replica_overrides":
            values[key] = value
        else:
            raise ConfigError(f"{path}:{number}: unknown key {key!r}")
    if overrides:
        values["replica_overrides"] = overrides
    return values


def resolve_config(config_file: Optional[Path] = None, **overrides) -> ExperimentConfig:
    """Defaults, then the config file, then explicit overrides, then LEVELLOOP_SEED."""
    values = load_config_file(config_file) if config_file else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        seed = env_seed()
    except ValueError as e:
        raise ConfigError(f"LEVELLOOP_SEED is not an integer: {e}") from e
    if seed is not None:
        values["seed"] = seed
    return ExperimentConfig.build(**values)


def _error_report(experiment: Experiment, ctx: RunContext, error: LevelLoopError) -> McReport:
    report = ReportBuilder(experiment.experiment_id, experiment.anchor)
    report.note(f"{type(error).__name__}: {error}")
    report.gate("experiment_completed", float("nan"), False)
    report.failures([ReplicaOutcome(0, error=type(error).__name__, message=str(error))])
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def run_experiment(experiment: Experiment, ctx: RunContext) -> McReport:
    logger.info(f"{experiment.experiment_id}: {ctx.replicas} replicas on {ctx.workers} workers")
    try:
        report = experiment.run(ctx)
    except LevelLoopError as e:
        logger.warning(f"{experiment.experiment_id} aborted: {type(e).__name__}: {e}")
        report = _error_report(experiment, ctx, e)
    return report.model_copy(update={"experiment_id": experiment.experiment_id, "suite": experiment.suite, "anchor": experiment.anchor})


def write_reports(reports: list[McReport], path: Path, include_runtime: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(report.to_json_line(include_runtime) + "\n" for report in reports))
    return path


def run_suite(
    config: ExperimentConfig,
    suite: str,
    *,
    db: Optional[Session] = None,
    write: bool = True,
    artifacts: bool = True,
) -> list[McReport]:
    try:
        selected = experiments_for(suite)
        params = params_from_config(config)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    root = StreamId(config.seed)
    run = None
    if db is not None:
        run = crud.create_run(db, RunCreate(suite=suite, seed=config.seed, config=json.loads(config.model_dump_json())))

    logger.info(f"suite {suite}: {len(selected)} experiments, seed {config.seed}")
    reports = []
    for index, experiment in selected:
        ctx = RunContext(config, params, root.child(index), replica_count(config, experiment))
        report = run_experiment(experiment, ctx)
        reports.append(report)
        if db is not None:
            crud.add_report(db, report, run.id)

    if write:
        out = Path(config.output_dir)
        write_reports(reports, out / REPORTS_FILE)
        if artifacts:
            try:
                export.write_suite_artifacts(suite, out / "artifacts", root.child(ARTIFACT_STREAM), params, config.r)
            except LevelLoopError as e:
                logger.warning(f"artifacts for {suite} skipped: {type(e).__name__}: {e}")

    exit_code = suite_exit_code(reports)
    if db is not None:
        crud.finish_run(db, run.id, exit_code)
    failed = [r.experiment_id for r in reports if not r.passed]
    logger.info(f"suite {suite} finished: {len(reports) - len(failed)}/{len(reports)} passed")
    return reports


def suite_exit_code(reports: list[McReport]) -> int:
    return 0 if all(report.passed for report in reports) else 1
