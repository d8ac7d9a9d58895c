import json
from datetime import datetime
from typing import Optional

from sqlalchemy.orm import Session

from levelloop import models, schemas


def create_run(db: Session, run: schemas.RunCreate) -> models.RunRecord:
    db_run = models.RunRecord(suite=run.suite, seed=str(run.seed), config=run.config)
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run


def finish_run(db: Session, run_id: int, exit_code: int) -> Optional[models.RunRecord]:
    run = get_run(db, run_id)
    if run:
        run.finished_at = datetime.now()
        run.exit_code = exit_code
        db.commit()
        db.refresh(run)
    return run


def get_run(db: Session, run_id: int) -> Optional[models.RunRecord]:
    return db.query(models.RunRecord).filter(models.RunRecord.id == run_id).first()


def get_runs(db: Session) -> list[models.RunRecord]:
    return db.query(models.RunRecord).order_by(models.RunRecord.id.desc()).all()


def add_report(db: Session, report: schemas.McReport, run_id: Optional[int] = None) -> models.ReportRecord:
    db_report = models.ReportRecord(
        run_id=run_id,
        experiment_id=report.experiment_id,
        suite=report.suite,
        anchor=report.anchor,
        passed=report.passed,
        approximate=report.approximate,
        seed=str(report.seeds.seed),
        first_replica=report.seeds.first_replica,
        replica_count=report.seeds.count,
        runtime_s=report.runtime_s,
        payload=json.loads(report.to_json_line(include_runtime=True)),
    )
    db.add(db_report)
    db.commit()
    db.refresh(db_report)
    return db_report


def get_report(db: Session, report_id: int) -> Optional[models.ReportRecord]:
    return db.query(models.ReportRecord).filter(models.ReportRecord.id == report_id).first()


def get_reports(
    db: Session, experiment_id: Optional[str] = None, suite: Optional[str] = None, run_id: Optional[int] = None
) -> list[models.ReportRecord]:
    query = db.query(models.ReportRecord)
    if experiment_id:
        query = query.filter(models.ReportRecord.experiment_id == experiment_id)
    if suite:
        query = query.filter(models.ReportRecord.suite == suite)
    if run_id is not None:
        query = query.filter(models.ReportRecord.run_id == run_id)
    return query.order_by(models.ReportRecord.id.asc()).all()


def count_reports(db: Session) -> int:
    return db.query(models.ReportRecord).count()


def stored_report(record: models.ReportRecord) -> schemas.McReport:
    return schemas.McReport.model_validate(record.payload)
