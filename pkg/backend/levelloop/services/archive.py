import logging
import os
from pathlib import Path

import pandas as pd
from pydantic import ValidationError
from sqlalchemy.orm import Session

from levelloop import crud, models
from levelloop.database import SessionLocal
from levelloop.errors import HarnessError
from levelloop.schemas import McReport

logger = logging.getLogger(__name__)

ARCHIVE_COLUMNS = [
    "report_id",
    "run_id",
    "experiment_id",
    "suite",
    "anchor",
    "seed",
    "replica_count",
    "approximate",
    "report_passed",
    "test",
    "statistic",
    "p_value",
    "passed",
    "hard",
]


def check_and_import_reports():
    """
    Loads LEVELLOOP_IMPORT_JSONL into the report store when the store is empty.
    """
    jsonl_path = os.getenv("LEVELLOOP_IMPORT_JSONL")
    if not jsonl_path:
        return

    jsonl_file = Path(jsonl_path)
    if not jsonl_file.exists():
        logger.warning(f"Report file not found at {jsonl_path}, skipping import.")
        return

    db = SessionLocal()
    try:
        if crud.count_reports(db) > 0:
            logger.info("Report store is not empty, skipping import.")
            return
        import_reports_jsonl(jsonl_file, db)
    finally:
        db.close()


def import_reports_jsonl(path: Path, db: Session) -> int:
    """Load one McReport per line into an empty store; returns the number stored."""
    if crud.count_reports(db) > 0:
        raise HarnessError("the report store already holds reports")
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    logger.info(f"Importing {len(lines)} reports from {path}")
    stored = 0
    for number, line in enumerate(lines, start=1):
        try:
            report = McReport.model_validate_json(line)
        except ValidationError as e:
            logger.warning(f"{path}:{number}: not a report ({e.error_count()} errors), skipped")
            continue
        crud.add_report(db, report)
        stored += 1
    logger.info(f"Imported {stored} reports")
    return stored


def reports_frame(db: Session) -> pd.DataFrame:
    """One row per (report, test)."""
    rows = []
    for record in db.query(models.ReportRecord).order_by(models.ReportRecord.id.asc()).all():
        report = crud.stored_report(record)
        base = {
            "report_id": record.id,
            "run_id": record.run_id,
            "experiment_id": record.experiment_id,
            "suite": record.suite,
            "anchor": record.anchor,
            "seed": record.seed,
            "replica_count": record.replica_count,
            "approximate": record.approximate,
            "report_passed": record.passed,
        }
        if not report.tests:
            rows.append({**base, "test": None, "statistic": None, "p_value": None, "passed": None, "hard": None})
        for name, test in report.tests.items():
            rows.append(
                {**base, "test": name, "statistic": test.statistic, "p_value": test.p_value, "passed": test.passed, "hard": test.hard}
            )
    return pd.DataFrame(rows, columns=ARCHIVE_COLUMNS)


def export_reports_parquet(db: Session, path: Path) -> int:
    df = reports_frame(db)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_parquet(path, engine="pyarrow", index=False)
    logger.info(f"Exported {len(df)} test rows to {path}")
    return len(df)
