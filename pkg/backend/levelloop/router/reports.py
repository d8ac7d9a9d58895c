from typing import Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from levelloop import crud, schemas
from levelloop.database import get_db

router = APIRouter(prefix="/api", tags=["reports"])


@router.get("/reports", response_model=list[schemas.ReportRead])
def list_reports(
    experiment_id: Optional[str] = Query(None),
    suite: Optional[str] = Query(None),
    db: Session = Depends(get_db),
):
    return crud.get_reports(db, experiment_id=experiment_id, suite=suite)


@router.get("/reports/{report_id}", response_model=schemas.ReportRead)
def get_report(report_id: int, db: Session = Depends(get_db)):
    report = crud.get_report(db, report_id)
    if not report:
        raise HTTPException(status_code=404, detail="Report not found")
    return report


@router.get("/runs", response_model=list[schemas.RunRead])
def list_runs(db: Session = Depends(get_db)):
    return crud.get_runs(db)


@router.get("/runs/{run_id}/reports", response_model=schemas.RunWithReports)
def get_run_reports(run_id: int, db: Session = Depends(get_db)):
    run = crud.get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run
