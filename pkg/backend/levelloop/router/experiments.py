from typing import Optional

from fastapi import APIRouter, HTTPException, Query

from levelloop import schemas
from levelloop.services.experiments import REGISTRY, SUITES

router = APIRouter(prefix="/api/experiments", tags=["experiments"])


@router.get("", response_model=list[schemas.ExperimentRead])
def list_experiments(suite: Optional[str] = Query(None)):
    if suite and suite not in SUITES:
        raise HTTPException(status_code=404, detail="Suite not found")
    return [e.to_read() for e in REGISTRY if not suite or e.suite == suite]


@router.get("/{experiment_id}", response_model=schemas.ExperimentRead)
def get_experiment(experiment_id: str):
    for experiment in REGISTRY:
        if experiment.experiment_id == experiment_id:
            return experiment.to_read()
    raise HTTPException(status_code=404, detail="Experiment not found")
