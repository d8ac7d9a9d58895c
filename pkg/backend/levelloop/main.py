from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from levelloop.config import setup_logging
from levelloop.database import init_db
from levelloop.router import experiments, reports
from levelloop.services.archive import check_and_import_reports


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging()
    init_db()

    # Load an exported report file into an empty store
    check_and_import_reports()
    yield


app = FastAPI(title="levelloop-lab reports", lifespan=lifespan)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(experiments.router)
app.include_router(reports.router)


@app.get("/")
def root():
    return {"message": "levelloop-lab reports"}


@app.get("/api/health")
def health():
    return {"status": "ok"}
