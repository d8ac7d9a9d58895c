import logging
import os
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

logger = logging.getLogger(__name__)

DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./data/levelloop.db")

engine = create_engine(DATABASE_URL, connect_args={"check_same_thread": False})
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db(bind=None):
    from levelloop import models  # noqa: F401

    bind = bind if bind is not None else engine
    url = str(bind.url)
    if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
        db_dir = Path(url.split("sqlite:///")[-1]).parent
        if not db_dir.exists():
            logger.info(f"Creating database directory: {db_dir}")
            db_dir.mkdir(parents=True, exist_ok=True)

    logger.info(f"Initializing report store at {url}")
    Base.metadata.create_all(bind=bind)
