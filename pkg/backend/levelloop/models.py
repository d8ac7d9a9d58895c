from datetime import datetime

from sqlalchemy import JSON, Boolean, Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import relationship

from levelloop.database import Base


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    suite = Column(String(32), nullable=False)
    # unsigned 64-bit seeds do not fit a SQLite INTEGER
    seed = Column(String(20), nullable=False)
    config = Column(JSON, nullable=False)
    started_at = Column(DateTime, default=datetime.now)
    finished_at = Column(DateTime, nullable=True)
    exit_code = Column(Integer, nullable=True)

    reports = relationship("ReportRecord", back_populates="run", cascade="all, delete-orphan")


class ReportRecord(Base):
    __tablename__ = "reports"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=True, index=True)
    experiment_id = Column(String(64), nullable=False, index=True)
    suite = Column(String(32), nullable=True, index=True)
    anchor = Column(String(200), nullable=False)
    passed = Column(Boolean, nullable=False)
    approximate = Column(Boolean, nullable=False, default=False)

    seed = Column(String(20), nullable=False)
    first_replica = Column(Integer, nullable=False, default=0)
    replica_count = Column(Integer, nullable=False)
    runtime_s = Column(Float, nullable=True)

    payload = Column(JSON, nullable=False)
    created_at = Column(DateTime, default=datetime.now)

    run = relationship("RunRecord", back_populates="reports")
