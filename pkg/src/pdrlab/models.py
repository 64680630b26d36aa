"""SQLAlchemy models for the pdrlab run registry."""

from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, ForeignKey, Index, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(tzinfo=None)


class Run(Base):
    """One `pdrlab train` invocation."""

    __tablename__ = "runs"

    run_id = Column(Integer, primary_key=True, autoincrement=True)
    run_dir = Column(Text, nullable=False)
    dataset_dir = Column(Text, nullable=False)
    mode = Column(String(20), nullable=False)  # none | loocc-l | loocc-lv
    status = Column(String(20), default="running")  # running | completed | stopped | failed
    resumed = Column(Integer, default=0)
    best_epoch = Column(Integer, nullable=True)
    best_val = Column(Float, nullable=True)
    last_epoch = Column(Integer, nullable=True)
    config_json = Column(Text, nullable=False)
    error = Column(Text, nullable=True)
    started_at = Column(DateTime, default=_utcnow)
    finished_at = Column(DateTime, nullable=True)

    # Relationships
    epochs = relationship("EpochRecord", back_populates="run", cascade="all, delete-orphan")

    __table_args__ = (
        Index("ix_runs_run_dir", "run_dir"),
        Index("ix_runs_started", "started_at"),
    )


class EpochRecord(Base):
    """Metrics of one epoch; mirrors a line of metrics.jsonl."""

    __tablename__ = "epochs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.run_id", ondelete="CASCADE"), nullable=False)
    epoch = Column(Integer, nullable=False)
    train_recon = Column(Float, nullable=True)
    train_cont = Column(Float, nullable=True)
    val_recon = Column(Float, nullable=False)
    seconds = Column(Float, nullable=False)

    # Relationships
    run = relationship("Run", back_populates="epochs")

    __table_args__ = (
        Index("ix_epochs_run_epoch", "run_id", "epoch"),
    )


class Evaluation(Base):
    """One `pdrlab eval` report."""

    __tablename__ = "evaluations"

    evaluation_id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=_utcnow)
    task = Column(String(20), nullable=False)
    checkpoint = Column(Text, nullable=True)
    dataset_dir = Column(Text, nullable=False)
    output_path = Column(Text, nullable=False)
    report_json = Column(Text, nullable=False)  # Full report as JSON

    __table_args__ = (
        Index("ix_evaluations_created", "created_at"),
    )
