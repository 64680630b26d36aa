"""Run registry: one SQLite file per output directory, plus record helpers."""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Generator

from pydantic import BaseModel
from sqlalchemy import Engine, create_engine, event, select
from sqlalchemy.orm import Session, sessionmaker

from .config import ExperimentConfig, config_to_dict, get_config
from .models import Base, EpochRecord, Evaluation, Run, _utcnow
from .reports import EpochMetrics
from .util.tensorio import dumps_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Registry:
    """Engine and session factory bound to one registry file."""

    path: Path
    engine: Engine
    sessions: sessionmaker

    @classmethod
    def open(cls, path: Path) -> "Registry":
        path.parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(f"sqlite:///{path}", future=True)
        event.listen(engine, "connect", _sqlite_pragmas)
        logger.debug(f"opened registry {path}")
        return cls(path, engine, sessionmaker(bind=engine, expire_on_commit=False))


def _sqlite_pragmas(dbapi_connection, connection_record) -> None:
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA journal_mode=WAL")
    cursor.execute("PRAGMA foreign_keys=ON")
    cursor.close()


# open registries, keyed by resolved db path
_registries: dict[Path, Registry] = {}


def registry_for(config: ExperimentConfig | None = None) -> Registry:
    """The registry under ``config.output_dir``, opened on first use."""
    path = (config or get_config()).db_path.resolve()
    if path not in _registries:
        _registries[path] = Registry.open(path)
    return _registries[path]


def get_engine(config: ExperimentConfig | None = None) -> Engine:
    return registry_for(config).engine


def init_db(config: ExperimentConfig | None = None) -> bool:
    """Create missing tables; True if the registry file was already there."""
    path = (config or get_config()).db_path
    existed = path.exists()
    Base.metadata.create_all(get_engine(config))
    return existed


@contextmanager
def get_session(config: ExperimentConfig | None = None) -> Generator[Session, None, None]:
    """Session that commits on success and rolls back on error."""
    with registry_for(config).sessions.begin() as session:
        yield session


def close_registries() -> None:
    """Dispose every open engine; the next call reopens on demand."""
    while _registries:
        _, registry = _registries.popitem()
        registry.engine.dispose()


# --- record helpers ---

def start_run(
    db_session: Session,
    run_dir: Path,
    dataset_dir: Path,
    config: ExperimentConfig,
    resumed: bool = False,
) -> int:
    """Insert a running Run row and return its id."""
    run = Run(
        run_dir=str(run_dir),
        dataset_dir=str(dataset_dir),
        mode=config.loocc.mode.value,
        resumed=int(resumed),
        config_json=dumps_json(config_to_dict(config)),
    )
    db_session.add(run)
    db_session.flush()
    return run.run_id


def record_epoch(db_session: Session, run_id: int, metrics: EpochMetrics) -> None:
    db_session.add(EpochRecord(
        run_id=run_id,
        epoch=metrics.epoch,
        train_recon=metrics.train_recon,
        train_cont=metrics.train_cont,
        val_recon=metrics.val_recon,
        seconds=metrics.seconds,
    ))


def finish_run(
    db_session: Session,
    run_id: int,
    status: str,
    best_epoch: int | None = None,
    best_val: float | None = None,
    last_epoch: int | None = None,
    error: str | None = None,
) -> None:
    run = db_session.get(Run, run_id)
    if run is None:
        logger.warning(f"Run {run_id} not found in registry")
        return
    run.status = status
    run.best_epoch = best_epoch
    run.best_val = best_val
    run.last_epoch = last_epoch
    run.error = error
    run.finished_at = _utcnow()


def record_evaluation(
    db_session: Session,
    task: str,
    report: BaseModel,
    dataset_dir: Path,
    output_path: Path,
    checkpoint: Path | None = None,
) -> int:
    evaluation = Evaluation(
        task=task,
        checkpoint=str(checkpoint) if checkpoint else None,
        dataset_dir=str(dataset_dir),
        output_path=str(output_path),
        report_json=report.model_dump_json(),
    )
    db_session.add(evaluation)
    db_session.flush()
    return evaluation.evaluation_id


def list_runs(db_session: Session, limit: int | None = None) -> list[Run]:
    """Recorded runs, newest first."""
    query = select(Run).order_by(Run.run_id.desc())
    if limit:
        query = query.limit(limit)
    return list(db_session.execute(query).scalars())


def list_evaluations(db_session: Session, limit: int | None = None) -> list[Evaluation]:
    query = select(Evaluation).order_by(Evaluation.evaluation_id.desc())
    if limit:
        query = query.limit(limit)
    return list(db_session.execute(query).scalars())
