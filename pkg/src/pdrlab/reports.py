"""Serialized results: per-epoch metrics and evaluation reports.

Every JSON document pdrlab writes is produced from one of these models and
has a matching schema under ``schemas/``.
"""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict

from .util.tensorio import DatasetError, write_json


class _Report(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EpochMetrics(_Report):
    """One JSON-lines record of the training log; epoch 0 is the untrained model."""

    epoch: int
    train_recon: float | None = None
    train_cont: float | None = None
    val_recon: float
    lr: float
    seconds: float


class ClassBreakdown(_Report):
    label: int
    support: int
    precision: float
    recall: float
    f1: float


class ClusterBreakdown(_Report):
    cluster: int
    size: int
    majority_label: int
    purity: float


class MetricsReport(_Report):
    task: Literal["cluster"] = "cluster"
    label: Literal["shape", "albedo"]
    features: str  # "model" or "pixels"
    blocks: list[str] = []
    split: str = "test"
    n_samples: int
    n_classes: int
    k: int
    cluster_accuracy: float
    weighted_f1: float
    nmi: float
    per_class: list[ClassBreakdown]
    per_cluster: list[ClusterBreakdown]
    checkpoint: str | None = None


class ProbeReport(_Report):
    task: Literal["probe"] = "probe"
    label: Literal["shape", "albedo"]
    blocks: list[str]
    mode: Literal["frozen", "finetune"]
    n_train: int
    n_test: int
    n_classes: int
    epochs: int
    hidden_dim: int
    train_accuracy: float
    test_accuracy: float
    chance: float
    checkpoint: str | None = None


class DisentanglementReport(_Report):
    task: Literal["disentangle"] = "disentangle"
    blocks: list[str]
    # |Pearson r| averaged per block pair; None where undefined
    matrix: list[list[float | None]]
    mean_off_diagonal: float | None
    undefined_pairs: list[list[str]]
    n_samples: int
    checkpoint: str | None = None


class AttributionReport(_Report):
    task: Literal["attribute"] = "attribute"
    label: Literal["shape", "albedo"] | None = None
    target_class: int | None = None
    steps: int
    n_samples: int
    # percent per block, summing to 100
    contributions: dict[str, float]
    raw: dict[str, list[float]]
    completeness_residual: float
    score_delta: float
    checkpoint: str | None = None


class InvarianceReport(_Report):
    task: Literal["invariance"] = "invariance"
    perturb_mode: str
    mean_cosine: float
    n_samples: int
    checkpoint: str | None = None


class ClusterScores(_Report):
    cluster_accuracy: float
    weighted_f1: float
    nmi: float


class RobustnessReport(_Report):
    task: Literal["robustness"] = "robustness"
    label: Literal["shape", "albedo"]
    blocks: list[str]
    range_scale: float
    n_samples: int
    in_distribution: ClusterScores
    out_of_distribution: ClusterScores
    checkpoint: str | None = None


REPORT_MODELS: dict[str, type[BaseModel]] = {
    "epoch_metrics": EpochMetrics,
    "metrics_report": MetricsReport,
    "probe_report": ProbeReport,
    "disentanglement_report": DisentanglementReport,
    "attribution_report": AttributionReport,
    "invariance_report": InvarianceReport,
    "robustness_report": RobustnessReport,
}


def write_report(path: Path, report: BaseModel) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e


def append_jsonl(path: Path, record: BaseModel) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e


def read_jsonl(path: Path) -> list[EpochMetrics]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e
    return [EpochMetrics.model_validate_json(line) for line in lines if line.strip()]


def schema_documents() -> dict[str, dict]:
    """File name -> JSON schema for the experiment config and every report model."""
    from .config import config_schema

    docs = {"experiment_config.schema.json": config_schema()}
    for name, model in REPORT_MODELS.items():
        docs[f"{name}.schema.json"] = model.model_json_schema()
    return docs


def write_schemas(directory: Path) -> list[Path]:
    """Regenerate the schema files shipped under ``schemas/``."""
    written = []
    for name, doc in schema_documents().items():
        write_json(Path(directory) / name, doc)
        written.append(Path(directory) / name)
    return written
