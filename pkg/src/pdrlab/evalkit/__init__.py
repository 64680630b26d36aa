"""Downstream evaluation of learned representations."""

from .attribution import integrated_gradients
from .clustering import ClusteringResult, hac_ward
from .disentangle import pcc_disentanglement
from .metrics import cluster_accuracy, class_breakdown, cluster_breakdown, nmi, weighted_f1
from .probe import ProbeResult, linear_probe

__all__ = [
    "ClusteringResult",
    "ProbeResult",
    "class_breakdown",
    "cluster_accuracy",
    "cluster_breakdown",
    "hac_ward",
    "integrated_gradients",
    "linear_probe",
    "nmi",
    "pcc_disentanglement",
    "weighted_f1",
]
