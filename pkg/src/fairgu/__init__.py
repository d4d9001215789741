"""Fairness-aware graph unlearning: a GCN trained with adversarial and
covariance fairness terms, Fisher-importance parameter dampening for node
deletion, and the metrics used to judge both."""

from .estimator import SensitiveEstimate, estimate_sensitive, train_estimator
from .experiments import ExperimentConfig, ReportBundle, emit_report, load_config, run_experiment
from .fair_train import FairnessHyperparams, TrainedModel, train_fair_gnn, train_plain_gcn
from .graph import (
    Graph,
    SplitMasks,
    build_normalized_adjacency,
    delete_nodes,
    generate_synthetic_biased_graph,
    graph_from_edges,
    split_dataset,
)
from .metrics import FairnessReport, MiaResult, equal_opportunity, evaluate_model, mia_auc, statistical_parity
from .nn import ModelParams, init_params
from .unlearn import ImportanceMap, UnlearnRequest, apply_unlearning, compute_importance

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "FairnessHyperparams", "FairnessReport", "Graph", "ImportanceMap", "MiaResult",
    "ModelParams", "ReportBundle", "SensitiveEstimate", "SplitMasks", "TrainedModel", "UnlearnRequest",
    "apply_unlearning", "build_normalized_adjacency", "compute_importance", "delete_nodes", "emit_report",
    "equal_opportunity", "estimate_sensitive", "evaluate_model", "generate_synthetic_biased_graph",
    "graph_from_edges", "init_params", "load_config", "mia_auc", "run_experiment", "split_dataset",
    "statistical_parity", "train_estimator", "train_fair_gnn", "train_plain_gcn",
]
