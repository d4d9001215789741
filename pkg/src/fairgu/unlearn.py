"""Fisher-diagonal importance, parameter selection and dampening."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fair_train import TrainedModel
from .graph import Graph, SplitMasks, delete_nodes
from .nn import CLASSIFIER_KEYS, Propagation, flatten, gcn_forward, per_node_loss_gradient, unflatten

TAGS = ("train", "forget", "retain")


@dataclass(frozen=True)
class ImportanceMap:
    """Mean squared per-node loss gradient, flattened in ``CLASSIFIER_KEYS`` order."""

    values: np.ndarray
    source_set_size: int
    source_tag: str

    def __post_init__(self):
        if self.source_tag not in TAGS:
            raise ValueError(f"unknown tag {self.source_tag!r}")
        if not (np.all(np.isfinite(self.values)) and np.all(self.values >= 0)):
            raise ValueError("importance values must be finite and nonnegative")


@dataclass(frozen=True)
class DampeningPlan:
    selected: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        if self.selected.shape != self.factors.shape:
            raise ValueError("one factor per selected index")
        if self.factors.size and not (np.all(self.factors > 0) and np.all(self.factors <= 1)):
            raise ValueError("dampening factors must lie in (0, 1]")


@dataclass(frozen=True)
class UnlearnRequest:
    forget_ids: tuple
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0 or self.lam <= 0:
            raise ValueError("gamma and lambda must be positive")


def compute_importance(theta_g: dict, graph_or_prop, labels: np.ndarray, node_set, tag: str = "train") -> ImportanceMap:
    """Average of squared single-node BCE gradients over ``node_set`` (indices).

    Nodes are summed in ascending index order so the result does not depend
    on how ``node_set`` was ordered.
    """
    nodes = np.unique(np.asarray(node_set, dtype=np.int64))
    if nodes.size == 0:
        raise ValueError("importance needs a nonempty node set")
    labels = np.asarray(labels)
    bad = nodes[~np.isin(labels[nodes], (0, 1))]
    if bad.size:
        raise ValueError(f"node {int(bad[0])} has no label")
    prop = graph_or_prop if isinstance(graph_or_prop, Propagation) else Propagation.from_graph(graph_or_prop)
    cache = gcn_forward(theta_g, prop)
    acc = {k: np.zeros_like(theta_g[k]) for k in CLASSIFIER_KEYS}
    for v in nodes:
        g = per_node_loss_gradient(theta_g, prop, labels, int(v), cache)
        for k in CLASSIFIER_KEYS:
            acc[k] += g[k] * g[k]
    values = flatten(acc, CLASSIFIER_KEYS) / nodes.size
    return ImportanceMap(values, int(nodes.size), tag)


def select_parameters(i_train: ImportanceMap, i_forget: ImportanceMap, gamma: float) -> np.ndarray:
    """Indices whose forget-set importance strictly exceeds γ times the train importance."""
    if i_train.values.shape != i_forget.values.shape:
        raise ValueError("importance maps have different shapes")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.flatnonzero(i_forget.values > gamma * i_train.values)


def compute_dampening(i_train: ImportanceMap, i_forget: ImportanceMap, lam: float, selected) -> DampeningPlan:
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= i_train.values.size):
        raise IndexError("selected index out of range")
    f = i_forget.values[selected]
    if np.any(f == 0):
        raise ZeroDivisionError(f"forget importance is zero at selected index {int(selected[f == 0][0])}")
    factors = np.minimum(lam * i_train.values[selected] / f, 1.0)
    return DampeningPlan(selected, factors)


def dampen(theta_g: dict, plan: DampeningPlan) -> dict:
    flat = flatten(theta_g, CLASSIFIER_KEYS)
    flat[plan.selected] = flat[plan.selected] * plan.factors
    return unflatten(flat, theta_g, CLASSIFIER_KEYS)


@dataclass
class UnlearnResult:
    model: TrainedModel
    graph: Graph
    plan: DampeningPlan
    importance_forget: ImportanceMap | None


def apply_unlearning(
    model: TrainedModel,
    graph: Graph,
    masks: SplitMasks,
    i_train: ImportanceMap,
    request: UnlearnRequest,
    prop: Propagation | None = None,
) -> UnlearnResult:
    """Dampen classifier weights specialized to the forget nodes and drop them from the graph.

    The forget-set importance needs the deleted nodes' labels and
    neighbourhoods, so it is evaluated on the graph *before* deletion. The
    estimator and adversary are left untouched.
    """
    if len(request.forget_ids) == 0:
        empty = DampeningPlan(np.zeros(0, dtype=np.int64), np.zeros(0))
        return UnlearnResult(model, graph, empty, None)
    forget_idx = graph.index_of(request.forget_ids)
    outside = np.setdiff1d(forget_idx, masks.train_ids)
    if outside.size:
        raise ValueError(f"forget node {graph.node_ids[outside[0]]!r} is not in the training set")

    g_unlearn = delete_nodes(graph, request.forget_ids)
    prop = prop or Propagation.from_graph(graph)
    theta = model.params.classifier
    i_forget = compute_importance(theta, prop, graph.labels, forget_idx, "forget")
    selected = select_parameters(i_train, i_forget, request.gamma)
    plan = compute_dampening(i_train, i_forget, request.lam, selected)

    params = model.params.copy()
    params.classifier = dampen(theta, plan)
    return UnlearnResult(replace(model, params=params), g_unlearn, plan, i_forget)
