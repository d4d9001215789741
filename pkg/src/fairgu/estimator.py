"""Sensitive-attribute estimator: pre-training and proxy inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import MISSING, Graph, SplitMasks
from .nn import Adam, Propagation, classification_loss, estimator_backward, estimator_forward, init_estimator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensitiveEstimate:
    probabilities: np.ndarray

    @property
    def hard(self) -> np.ndarray:
        return (self.probabilities >= 0.5).astype(np.int8)


@dataclass
class EstimatorResult:
    params: dict
    initial_loss: float
    final_loss: float
    losses: list
    single_class: bool = False


def estimator_loss(params: dict, prop: Propagation, sensitive: np.ndarray, known: np.ndarray) -> float:
    cache = estimator_forward(params, prop)
    return classification_loss(cache.probs[known], sensitive[known])


def train_estimator(
    graph: Graph,
    masks: SplitMasks,
    epochs: int = 200,
    lr: float = 1e-3,
    hidden: int = 128,
    seed: int = 0,
    prop: Propagation | None = None,
    init: dict | None = None,
) -> EstimatorResult:
    """Fit the estimator by full-batch Adam on the BCE over V_S."""
    known = masks.sensitive_known_ids
    if graph.sensitive is None or known.size == 0:
        raise ValueError("no nodes with known sensitive attribute")
    s = graph.sensitive
    if (s[known] == MISSING).any():
        raise ValueError("sensitive_known_ids contains nodes without a sensitive value")
    single = np.unique(s[known]).size == 1
    if single:
        log.warning("all known sensitive values are %d; estimator will degenerate to a constant", s[known][0])

    prop = prop or Propagation.from_graph(graph)
    if init is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[1])
        params = init_estimator(rng, graph.num_features, hidden)
    else:
        params = {k: v.copy() for k, v in init.items()}
    target = s.astype(np.float64)
    opt = Adam(params, lr)
    losses = []
    for _ in range(epochs):
        cache = estimator_forward(params, prop)
        losses.append(classification_loss(cache.probs[known], target[known]))
        g = np.zeros(graph.num_nodes)
        g[known] = (cache.probs[known] - target[known]) * cache.inside[known] / known.size
        opt.step(params, estimator_backward(params, cache, prop, g))
    final = estimator_loss(params, prop, target, known)
    initial = losses[0] if losses else final
    return EstimatorResult(params, initial, final, losses, single)


def estimate_sensitive(params: dict, graph_or_prop) -> SensitiveEstimate:
    """Proxy sensitive probabilities for every node of the graph."""
    prop = graph_or_prop if isinstance(graph_or_prop, Propagation) else Propagation.from_graph(graph_or_prop)
    return SensitiveEstimate(estimator_forward(params, prop).probs)
