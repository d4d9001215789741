"""Fairness-aware training: adversarial debiasing plus covariance penalty."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Graph, SplitMasks
from .nn import (
    Adam,
    LossWeights,
    ModelParams,
    ObjectiveInputs,
    Propagation,
    backprop,
    estimator_forward,
    forward_all,
    gcn_backward,
    gcn_forward,
    init_params,
)

log = logging.getLogger(__name__)

TRAINLOG_SCHEMA = "fairgu.trainlog/1"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, term: str):
        super().__init__(f"loss term {term!r} became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.term = term


@dataclass
class FairnessHyperparams:
    alpha: float = 0.0
    beta: float = 0.0
    epochs: int = 1000
    adversary_steps_per_epoch: int = 1
    lr: float = 1e-3
    estimator_lr: float = 1e-3
    adversary_lr: float = 1e-3
    hidden: int = 128
    out_dim: int | None = None
    est_hidden: int = 128
    train_adversary: bool = True
    freeze_estimator: bool = False
    # "all" nodes or only "train" nodes feed the adversary and covariance terms
    fair_scope: str = "all"
    # 0 disables early stopping on validation accuracy
    patience: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.fair_scope not in ("all", "train"):
            raise ValueError(f"fair_scope must be 'all' or 'train', got {self.fair_scope!r}")


@dataclass
class EpochRecord:
    epoch: int
    L_C: float
    L_E: float
    L_R: float
    L_A: float
    val_acc: float
    adversary_disabled: bool = False


@dataclass
class TrainedModel:
    params: ModelParams
    training_log: list = field(default_factory=list)
    seed: int = 0


def _labels_float(graph: Graph) -> np.ndarray:
    if graph.labels is None:
        raise ValueError("graph has no labels")
    return np.where(graph.labels == 1, 1.0, 0.0)


def _sensitive_float(graph: Graph) -> np.ndarray:
    if graph.sensitive is None:
        return np.zeros(graph.num_nodes)
    return np.where(graph.sensitive == 1, 1.0, 0.0)


def make_inputs(graph: Graph, masks: SplitMasks, prop: Propagation, fair_scope: str = "all") -> ObjectiveInputs:
    if masks.train_ids.size == 0:
        raise ValueError("empty labeled set")
    fair_ids = np.arange(graph.num_nodes) if fair_scope == "all" else masks.train_ids
    return ObjectiveInputs(
        prop=prop,
        labels=_labels_float(graph),
        label_ids=masks.train_ids,
        sensitive=_sensitive_float(graph),
        sensitive_ids=masks.sensitive_known_ids,
        s_hard=np.zeros(graph.num_nodes, dtype=np.int8),
        fair_ids=fair_ids,
    )


def _accuracy(probs, labels, ids) -> float:
    return float(((probs[ids] >= 0.5) == (labels[ids] == 1)).mean())


def train_fair_gnn(
    graph: Graph,
    masks: SplitMasks,
    estimator_init: dict | None,
    hp: FairnessHyperparams,
    seed: int = 0,
    prop: Propagation | None = None,
) -> TrainedModel:
    """Alternating optimization of generator (θ_G, θ_E) and adversary (θ_A).

    Each epoch refreshes the hard ŝ partition from the estimator, takes one
    generator step on L_C + L_E + α·L_R + β·L_A with θ_A fixed, then
    ``adversary_steps_per_epoch`` ascent steps on L_A with the generator fixed.
    ``estimator_init=None`` starts the estimator from random weights (it then
    learns only through L_E inside this loop).
    """
    prop = prop or Propagation.from_graph(graph)
    params = init_params(graph.num_features, hp.hidden, hp.out_dim, hp.est_hidden, seed)
    if estimator_init is not None:
        params.estimator = {k: np.array(v, dtype=np.float64) for k, v in estimator_init.items()}
    params.check()
    inputs = make_inputs(graph, masks, prop, hp.fair_scope)
    eval_ids = masks.val_ids if masks.val_ids.size else masks.train_ids

    opt_g = Adam(params.classifier, hp.lr)
    opt_e = Adam(params.estimator, hp.estimator_lr)
    opt_a = Adam(params.adversary, hp.adversary_lr)
    gen_weights = LossWeights(1.0, 1.0, hp.alpha, hp.beta)
    adv_weights = LossWeights(0.0, 0.0, 0.0, 1.0)

    history = []
    best_val, since_best = -np.inf, 0
    for epoch in range(hp.epochs):
        inputs.s_hard = (estimator_forward(params.estimator, prop).probs >= 0.5).astype(np.int8)

        cache = forward_all(params, inputs)
        terms, grads = backprop(params, cache, gen_weights, inputs)
        disabled = terms["adversary"] is None
        if disabled:
            log.debug("epoch %d: one estimated group is empty, adversary term disabled", epoch)
        record = EpochRecord(
            epoch,
            terms["classification"],
            terms["estimator"],
            terms["covariance"],
            0.0 if disabled else terms["adversary"],
            _accuracy(cache.classifier.probs, inputs.labels, eval_ids),
            disabled,
        )
        for name in ("L_C", "L_E", "L_R", "L_A"):
            if not np.isfinite(getattr(record, name)):
                raise TrainingDivergedError(epoch, name)
        history.append(record)

        opt_g.step(params.classifier, grads["classifier"])
        if not hp.freeze_estimator:
            opt_e.step(params.estimator, grads["estimator"])

        if hp.train_adversary and not disabled:
            for _ in range(hp.adversary_steps_per_epoch):
                cache = forward_all(params, inputs)
                _, g_adv = backprop(params, cache, adv_weights, inputs)
                opt_a.step(params.adversary, g_adv["adversary"], ascend=True)

        if hp.patience:
            if record.val_acc > best_val:
                best_val, since_best = record.val_acc, 0
            else:
                since_best += 1
                if since_best >= hp.patience:
                    log.info("early stop at epoch %d (val_acc plateau)", epoch)
                    break

    return TrainedModel(params, history, seed)


def train_plain_gcn(
    graph: Graph,
    masks: SplitMasks,
    hp: FairnessHyperparams,
    seed: int = 0,
    prop: Propagation | None = None,
    train_ids: np.ndarray | None = None,
) -> dict:
    """Standard GCN classifier trained on L_C only; returns θ_G."""
    prop = prop or Propagation.from_graph(graph)
    params = init_params(graph.num_features, hp.hidden, hp.out_dim, hp.est_hidden, seed).classifier
    ids = masks.train_ids if train_ids is None else np.asarray(train_ids)
    labels = _labels_float(graph)
    opt = Adam(params, hp.lr)
    for _ in range(hp.epochs):
        cache = gcn_forward(params, prop)
        g = np.zeros(graph.num_nodes)
        g[ids] = (cache.probs[ids] - labels[ids]) * cache.inside[ids] / ids.size
        opt.step(params, gcn_backward(params, cache, prop, g))
    return params


def write_training_log(model: TrainedModel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRAINLOG_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_C", "L_E", "L_R", "L_A", "val_acc"])
        for r in model.training_log:
            writer.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in ("L_C", "L_E", "L_R", "L_A", "val_acc")])


def log_as_dicts(model: TrainedModel) -> list:
    return [asdict(r) for r in model.training_log]
