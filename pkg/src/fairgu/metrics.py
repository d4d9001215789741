"""Group-fairness metrics, accuracy and a shadow-model membership inference attack."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .nn import EPS_PROB, Propagation, bce, gcn_forward

FEATURE_SPEC = "posterior-v1: [p, |p-0.5|, bce(p, 1[p>=0.5])]"


class UndefinedMetricError(ValueError):
    """A conditional rate has an empty conditioning cell."""


def _as01(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == np.bool_:
        return x.view(np.int8)
    if x.dtype == np.int8:
        # negative int8 values show up as >= 128 in the unsigned view
        ok = x.size == 0 or x.view(np.uint8).max() <= 1
    else:
        ok = x.size == 0 or ((x == 0) | (x == 1)).all()
    if not ok:
        raise ValueError("expected a 0/1 vector")
    return x.astype(np.int8, copy=False)


def _gap(y_hat: np.ndarray, group: np.ndarray) -> float | None:
    """|rate(ŷ=1 | group=0) - rate(ŷ=1 | group=1)| for 0/1 int8 vectors."""
    n1 = int(np.count_nonzero(group))
    n0 = group.size - n1
    if n0 == 0 or n1 == 0:
        return None
    hit1 = int(np.count_nonzero(y_hat & group))
    hit0 = int(np.count_nonzero(y_hat)) - hit1
    return abs(hit0 / n0 - hit1 / n1)


def statistical_parity(y_hat, s) -> float:
    """|P(ŷ=1 | s=0) - P(ŷ=1 | s=1)|."""
    gap = _gap(_as01(y_hat), _as01(s))
    if gap is None:
        raise UndefinedMetricError("statistical parity needs both sensitive groups")
    return gap


def equal_opportunity(y_hat, y, s) -> float:
    """|P(ŷ=1 | y=1, s=0) - P(ŷ=1 | y=1, s=1)|."""
    y_hat, y, s = _as01(y_hat), _as01(y), _as01(s)
    pos = y.view(np.bool_)
    gap = _gap(y_hat[pos], s[pos])
    if gap is None:
        raise UndefinedMetricError("equal opportunity needs a positive label in both sensitive groups")
    return gap


def accuracy(y_hat, y) -> float:
    y_hat, y = _as01(y_hat), _as01(y)
    if y.size == 0:
        raise ValueError("accuracy of an empty set")
    return float((y_hat == y).mean())


@dataclass
class FairnessReport:
    """``delta_sp``/``delta_eo`` are ``None`` when a conditioning cell is empty."""

    accuracy: float
    delta_sp: float | None
    delta_eo: float | None
    group_counts: dict

    def to_record(self) -> dict:
        return asdict(self)


def _or_none(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def fairness_report(y_hat, y, s) -> FairnessReport:
    y_hat, y, s = _as01(y_hat), _as01(y), _as01(s)
    counts = {f"s{a}_y{b}": int(((s == a) & (y == b)).sum()) for a in (0, 1) for b in (0, 1)}
    return FairnessReport(accuracy(y_hat, y), _or_none(statistical_parity, y_hat, s),
                          _or_none(equal_opportunity, y_hat, y, s), counts)


def evaluate_model(theta_g: dict, graph, node_ids, prop: Propagation | None = None) -> FairnessReport:
    """Metrics on the given nodes (indices into ``graph``) with true ``s``."""
    prop = prop or Propagation.from_graph(graph)
    probs = gcn_forward(theta_g, prop).probs
    ids = np.asarray(node_ids, dtype=np.int64)
    return fairness_report((probs[ids] >= 0.5).astype(np.int8), graph.labels[ids], graph.sensitive[ids])


# ---------------------------------------------------------------------------
# membership inference


def attack_features(probs) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    hard = (p >= 0.5).astype(np.float64)
    return np.column_stack([p, np.abs(p - 0.5), bce(p, hard)])


@dataclass
class MiaResult:
    auc: float
    attack_feature_spec: str
    n_members: int
    n_nonmembers: int
    degenerate: bool = False

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class AttackModel:
    """Logistic attack classifier; ``None`` model means the shadow features were constant."""

    model: object = field(default=None, repr=False)
    degenerate: bool = False

    def score(self, feats: np.ndarray) -> np.ndarray:
        if self.model is None:
            return np.zeros(len(feats))
        return self.model.decision_function(feats)


def fit_attack(member_feats: np.ndarray, nonmember_feats: np.ndarray) -> AttackModel:
    x = np.vstack([member_feats, nonmember_feats])
    y = np.r_[np.ones(len(member_feats)), np.zeros(len(nonmember_feats))]
    if np.ptp(x, axis=0).max() == 0:
        return AttackModel(None, True)
    model = make_pipeline(StandardScaler(), LogisticRegression())
    model.fit(x, y)
    return AttackModel(model)


def auc_from_scores(member_scores, nonmember_scores) -> float:
    y = np.r_[np.ones(len(member_scores)), np.zeros(len(nonmember_scores))]
    return float(roc_auc_score(y, np.r_[member_scores, nonmember_scores]))


def attack_auc(attack: AttackModel, member_feats: np.ndarray, nonmember_feats: np.ndarray) -> MiaResult:
    if len(member_feats) == 0 or len(nonmember_feats) == 0:
        raise ValueError("member and nonmember sets must be nonempty")
    x = np.vstack([member_feats, nonmember_feats])
    if attack.degenerate or np.ptp(x, axis=0).max() == 0:
        return MiaResult(0.5, FEATURE_SPEC, len(member_feats), len(nonmember_feats), True)
    auc = auc_from_scores(attack.score(member_feats), attack.score(nonmember_feats))
    return MiaResult(auc, FEATURE_SPEC, len(member_feats), len(nonmember_feats))


def fit_shadow_attack(graph, pool_ids, train_shadow, seed: int = 0, prop: Propagation | None = None,
                      shadows: int = 1) -> AttackModel:
    """Train shadow classifiers on random halves of ``pool_ids`` and fit the attack on them.

    ``train_shadow(train_ids, k) -> θ_G`` trains the k-th shadow model; the other
    half of the pool serves as its nonmembers. Features from all shadows are
    pooled into one attack training set.
    """
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    if pool_ids.size < 4:
        raise ValueError("shadow pool too small")
    if shadows < 1:
        raise ValueError("need at least one shadow model")
    rng = np.random.default_rng(seed)
    prop = prop or Propagation.from_graph(graph)
    ins, outs = [], []
    for k in range(shadows):
        pool = rng.permutation(pool_ids)
        half = pool.size // 2
        shadow_in, shadow_out = np.sort(pool[:half]), np.sort(pool[half:])
        probs = gcn_forward(train_shadow(shadow_in, k), prop).probs
        ins.append(attack_features(probs[shadow_in]))
        outs.append(attack_features(probs[shadow_out]))
    return fit_attack(np.vstack(ins), np.vstack(outs))


def mia_auc(theta_g: dict, graph, member_ids, nonmember_ids, attack: AttackModel,
            prop: Propagation | None = None) -> MiaResult:
    """Attack AUC of the target model; members are the positives.

    ``graph`` is the graph the target is queried on and must contain every
    member and nonmember (ids are indices into it).
    """
    members = np.asarray(member_ids, dtype=np.int64)
    nonmembers = np.asarray(nonmember_ids, dtype=np.int64)
    if np.intersect1d(members, nonmembers).size:
        raise ValueError("member and nonmember sets overlap")
    prop = prop or Propagation.from_graph(graph)
    probs = gcn_forward(theta_g, prop).probs
    return attack_auc(attack, attack_features(probs[members]), attack_features(probs[nonmembers]))
