"""Dense/sparse numeric engine: GCN classifier, estimator, adversary.

All three parameter groups are plain ``dict[str, ndarray]`` in float64.
Gradients are derived by hand; ``tests/test_gradients.py`` checks every
term against central finite differences.

Classifier (two GCN layers, ReLU, sigmoid head)::

    H1 = relu(Â X W1 + b1)
    H  = relu(Â H1 W2 + b2)
    y  = sigmoid(H w + c)

Estimator (one GCN layer + sigmoid head)::

    s = sigmoid(relu(Â X V1 + e1) u + e0)

Adversary (linear + sigmoid on the classifier representation H)::

    q = sigmoid(H a + a0)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .graph import Graph, build_normalized_adjacency

EPS_PROB = 1e-7

CLASSIFIER_KEYS = ("W1", "b1", "W2", "b2", "w", "c")
ESTIMATOR_KEYS = ("V1", "e1", "u", "e0")
ADVERSARY_KEYS = ("a", "a0")
GROUPS = ("classifier", "estimator", "adversary")


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite gradient from the {term!r} term")
        self.term = term


@dataclass
class ModelParams:
    classifier: dict
    estimator: dict
    adversary: dict
    dims: dict
    seed: int = 0

    def group(self, name: str) -> dict:
        return getattr(self, name)

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.classifier.items()},
            {k: v.copy() for k, v in self.estimator.items()},
            {k: v.copy() for k, v in self.adversary.items()},
            dict(self.dims),
            self.seed,
        )

    def check(self) -> None:
        d, h, o, eh = (self.dims[k] for k in ("in_dim", "hidden", "out_dim", "est_hidden"))
        expected = {
            "classifier": {"W1": (d, h), "b1": (h,), "W2": (h, o), "b2": (o,), "w": (o,), "c": ()},
            "estimator": {"V1": (d, eh), "e1": (eh,), "u": (eh,), "e0": ()},
            "adversary": {"a": (o,), "a0": ()},
        }
        for name, shapes in expected.items():
            grp = self.group(name)
            if set(grp) != set(shapes):
                raise ValueError(f"{name} keys {sorted(grp)} != {sorted(shapes)}")
            for key, shape in shapes.items():
                if np.shape(grp[key]) != shape:
                    raise ValueError(f"{name}.{key} has shape {np.shape(grp[key])}, expected {shape}")
                if not np.all(np.isfinite(grp[key])):
                    raise ValueError(f"{name}.{key} has non-finite entries")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_classifier(rng, in_dim, hidden, out_dim) -> dict:
    return {
        "W1": _glorot(rng, in_dim, hidden, (in_dim, hidden)),
        "b1": np.zeros(hidden),
        "W2": _glorot(rng, hidden, out_dim, (hidden, out_dim)),
        "b2": np.zeros(out_dim),
        "w": _glorot(rng, out_dim, 1, (out_dim,)),
        "c": np.zeros(()),
    }


def init_estimator(rng, in_dim, hidden) -> dict:
    return {
        "V1": _glorot(rng, in_dim, hidden, (in_dim, hidden)),
        "e1": np.zeros(hidden),
        "u": _glorot(rng, hidden, 1, (hidden,)),
        "e0": np.zeros(()),
    }


def init_adversary(rng, out_dim) -> dict:
    return {"a": _glorot(rng, out_dim, 1, (out_dim,)), "a0": np.zeros(())}


def init_params(in_dim: int, hidden: int = 128, out_dim: int | None = None,
                est_hidden: int = 128, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases; each group has its own RNG stream."""
    out_dim = hidden if out_dim is None else out_dim
    rc, re, ra = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    return ModelParams(
        init_classifier(rc, in_dim, hidden, out_dim),
        init_estimator(re, in_dim, est_hidden),
        init_adversary(ra, out_dim),
        {"in_dim": in_dim, "hidden": hidden, "out_dim": out_dim, "est_hidden": est_hidden},
        seed,
    )


def fingerprint(group: dict) -> str:
    h = hashlib.blake2b(digest_size=16)
    for key in sorted(group):
        h.update(key.encode())
        h.update(np.ascontiguousarray(group[key]).tobytes())
    return h.hexdigest()


def flatten(group: dict, keys=None) -> np.ndarray:
    keys = keys or tuple(group)
    return np.concatenate([np.ravel(group[k]) for k in keys])


def unflatten(vec: np.ndarray, like: dict, keys=None) -> dict:
    keys = keys or tuple(like)
    out, pos = {}, 0
    for k in keys:
        size = np.size(like[k])
        out[k] = np.asarray(vec[pos:pos + size]).reshape(np.shape(like[k])).copy()
        pos += size
    if pos != vec.size:
        raise ValueError(f"vector of length {vec.size} does not match group size {pos}")
    return out


@dataclass(frozen=True)
class Propagation:
    """Normalized adjacency with the (parameter-free) first propagation Â X."""

    norm_adj: sp.csr_matrix
    features: np.ndarray
    ax: np.ndarray

    @classmethod
    def from_graph(cls, graph: Graph) -> "Propagation":
        a = build_normalized_adjacency(graph)
        return cls(a, graph.features, np.asarray(a @ graph.features))

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]


def clamp_sigmoid(logits: np.ndarray):
    raw = expit(logits)
    inside = (raw > EPS_PROB) & (raw < 1.0 - EPS_PROB)
    return np.clip(raw, EPS_PROB, 1.0 - EPS_PROB), inside


def bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-entry binary cross-entropy on already clamped probabilities."""
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


@dataclass
class ForwardCache:
    z1: np.ndarray
    h1: np.ndarray
    p: np.ndarray
    z2: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    inside: np.ndarray
    token: str = ""


def gcn_forward(params: dict, prop: Propagation) -> ForwardCache:
    if params["W1"].shape[0] != prop.ax.shape[1]:
        raise ValueError(f"W1 expects {params['W1'].shape[0]} features, got {prop.ax.shape[1]}")
    if params["W2"].shape[0] != params["W1"].shape[1] or params["w"].shape[0] != params["W2"].shape[1]:
        raise ValueError("classifier weight shapes are inconsistent")
    z1 = prop.ax @ params["W1"] + params["b1"]
    h1 = np.maximum(z1, 0.0)
    p = np.asarray(prop.norm_adj @ h1)
    z2 = p @ params["W2"] + params["b2"]
    h = np.maximum(z2, 0.0)
    logits = h @ params["w"] + params["c"]
    probs, inside = clamp_sigmoid(logits)
    return ForwardCache(z1, h1, p, z2, h, logits, probs, inside, fingerprint(params))


def gcn_backward(params: dict, cache: ForwardCache, prop: Propagation,
                 d_logits: np.ndarray, d_h: np.ndarray | None = None) -> dict:
    """Gradients of θ_G given upstream gradients w.r.t. logits and (optionally) H."""
    dh = np.outer(d_logits, params["w"])
    if d_h is not None:
        dh = dh + d_h
    dz2 = dh * (cache.z2 > 0)
    dp = dz2 @ params["W2"].T
    dz1 = np.asarray(prop.norm_adj.T @ dp) * (cache.z1 > 0)
    return {
        "W1": prop.ax.T @ dz1,
        "b1": dz1.sum(axis=0),
        "W2": cache.p.T @ dz2,
        "b2": dz2.sum(axis=0),
        "w": cache.h.T @ d_logits,
        "c": np.asarray(d_logits.sum()),
    }


@dataclass
class EstimatorCache:
    z1: np.ndarray
    h1: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    inside: np.ndarray
    token: str = ""


def estimator_forward(params: dict, prop: Propagation) -> EstimatorCache:
    if params["V1"].shape[0] != prop.ax.shape[1]:
        raise ValueError(f"estimator expects {params['V1'].shape[0]} features, got {prop.ax.shape[1]}")
    z1 = prop.ax @ params["V1"] + params["e1"]
    h1 = np.maximum(z1, 0.0)
    logits = h1 @ params["u"] + params["e0"]
    probs, inside = clamp_sigmoid(logits)
    return EstimatorCache(z1, h1, logits, probs, inside, fingerprint(params))


def estimator_backward(params: dict, cache: EstimatorCache, prop: Propagation, d_logits: np.ndarray) -> dict:
    dz1 = np.outer(d_logits, params["u"]) * (cache.z1 > 0)
    return {
        "V1": prop.ax.T @ dz1,
        "e1": dz1.sum(axis=0),
        "u": cache.h1.T @ d_logits,
        "e0": np.asarray(d_logits.sum()),
    }


def adversary_forward(params: dict, h: np.ndarray):
    logits = h @ params["a"] + params["a0"]
    return clamp_sigmoid(logits)


# ---------------------------------------------------------------------------
# loss terms


def classification_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean BCE over the labeled nodes given as aligned vectors."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("classification loss needs at least one labeled node")
    probs = np.clip(probs, EPS_PROB, 1.0 - EPS_PROB)
    return float(bce(probs, np.asarray(labels, dtype=np.float64)).mean())


def adversary_loss(q: np.ndarray, s_hard: np.ndarray) -> float:
    """Mean log q over the ŝ=1 group plus mean log(1-q) over the ŝ=0 group.

    The adversary maximizes this value; it is never positive.
    """
    q = np.clip(np.asarray(q, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    s_hard = np.asarray(s_hard)
    g1, g0 = s_hard == 1, s_hard == 0
    if not g1.any() or not g0.any():
        raise ValueError("adversary loss needs both estimated groups to be nonempty")
    return float(np.log(q[g1]).mean() + np.log1p(-q[g0]).mean())


def covariance_penalty(s_soft: np.ndarray, y_prob: np.ndarray) -> float:
    """Absolute covariance |E[(s - E s)(y - E y)]| (population normalization)."""
    s_soft = np.asarray(s_soft, dtype=np.float64)
    y_prob = np.asarray(y_prob, dtype=np.float64)
    if s_soft.shape != y_prob.shape or s_soft.size < 2:
        raise ValueError("covariance penalty needs two equal-length vectors of length >= 2")
    return float(abs(np.mean((s_soft - s_soft.mean()) * (y_prob - y_prob.mean()))))


# ---------------------------------------------------------------------------
# combined objective


@dataclass(frozen=True)
class LossWeights:
    classification: float = 1.0
    estimator: float = 1.0
    covariance: float = 0.0
    adversary: float = 0.0

    def __iter__(self):
        return iter((self.classification, self.estimator, self.covariance, self.adversary))


@dataclass
class ObjectiveInputs:
    """Everything besides parameters that the training objective reads.

    ``s_hard`` is the estimated-attribute partition fixed for the current
    epoch; ``fair_ids`` are the nodes over which the adversary and the
    covariance terms take their expectations.
    """

    prop: Propagation
    labels: np.ndarray
    label_ids: np.ndarray
    sensitive: np.ndarray
    sensitive_ids: np.ndarray
    s_hard: np.ndarray
    fair_ids: np.ndarray


@dataclass
class FullCache:
    classifier: ForwardCache
    estimator: EstimatorCache
    adv_probs: np.ndarray
    adv_inside: np.ndarray
    token: str = field(default="")


def params_token(params: ModelParams) -> str:
    return "|".join(fingerprint(params.group(g)) for g in GROUPS)


def forward_all(params: ModelParams, inputs: ObjectiveInputs) -> FullCache:
    cc = gcn_forward(params.classifier, inputs.prop)
    ec = estimator_forward(params.estimator, inputs.prop)
    q, inside = adversary_forward(params.adversary, cc.h)
    return FullCache(cc, ec, q, inside, params_token(params))


def loss_terms(cache: FullCache, inputs: ObjectiveInputs) -> dict:
    """Values of the four terms; the adversary term is ``None`` if a group is empty."""
    y = inputs.labels[inputs.label_ids].astype(np.float64)
    s = inputs.sensitive[inputs.sensitive_ids].astype(np.float64)
    f = inputs.fair_ids
    terms = {
        "classification": classification_loss(cache.classifier.probs[inputs.label_ids], y),
        "estimator": classification_loss(cache.estimator.probs[inputs.sensitive_ids], s) if s.size else 0.0,
        "covariance": covariance_penalty(cache.estimator.probs[f], cache.classifier.probs[f]),
    }
    sh = inputs.s_hard[f]
    if (sh == 1).any() and (sh == 0).any():
        terms["adversary"] = adversary_loss(cache.adv_probs[f], sh)
    else:
        terms["adversary"] = None
    return terms


def backprop(params: ModelParams, cache: FullCache, weights: LossWeights,
             inputs: ObjectiveInputs) -> tuple[dict, dict]:
    """Exact gradients of the weighted objective for all three groups.

    Objective: wC·L_C + wE·L_E + wR·L_R + wA·L_A. Returns ``(terms, grads)``
    where ``grads`` maps group name to a dict shaped like that group.
    """
    if cache.token != params_token(params):
        raise StaleCacheError("forward cache was computed for different parameters")
    wc, we, wr, wa = weights
    n = inputs.prop.num_nodes
    cc, ec = cache.classifier, cache.estimator
    terms = loss_terms(cache, inputs)

    d_ylogit = {}
    d_slogit = {}
    d_h = None
    g_adv = {k: np.zeros_like(v) for k, v in params.adversary.items()}

    if wc:
        ids = inputs.label_ids
        g = np.zeros(n)
        g[ids] = (cc.probs[ids] - inputs.labels[ids]) * cc.inside[ids] / ids.size
        d_ylogit["classification"] = wc * g
    if we and inputs.sensitive_ids.size:
        ids = inputs.sensitive_ids
        g = np.zeros(n)
        g[ids] = (ec.probs[ids] - inputs.sensitive[ids]) * ec.inside[ids] / ids.size
        d_slogit["estimator"] = we * g
    if wr:
        f = inputs.fair_ids
        s_f, y_f = ec.probs[f], cc.probs[f]
        cov = np.mean((s_f - s_f.mean()) * (y_f - y_f.mean()))
        sign = np.sign(cov)
        gy = np.zeros(n)
        gs = np.zeros(n)
        gy[f] = sign * (s_f - s_f.mean()) / f.size * y_f * (1 - y_f) * cc.inside[f]
        gs[f] = sign * (y_f - y_f.mean()) / f.size * s_f * (1 - s_f) * ec.inside[f]
        d_ylogit["covariance"] = wr * gy
        d_slogit["covariance"] = wr * gs
    if wa and terms["adversary"] is not None:
        f = inputs.fair_ids
        sh = inputs.s_hard[f]
        q = cache.adv_probs[f]
        g1, g0 = sh == 1, sh == 0
        dq = np.zeros(f.size)
        dq[g1] = (1.0 - q[g1]) / g1.sum()
        dq[g0] = -q[g0] / g0.sum()
        dq *= cache.adv_inside[f]
        d_alogit = np.zeros(n)
        d_alogit[f] = wa * dq
        g_adv = {"a": cc.h.T @ d_alogit, "a0": np.asarray(d_alogit.sum())}
        d_h = np.outer(d_alogit, params.adversary["a"])

    for term, g in list(d_ylogit.items()) + list(d_slogit.items()):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(term)
    if d_h is not None and not np.all(np.isfinite(d_h)):
        raise NonFiniteGradientError("adversary")

    dy = sum(d_ylogit.values()) if d_ylogit else np.zeros(n)
    ds = sum(d_slogit.values()) if d_slogit else np.zeros(n)
    grads = {
        "classifier": gcn_backward(params.classifier, cc, inputs.prop, dy, d_h),
        "estimator": estimator_backward(params.estimator, ec, inputs.prop, ds),
        "adversary": g_adv,
    }
    return terms, grads


def objective_value(params: ModelParams, inputs: ObjectiveInputs, weights: LossWeights) -> float:
    terms = loss_terms(forward_all(params, inputs), inputs)
    total = 0.0
    for w, key in zip(weights, ("classification", "estimator", "covariance", "adversary")):
        if w and terms[key] is not None:
            total += w * terms[key]
    return total


# ---------------------------------------------------------------------------
# per-node gradients


def per_node_loss_gradient(params: dict, prop: Propagation, labels: np.ndarray, node: int,
                           cache: ForwardCache | None = None) -> dict:
    """Gradient of the BCE at a single labeled node w.r.t. θ_G.

    Only the two-hop receptive field of ``node`` contributes, so the backward
    pass touches one row of Â instead of the whole graph.
    """
    y = labels[node]
    if y not in (0, 1):
        raise ValueError(f"node {node} has no label")
    if cache is None:
        cache = gcn_forward(params, prop)
    elif cache.token != fingerprint(params):
        raise StaleCacheError("forward cache was computed for different parameters")
    delta = (cache.probs[node] - y) * cache.inside[node]
    r = delta * params["w"] * (cache.z2[node] > 0)
    q = params["W2"] @ r
    a = prop.norm_adj
    lo, hi = a.indptr[node], a.indptr[node + 1]
    nbrs, coef = a.indices[lo:hi], a.data[lo:hi]
    dz1 = coef[:, None] * q[None, :] * (cache.z1[nbrs] > 0)
    return {
        "W1": prop.ax[nbrs].T @ dz1,
        "b1": dz1.sum(axis=0),
        "W2": np.outer(cache.p[node], r),
        "b2": r,
        "w": delta * cache.h[node],
        "c": np.asarray(delta),
    }


class Adam:
    """Adam on a dict of arrays, updated in place."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, ascend: bool = False) -> None:
        self.t += 1
        b1, b2 = self.betas
        sign = 1.0 if ascend else -1.0
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            params[k] = params[k] + sign * self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
