import numpy as np
import pytest

from fairgu.nn import (
    EPS_PROB,
    GROUPS,
    Adam,
    LossWeights,
    ModelParams,
    NonFiniteGradientError,
    Propagation,
    StaleCacheError,
    backprop,
    bce,
    clamp_sigmoid,
    flatten,
    forward_all,
    gcn_forward,
    init_params,
    per_node_loss_gradient,
    unflatten,
)
from fairgu.graph import graph_from_edges

from gradcheck import EPS, RTOL, TERM_WEIGHTS, inputs_for, worst_relative_error


@pytest.mark.parametrize("term", list(TERM_WEIGHTS))
def test_gradients_match_finite_differences(term, g8, masks8, params8, prop8):
    worst, checked = worst_relative_error(params8, inputs_for(g8, masks8, prop8), TERM_WEIGHTS[term])
    assert checked > 10
    assert worst <= RTOL


def test_zero_weights_give_zero_gradients(g8, masks8, params8, prop8):
    inputs = inputs_for(g8, masks8, prop8)
    _, grads = backprop(params8, forward_all(params8, inputs), LossWeights(0, 0, 0, 0), inputs)
    for g in GROUPS:
        for v in grads[g].values():
            assert not np.any(v)


def test_covariance_gradient_vanishes_for_constant_prediction(g8, masks8, params8, prop8):
    p = params8.copy()
    p.classifier = {k: np.zeros_like(v) for k, v in p.classifier.items()}
    inputs = inputs_for(g8, masks8, prop8)
    _, grads = backprop(p, forward_all(p, inputs), LossWeights(0, 0, 1, 0), inputs)
    for g in GROUPS:
        for v in grads[g].values():
            assert not np.any(v)


def test_stale_cache_rejected(g8, masks8, params8, prop8):
    inputs = inputs_for(g8, masks8, prop8)
    cache = forward_all(params8, inputs)
    moved = params8.copy()
    moved.classifier["w"] = moved.classifier["w"] + 1.0
    with pytest.raises(StaleCacheError):
        backprop(moved, cache, LossWeights(), inputs)


def test_nonfinite_gradient_names_term(g8, masks8, params8, prop8):
    inputs = inputs_for(g8, masks8, prop8)
    inputs.labels = inputs.labels.copy()
    inputs.labels[masks8.train_ids[0]] = np.nan
    cache = forward_all(params8, inputs)
    with pytest.raises(NonFiniteGradientError) as err:
        backprop(params8, cache, LossWeights(1, 0, 0, 0), inputs)
    assert err.value.term == "classification"


def test_forward_zero_weights_half(prop8):
    p = init_params(4, hidden=3, seed=0).classifier
    p = {k: np.zeros_like(v) for k, v in p.items()}
    np.testing.assert_array_equal(gcn_forward(p, prop8).probs, np.full(8, 0.5))


def test_forward_hand_example():
    g = graph_from_edges([], np.array([[1.0, 0.0]]))
    p = {"W1": np.eye(2), "b1": np.zeros(2), "W2": np.eye(2), "b2": np.zeros(2),
         "w": np.array([1.0, 0.0]), "c": np.zeros(())}
    assert gcn_forward(p, Propagation.from_graph(g)).probs[0] == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-12)


def test_forward_shapes_and_purity(params8, prop8):
    a = gcn_forward(params8.classifier, prop8)
    b = gcn_forward(params8.classifier, prop8)
    assert a.h.shape == (8, 3) and a.probs.shape == (8,)
    np.testing.assert_array_equal(a.probs, b.probs)
    assert np.all((a.probs > 0) & (a.probs < 1))


def test_forward_shape_mismatch(params8):
    g = graph_from_edges([], np.zeros((2, 5)))
    with pytest.raises(ValueError):
        gcn_forward(params8.classifier, Propagation.from_graph(g))


def test_clamp_keeps_bce_finite():
    p, inside = clamp_sigmoid(np.array([-1e4, 0.0, 1e4]))
    assert p[0] == EPS_PROB and p[2] == 1 - EPS_PROB
    assert inside.tolist() == [False, True, False]
    assert np.all(np.isfinite(bce(p, np.array([1.0, 0.0, 0.0]))))


def _node_loss(theta, prop, labels, v):
    p = np.clip(gcn_forward(theta, prop).probs[v], EPS_PROB, 1 - EPS_PROB)
    return float(bce(p, labels[v]))


@pytest.mark.parametrize("node", [0, 3, 7])
def test_per_node_gradient_finite_differences(node, g8, params8, prop8):
    theta = params8.classifier
    labels = g8.labels.astype(np.float64)
    grad = per_node_loss_gradient(theta, prop8, g8.labels, node)
    for key, value in theta.items():
        for idx in np.ndindex(np.shape(value)):
            plus = {k: v.copy() for k, v in theta.items()}
            minus = {k: v.copy() for k, v in theta.items()}
            plus[key][idx] += EPS
            minus[key][idx] -= EPS
            num = (_node_loss(plus, prop8, labels, node) - _node_loss(minus, prop8, labels, node)) / (2 * EPS)
            ana = np.asarray(grad[key])[idx]
            scale = max(abs(num), abs(ana))
            if scale >= 1e-8:
                assert abs(num - ana) / scale <= RTOL, (key, idx)


def test_per_node_gradient_equals_full_backprop(g8, masks8, params8, prop8):
    inputs = inputs_for(g8, masks8, prop8)
    for v in range(8):
        inputs.label_ids = np.array([v])
        _, full = backprop(params8, forward_all(params8, inputs), LossWeights(1, 0, 0, 0), inputs)
        local = per_node_loss_gradient(params8.classifier, prop8, g8.labels, v)
        for k in local:
            np.testing.assert_allclose(local[k], full["classifier"][k], rtol=1e-12, atol=1e-15)


def test_per_node_gradient_deterministic(g8, params8, prop8):
    a = per_node_loss_gradient(params8.classifier, prop8, g8.labels, 2)
    b = per_node_loss_gradient(params8.classifier, prop8, g8.labels, 2)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_per_node_gradient_vanishes_at_confident_fit(g8, params8, prop8):
    theta = {k: v.copy() for k, v in params8.classifier.items()}
    theta["c"] = np.asarray(100.0)  # every node predicted 1 with saturating confidence
    node = int(np.flatnonzero(g8.labels == 1)[0])
    grad = per_node_loss_gradient(theta, prop8, g8.labels, node)
    assert np.sqrt(sum(float(np.sum(v * v)) for v in grad.values())) < 1e-6


def test_per_node_gradient_rejects_unlabeled(params8):
    g = graph_from_edges([(0, 1)], np.ones((2, 4)), labels=[1, -1])
    with pytest.raises(ValueError, match="no label"):
        per_node_loss_gradient(params8.classifier, Propagation.from_graph(g), g.labels, 1)


def test_params_check_and_flatten_roundtrip(params8):
    params8.check()
    flat = flatten(params8.classifier)
    back = unflatten(flat, params8.classifier)
    for k in back:
        np.testing.assert_array_equal(back[k], params8.classifier[k])
    bad = params8.copy()
    bad.classifier["W1"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        bad.check()


def test_init_is_seeded():
    a, b, c = init_params(4, 3, seed=1), init_params(4, 3, seed=1), init_params(4, 3, seed=2)
    np.testing.assert_array_equal(a.classifier["W1"], b.classifier["W1"])
    assert not np.array_equal(a.classifier["W1"], c.classifier["W1"])
    assert isinstance(a, ModelParams)


def test_adam_descends_a_quadratic():
    params = {"x": np.array([3.0, -2.0])}
    opt = Adam(params, lr=0.1)
    for _ in range(300):
        opt.step(params, {"x": 2 * params["x"]})
    assert np.all(np.abs(params["x"]) < 1e-2)
    opt.step(params, {"x": np.array([1.0, 1.0])}, ascend=True)
