import numpy as np
import pytest

from fairgu.checkpoint import load_checkpoint, save_checkpoint
from fairgu.nn import GROUPS, init_params
from fairgu.unlearn import ImportanceMap


def test_roundtrip_is_bit_exact(tmp_path, masks8, params8):
    rng = np.random.default_rng(0)
    imp = ImportanceMap(rng.exponential(size=10), 6, "train")
    config = {"alpha": 0.5, "dataset": "synthetic", "repeats": 3}
    path = tmp_path / "m.npz"
    save_checkpoint(path, params8, imp, masks8, node_ids=list(range(8)), deleted_ids=["1", "4"], config=config)
    ck = load_checkpoint(path)
    for g in GROUPS:
        assert set(ck.params.group(g)) == set(params8.group(g))
        for k, v in params8.group(g).items():
            np.testing.assert_array_equal(ck.params.group(g)[k], v)
            assert np.shape(ck.params.group(g)[k]) == np.shape(v)
    assert ck.params.dims == params8.dims and ck.params.seed == params8.seed
    np.testing.assert_array_equal(ck.importance["train"].values, imp.values)
    assert ck.importance["train"].source_set_size == 6
    for key in ("train_ids", "test_ids", "sensitive_known_ids", "forget_ids"):
        np.testing.assert_array_equal(getattr(ck.masks, key), getattr(masks8, key))
    assert ck.node_ids == tuple(str(i) for i in range(8))
    assert ck.deleted_ids == ("1", "4")
    assert ck.config == config


def test_minimal_checkpoint(tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(path, init_params(3, 2, seed=4))
    ck = load_checkpoint(path)
    assert ck.importance == {} and ck.masks is None and ck.node_ids is None
    assert ck.deleted_ids == () and ck.config is None


def test_schema_mismatch_rejected(tmp_path):
    path = tmp_path / "m.npz"
    np.savez(path, schema=np.array("something/9"))
    with pytest.raises(ValueError, match="schema"):
        load_checkpoint(path)
