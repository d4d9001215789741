"""Versioned ``.npz`` container for parameters, importance and split.

Layout (all arrays stored uncompressed, float64 unless noted)::

    schema                      str   "fairgu.checkpoint/1"
    dims                        int64 [in_dim, hidden, out_dim, est_hidden]
    seed                        int64 scalar
    classifier/<key>            θ_G arrays (W1, b1, W2, b2, w, c)
    estimator/<key>             θ_E arrays (V1, e1, u, e0)
    adversary/<key>             θ_A arrays (a, a0)
    importance/<tag>/values     flattened importance (optional section)
    importance/<tag>/size       int64 scalar |D|
    split/<name>                int64 node indices (optional section)
    node_ids                    str   external ids, aligned with indices (optional)
    deleted_ids                 str   external ids removed by unlearning (optional)
    config                      str   JSON echo of the experiment config (optional)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import SplitMasks
from .nn import GROUPS, ModelParams
from .unlearn import ImportanceMap

SCHEMA = "fairgu.checkpoint/1"
_DIM_KEYS = ("in_dim", "hidden", "out_dim", "est_hidden")
_SPLIT_KEYS = ("train_ids", "test_ids", "sensitive_known_ids", "forget_ids", "val_ids")


@dataclass
class Checkpoint:
    params: ModelParams
    importance: dict = field(default_factory=dict)
    masks: SplitMasks | None = None
    node_ids: tuple | None = None
    deleted_ids: tuple = ()
    config: dict | None = None


def save_checkpoint(path, params: ModelParams, importance=(), masks: SplitMasks | None = None,
                    node_ids=None, deleted_ids=(), config: dict | None = None) -> None:
    arrays = {
        "schema": np.array(SCHEMA),
        "dims": np.array([params.dims[k] for k in _DIM_KEYS], dtype=np.int64),
        "seed": np.array(params.seed, dtype=np.int64),
    }
    for g in GROUPS:
        for key, value in params.group(g).items():
            arrays[f"{g}/{key}"] = np.asarray(value, dtype=np.float64)
    if isinstance(importance, ImportanceMap):
        importance = [importance]
    for imp in importance:
        arrays[f"importance/{imp.source_tag}/values"] = imp.values
        arrays[f"importance/{imp.source_tag}/size"] = np.array(imp.source_set_size, dtype=np.int64)
    if masks is not None:
        for key in _SPLIT_KEYS:
            arrays[f"split/{key}"] = getattr(masks, key)
    if node_ids is not None:
        arrays["node_ids"] = np.array([str(v) for v in node_ids])
    if len(deleted_ids):
        arrays["deleted_ids"] = np.array([str(v) for v in deleted_ids])
    if config is not None:
        arrays["config"] = np.array(json.dumps(config, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        schema = str(data["schema"])
        if schema != SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {schema!r}")
        groups = {g: {} for g in GROUPS}
        importance, split = {}, {}
        for name in data.files:
            head, _, rest = name.partition("/")
            if head in groups:
                groups[head][rest] = data[name].copy()
            elif head == "importance":
                tag, _, part = rest.partition("/")
                importance.setdefault(tag, {})[part] = data[name].copy()
            elif head == "split":
                split[rest] = data[name].copy()
        dims = dict(zip(_DIM_KEYS, (int(x) for x in data["dims"])))
        seed = int(data["seed"])
        node_ids = tuple(str(v) for v in data["node_ids"]) if "node_ids" in data.files else None
        deleted = tuple(str(v) for v in data["deleted_ids"]) if "deleted_ids" in data.files else ()
        config = json.loads(str(data["config"])) if "config" in data.files else None
    params = ModelParams(groups["classifier"], groups["estimator"], groups["adversary"], dims, seed)
    params.check()
    maps = {tag: ImportanceMap(v["values"], int(v["size"]), tag) for tag, v in importance.items()}
    masks = SplitMasks(**split) if split else None
    return Checkpoint(params, maps, masks, node_ids, deleted, config)
