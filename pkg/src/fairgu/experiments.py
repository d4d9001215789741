"""Experiment configuration, end-to-end runs, aggregation and report files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import ingest_dataset
from .estimator import train_estimator
from .fair_train import FairnessHyperparams, train_fair_gnn, train_plain_gcn
from .graph import Graph, generate_synthetic_biased_graph, split_dataset
from .metrics import evaluate_model, fit_shadow_attack, mia_auc
from .nn import Propagation
from .unlearn import UnlearnRequest, apply_unlearning, compute_importance

log = logging.getLogger(__name__)

REPORT_SCHEMA = "fairgu.report/1"
VARIANTS = ("full", "no_sae", "no_fc")
METRICS = (
    "pre_accuracy", "pre_delta_sp", "pre_delta_eo",
    "post_accuracy", "post_delta_sp", "post_delta_eo",
    "mia_forget_pre", "mia_forget_post", "mia_train_pre", "mia_train_post",
    "n_selected",
)


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every field is a config-file key."""

    dataset: str = "synthetic"
    binarize_labels: bool = False
    synthetic_nodes: int = 2000
    synthetic_features: int = 8
    synthetic_homophily: float = 0.8
    synthetic_bias: float = 0.8
    synthetic_degree: float = 4.0
    synthetic_sensitive_noise: float = 1.0
    synthetic_label_signal: float = 2.0
    synthetic_seed: int = 0

    train_fraction: float = 0.8
    forget_fraction: float = 0.05
    sensitive_known_fraction: float = 0.5
    val_fraction: float = 0.0

    hidden: int = 128
    estimator_hidden: int = 128
    estimator_epochs: int = 200
    estimator_lr: float = 1e-3
    epochs: int = 1000
    lr: float = 1e-3
    adversary_lr: float = 1e-3
    adversary_steps: int = 1
    alpha: float = 0.01
    beta: float = 1.0
    freeze_estimator: bool = False
    fair_scope: str = "all"
    patience: int = 0

    gamma: float = 1.0
    lam: float = 1.0

    shadow_epochs: int = 0  # 0 means same as ``epochs``
    shadow_models: int = 1
    repeats: int = 10
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("gamma", "lam"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "estimator_epochs", "hidden", "estimator_hidden", "shadow_models"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def hyperparams(self) -> FairnessHyperparams:
        no_fc = self.variant == "no_fc"
        return FairnessHyperparams(
            alpha=0.0 if no_fc else self.alpha,
            beta=0.0 if no_fc else self.beta,
            epochs=self.epochs,
            adversary_steps_per_epoch=self.adversary_steps,
            lr=self.lr,
            estimator_lr=self.estimator_lr,
            adversary_lr=self.adversary_lr,
            hidden=self.hidden,
            est_hidden=self.estimator_hidden,
            train_adversary=not no_fc,
            freeze_estimator=self.freeze_estimator,
            fair_scope=self.fair_scope,
            patience=self.patience,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(kind, raw: str):
    raw = raw.strip()
    if kind in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
# accepted spelling in files / on the command line
_ALIASES = {"lambda": "lam"}


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` or ``{"key": "value"}`` to typed field values."""
    items = pairs.items() if isinstance(pairs, dict) else (p.split("=", 1) for p in pairs)
    out = {}
    for key, value in items:
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = value if not isinstance(value, str) else _coerce(_FIELD_TYPES[key], value)
    return out


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = text.split("=", 1)
        pairs[key.strip()] = value.strip()
    try:
        return parse_overrides(pairs)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Defaults, then the config file, then ``overrides`` (highest precedence)."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        values.update(parse_overrides(overrides))
    return ExperimentConfig(**values)


def load_graph(config: ExperimentConfig) -> Graph:
    if config.dataset == "synthetic":
        return generate_synthetic_biased_graph(
            config.synthetic_seed,
            config.synthetic_nodes,
            config.synthetic_features,
            config.synthetic_homophily,
            config.synthetic_bias,
            avg_degree=config.synthetic_degree,
            sensitive_noise=config.synthetic_sensitive_noise,
            label_signal=config.synthetic_label_signal,
        )
    edge_path, node_path = dataset_paths(config.dataset)
    return ingest_dataset(edge_path, node_path, config.binarize_labels)


def dataset_paths(spec: str):
    """``DIR`` (holding edges.txt and nodes.csv) or ``EDGES,NODES``."""
    if "," in spec:
        edge_path, node_path = (Path(p.strip()) for p in spec.split(",", 1))
    else:
        edge_path, node_path = Path(spec) / "edges.txt", Path(spec) / "nodes.csv"
    for p in (edge_path, node_path):
        if not p.exists():
            raise FileNotFoundError(p)
    return edge_path, node_path


# ---------------------------------------------------------------------------
# running


@dataclass
class SeedRun:
    """Artifacts of one seed, kept in memory for plotting and CLI use."""

    seed: int
    masks: object
    model: object
    unlearned: object
    importance_train: object


@dataclass
class ReportBundle:
    variant: str
    config: dict
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    partial: bool = False
    timings: dict = field(default_factory=dict)
    runs: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "config": self.config,
            "records": self.records,
            "aggregates": self.aggregates,
            "partial": self.partial,
        }


def aggregate(records: list) -> dict:
    """Mean and population std of every metric over successful seeds."""
    ok = [r for r in records if r.get("error") is None]
    out = {}
    for key in METRICS:
        vals = np.array([r[key] for r in ok if r.get(key) is not None], dtype=np.float64)
        if vals.size == 0:
            out[key] = {"mean": None, "std": None, "n": 0}
        else:
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}
    return out


def train_model(graph: Graph, masks, config: ExperimentConfig, seed: int, prop: Propagation):
    hp = config.hyperparams()
    estimator_init = None
    if config.variant == "full":
        est = train_estimator(graph, masks, config.estimator_epochs, config.estimator_lr,
                              config.estimator_hidden, seed, prop)
        estimator_init = est.params
    return train_fair_gnn(graph, masks, estimator_init, hp, seed, prop)


def make_split(graph: Graph, config: ExperimentConfig, seed: int):
    return split_dataset(graph, config.train_fraction, config.forget_fraction,
                         config.sensitive_known_fraction, seed, config.val_fraction)


def membership_aucs(graph: Graph, config: ExperimentConfig, masks, seed: int, thetas: dict,
                    prop: Propagation | None = None) -> dict:
    """Attack AUC of each named θ_G against forget-set and retained-train members.

    Nonmembers are the test nodes. All models are queried on ``graph`` (the
    graph before deletion) so that forgotten nodes can still be scored. One
    attack model, fit on shadow classifiers trained over labeled nodes outside
    the forget and test sets, is shared by every query of a seed.
    """
    prop = prop or Propagation.from_graph(graph)
    shadow_hp = dataclasses.replace(config.hyperparams(), epochs=config.shadow_epochs or config.epochs)
    pool = np.setdiff1d(graph.labeled(), np.union1d(masks.forget_ids, masks.test_ids))
    attack = fit_shadow_attack(
        graph, pool,
        lambda ids, k: train_plain_gcn(graph, masks, shadow_hp, seed + 7919 * (k + 1), prop, train_ids=ids),
        seed, prop, config.shadow_models,
    )
    out = {}
    for tag, members in (("forget", masks.forget_ids), ("train", masks.retain_ids)):
        for when, th in thetas.items():
            out[f"mia_{tag}_{when}"] = mia_auc(th, graph, members, masks.test_ids, attack, prop).auc
    return out


def run_seed(graph: Graph, config: ExperimentConfig, seed: int, prop: Propagation | None = None):
    """Split, train, unlearn and evaluate once; returns (record, SeedRun)."""
    prop = prop or Propagation.from_graph(graph)
    masks = make_split(graph, config, seed)
    model = train_model(graph, masks, config, seed, prop)
    theta = model.params.classifier
    pre = evaluate_model(theta, graph, masks.test_ids, prop)

    i_train = compute_importance(theta, prop, graph.labels, masks.train_ids, "train")
    request = UnlearnRequest(tuple(graph.ids_of(masks.forget_ids)), config.gamma, config.lam)
    result = apply_unlearning(model, graph, masks, i_train, request, prop)
    g_un = result.graph
    test_un = g_un.index_of(graph.ids_of(masks.test_ids))
    post = evaluate_model(result.model.params.classifier, g_un, test_un)

    record = {"seed": seed, "error": None}
    for tag, rep in (("pre", pre), ("post", post)):
        record[f"{tag}_accuracy"] = rep.accuracy
        record[f"{tag}_delta_sp"] = rep.delta_sp
        record[f"{tag}_delta_eo"] = rep.delta_eo
    record["n_selected"] = int(result.plan.selected.size)

    if masks.forget_ids.size:
        thetas = {"pre": theta, "post": result.model.params.classifier}
        record.update(membership_aucs(graph, config, masks, seed, thetas, prop))
    else:
        for key in ("mia_forget_pre", "mia_forget_post", "mia_train_pre", "mia_train_post"):
            record[key] = None
    return record, SeedRun(seed, masks, model, result, i_train)


def run_experiment(config: ExperimentConfig, graph: Graph | None = None, keep_runs: bool = False) -> ReportBundle:
    graph = graph if graph is not None else load_graph(config)
    prop = Propagation.from_graph(graph)
    bundle = ReportBundle(config.variant, config.to_dict())
    for r in range(config.repeats):
        seed = config.seed + r
        start = time.perf_counter()
        try:
            record, run = run_seed(graph, config, seed, prop)
            if keep_runs:
                bundle.runs.append(run)
        except Exception as exc:  # recorded per seed, the remaining seeds still run
            log.exception("seed %d failed", seed)
            record = {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
            bundle.partial = True
        bundle.timings[str(seed)] = time.perf_counter() - start
        bundle.records.append(record)
        log.info("variant=%s seed=%d %s", config.variant, seed,
                 {k: round(v, 4) for k, v in record.items() if isinstance(v, float)})
    bundle.aggregates = aggregate(bundle.records)
    return bundle


# ---------------------------------------------------------------------------
# report files


def _bundles(bundles):
    return [bundles] if isinstance(bundles, ReportBundle) else list(bundles)


def _pct(stat) -> str:
    if stat["mean"] is None:
        return "n/a"
    return f"{100 * stat['mean']:.2f} ± {100 * stat['std']:.2f}"


def render_json(bundles) -> str:
    doc = {"schema": REPORT_SCHEMA, "bundles": [b.to_dict() for b in _bundles(bundles)]}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


CSV_COLUMNS = ("variant", "seed", "error") + METRICS


def render_csv(bundles) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {REPORT_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for b in _bundles(bundles):
        for rec in b.records:
            row = [b.variant, rec["seed"], rec.get("error") or ""]
            for key in METRICS:
                v = rec.get(key)
                row.append("" if v is None else repr(v))
            writer.writerow(row)
    return buf.getvalue()


def read_csv_report(path) -> dict:
    """Per-variant record lists from a CSV report (inverse of :func:`render_csv`)."""
    out = {}
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {REPORT_SCHEMA}":
            raise ValueError(f"unexpected report header {first!r}")
        for row in csv.DictReader(fh):
            rec = {"seed": int(row["seed"]), "error": row["error"] or None}
            for key in METRICS:
                rec[key] = None if row[key] == "" else (int(row[key]) if key == "n_selected" else float(row[key]))
            out.setdefault(row["variant"], []).append(rec)
    return out


def render_markdown(bundles) -> str:
    bundles = _bundles(bundles)
    lines = [f"<!-- schema: {REPORT_SCHEMA} -->", "", "After unlearning (test nodes on the reduced graph):", ""]
    lines.append("| Variant | ACC (%) ↑ | ΔSP (%) ↓ | ΔEO (%) ↓ | MIA AUC forget (%) |")
    lines.append("|---|---|---|---|---|")
    for b in bundles:
        a = b.aggregates
        lines.append(f"| {b.variant} | {_pct(a['post_accuracy'])} | {_pct(a['post_delta_sp'])} | "
                     f"{_pct(a['post_delta_eo'])} | {_pct(a['mia_forget_post'])} |")
    lines += ["", "Before unlearning:", ""]
    lines.append("| Variant | ACC (%) ↑ | ΔSP (%) ↓ | ΔEO (%) ↓ | MIA AUC forget (%) |")
    lines.append("|---|---|---|---|---|")
    for b in bundles:
        a = b.aggregates
        lines.append(f"| {b.variant} | {_pct(a['pre_accuracy'])} | {_pct(a['pre_delta_sp'])} | "
                     f"{_pct(a['pre_delta_eo'])} | {_pct(a['mia_forget_pre'])} |")
    partial = [b.variant for b in bundles if b.partial]
    if partial:
        lines += ["", f"Partial results (some seeds failed): {', '.join(partial)}"]
    return "\n".join(lines) + "\n"


_RENDERERS = {"json": render_json, "csv": render_csv, "markdown": render_markdown, "md": render_markdown}


def emit_report(bundles, path, fmt: str = "json") -> Path:
    if fmt not in _RENDERERS:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    text = _RENDERERS[fmt](bundles)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def per_seed_table(bundle: ReportBundle) -> str:
    """Plain-text per-seed table used for diagnosing out-of-tolerance runs."""
    cols = ("seed",) + METRICS
    rows = [" ".join(f"{c:>16}" for c in cols)]
    for rec in bundle.records:
        cells = []
        for c in cols:
            v = rec.get(c)
            cells.append(f"{v:>16.4f}" if isinstance(v, float) and math.isfinite(v) else f"{str(v):>16}")
        rows.append(" ".join(cells))
        if rec.get("error"):
            rows.append(f"    error: {rec['error']}")
    return "\n".join(rows)
