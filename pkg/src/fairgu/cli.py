"""Command line entry point: ``fairgu train|unlearn|evaluate|reproduce``.

Configuration precedence, lowest to highest: built-in defaults, the
``--config`` file, ``--set KEY=VALUE`` pairs, then the dedicated flags
(``--seed``, ``--variant``, ``--dataset``, ``--repeats``). ``unlearn`` and
``evaluate`` start from the config saved in the checkpoint instead of the
defaults.

Log verbosity comes from ``FAIRGU_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...;
default INFO). Results are printed between ``----- fairgu <command> -----``
delimiter lines on stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .experiments import (
    VARIANTS,
    emit_report,
    load_config,
    load_graph,
    make_split,
    membership_aucs,
    read_config_file,
    render_markdown,
    run_experiment,
    train_model,
)
from .fair_train import TrainedModel, write_training_log
from .graph import delete_nodes
from .metrics import evaluate_model
from .nn import Propagation
from .plotting import plot_importance, plot_report, plot_training_curves
from .unlearn import UnlearnRequest, apply_unlearning, compute_importance

log = logging.getLogger("fairgu")

LOG_ENV = "FAIRGU_LOG_LEVEL"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _emit(command: str, lines) -> None:
    print(f"----- fairgu {command} -----")
    for line in lines:
        print(line)
    print(f"----- end {command} -----")


def _config(args, variant=None):
    overrides = dict(kv.split("=", 1) for kv in args.set)
    for flag in ("seed", "dataset", "repeats"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = str(value)
    if variant is not None:
        overrides["variant"] = variant
    return load_config(args.config, overrides)


def _checkpoint_config(args, ckpt):
    """Config stored in the checkpoint, then ``--config``, ``--set`` and ``--dataset``."""
    values = {k: str(v) for k, v in ckpt.config.items()}
    if args.config:
        values.update({k: str(v) for k, v in read_config_file(args.config).items()})
    values.update(dict(kv.split("=", 1) for kv in args.set))
    if args.dataset is not None:
        values["dataset"] = args.dataset
    if args.variant is not None and args.variant != values.get("variant"):
        log.warning("--variant is fixed by the checkpoint (%s); ignoring %r", values.get("variant"), args.variant)
        values["variant"] = ckpt.config.get("variant", "full")
    return load_config(None, values)


def _variants(spec: str | None) -> list:
    names = [v.strip() for v in (spec or "full").split(",") if v.strip()]
    bad = [v for v in names if v not in VARIANTS]
    if bad:
        raise SystemExit(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
    return names


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metric_lines(prefix: str, report) -> list:
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    return [f"{prefix}accuracy={fmt(report.accuracy)}", f"{prefix}delta_sp={fmt(report.delta_sp)}",
            f"{prefix}delta_eo={fmt(report.delta_eo)}"]


def cmd_train(args) -> int:
    config = _config(args, _variants(args.variant)[0] if args.variant else None)
    variant = config.variant
    out = _out_dir(args.out)
    graph = load_graph(config)
    prop = Propagation.from_graph(graph)
    masks = make_split(graph, config, config.seed)
    model = train_model(graph, masks, config, config.seed, prop)
    theta = model.params.classifier
    i_train = compute_importance(theta, prop, graph.labels, masks.train_ids, "train")

    ckpt = out / "model.npz"
    save_checkpoint(ckpt, model.params, i_train, masks, graph.node_ids, config=config.to_dict())
    write_training_log(model, out / "training_log.csv")
    plot_training_curves(model.training_log, out / "training_curves.png")
    report = evaluate_model(theta, graph, masks.test_ids, prop)
    _emit("train", [f"variant={variant}", f"seed={config.seed}", f"checkpoint={ckpt}",
                    f"train_nodes={masks.train_ids.size}", f"forget_nodes={masks.forget_ids.size}"]
          + _metric_lines("test_", report))
    return 0


def _resolve_ids(graph, text_ids) -> tuple:
    """Map ids read back as text onto the graph's own node ids."""
    by_text = {str(v): v for v in graph.node_ids}
    missing = [t for t in text_ids if t not in by_text]
    if missing:
        raise KeyError(f"unknown node id {missing[0]!r}")
    return tuple(by_text[t] for t in text_ids)


def _read_forget_ids(path) -> tuple:
    ids = []
    for line in Path(path).read_text().splitlines():
        text = line.split("#", 1)[0].strip()
        if text:
            ids.append(text)
    return tuple(ids)


def cmd_unlearn(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config is None or ckpt.masks is None or "train" not in ckpt.importance:
        raise SystemExit(f"{args.checkpoint}: not a training checkpoint (needs config, split and train importance)")
    if ckpt.deleted_ids:
        raise SystemExit(f"{args.checkpoint}: model was already unlearned")
    config = _checkpoint_config(args, ckpt)
    out = _out_dir(args.out)
    graph = load_graph(config)
    if tuple(str(v) for v in graph.node_ids) != ckpt.node_ids:
        raise SystemExit("graph node ids differ from the checkpoint; was the dataset changed?")
    prop = Propagation.from_graph(graph)
    masks = ckpt.masks
    forget = _resolve_ids(graph, _read_forget_ids(args.forget)) if args.forget else tuple(graph.ids_of(masks.forget_ids))
    masks = masks.with_forget(graph.index_of(forget))

    model = TrainedModel(ckpt.params, [], ckpt.params.seed)
    request = UnlearnRequest(forget, config.gamma, config.lam)
    result = apply_unlearning(model, graph, masks, ckpt.importance["train"], request, prop)
    importance = [ckpt.importance["train"]]
    if result.importance_forget is not None:
        importance.append(result.importance_forget)
        plot_importance(ckpt.importance["train"], result.importance_forget, result.plan.selected,
                        config.gamma, out / "importance.png")
    target = out / "unlearned.npz"
    save_checkpoint(target, result.model.params, importance, masks, graph.node_ids, forget, config.to_dict())
    _emit("unlearn", [f"checkpoint={target}", f"forgotten_nodes={len(forget)}",
                      f"dampened_parameters={result.plan.selected.size}",
                      f"gamma={config.gamma:g}", f"lambda={config.lam:g}"])
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config is None or ckpt.masks is None:
        raise SystemExit(f"{args.checkpoint}: checkpoint lacks config or split")
    config = _checkpoint_config(args, ckpt)
    out = _out_dir(args.out)
    graph = load_graph(config)
    prop = Propagation.from_graph(graph)
    masks = ckpt.masks
    theta = ckpt.params.classifier

    eval_graph = delete_nodes(graph, _resolve_ids(graph, ckpt.deleted_ids))
    test = eval_graph.index_of(graph.ids_of(masks.test_ids))
    report = evaluate_model(theta, eval_graph, test)
    record = {"checkpoint": str(args.checkpoint), "unlearned": bool(ckpt.deleted_ids), **report.to_record()}
    lines = [f"unlearned={record['unlearned']}"] + _metric_lines("test_", report)
    if masks.forget_ids.size and not args.no_mia:
        seed = ckpt.params.seed if args.seed is None else args.seed
        aucs = membership_aucs(graph, config, masks, seed, {"model": theta}, prop)
        record.update(aucs)
        lines += [f"{k}={v:.4f}" for k, v in sorted(aucs.items())]
    path = out / "evaluation.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    _emit("evaluate", lines + [f"report={path}"])
    return 0


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    bundles, timings = [], {}
    variants = _variants(args.variant) if args.variant else [_config(args).variant]
    for variant in variants:
        config = _config(args, variant)
        bundle = run_experiment(config)
        bundles.append(bundle)
        timings[variant] = {k: round(v, 3) for k, v in bundle.timings.items()}
    paths = [emit_report(bundles, out / "report.json", "json"),
             emit_report(bundles, out / "report.csv", "csv"),
             emit_report(bundles, out / "report.md", "markdown")]
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    paths.append(plot_report(bundles, out / "report.png"))
    lines = render_markdown(bundles).splitlines() + [""] + [f"wrote {p}" for p in paths]
    _emit("reproduce", lines)
    return 1 if any(b.partial for b in bundles) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairgu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant_help="one of " + ", ".join(VARIANTS)):
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; repeatable")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--dataset", help="'synthetic', a directory with edges.txt/nodes.csv, or EDGES,NODES")
        p.add_argument("--variant", default=None, help=variant_help)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("unlearn", help="remove nodes from a trained checkpoint")
    common(p, "ignored; the checkpoint fixes the variant")
    p.add_argument("checkpoint", help="checkpoint written by 'fairgu train'")
    p.add_argument("--forget", help="file with one node id per line (default: the forget split)")
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("evaluate", help="fairness metrics and attack AUC of a checkpoint")
    common(p, "ignored; the checkpoint fixes the variant")
    p.add_argument("checkpoint")
    p.add_argument("--no-mia", action="store_true", help="skip the membership attack")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="repeated-seed experiment with report files and figures")
    common(p, "comma-separated variants, e.g. full,no_fc (default: full)")
    p.add_argument("--repeats", type=int, help="number of seeds")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
