"""Reading graphs from an edge list plus a node table.

Edge list: one whitespace-separated pair of node ids per line; undirected,
duplicate edges and self-loops are ignored, blank lines and ``#`` comments
are skipped.

Node table: comma-separated ``node_id,label,sensitive,f1,...,fd``. An empty
label or sensitive field means missing. A first row starting with
``node_id`` is treated as a header.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .graph import MISSING, Graph, graph_from_edges

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = str(path), line


def _binary(field: str, path, line: int, what: str, binarize: bool) -> int:
    field = field.strip()
    if field == "":
        return MISSING
    try:
        value = int(float(field))
    except ValueError:
        raise DatasetFormatError(path, line, f"{what} {field!r} is not an integer") from None
    if value in (0, 1):
        return value
    if binarize and value > 1:
        return 1
    raise DatasetFormatError(path, line, f"{what} must be 0 or 1, got {value}")


def read_node_table(path, binarize_labels: bool = False):
    ids, labels, sens, rows = [], [], [], []
    seen = {}
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "node_id":
                continue
            if len(row) < 3:
                raise DatasetFormatError(path, lineno, "expected node_id,label,sensitive,features...")
            node = row[0].strip()
            if node in seen:
                raise DatasetFormatError(path, lineno, f"duplicate node id {node!r} (first on line {seen[node]})")
            seen[node] = lineno
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetFormatError(path, lineno, f"expected {width} fields, got {len(row)}")
            try:
                feats = [float(c) for c in row[3:]]
            except ValueError as exc:
                raise DatasetFormatError(path, lineno, f"bad feature value: {exc}") from None
            ids.append(node)
            labels.append(_binary(row[1], path, lineno, "label", binarize_labels))
            sens.append(_binary(row[2], path, lineno, "sensitive", False))
            rows.append(feats)
    d = (width or 3) - 3
    features = np.asarray(rows, dtype=np.float64).reshape(len(ids), d)
    return ids, np.asarray(labels, dtype=np.int8), np.asarray(sens, dtype=np.int8), features


def read_edge_list(path, index: dict) -> np.ndarray:
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise DatasetFormatError(path, lineno, f"expected two node ids, got {len(parts)} fields")
            pair = []
            for node in parts:
                if node not in index:
                    raise DatasetFormatError(path, lineno, f"edge references unknown node id {node!r}")
                pair.append(index[node])
            edges.append(pair)
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def ingest_dataset(edge_path, node_path, binarize_labels: bool = False) -> Graph:
    ids, labels, sens, features = read_node_table(node_path, binarize_labels)
    index = {v: i for i, v in enumerate(ids)}
    edges = read_edge_list(edge_path, index)
    graph = graph_from_edges(edges, features, labels, sens, ids)
    log.info("ingested %s: %d nodes, %d edges, %d features",
             Path(node_path).name, graph.num_nodes, graph.num_edges, graph.num_features)
    return graph


def write_dataset(graph: Graph, edge_path, node_path) -> None:
    """Inverse of :func:`ingest_dataset` (features written with ``repr``)."""
    rows, cols = graph.adjacency.nonzero()
    with open(edge_path, "w") as fh:
        for i, j in zip(rows, cols):
            if i < j:
                fh.write(f"{graph.node_ids[i]} {graph.node_ids[j]}\n")

    def cell(values, i):
        if values is None or values[i] == MISSING:
            return ""
        return str(int(values[i]))

    with open(node_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "label", "sensitive"] + [f"f{k}" for k in range(graph.num_features)])
        for i, node in enumerate(graph.node_ids):
            writer.writerow([node, cell(graph.labels, i), cell(graph.sensitive, i)]
                            + [repr(float(x)) for x in graph.features[i]])
