import numpy as np
import pytest

from fairgu.datasets import DatasetFormatError, ingest_dataset, read_node_table, write_dataset
from fairgu.graph import MISSING, generate_synthetic_biased_graph


def _write(tmp_path, edges, nodes):
    e, n = tmp_path / "edges.txt", tmp_path / "nodes.csv"
    e.write_text(edges)
    n.write_text(nodes)
    return e, n


def test_write_then_ingest_roundtrip(tmp_path):
    g = generate_synthetic_biased_graph(0, 50, 3)
    g.labels[3] = MISSING
    e, n = tmp_path / "edges.txt", tmp_path / "nodes.csv"
    write_dataset(g, e, n)
    back = ingest_dataset(e, n)
    assert back.node_ids == tuple(str(v) for v in g.node_ids)
    np.testing.assert_array_equal(back.features, g.features)
    np.testing.assert_array_equal(back.labels, g.labels)
    np.testing.assert_array_equal(back.sensitive, g.sensitive)
    assert (back.adjacency != g.adjacency).nnz == 0


def test_empty_edge_file(tmp_path):
    e, n = _write(tmp_path, "", "a,1,0,0.5\nb,0,1,1.5\nc,1,1,2.5\n")
    g = ingest_dataset(e, n)
    assert g.num_nodes == 3 and g.num_edges == 0
    assert g.node_ids == ("a", "b", "c")


def test_comments_duplicates_and_self_loops(tmp_path):
    e, n = _write(tmp_path, "# header\na b\nb a\n\nc c\n", "node_id,label,sensitive,f0\na,1,0,1\nb,0,1,2\nc,,,3\n")
    g = ingest_dataset(e, n)
    assert g.num_edges == 1
    assert g.labels.tolist() == [1, 0, MISSING]


def test_unknown_edge_id_reports_line(tmp_path):
    e, n = _write(tmp_path, "a b\nb z\n", "a,1,0,0\nb,0,1,0\n")
    with pytest.raises(DatasetFormatError) as err:
        ingest_dataset(e, n)
    assert err.value.line == 2 and "'z'" in str(err.value)


def test_duplicate_node_id(tmp_path):
    _, n = _write(tmp_path, "", "a,1,0,0\nb,0,1,0\na,1,1,0\n")
    with pytest.raises(DatasetFormatError, match="duplicate node id 'a'"):
        read_node_table(n)


@pytest.mark.parametrize("row, message", [
    ("c,1,0", "expected 4 fields"),
    ("c,1,0,x", "bad feature"),
    ("c,2,0,1", "label must be 0 or 1"),
    ("c,1,q,1", "not an integer"),
])
def test_malformed_rows(tmp_path, row, message):
    _, n = _write(tmp_path, "", f"a,1,0,0\n{row}\n")
    with pytest.raises(DatasetFormatError, match=message) as err:
        read_node_table(n)
    assert err.value.line == 2


def test_binarize_labels(tmp_path):
    _, n = _write(tmp_path, "", "a,0,0,0\nb,3,1,0\n")
    _, labels, _, _ = read_node_table(n, binarize_labels=True)
    assert labels.tolist() == [0, 1]
