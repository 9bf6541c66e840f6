"""Tests for the line-oriented network text format."""

from pathlib import Path

import numpy as np
import pytest

from bnmr.bayesnet import DagStructure, append_prediction_node, fit_cpts
from bnmr.errors import ParseError
from bnmr.network_format import format_network, parse_network, read_network, write_network
from tests.conftest import chain_network, random_network

CHAIN_TEXT = """\
nodes: A B C
parents A:
parents B: A
parents C: B
cpt A: 0.5
cpt B: 0.10000000000000001 0.90000000000000002
cpt C: 0.10000000000000001 0.90000000000000002
"""


def test_format_chain() -> None:
    """Entries use 17 significant digits and parents are listed by name."""
    assert format_network(chain_network()) == CHAIN_TEXT


def test_round_trip_is_lossless() -> None:
    """Random networks with awkward floats survive a round trip exactly."""
    rng = np.random.default_rng(17)
    for n_nodes in range(1, 7):
        bn = append_prediction_node(random_network(rng, n_nodes))
        assert parse_network(format_network(bn).splitlines()) == bn


def test_prediction_line_marks_prediction_node() -> None:
    """The prediction node is written and read back by name."""
    text = format_network(append_prediction_node(chain_network()))
    assert "prediction: prediction\n" in text
    assert parse_network(text.splitlines()).prediction_node == 3


def test_networks_without_prediction_node_have_no_prediction_line() -> None:
    """Attribute-only networks omit the prediction line."""
    assert "prediction" not in format_network(chain_network())


def test_unobserved_entries_survive_a_round_trip() -> None:
    """Configurations unseen while fitting stay flagged after writing and reading."""
    dag = DagStructure(node_names=("A", "B"), parent_sets=((), (0,)))
    bn = fit_cpts(dag, np.array([[1, 0], [1, 1], [1, 1]]), pseudocount=0.0)
    assert bn.cpts[1].unobserved == (0,)
    text = format_network(bn)
    assert text.endswith("cpt B: 0.5 0.66666666666666663\nunobserved B: 0\n")
    parsed = parse_network(text.splitlines())
    assert parsed == bn
    assert parsed.cpts[1].unobserved == (0,)


def test_comments_and_blank_lines_are_ignored() -> None:
    """Lines starting with # and empty lines carry no content."""
    text = "# chain\n\n" + CHAIN_TEXT
    assert parse_network(text.splitlines()) == chain_network()


def test_file_round_trip(tmp_path: Path) -> None:
    """Writing creates missing directories; reading gives the same network."""
    path = tmp_path / "nested" / "bn.txt"
    bn = append_prediction_node(chain_network())
    write_network(bn, path)
    assert read_network(path) == bn


@pytest.mark.parametrize(
    ("text", "line", "detail"),
    (
        ("parents A:\n", 1, "'nodes' line must come first"),
        ("nodes: A\nnodes: A\n", 2, "duplicate 'nodes' line"),
        ("nodes: A\nparents A:\ncpt A: half\n", 3, "CPT values must be numbers"),
        ("nodes: A\nparents A: Z\n", 2, "unknown parent nodes"),
        ("nodes: A\nweights A: 1\n", 2, "unknown key"),
        ("nodes: A\nno separator\n", 2, "expected '<key>: <values>'"),
        ("nodes: A\nparents A:\n", 0, "missing 'parents'/'cpt' lines"),
        ("nodes: A\nparents A:\ncpt A: 0.5\nunobserved A: x\n", 4, "unobserved entries must be CPT indices"),
        ("nodes: A\nparents A:\ncpt A: 0.5\nunobserved A: 3\n", 0, "invalid network"),
        ("nodes: A\nparents A:\ncpt A: 0.5 0.5\n", 0, "invalid network"),
        ("nodes: A B\nparents A: B\nparents B: A\ncpt A: 0.5 0.5\ncpt B: 0.5 0.5\n", 0, "invalid network"),
        ("", 0, "missing 'nodes' line"),
    ),
)
def test_parse_errors_carry_line_numbers(text: str, line: int, detail: str) -> None:
    """Malformed documents raise ParseError naming the source and line."""
    with pytest.raises(ParseError, match=detail) as caught:
        parse_network(text.splitlines(), source="bn.txt")
    assert caught.value.line == line
    assert str(caught.value).startswith(f"bn.txt:{line}:")
