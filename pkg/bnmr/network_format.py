"""Line-oriented text format for Bayesian networks.

Example::

    nodes: Smiling Male prediction
    prediction: prediction
    parents Smiling:
    parents Male: Smiling
    parents prediction: Smiling Male
    cpt Smiling: 0.48
    cpt Male: 0.55 0.31
    cpt prediction: 0.5 0.5 0.5 0.5

The optional ``prediction`` line names the classifier-prediction node and is
written only when the network has one. An optional ``unobserved <node>`` line
lists the CPT entries that fitting never saw (left at 0.5 under a zero
pseudocount), e.g. ``unobserved Male: 1``.

CPT entry j encodes the parent assignment in binary with the first listed
parent as the least-significant bit. Values are written with 17 significant
digits so a round trip is lossless. ``#`` starts a comment line.
"""

from collections.abc import Iterable, Mapping
from pathlib import Path

from pydantic import ValidationError

from bnmr.bayesnet import BayesianNetwork, Cpt, DagStructure
from bnmr.errors import BnmrError, ParseError

__all__ = ["format_network", "parse_network", "read_network", "write_network"]

_NODES = "nodes"
_PREDICTION = "prediction"
_PARENTS = "parents"
_CPT = "cpt"
_UNOBSERVED = "unobserved"


def _float_text(value: float) -> str:
    return format(value, ".17g")


def format_network(bn: BayesianNetwork) -> str:
    """Serialize a network to text.

    Returns:
        The document, newline-terminated.

    """
    names = bn.node_names
    lines = [f"{_NODES}: {' '.join(names)}"]
    if bn.prediction_node is not None:
        lines.append(f"{_PREDICTION}: {names[bn.prediction_node]}")
    for name, parents in zip(names, bn.structure.parent_sets, strict=True):
        lines.append(f"{_PARENTS} {name}: {' '.join(names[parent] for parent in parents)}".rstrip())
    for name, cpt in zip(names, bn.cpts, strict=True):
        lines.append(f"{_CPT} {name}: {' '.join(_float_text(entry) for entry in cpt.table)}")
    lines.extend(
        f"{_UNOBSERVED} {name}: {' '.join(str(entry) for entry in cpt.unobserved)}"
        for name, cpt in zip(names, bn.cpts, strict=True)
        if cpt.unobserved
    )
    return "\n".join(lines) + "\n"


class _Document:
    """Accumulates parsed lines and reports problems with their position."""

    def __init__(self, source: str) -> None:
        self.source = source
        self.names: tuple[str, ...] | None = None
        self.prediction: str | None = None
        self.parents: dict[str, tuple[str, ...]] = {}
        self.tables: dict[str, tuple[float, ...]] = {}
        self.unobserved: dict[str, tuple[int, ...]] = {}

    def fail(self, line: int, detail: str) -> ParseError:
        return ParseError(self.source, line, detail)

    def add(self, number: int, line: str) -> None:
        head, separator, tail = line.partition(":")
        if not separator:
            raise self.fail(number, f"expected '<key>: <values>', got {line!r}")
        key = head.split()
        values = tuple(tail.split())
        if key == [_NODES]:
            self._set_nodes(number, values)
        elif key == [_PREDICTION]:
            self._set_prediction(number, values)
        elif len(key) == 2 and key[0] == _PARENTS:  # noqa: PLR2004  # "parents <node>"
            self.parents[self._node(number, key[1], self.parents)] = self._parent_names(number, values)
        elif len(key) == 2 and key[0] == _CPT:  # noqa: PLR2004  # "cpt <node>"
            self.tables[self._node(number, key[1], self.tables)] = self._floats(number, values)
        elif len(key) == 2 and key[0] == _UNOBSERVED:  # noqa: PLR2004  # "unobserved <node>"
            self.unobserved[self._node(number, key[1], self.unobserved)] = self._entries(number, values)
        else:
            raise self.fail(number, f"unknown key {head.strip()!r}")

    def _set_nodes(self, number: int, values: tuple[str, ...]) -> None:
        if self.names is not None:
            raise self.fail(number, "duplicate 'nodes' line")
        if not values:
            raise self.fail(number, "'nodes' line lists no nodes")
        self.names = values

    def _set_prediction(self, number: int, values: tuple[str, ...]) -> None:
        if self.prediction is not None or len(values) != 1:
            raise self.fail(number, "'prediction' must appear once and name exactly one node")
        self.prediction = values[0]

    def _node(self, number: int, name: str, seen: Mapping[str, object]) -> str:
        if self.names is None:
            raise self.fail(number, "'nodes' line must come first")
        if name not in self.names:
            raise self.fail(number, f"unknown node '{name}'")
        if name in seen:
            raise self.fail(number, f"duplicate line for node '{name}'")
        return name

    def _parent_names(self, number: int, values: tuple[str, ...]) -> tuple[str, ...]:
        unknown = [value for value in values if self.names is None or value not in self.names]
        if unknown:
            raise self.fail(number, f"unknown parent nodes {unknown}")
        return values

    def _floats(self, number: int, values: tuple[str, ...]) -> tuple[float, ...]:
        try:
            return tuple(float(value) for value in values)
        except ValueError:
            raise self.fail(number, f"CPT values must be numbers, got {' '.join(values)}") from None

    def _entries(self, number: int, values: tuple[str, ...]) -> tuple[int, ...]:
        if not values or not all(value.isdigit() for value in values):
            raise self.fail(number, f"unobserved entries must be CPT indices, got {' '.join(values)!r}")
        return tuple(int(value) for value in values)

    def build(self) -> BayesianNetwork:
        if self.names is None:
            raise self.fail(0, "missing 'nodes' line")
        names = self.names
        missing = [name for name in names if name not in self.parents or name not in self.tables]
        if missing:
            raise self.fail(0, f"missing 'parents'/'cpt' lines for nodes {missing}")
        try:
            structure = DagStructure(
                node_names=names,
                parent_sets=tuple(tuple(names.index(p) for p in self.parents[name]) for name in names),
            )
            cpts = tuple(
                Cpt(
                    node=index,
                    parent_order=structure.parent_sets[index],
                    table=self.tables[name],
                    unobserved=self.unobserved.get(name, ()),
                )
                for index, name in enumerate(names)
            )
            prediction = None if self.prediction is None else structure.index_of(self.prediction)
            return BayesianNetwork(structure=structure, cpts=cpts, prediction_node=prediction)
        except (BnmrError, ValidationError) as error:
            raise self.fail(0, f"invalid network: {error}") from error


def parse_network(lines: Iterable[str], source: str = "<network>") -> BayesianNetwork:
    """Parse the text format.

    Args:
        lines: Document lines
        source: Name used in error messages

    Returns:
        The network described by the document.

    Raises:
        ParseError: On any syntax or consistency problem, with the 1-based line number
            (0 when the problem concerns the document as a whole).

    """
    document = _Document(source)
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            document.add(number, line)
    return document.build()


def read_network(path: Path) -> BayesianNetwork:
    """Load a network file.

    Returns:
        Parsed network.

    """
    return parse_network(path.read_text(encoding="utf-8").splitlines(), str(path))


def write_network(bn: BayesianNetwork, path: Path) -> None:
    """Write a network file, creating parent directories as needed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_network(bn), encoding="utf-8")
