"""Discrete Bayesian networks over binary variables.

Covers the whole calibrator lifecycle: exhaustive K2 structure learning with
chi-square pruning, maximum-likelihood CPTs, appending a classifier-prediction
node, exact queries by variable elimination, the Bayesian calibrator
``Z = P(A=a | prediction=1) / P(A=a)`` and periodic online refreshes of the
prediction node's CPT.

Networks are immutable; ``online_update`` returns a new network. Because every
field is a tuple, networks are hashable and calibrator values are memoised per
network value.
"""

import functools
from collections.abc import Iterator, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import Field, field_validator, model_validator

from bnmr._internal.arrays import FloatArray, IntArray, frozen_binary_array
from bnmr._internal.elimination import Factor, cpt_factor, eliminate, joint_table
from bnmr._internal.structure_search import (
    IndependenceTest,
    best_parent_sets,
    binary_matrix,
    check_node_count,
    chi2_from_counts,
    family_counts,
    iter_parent_masks,
    mask_to_parents,
    parent_config_index,
    pruned_parent_sets,
)
from bnmr._internal.structure_search import chi2_independence as _chi2_columns
from bnmr._internal.structure_search import k2_log_score as _k2_parent_sets
from bnmr.errors import (
    CalibrationError,
    CapacityError,
    ConfigurationError,
    DataError,
    NetworkStateError,
    ShapeError,
)
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "DEFAULT_PRIOR_STRENGTH",
    "DEFAULT_PRUNE_ALPHA",
    "DEFAULT_PSEUDOCOUNT",
    "MAX_PREDICTION_PARENTS",
    "PREDICTION_NODE_NAME",
    "BayesianNetwork",
    "Cpt",
    "DagStructure",
    "EdgeDependency",
    "IndependenceTest",
    "PredictionBuffer",
    "append_prediction_node",
    "calibration_factors",
    "calibrator_z",
    "chi2_from_counts",
    "chi2_independence",
    "edge_dependencies",
    "enumerate_dags",
    "fit_cpts",
    "joint_distribution",
    "k2_log_score",
    "learn_network",
    "learn_structure",
    "online_update",
    "prune_edges",
    "sample_network",
    "variable_elimination",
]

PREDICTION_NODE_NAME = "prediction"
MAX_PREDICTION_PARENTS = 10
DEFAULT_PRIOR_STRENGTH = 80.0
DEFAULT_PSEUDOCOUNT = 1.0
DEFAULT_PRUNE_ALPHA = 0.05

type NodeKey = int | str


class DagStructure(StrictBaseModel):
    """Directed acyclic graph over named binary nodes.

    Acyclicity, index validity and name uniqueness are checked on construction,
    so any DagStructure in hand has a topological order.
    """

    node_names: tuple[str, ...] = Field(description="Ordered node names; whitespace-free for the text format")
    parent_sets: tuple[tuple[int, ...], ...] = Field(description="Parent indices of each node, in CPT bit order")

    @field_validator("node_names")
    @classmethod
    def _check_names(cls, names: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(names)) != len(names):
            msg = f"node names must be unique, got {names}"
            raise ConfigurationError(msg)
        if any(not name or any(char.isspace() for char in name) for name in names):
            msg = f"node names must be non-empty and whitespace-free, got {names}"
            raise ConfigurationError(msg)
        return names

    @model_validator(mode="after")
    def _check_graph(self) -> "DagStructure":
        n = len(self.node_names)
        if len(self.parent_sets) != n:
            msg = f"{len(self.parent_sets)} parent sets for {n} nodes"
            raise ShapeError(msg)
        for child, parents in enumerate(self.parent_sets):
            if len(set(parents)) != len(parents) or any(not 0 <= parent < n or parent == child for parent in parents):
                msg = f"invalid parents {parents} for node '{self.node_names[child]}'"
                raise ConfigurationError(msg)
        self.topological_order()
        return self

    @property
    def n_nodes(self) -> int:
        """Number of nodes."""
        return len(self.node_names)

    def topological_order(self) -> tuple[int, ...]:
        """Kahn's algorithm, always taking the smallest ready index.

        Returns:
            Node indices, parents before children.

        Raises:
            ConfigurationError: If the graph has a cycle.

        """
        pending = [len(parents) for parents in self.parent_sets]
        children: list[list[int]] = [[] for _ in self.parent_sets]
        for child, parents in enumerate(self.parent_sets):
            for parent in parents:
                children[parent].append(child)
        ready = sorted(node for node, count in enumerate(pending) if count == 0)
        order: list[int] = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for child in children[node]:
                pending[child] -= 1
                if pending[child] == 0:
                    ready.append(child)
            ready.sort()
        if len(order) != self.n_nodes:
            msg = f"graph over {self.node_names} contains a cycle"
            raise ConfigurationError(msg)
        return tuple(order)

    def edges(self) -> tuple[tuple[int, int], ...]:
        """Sorted (parent, child) index pairs.

        Returns:
            Every edge once.

        """
        return tuple(sorted((parent, child) for child, parents in enumerate(self.parent_sets) for parent in parents))

    def skeleton(self) -> frozenset[frozenset[str]]:
        """Undirected edge set by node name.

        Returns:
            One two-element frozenset per edge.

        """
        return frozenset(frozenset((self.node_names[parent], self.node_names[child])) for parent, child in self.edges())

    def index_of(self, name: str) -> int:
        """Resolve a node name.

        Returns:
            Index of the node.

        Raises:
            ConfigurationError: If no node has that name.

        """
        if name not in self.node_names:
            msg = f"unknown node '{name}'; nodes are {self.node_names}"
            raise ConfigurationError(msg)
        return self.node_names.index(name)


class Cpt(StrictBaseModel):
    """P(node = 1 | parent assignment) for every assignment.

    Entry j encodes the parent assignment in binary with ``parent_order[0]`` as
    the least-significant bit; P(node = 0 | j) is ``1 - table[j]``.
    """

    node: int = Field(ge=0)
    parent_order: tuple[int, ...]
    table: tuple[float, ...]
    unobserved: tuple[int, ...] = Field(
        default=(), description="Configurations never seen while fitting with zero pseudocount (set to 0.5)"
    )

    @model_validator(mode="after")
    def _check_table(self) -> "Cpt":
        expected = 2 ** len(self.parent_order)
        if len(self.table) != expected:
            msg = f"CPT of node {self.node} has {len(self.table)} entries, expected {expected}"
            raise ShapeError(msg)
        if any(not 0.0 <= entry <= 1.0 for entry in self.table):
            msg = f"CPT of node {self.node} has entries outside [0, 1]"
            raise DataError(msg)
        if any(not 0 <= entry < expected for entry in self.unobserved):
            msg = f"CPT of node {self.node} marks unobserved entries {self.unobserved} outside 0..{expected - 1}"
            raise ShapeError(msg)
        return self


class BayesianNetwork(StrictBaseModel):
    """DAG plus one CPT per node, optionally flagging a classifier-prediction node."""

    structure: DagStructure
    cpts: tuple[Cpt, ...]
    prediction_node: int | None = Field(default=None, description="Index of the prediction node, if appended")

    @model_validator(mode="after")
    def _check_alignment(self) -> "BayesianNetwork":
        if len(self.cpts) != self.structure.n_nodes:
            msg = f"{len(self.cpts)} CPTs for {self.structure.n_nodes} nodes"
            raise ShapeError(msg)
        for index, cpt in enumerate(self.cpts):
            if cpt.node != index or cpt.parent_order != self.structure.parent_sets[index]:
                msg = f"CPT {index} does not match node '{self.structure.node_names[index]}' and its parents"
                raise ConfigurationError(msg)
        if self.prediction_node is not None and not 0 <= self.prediction_node < self.structure.n_nodes:
            msg = f"prediction node index {self.prediction_node} out of range"
            raise ConfigurationError(msg)
        return self

    @property
    def node_names(self) -> tuple[str, ...]:
        """Names of all nodes, prediction node included."""
        return self.structure.node_names

    @property
    def attribute_names(self) -> tuple[str, ...]:
        """Names of all nodes except the prediction node."""
        return tuple(name for index, name in enumerate(self.node_names) if index != self.prediction_node)

    def cpt_of(self, node: NodeKey) -> Cpt:
        """Look up a CPT by node index or name.

        Returns:
            The node's CPT.

        """
        return self.cpts[_resolve(self, node)]


class EdgeDependency(StrictBaseModel):
    """Chi-square dependency measured along one network edge."""

    parent: str
    child: str
    test: IndependenceTest


class PredictionBuffer(StrictBaseModel):
    """Recent (attribute vector, thresholded prediction) pairs awaiting an online update."""

    attributes: IntArray = Field(description="(m, K) binary attribute rows aligned with the prediction node's parents")
    predictions: IntArray = Field(description="Length-m thresholded predictions")

    @field_validator("attributes", "predictions", mode="before")
    @classmethod
    def _freeze(cls, values: ArrayLike) -> IntArray:
        return frozen_binary_array(values, "prediction buffer")

    @model_validator(mode="after")
    def _check_shapes(self) -> "PredictionBuffer":
        if self.attributes.ndim != 2 or self.predictions.shape != (self.attributes.shape[0],):  # noqa: PLR2004
            msg = f"buffer shapes {self.attributes.shape} and {self.predictions.shape} do not align"
            raise ShapeError(msg)
        return self

    @classmethod
    def empty(cls, width: int) -> "PredictionBuffer":
        """Create an empty buffer for K attributes.

        Returns:
            Buffer with zero rows.

        """
        return cls(attributes=np.zeros((0, width), dtype=np.int64), predictions=np.zeros(0, dtype=np.int64))

    def extend(self, attributes: ArrayLike, predictions: ArrayLike) -> "PredictionBuffer":
        """Append observations.

        Returns:
            New buffer holding the old rows followed by the new ones.

        """
        rows = np.asarray(attributes, dtype=np.int64).reshape(-1, self.attributes.shape[1])
        return PredictionBuffer(
            attributes=np.concatenate([self.attributes, rows]),
            predictions=np.concatenate([self.predictions, np.asarray(predictions, dtype=np.int64)]),
        )

    def __len__(self) -> int:
        """Return the number of buffered observations."""
        return int(self.predictions.shape[0])


def _resolve(bn: BayesianNetwork, node: NodeKey) -> int:
    if isinstance(node, str):
        return bn.structure.index_of(node)
    if not 0 <= node < bn.structure.n_nodes:
        msg = f"node index {node} out of range for {bn.structure.n_nodes} nodes"
        raise ConfigurationError(msg)
    return node


def _default_names(n: int) -> tuple[str, ...]:
    return tuple(f"X{index}" for index in range(n))


def _factors(bn: BayesianNetwork) -> tuple[Factor, ...]:
    return tuple(cpt_factor(cpt.node, cpt.parent_order, cpt.table) for cpt in bn.cpts)


def enumerate_dags(n: int, node_names: Sequence[str] | None = None) -> Iterator[DagStructure]:
    """Yield every labeled DAG on n nodes exactly once.

    Args:
        n: Node count, 1 <= n <= 6
        node_names: Optional names (defaults to X0, X1, ...)

    Returns:
        Iterator of DagStructure values.

    """
    names = tuple(node_names) if node_names is not None else _default_names(n)
    return (
        DagStructure(node_names=names, parent_sets=tuple(mask_to_parents(mask) for mask in masks))
        for masks in iter_parent_masks(n)
    )


def k2_log_score(dag: DagStructure, data: ArrayLike) -> float:
    """K2 log marginal likelihood of the data under a structure.

    Returns:
        Sum over nodes and parent configurations of the Cooper-Herskovits terms.

    """
    return _k2_parent_sets(binary_matrix(data, dag.n_nodes), dag.parent_sets)


def learn_structure(data: ArrayLike, node_names: Sequence[str]) -> DagStructure:
    """Exhaustive K2-optimal structure (ties: fewest edges, then smallest edge list).

    Returns:
        The best-scoring DAG over ``node_names``.

    """
    names = tuple(node_names)
    check_node_count(len(names))
    matrix = binary_matrix(data, len(names))
    return DagStructure(node_names=names, parent_sets=best_parent_sets(matrix))


def chi2_independence(data: ArrayLike, u: int, v: int) -> IndependenceTest:
    """Pearson chi-square test of independence between columns u and v.

    Returns:
        Statistic, p-value (1 degree of freedom), phi and a degenerate flag.

    """
    matrix = binary_matrix(data)
    if matrix.shape[0] < 1:
        msg = "chi-square test needs at least one row"
        raise DataError(msg)
    return _chi2_columns(matrix, u, v)


def prune_edges(dag: DagStructure, data: ArrayLike, alpha: float = DEFAULT_PRUNE_ALPHA) -> DagStructure:
    """Remove edges whose endpoints are not significantly dependent (p >= alpha).

    Returns:
        Pruned DAG over the same nodes.

    """
    matrix = binary_matrix(data, dag.n_nodes)
    return DagStructure(node_names=dag.node_names, parent_sets=pruned_parent_sets(matrix, dag.parent_sets, alpha))


def fit_cpts(dag: DagStructure, data: ArrayLike, pseudocount: float = DEFAULT_PSEUDOCOUNT) -> BayesianNetwork:
    """Estimate every CPT by (smoothed) maximum likelihood.

    Entry j is ``(count(node=1, parents=j) + c) / (count(parents=j) + 2c)``. With
    ``c = 0`` an unobserved configuration gets 0.5 and is listed in ``Cpt.unobserved``.

    Returns:
        Network without a prediction node.

    Raises:
        ConfigurationError: If the pseudocount is negative.

    """
    if pseudocount < 0.0:
        msg = f"pseudocount must be non-negative, got {pseudocount}"
        raise ConfigurationError(msg)
    matrix = binary_matrix(data, dag.n_nodes)
    cpts: list[Cpt] = []
    for node, parents in enumerate(dag.parent_sets):
        counts = family_counts(matrix, node, parents).astype(np.float64)
        denominators = counts.sum(axis=1) + 2.0 * pseudocount
        unobserved = tuple(int(config) for config in np.flatnonzero(denominators == 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            entries = np.where(denominators > 0.0, (counts[:, 1] + pseudocount) / denominators, 0.5)
        table = tuple(float(entry) for entry in entries)
        cpts.append(Cpt(node=node, parent_order=parents, table=table, unobserved=unobserved))
    return BayesianNetwork(structure=dag, cpts=tuple(cpts))


def learn_network(
    data: ArrayLike,
    node_names: Sequence[str],
    *,
    alpha: float = DEFAULT_PRUNE_ALPHA,
    pseudocount: float = DEFAULT_PSEUDOCOUNT,
) -> BayesianNetwork:
    """Structure search, pruning and parameter fitting in one call.

    Returns:
        Fitted attribute network (no prediction node yet).

    """
    structure = prune_edges(learn_structure(data, node_names), data, alpha)
    return fit_cpts(structure, data, pseudocount)


def append_prediction_node(bn: BayesianNetwork, name: str = PREDICTION_NODE_NAME) -> BayesianNetwork:
    """Add the classifier-prediction node with every attribute as parent and a uniform CPT.

    Returns:
        New network whose last node is the prediction node.

    Raises:
        NetworkStateError: If a prediction node is already present.
        CapacityError: If the network has more than 10 attribute nodes.

    """
    if bn.prediction_node is not None:
        msg = f"network already has prediction node '{bn.node_names[bn.prediction_node]}'"
        raise NetworkStateError(msg)
    k = bn.structure.n_nodes
    if k > MAX_PREDICTION_PARENTS:
        msg = f"prediction node supports at most {MAX_PREDICTION_PARENTS} attribute parents, got {k}"
        raise CapacityError(msg)
    parents = tuple(range(k))
    structure = DagStructure(
        node_names=(*bn.structure.node_names, name), parent_sets=(*bn.structure.parent_sets, parents)
    )
    uniform = Cpt(node=k, parent_order=parents, table=(0.5,) * 2**k)
    return BayesianNetwork(structure=structure, cpts=(*bn.cpts, uniform), prediction_node=k)


def variable_elimination(
    bn: BayesianNetwork, query: tuple[NodeKey, int], evidence: Mapping[NodeKey, int] | None = None
) -> float:
    """Exact P(query | evidence) with a min-degree elimination order.

    Args:
        bn: Network to query
        query: ``(node, value)`` pair, node by index or name
        evidence: Partial assignment, nodes by index or name

    Returns:
        Conditional probability in [0, 1].

    Raises:
        ConfigurationError: If the query node is also observed or a value is not binary.

    """
    node = _resolve(bn, query[0])
    observed = {_resolve(bn, key): value for key, value in (evidence or {}).items()}
    if node in observed:
        msg = f"query node '{bn.node_names[node]}' cannot also be evidence"
        raise ConfigurationError(msg)
    if query[1] not in {0, 1} or any(value not in {0, 1} for value in observed.values()):
        msg = "query and evidence values must be 0 or 1"
        raise ConfigurationError(msg)
    return eliminate(_factors(bn), node, query[1], observed, bn.structure.n_nodes)


def calibrator_z(bn: BayesianNetwork, attribute: str, value: int) -> float:
    """Bayesian calibrator ``P(A=value | prediction=1) / P(A=value)``.

    Returns:
        Non-negative likelihood ratio.

    Raises:
        NetworkStateError: If the network has no prediction node.
        CalibrationError: If P(A=value) is zero.

    """
    if bn.prediction_node is None:
        msg = "calibrator needs a network with a prediction node"
        raise NetworkStateError(msg)
    prior = variable_elimination(bn, (attribute, value))
    if prior <= 0.0:
        msg = f"P({attribute}={value}) is zero; calibrator is undefined"
        raise CalibrationError(msg)
    table = bn.cpts[bn.prediction_node].table
    if len(set(table)) == 1 and table[0] > 0.0:
        # constant CPT: prediction independent of every attribute
        return 1.0
    return variable_elimination(bn, (attribute, value), {bn.prediction_node: 1}) / prior


@functools.lru_cache(maxsize=64)
def _calibration_table(bn: BayesianNetwork, attributes: tuple[str, ...]) -> tuple[tuple[float, float], ...]:
    return tuple((calibrator_z(bn, name, 1), calibrator_z(bn, name, 0)) for name in attributes)


def calibration_factors(bn: BayesianNetwork, attributes: Sequence[str]) -> Mapping[str, tuple[float, float]]:
    """Calibrator values ``(Z(1), Z(0))`` for several attributes, memoised per network.

    Returns:
        Mapping attribute name -> (Z for value 1, Z for value 0).

    """
    names = tuple(attributes)
    return dict(zip(names, _calibration_table(bn, names), strict=True))


def online_update(
    bn: BayesianNetwork, buffer: PredictionBuffer, prior_strength: float = DEFAULT_PRIOR_STRENGTH
) -> BayesianNetwork:
    """Refresh the prediction node's CPT from buffered predictions.

    Entry j becomes ``(s * old_j + count(pred=1, a=j)) / (s + count(a=j))`` with
    ``s = prior_strength``; every other CPT is carried over unchanged.

    Returns:
        New network.

    Raises:
        NetworkStateError: If the network has no prediction node.
        DataError: If the buffer is empty.
        ShapeError: If the buffer width does not match the prediction node's parents.
        ConfigurationError: If prior_strength is not positive.

    """
    if bn.prediction_node is None:
        msg = "online update needs a network with a prediction node"
        raise NetworkStateError(msg)
    if len(buffer) == 0:
        msg = "online update needs a non-empty prediction buffer"
        raise DataError(msg)
    if not prior_strength > 0.0:
        msg = f"prior_strength must be positive, got {prior_strength}"
        raise ConfigurationError(msg)
    old = bn.cpts[bn.prediction_node]
    width = len(old.parent_order)
    if buffer.attributes.shape[1] != width:
        msg = f"buffer has {buffer.attributes.shape[1]} attribute columns, prediction node has {width} parents"
        raise ShapeError(msg)
    config = parent_config_index(buffer.attributes, range(width))
    counts = np.bincount(config * 2 + buffer.predictions, minlength=2 ** (width + 1)).reshape(-1, 2)
    previous = np.asarray(old.table, dtype=np.float64)
    updated = (prior_strength * previous + counts[:, 1]) / (prior_strength + counts.sum(axis=1))
    refreshed = Cpt(
        node=old.node,
        parent_order=old.parent_order,
        table=tuple(min(1.0, max(0.0, float(entry))) for entry in updated),
    )
    cpts = tuple(refreshed if index == bn.prediction_node else cpt for index, cpt in enumerate(bn.cpts))
    return BayesianNetwork(structure=bn.structure, cpts=cpts, prediction_node=bn.prediction_node)


def joint_distribution(bn: BayesianNetwork) -> FloatArray:
    """Brute-force joint table of the network.

    Returns:
        Array of shape ``(2,) * n_nodes`` with axis i for node i.

    """
    return joint_table(_factors(bn), bn.structure.n_nodes)


def sample_network(bn: BayesianNetwork, n: int, rng: np.random.Generator) -> IntArray:
    """Ancestral sampling of n joint assignments.

    Returns:
        ``(n, n_nodes)`` binary matrix, columns in node order.

    Raises:
        ConfigurationError: If n is negative.

    """
    if n < 0:
        msg = f"sample count must be non-negative, got {n}"
        raise ConfigurationError(msg)
    samples = np.zeros((n, bn.structure.n_nodes), dtype=np.int64)
    for node in bn.structure.topological_order():
        cpt = bn.cpts[node]
        probabilities = np.asarray(cpt.table, dtype=np.float64)[parent_config_index(samples, cpt.parent_order)]
        samples[:, node] = rng.random(n) < probabilities
    return samples


def edge_dependencies(bn: BayesianNetwork, data: ArrayLike) -> tuple[EdgeDependency, ...]:
    """Chi-square dependency of every attribute-to-attribute edge.

    Args:
        bn: Network whose attribute edges are reported
        data: Binary matrix with one column per attribute node, in node order

    Returns:
        One EdgeDependency per edge not touching the prediction node.

    """
    names = bn.attribute_names
    matrix = binary_matrix(data, len(names))
    return tuple(
        EdgeDependency(
            parent=bn.node_names[parent], child=bn.node_names[child], test=_chi2_columns(matrix, parent, child)
        )
        for parent, child in bn.structure.edges()
        if bn.prediction_node not in {parent, child}
    )
