"""Exhaustive DAG structure search over binary columns.

Structures are handled as tuples of parent bitmasks (one int per node) so the
search loop never allocates models; ``bnmr.bayesnet`` wraps results in
``DagStructure``.
"""

import itertools
import math
from collections.abc import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import Field
from scipy.special import gammaln
from scipy.stats import chi2_contingency

from bnmr._internal.arrays import IntArray, frozen_binary_array
from bnmr.errors import CapacityError, ConfigurationError, ShapeError
from bnmr.strict_base_model import StrictBaseModel

MAX_EXHAUSTIVE_NODES = 6
_TIE_TOLERANCE = 1e-9

ParentMasks = tuple[int, ...]


class IndependenceTest(StrictBaseModel):
    """Pearson chi-square test of independence on a 2x2 table."""

    chi2: float = Field(ge=0.0, description="Pearson statistic without continuity correction")
    p_value: float = Field(ge=0.0, le=1.0, description="Upper tail of chi-square with 1 degree of freedom")
    phi: float = Field(ge=0.0, le=1.0, description="Effect size sqrt(chi2 / n)")
    n: int = Field(ge=0, description="Number of rows tested")
    degenerate: bool = Field(default=False, description="A marginal count was zero; test not defined")


def binary_matrix(data: ArrayLike, n_columns: int | None = None) -> IntArray:
    """Validate a 2-D 0/1 matrix, optionally with a fixed column count.

    Returns:
        Read-only int64 matrix.

    Raises:
        ShapeError: If the matrix is not 2-D or has the wrong column count.

    """
    matrix = frozen_binary_array(data, "attribute data")
    if matrix.ndim != 2:  # noqa: PLR2004  # rows x columns
        msg = f"attribute data must be a 2-D matrix, got shape {matrix.shape}"
        raise ShapeError(msg)
    if n_columns is not None and matrix.shape[1] != n_columns:
        msg = f"attribute data has {matrix.shape[1]} columns, network has {n_columns} nodes"
        raise ShapeError(msg)
    return matrix


def mask_to_parents(mask: int) -> tuple[int, ...]:
    """Expand a parent bitmask into ascending node indices.

    Returns:
        Indices of set bits.

    """
    return tuple(index for index in range(mask.bit_length()) if mask >> index & 1)


def parents_to_mask(parents: Sequence[int]) -> int:
    """Pack parent indices into a bitmask.

    Returns:
        Bitmask with one bit per parent.

    """
    return sum(1 << parent for parent in parents)


def _submasks(mask: int, *, nonempty: bool) -> tuple[int, ...]:
    found: list[int] = []
    sub = mask
    while True:
        if sub or not nonempty:
            found.append(sub)
        if sub == 0:
            return tuple(found)
        sub = (sub - 1) & mask


def _assignments(remaining: int, n: int) -> Iterator[ParentMasks]:
    # Every DAG on `remaining` has a unique non-empty source set; the rest is a
    # DAG whose own sources must each take at least one parent from it.
    if remaining == 0:
        yield (0,) * n
        return
    for sources in _submasks(remaining, nonempty=True):
        rest = remaining & ~sources
        rest_nodes = mask_to_parents(rest)
        for inner in _assignments(rest, n):
            choices = [_submasks(sources, nonempty=inner[node] == 0) for node in rest_nodes]
            for extra in itertools.product(*choices):
                masks = list(inner)
                for node, added in zip(rest_nodes, extra, strict=True):
                    masks[node] |= added
                yield tuple(masks)


def check_node_count(n: int) -> None:
    """Guard the exhaustive search against super-exponential blow-up.

    Raises:
        ConfigurationError: If n < 1.
        CapacityError: If n exceeds the exhaustive cap.

    """
    if n < 1:
        msg = f"structure search needs at least 1 node, got {n}"
        raise ConfigurationError(msg)
    if n > MAX_EXHAUSTIVE_NODES:
        msg = (
            f"exhaustive structure search supports at most {MAX_EXHAUSTIVE_NODES} nodes, got {n}; "
            "reduce the attribute count"
        )
        raise CapacityError(msg)


def iter_parent_masks(n: int) -> Iterator[ParentMasks]:
    """Yield every labeled DAG on n nodes exactly once as parent bitmasks.

    Returns:
        Iterator over per-node parent bitmasks.

    """
    check_node_count(n)
    return _assignments((1 << n) - 1, n)


def parent_config_index(data: IntArray, parents: Sequence[int]) -> IntArray:
    """Encode each row's parent assignment with ``parents[0]`` as the least-significant bit.

    Returns:
        Length-n vector of configuration indices in ``[0, 2**len(parents))``.

    """
    index = np.zeros(data.shape[0], dtype=np.int64)
    for bit, parent in enumerate(parents):
        index |= data[:, parent] << bit
    return index


def family_counts(data: IntArray, node: int, parents: Sequence[int]) -> IntArray:
    """Count node values per parent configuration.

    Returns:
        ``(2**k, 2)`` matrix; row j holds counts of node=0 and node=1 under configuration j.

    """
    config = parent_config_index(data, parents)
    size = 2 ** len(parents)
    return np.bincount(config * 2 + data[:, node], minlength=2 * size).reshape(size, 2)


def family_log_score(data: IntArray, node: int, parents: Sequence[int]) -> float:
    """K2 (Cooper-Herskovits) log score of one node given its parents, with r = 2 states.

    Returns:
        Sum over parent configurations of ``log((r-1)!) - log((N_j + r - 1)!) + sum_k log(N_jk!)``.

    """
    counts = family_counts(data, node, parents)
    per_config = counts.sum(axis=1)
    return float(np.sum(gammaln(2.0) - gammaln(per_config + 2.0)) + np.sum(gammaln(counts + 1.0)))


def k2_log_score(data: IntArray, parent_sets: Sequence[Sequence[int]]) -> float:
    """Decomposable K2 log score of a full structure.

    Returns:
        Sum of family scores over nodes.

    """
    return sum(family_log_score(data, node, parents) for node, parents in enumerate(parent_sets))


def _tie_key(masks: ParentMasks) -> tuple[int, tuple[tuple[int, int], ...]]:
    edges = sorted((parent, child) for child, mask in enumerate(masks) for parent in mask_to_parents(mask))
    return len(edges), tuple(edges)


def best_parent_sets(data: IntArray) -> tuple[tuple[int, ...], ...]:
    """Exhaustively find the K2-optimal structure.

    Ties (within a relative 1e-9) go to the structure with fewer edges, then to the
    lexicographically smallest sorted (parent, child) edge list.

    Returns:
        Parent index tuples, one per node.

    """
    n = data.shape[1]
    family_cache: dict[tuple[int, int], float] = {}

    def family(node: int, mask: int) -> float:
        key = (node, mask)
        if key not in family_cache:
            family_cache[key] = family_log_score(data, node, mask_to_parents(mask))
        return family_cache[key]

    best_masks: ParentMasks | None = None
    best_score = -math.inf
    for masks in iter_parent_masks(n):
        score = sum(family(node, mask) for node, mask in enumerate(masks))
        tolerance = _TIE_TOLERANCE * max(1.0, abs(best_score)) if best_masks is not None else 0.0
        if best_masks is None or score > best_score + tolerance:
            best_masks, best_score = masks, score
        elif score >= best_score - tolerance and _tie_key(masks) < _tie_key(best_masks):
            best_masks, best_score = masks, max(score, best_score)
    if best_masks is None:  # pragma: no cover  # n >= 1 always yields the empty graph
        msg = "structure enumeration produced no candidates"
        raise ConfigurationError(msg)
    return tuple(mask_to_parents(mask) for mask in best_masks)


def chi2_from_counts(table: ArrayLike) -> IndependenceTest:
    """Chi-square test of independence on a 2x2 count table.

    Returns:
        IndependenceTest; degenerate tables (a zero marginal) give chi2=0, p=1, phi=0.

    Raises:
        ShapeError: If the table is not 2x2.

    """
    counts = np.asarray(table, dtype=np.int64)
    if counts.shape != (2, 2):
        msg = f"contingency table must be 2x2, got shape {counts.shape}"
        raise ShapeError(msg)
    n = int(counts.sum())
    if (counts.sum(axis=0) == 0).any() or (counts.sum(axis=1) == 0).any():
        return IndependenceTest(chi2=0.0, p_value=1.0, phi=0.0, n=n, degenerate=True)
    result = chi2_contingency(counts, correction=False)
    chi2 = float(result.statistic)
    p_value = min(1.0, max(0.0, float(result.pvalue)))
    return IndependenceTest(chi2=chi2, p_value=p_value, phi=min(1.0, math.sqrt(chi2 / n)), n=n)


def chi2_independence(data: IntArray, u: int, v: int) -> IndependenceTest:
    """Chi-square test between two binary columns of a data matrix.

    Returns:
        IndependenceTest for columns u and v.

    """
    table = np.bincount(data[:, u] * 2 + data[:, v], minlength=4).reshape(2, 2)
    return chi2_from_counts(table)


def pruned_parent_sets(
    data: IntArray, parent_sets: Sequence[Sequence[int]], alpha: float
) -> tuple[tuple[int, ...], ...]:
    """Drop every edge whose endpoints are not significantly dependent.

    Returns:
        Parent tuples keeping only edges with p-value < alpha.

    Raises:
        ConfigurationError: If alpha is outside (0, 1).

    """
    if not 0.0 < alpha < 1.0:
        msg = f"significance level alpha must be in (0, 1), got {alpha}"
        raise ConfigurationError(msg)
    return tuple(
        tuple(parent for parent in parents if chi2_independence(data, parent, child).p_value < alpha)
        for child, parents in enumerate(parent_sets)
    )
