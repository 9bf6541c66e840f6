"""Factor algebra and exact inference over binary variables."""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import reduce
from typing import final

import numpy as np
from numpy.typing import ArrayLike

from bnmr._internal.arrays import FloatArray, frozen_float_array
from bnmr.errors import ShapeError, UndefinedConditionalError

MAX_JOINT_NODES = 16


@final
@dataclass(frozen=True)
class Factor:
    """Non-negative table over binary variables; axis i belongs to ``variables[i]``."""

    variables: tuple[int, ...]
    table: FloatArray

    def product(self, other: "Factor") -> "Factor":
        """Pointwise product over the union of both scopes.

        Returns:
            Factor whose variables are the sorted union.

        """
        variables = tuple(sorted(set(self.variables) | set(other.variables)))
        table = np.einsum(self.table, list(self.variables), other.table, list(other.variables), list(variables))
        return Factor(variables=variables, table=table)

    def sum_out(self, variable: int) -> "Factor":
        """Marginalize one variable.

        Returns:
            Factor without ``variable``.

        """
        axis = self.variables.index(variable)
        return Factor(variables=self.variables[:axis] + self.variables[axis + 1 :], table=self.table.sum(axis=axis))

    def reduce(self, evidence: Mapping[int, int]) -> "Factor":
        """Fix observed variables to their values.

        Returns:
            Factor restricted to the evidence.

        """
        index = tuple(evidence.get(variable, slice(None)) for variable in self.variables)
        kept = tuple(variable for variable in self.variables if variable not in evidence)
        return Factor(variables=kept, table=np.asarray(self.table[index], dtype=np.float64))


_UNIT = Factor(variables=(), table=np.ones(()))


def cpt_factor(node: int, parents: Sequence[int], probabilities_one: ArrayLike) -> Factor:
    """Build P(node | parents) from the entries P(node=1 | config).

    Entry j of ``probabilities_one`` encodes the parent assignment in binary with
    ``parents[0]`` as the least-significant bit.

    Returns:
        Factor over ``(node, *parents)``.

    """
    ones = frozen_float_array(probabilities_one).reshape((2,) * len(parents), order="F")
    return Factor(variables=(node, *parents), table=np.stack([1.0 - ones, ones]))


def multiply_all(factors: Sequence[Factor]) -> Factor:
    """Product of a sequence of factors.

    Returns:
        Combined factor (the unit factor for an empty sequence).

    """
    return reduce(Factor.product, factors, _UNIT)


def joint_table(factors: Sequence[Factor], n_nodes: int) -> FloatArray:
    """Full joint distribution by brute-force multiplication.

    Returns:
        Array of shape ``(2,) * n_nodes`` with axis i for node i.

    Raises:
        ShapeError: If the network is too large to enumerate.

    """
    if n_nodes > MAX_JOINT_NODES:
        msg = f"joint enumeration supports at most {MAX_JOINT_NODES} nodes, got {n_nodes}"
        raise ShapeError(msg)
    combined = multiply_all(factors)
    return np.transpose(combined.table, [combined.variables.index(node) for node in range(n_nodes)])


def _interaction_graph(factors: Sequence[Factor], variables: set[int]) -> dict[int, set[int]]:
    graph: dict[int, set[int]] = {variable: set() for variable in variables}
    for factor in factors:
        scope = [variable for variable in factor.variables if variable in variables]
        for variable in scope:
            graph[variable].update(other for other in scope if other != variable)
    return graph


def elimination_order(factors: Sequence[Factor], hidden: Sequence[int], keep: Sequence[int]) -> tuple[int, ...]:
    """Greedy min-degree order over the moralized graph, ties broken by node index.

    Returns:
        Hidden variables in elimination order.

    """
    graph = _interaction_graph(factors, set(hidden) | set(keep))
    remaining = set(hidden)
    order: list[int] = []
    while remaining:
        variable = min(remaining, key=lambda candidate: (len(graph[candidate]), candidate))
        neighbors = graph.pop(variable)
        for neighbor in neighbors:
            graph[neighbor].discard(variable)
            graph[neighbor].update(other for other in neighbors if other != neighbor)
        remaining.remove(variable)
        order.append(variable)
    return tuple(order)


def eliminate(factors: Sequence[Factor], query: int, value: int, evidence: Mapping[int, int], n_nodes: int) -> float:
    """Exact P(query = value | evidence) by variable elimination.

    Returns:
        Conditional probability in [0, 1].

    Raises:
        UndefinedConditionalError: If the evidence has probability zero.

    """
    pool = [factor.reduce(evidence) for factor in factors]
    hidden = [node for node in range(n_nodes) if node != query and node not in evidence]
    for variable in elimination_order(pool, hidden, (query,)):
        touching = [factor for factor in pool if variable in factor.variables]
        pool = [factor for factor in pool if variable not in factor.variables]
        pool.append(multiply_all(touching).sum_out(variable))
    marginal = multiply_all(pool)
    total = float(marginal.table.sum())
    if not total > 0.0:
        msg = f"evidence {dict(evidence)} has probability zero; P(node {query} | evidence) is undefined"
        raise UndefinedConditionalError(msg)
    return float(marginal.table[value] / total)
