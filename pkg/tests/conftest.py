"""Shared builders for networks, datasets and synthetic specs used across test modules."""

from collections.abc import Sequence

import numpy as np

from bnmr.bayesnet import BayesianNetwork, Cpt, DagStructure
from bnmr.data import BiasRule, Dataset, FeatureRule, LabelRule, SyntheticSpec


def make_network(
    names: Sequence[str],
    parents: Sequence[Sequence[int]],
    tables: Sequence[Sequence[float]],
    prediction_node: int | None = None,
) -> BayesianNetwork:
    """Build a network from parent lists and CPT tables (parent_order = parent list)."""
    structure = DagStructure(node_names=tuple(names), parent_sets=tuple(tuple(p) for p in parents))
    cpts = tuple(
        Cpt(node=index, parent_order=tuple(parents[index]), table=tuple(table)) for index, table in enumerate(tables)
    )
    return BayesianNetwork(structure=structure, cpts=cpts, prediction_node=prediction_node)


def chain_network(root: float = 0.5, strong: float = 0.9, weak: float = 0.1) -> BayesianNetwork:
    """A -> B -> C with P(child=1 | parent=1) = strong and P(child=1 | parent=0) = weak."""
    return make_network(("A", "B", "C"), ((), (0,), (1,)), ((root,), (weak, strong), (weak, strong)))


def single_attribute_network() -> BayesianNetwork:
    """A with P(A=1)=0.5 and a prediction node with P(pred=1 | A=0)=0.4, P(pred=1 | A=1)=0.8."""
    return make_network(("A", "prediction"), ((), (0,)), ((0.5,), (0.4, 0.8)), prediction_node=1)


def random_network(rng: np.random.Generator, n_nodes: int) -> BayesianNetwork:
    """Random DAG over X0..Xn-1 whose parents precede their child, with CPT entries in [0.05, 0.95]."""
    parents = [
        tuple(int(p) for p in np.flatnonzero(rng.random(node) < 0.5)) if node else () for node in range(n_nodes)
    ]
    tables = [tuple(float(v) for v in rng.uniform(0.05, 0.95, size=2 ** len(p))) for p in parents]
    return make_network([f"X{index}" for index in range(n_nodes)], parents, tables)


def independent_network(n_nodes: int, probability: float = 0.5) -> BayesianNetwork:
    """Independent coins."""
    return make_network(
        [f"X{index}" for index in range(n_nodes)], [()] * n_nodes, [(probability,)] * n_nodes
    )


def toy_spec(*, bias: bool = True, demographic: str | None = None) -> SyntheticSpec:
    """Three-node chain spec with 4 feature dimensions and label flips in group A=0."""
    network = chain_network(root=0.5, strong=0.8, weak=0.2)
    return SyntheticSpec(
        attribute_network=network,
        label_rule=LabelRule(intercept=-0.5, coefficients=(1.0, 0.5, 0.0), noise_scale=0.5),
        feature_rule=FeatureRule(
            shifts=((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0)),
            label_shift=(0.0, 0.0, 0.0, 2.0),
            sigma=0.5,
        ),
        bias_rule=BiasRule(attribute="A", group_value=0, positive_flip=0.5) if bias else None,
        demographic=demographic,
    )


def toy_dataset(
    rng: np.random.Generator,
    n_rows: int,
    attribute_names: Sequence[str] = ("A", "B"),
    feature_dim: int = 3,
) -> Dataset:
    """Random features with labels and attributes drawn as fair coins."""
    k = len(attribute_names)
    return Dataset(
        features=rng.standard_normal((n_rows, feature_dim)),
        labels=rng.integers(0, 2, size=n_rows),
        attributes=rng.integers(0, 2, size=(n_rows, k)),
        attribute_names=tuple(attribute_names),
        target_name="target",
        row_ids=tuple(str(row) for row in range(n_rows)),
    )


def celeba_text(columns: Sequence[str], rows: Sequence[Sequence[int]]) -> str:
    """Render a CelebA annotation file body with 1/-1 tokens."""
    lines = [str(len(rows)), " ".join(columns)]
    lines.extend(
        f"{index:06d}.jpg " + " ".join("1" if value else "-1" for value in row) for index, row in enumerate(rows)
    )
    return "\n".join(lines) + "\n"
