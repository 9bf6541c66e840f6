"""Tests for structure learning, CPT fitting, exact inference and the calibrator."""

import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError

from bnmr.bayesnet import (
    BayesianNetwork,
    Cpt,
    DagStructure,
    PredictionBuffer,
    append_prediction_node,
    calibration_factors,
    calibrator_z,
    chi2_from_counts,
    chi2_independence,
    edge_dependencies,
    enumerate_dags,
    fit_cpts,
    joint_distribution,
    k2_log_score,
    learn_network,
    learn_structure,
    online_update,
    prune_edges,
    sample_network,
    variable_elimination,
)
from bnmr.errors import (
    CalibrationError,
    CapacityError,
    ConfigurationError,
    DataError,
    NetworkStateError,
    ShapeError,
    UndefinedConditionalError,
)
from tests.conftest import chain_network, independent_network, make_network, random_network, single_attribute_network

CHAIN_ROWS = 5000
SEEDS = range(10)


def _root_dag(name: str = "A") -> DagStructure:
    return DagStructure(node_names=(name,), parent_sets=((),))


def _brute_force(bn: BayesianNetwork, query: int, value: int, evidence: dict[int, int]) -> float:
    joint = joint_distribution(bn)
    numerator = 0.0
    denominator = 0.0
    for assignment in itertools.product((0, 1), repeat=bn.structure.n_nodes):
        if any(assignment[node] != observed for node, observed in evidence.items()):
            continue
        mass = float(joint[assignment])
        denominator += mass
        if assignment[query] == value:
            numerator += mass
    return numerator / denominator


# Structures


@pytest.mark.parametrize(("n", "expected"), ((1, 1), (2, 3), (3, 25), (4, 543)))
def test_enumerate_dags_counts(n: int, expected: int) -> None:
    """Every labeled DAG appears exactly once."""
    dags = list(enumerate_dags(n))
    assert len(dags) == expected
    assert len({dag.parent_sets for dag in dags}) == expected


def test_enumerate_dags_default_names_and_caps() -> None:
    """Nodes default to X0.. names; more than six nodes is a capacity error."""
    assert next(iter(enumerate_dags(2))).node_names == ("X0", "X1")
    with pytest.raises(CapacityError, match="reduce the attribute count"):
        list(enumerate_dags(7))
    with pytest.raises(ConfigurationError):
        list(enumerate_dags(0))


def test_dag_structure_rejects_cycles_and_bad_parents() -> None:
    """Cycles, self-loops and duplicate names fail validation."""
    with pytest.raises(ValidationError):
        DagStructure(node_names=("A", "B"), parent_sets=((1,), (0,)))
    with pytest.raises(ValidationError):
        DagStructure(node_names=("A",), parent_sets=((0,),))
    with pytest.raises(ValidationError):
        DagStructure(node_names=("A", "A"), parent_sets=((), ()))
    chain = chain_network().structure
    assert chain.topological_order() == (0, 1, 2)
    assert chain.skeleton() == frozenset({frozenset({"A", "B"}), frozenset({"B", "C"})})


def test_cpt_rejects_wrong_length_and_range() -> None:
    """CPT tables need 2^k entries in [0, 1]."""
    with pytest.raises(ValidationError):
        Cpt(node=1, parent_order=(0,), table=(0.5,))
    with pytest.raises(ValidationError):
        Cpt(node=0, parent_order=(), table=(1.5,))


# K2 score and structure search


def test_k2_score_single_node() -> None:
    """Hand-evaluated Cooper-Herskovits scores."""
    assert k2_log_score(_root_dag(), [[1], [1], [1], [0]]) == pytest.approx(math.log(6 / 120), abs=1e-9)
    assert k2_log_score(_root_dag(), [[1], [1], [1], [0]]) == pytest.approx(-2.99573, abs=1e-5)
    for n in range(1, 11):
        assert k2_log_score(_root_dag(), np.zeros((n, 1), dtype=int)) == pytest.approx(-math.log(n + 1), abs=1e-9)


def test_k2_score_rejects_non_binary_data() -> None:
    """Values other than 0/1 are data errors."""
    with pytest.raises(DataError):
        k2_log_score(_root_dag(), [[2], [0]])


def test_k2_prefers_empty_graph_for_independent_coins() -> None:
    """Independent fair coins score best without an edge in nearly every seed."""
    empty = DagStructure(node_names=("A", "B"), parent_sets=((), ()))
    forward_edge = DagStructure(node_names=("A", "B"), parent_sets=((), (0,)))
    backward_edge = DagStructure(node_names=("A", "B"), parent_sets=((1,), ()))
    wins = 0
    for seed in SEEDS:
        data = sample_network(independent_network(2), CHAIN_ROWS, np.random.default_rng(seed))
        empty_score = k2_log_score(empty, data)
        wins += empty_score >= max(k2_log_score(forward_edge, data), k2_log_score(backward_edge, data))
    assert wins >= 9


def test_learn_structure_recovers_chain_skeleton() -> None:
    """Search plus pruning on chain samples recovers A-B and B-C."""
    expected = frozenset({frozenset({"A", "B"}), frozenset({"B", "C"})})
    hits = 0
    for seed in SEEDS:
        data = sample_network(chain_network(), CHAIN_ROWS, np.random.default_rng(seed))
        learned = prune_edges(learn_structure(data, ("A", "B", "C")), data)
        hits += learned.skeleton() == expected
    assert hits >= 9


def test_learn_structure_independent_coins_and_single_node() -> None:
    """Independent coins give the empty graph; one node has only the empty graph."""
    hits = 0
    for seed in SEEDS:
        data = sample_network(independent_network(2), CHAIN_ROWS, np.random.default_rng(seed))
        hits += learn_network(data, ("A", "B")).structure.edges() == ()
    assert hits >= 9
    assert learn_structure([[0], [1]], ("A",)).parent_sets == ((),)


def test_learn_structure_is_stable_under_row_duplication() -> None:
    """Duplicating every row keeps the learned skeleton."""
    data = sample_network(chain_network(), 2000, np.random.default_rng(11))
    once = learn_structure(data, ("A", "B", "C"))
    twice = learn_structure(np.vstack([data, data]), ("A", "B", "C"))
    assert once.skeleton() == twice.skeleton()
    assert k2_log_score(once, data) != k2_log_score(once, np.vstack([data, data]))


def test_learn_structure_rejects_too_many_nodes() -> None:
    """The exhaustive search refuses seven attributes."""
    with pytest.raises(CapacityError):
        learn_structure(np.zeros((4, 7), dtype=int), [f"X{index}" for index in range(7)])


# Chi-square


def test_chi2_from_counts_examples() -> None:
    """Perfect association and exact independence."""
    perfect = chi2_from_counts([[50, 0], [0, 50]])
    assert perfect.chi2 == pytest.approx(100.0)
    assert perfect.phi == pytest.approx(1.0)
    assert perfect.p_value < 1e-20
    independent = chi2_from_counts([[25, 25], [25, 25]])
    assert independent.chi2 == pytest.approx(0.0)
    assert independent.phi == pytest.approx(0.0)
    assert independent.p_value == pytest.approx(1.0)
    assert not independent.degenerate


def test_chi2_degenerate_table() -> None:
    """A zero marginal reports chi2=0, p=1, phi=0 with the degenerate flag."""
    result = chi2_from_counts([[10, 5], [0, 0]])
    assert (result.chi2, result.p_value, result.phi, result.degenerate) == (0.0, 1.0, 0.0, True)
    with pytest.raises(ShapeError):
        chi2_from_counts([[1, 2, 3]])


def test_chi2_independence_on_columns() -> None:
    """Column test matches the table built by hand; phi is zero exactly when chi2 is."""
    data = np.array([[1, 1]] * 30 + [[1, 0]] * 10 + [[0, 1]] * 20 + [[0, 0]] * 40)
    by_columns = chi2_independence(data, 0, 1)
    by_table = chi2_from_counts([[40, 20], [10, 30]])
    assert by_columns.chi2 == pytest.approx(by_table.chi2)
    assert by_columns.n == 100
    assert 0.0 < by_columns.phi <= 1.0
    with pytest.raises(DataError):
        chi2_independence(np.zeros((0, 2), dtype=int), 0, 1)


def test_prune_edges() -> None:
    """Independent coins lose their edge; perfect association keeps it; empty graphs stay empty."""
    edge = DagStructure(node_names=("A", "B"), parent_sets=((), (0,)))
    removed = 0
    for seed in SEEDS:
        data = sample_network(independent_network(2), CHAIN_ROWS, np.random.default_rng(seed))
        removed += prune_edges(edge, data).edges() == ()
    assert removed >= 9
    copies = np.array([[0, 0], [1, 1]] * 50)
    assert prune_edges(edge, copies).edges() == ((0, 1),)
    empty = DagStructure(node_names=("A", "B"), parent_sets=((), ()))
    assert prune_edges(empty, copies).edges() == ()
    with pytest.raises(ConfigurationError):
        prune_edges(edge, copies, alpha=1.0)


# CPT fitting


def test_fit_cpts_root_examples() -> None:
    """Pure MLE and Laplace-smoothed estimates of a root node."""
    data = [[1], [1], [1], [0]]
    assert fit_cpts(_root_dag(), data, pseudocount=0).cpts[0].table == (0.75,)
    assert fit_cpts(_root_dag(), data).cpts[0].table[0] == pytest.approx(4 / 6)


def test_fit_cpts_unobserved_configuration() -> None:
    """Unseen parent configurations get 0.5, flagged only without smoothing."""
    dag = DagStructure(node_names=("A", "B"), parent_sets=((), (0,)))
    data = [[0, 1], [0, 0], [0, 1]]
    smoothed = fit_cpts(dag, data, pseudocount=1)
    assert smoothed.cpts[1].table[1] == 0.5
    assert smoothed.cpts[1].unobserved == ()
    raw = fit_cpts(dag, data, pseudocount=0)
    assert raw.cpts[1].table == pytest.approx((2 / 3, 0.5))
    assert raw.cpts[1].unobserved == (1,)
    with pytest.raises(ConfigurationError):
        fit_cpts(dag, data, pseudocount=-1)


def test_fit_cpts_rejects_misaligned_data() -> None:
    """Column count must equal node count."""
    with pytest.raises(ShapeError):
        fit_cpts(_root_dag(), [[0, 1]])


def test_joint_distribution_is_normalized() -> None:
    """The CPT product sums to one."""
    rng = np.random.default_rng(0)
    for n_nodes in range(1, 7):
        assert float(joint_distribution(random_network(rng, n_nodes)).sum()) == pytest.approx(1.0, abs=1e-9)


# Prediction node and inference


def test_append_prediction_node() -> None:
    """The prediction node has every attribute as parent and a uniform CPT."""
    bn = append_prediction_node(chain_network())
    assert bn.prediction_node == 3
    assert bn.node_names[-1] == "prediction"
    assert bn.attribute_names == ("A", "B", "C")
    assert bn.cpt_of("prediction").table == (0.5,) * 8
    assert bn.cpt_of("prediction").parent_order == (0, 1, 2)
    assert variable_elimination(bn, ("prediction", 1)) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(NetworkStateError):
        append_prediction_node(bn)


def test_append_prediction_node_capacity() -> None:
    """More than ten attribute parents is a capacity error."""
    with pytest.raises(CapacityError):
        append_prediction_node(independent_network(11))


def test_variable_elimination_examples() -> None:
    """Root marginals and a two-node chain by hand."""
    bn = make_network(("A", "B"), ((), (0,)), ((0.3,), (0.2, 0.9)))
    assert variable_elimination(bn, ("A", 1)) == pytest.approx(0.3, abs=1e-12)
    assert variable_elimination(bn, ("B", 1)) == pytest.approx(0.41, abs=1e-12)
    assert variable_elimination(bn, (0, 1), {"B": 1}) == pytest.approx(0.27 / 0.41, abs=1e-12)


def test_variable_elimination_errors() -> None:
    """Bad queries are configuration errors; impossible evidence is undefined."""
    bn = make_network(("A", "B"), ((), (0,)), ((1.0,), (0.2, 0.9)))
    with pytest.raises(ConfigurationError):
        variable_elimination(bn, ("A", 1), {"A": 1})
    with pytest.raises(ConfigurationError):
        variable_elimination(bn, ("A", 2))
    with pytest.raises(ConfigurationError):
        variable_elimination(bn, ("Z", 1))
    with pytest.raises(UndefinedConditionalError):
        variable_elimination(bn, ("B", 1), {"A": 0})


def test_variable_elimination_matches_brute_force() -> None:
    """Random networks of up to six nodes with random evidence agree with full enumeration."""
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n_nodes = int(rng.integers(1, 7))
        bn = random_network(rng, n_nodes)
        query = int(rng.integers(n_nodes))
        others = [node for node in range(n_nodes) if node != query]
        observed = [node for node in others if rng.random() < 0.4]
        evidence = {node: int(rng.integers(2)) for node in observed}
        value = int(rng.integers(2))
        expected = _brute_force(bn, query, value, evidence)
        assert variable_elimination(bn, (query, value), evidence) == pytest.approx(expected, abs=1e-9)


# Calibrator


def test_calibrator_single_attribute() -> None:
    """Bayes rule by hand: Z(A=1)=4/3 and Z(A=0)=2/3."""
    bn = single_attribute_network()
    assert calibrator_z(bn, "A", 1) == pytest.approx(4 / 3, abs=1e-9)
    assert calibrator_z(bn, "A", 0) == pytest.approx(2 / 3, abs=1e-9)
    assert calibration_factors(bn, ["A"])["A"] == pytest.approx((4 / 3, 2 / 3), abs=1e-9)


def test_calibrator_is_one_for_uniform_prediction_node() -> None:
    """A freshly appended prediction node is independent of every attribute."""
    rng = np.random.default_rng(8)
    for n_nodes in range(1, 6):
        bn = append_prediction_node(random_network(rng, n_nodes))
        for name in bn.attribute_names:
            assert calibrator_z(bn, name, 1) == 1.0
            assert calibrator_z(bn, name, 0) == 1.0


def test_calibrator_errors() -> None:
    """Missing prediction node, zero prior and a never-positive prediction all fail."""
    with pytest.raises(NetworkStateError):
        calibrator_z(chain_network(), "A", 1)
    impossible = make_network(("A", "prediction"), ((), (0,)), ((0.0,), (0.4, 0.8)), prediction_node=1)
    with pytest.raises(CalibrationError):
        calibrator_z(impossible, "A", 1)
    never_positive = make_network(("A", "prediction"), ((), (0,)), ((0.5,), (0.0, 0.0)), prediction_node=1)
    with pytest.raises(UndefinedConditionalError):
        calibrator_z(never_positive, "A", 1)


# Online updates


def _single_attribute_with_uniform_prediction() -> BayesianNetwork:
    return append_prediction_node(make_network(("A",), ((),), ((0.5,),)))


def test_online_update_blend() -> None:
    """80 positive observations of one configuration move its entry from 0.5 to 0.75."""
    bn = _single_attribute_with_uniform_prediction()
    buffer = PredictionBuffer.empty(1).extend(np.ones((80, 1), dtype=int), np.ones(80, dtype=int))
    updated = online_update(bn, buffer, prior_strength=80)
    assert updated.cpt_of("prediction").table == pytest.approx((0.5, 0.75))
    assert updated.cpt_of("A") == bn.cpt_of("A")
    assert bn.cpt_of("prediction").table == (0.5, 0.5)


def test_online_update_small_prior_approaches_mle() -> None:
    """With a vanishing prior the entry approaches the observed rate."""
    bn = _single_attribute_with_uniform_prediction()
    predictions = np.array([1] * 7 + [0] * 3)
    buffer = PredictionBuffer(attributes=np.zeros((10, 1), dtype=int), predictions=predictions)
    updated = online_update(bn, buffer, prior_strength=1e-9)
    assert updated.cpt_of("prediction").table[0] == pytest.approx(0.7, abs=1e-6)
    assert updated.cpt_of("prediction").table[1] == 0.5


def test_online_update_errors() -> None:
    """Missing prediction node, empty buffer, wrong width and bad prior strength."""
    bn = _single_attribute_with_uniform_prediction()
    one_row = PredictionBuffer(attributes=[[1]], predictions=[1])
    with pytest.raises(NetworkStateError):
        online_update(independent_network(1), one_row)
    with pytest.raises(DataError):
        online_update(bn, PredictionBuffer.empty(1))
    with pytest.raises(ShapeError):
        online_update(bn, PredictionBuffer(attributes=[[1, 0]], predictions=[1]))
    with pytest.raises(ConfigurationError):
        online_update(bn, one_row, prior_strength=0)


def test_online_update_keeps_entries_in_unit_interval() -> None:
    """Repeated blends stay inside [0, 1]."""
    rng = np.random.default_rng(4)
    bn = append_prediction_node(chain_network())
    for _ in range(50):
        size = int(rng.integers(1, 40))
        buffer = PredictionBuffer(
            attributes=rng.integers(0, 2, size=(size, 3)), predictions=rng.integers(0, 2, size=size)
        )
        bn = online_update(bn, buffer, prior_strength=float(rng.uniform(0.5, 100)))
        assert all(0.0 <= entry <= 1.0 for entry in bn.cpt_of("prediction").table)


@pytest.mark.parametrize("rate", (0.1, 0.5, 0.9))
@pytest.mark.parametrize("n", (100, 1000))
def test_online_update_tracks_true_rate(rate: float, n: int) -> None:
    """Entries land within the sampling band around the true positive rate."""
    prior = 80.0
    rng = np.random.default_rng(int(rate * 100) + n)
    bn = _single_attribute_with_uniform_prediction()
    attributes = np.repeat([[0], [1]], n, axis=0)
    predictions = (rng.random(2 * n) < rate).astype(int)
    updated = online_update(bn, PredictionBuffer(attributes=attributes, predictions=predictions), prior)
    bound = 3 * math.sqrt(rate * (1 - rate) / (n + prior)) + prior / (n + prior) * abs(0.5 - rate)
    for entry in updated.cpt_of("prediction").table:
        assert abs(entry - rate) <= bound


def test_prediction_buffer_validation() -> None:
    """Buffers reject misaligned shapes and non-binary entries."""
    with pytest.raises(ValidationError):
        PredictionBuffer(attributes=[[1, 0]], predictions=[1, 0])
    with pytest.raises(ValidationError):
        PredictionBuffer(attributes=[[2]], predictions=[1])
    assert len(PredictionBuffer.empty(3).extend([[1, 0, 1], [0, 0, 0]], [1, 0])) == 2


# Sampling and edge reports


def test_sample_network_matches_marginals() -> None:
    """Ancestral samples reproduce the root and child marginals."""
    samples = sample_network(chain_network(root=0.3), 20000, np.random.default_rng(0))
    assert samples.shape == (20000, 3)
    assert samples[:, 0].mean() == pytest.approx(0.3, abs=0.02)
    assert samples[:, 1].mean() == pytest.approx(0.3 * 0.9 + 0.7 * 0.1, abs=0.02)
    with pytest.raises(ConfigurationError):
        sample_network(chain_network(), -1, np.random.default_rng(0))


def test_edge_dependencies_skip_prediction_node() -> None:
    """Only attribute-to-attribute edges are reported."""
    bn = append_prediction_node(chain_network())
    data = sample_network(chain_network(), 2000, np.random.default_rng(1))
    reports = edge_dependencies(bn, data)
    assert [(report.parent, report.child) for report in reports] == [("A", "B"), ("B", "C")]
    assert all(report.test.phi > 0.5 for report in reports)
