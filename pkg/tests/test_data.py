"""Tests for synthetic generation, annotation parsing, CSV round trips and splits."""

from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from bnmr.data import (
    Dataset,
    binary_column_names,
    generate_synthetic,
    load_attribute_csv,
    load_dataset,
    read_binary_columns,
    read_dataset_csv,
    split,
    split_by_partition,
    split_by_ratio,
    write_dataset_csv,
)
from bnmr.errors import ConfigurationError, DataError, ParseError
from tests.conftest import celeba_text, toy_dataset, toy_spec

CELEBA_COLUMNS = ("Smiling", "Male", "Young", "Big_Lips")
CELEBA_ROWS = (
    (1, 0, 1, 0),
    (0, 1, 1, 1),
    (1, 1, 0, 0),
    (0, 0, 0, 1),
    (1, 0, 0, 1),
    (0, 1, 1, 0),
)


def _assert_same_dataset(first: Dataset, second: Dataset) -> None:
    assert np.array_equal(first.features, second.features)
    assert np.array_equal(first.labels, second.labels)
    assert np.array_equal(first.attributes, second.attributes)
    assert first.attribute_names == second.attribute_names
    assert first.target_name == second.target_name
    assert first.row_ids == second.row_ids
    assert first.demographic_name == second.demographic_name
    if first.demographic is None or second.demographic is None:
        assert first.demographic is second.demographic
    else:
        assert np.array_equal(first.demographic, second.demographic)


@pytest.fixture
def celeba_file(tmp_path: Path) -> Path:
    """Small annotation file in the CelebA layout."""
    path = tmp_path / "list_attr.txt"
    path.write_text(celeba_text(CELEBA_COLUMNS, CELEBA_ROWS), encoding="utf-8")
    return path


# Dataset


def test_dataset_rejects_name_clash_and_bad_shapes() -> None:
    """Names must be distinct and arrays must align."""
    with pytest.raises(ValidationError):
        Dataset(
            features=np.zeros((2, 1)),
            labels=[0, 1],
            attributes=[[0], [1]],
            attribute_names=("target",),
            target_name="target",
            row_ids=("0", "1"),
        )
    with pytest.raises(ValidationError):
        Dataset(
            features=np.zeros((3, 1)),
            labels=[0, 1],
            attributes=[[0], [1]],
            attribute_names=("A",),
            target_name="target",
            row_ids=("0", "1"),
        )
    with pytest.raises(ValidationError):
        Dataset(
            features=np.array([[np.nan], [0.0]]),
            labels=[0, 1],
            attributes=[[0], [1]],
            attribute_names=("A",),
            target_name="target",
            row_ids=("0", "1"),
        )


def test_dataset_take_and_with_attributes() -> None:
    """Row subsets keep their order; attribute selection reorders columns."""
    dataset = toy_dataset(np.random.default_rng(0), 10, ("A", "B", "C"))
    subset = dataset.take([7, 2])
    assert subset.row_ids == ("7", "2")
    assert np.array_equal(subset.features, dataset.features[[7, 2]])
    selected = dataset.with_attributes(["C", "A"])
    assert selected.attribute_names == ("C", "A")
    assert np.array_equal(selected.column("C"), dataset.column("C"))
    with pytest.raises(ConfigurationError):
        dataset.column("Z")


# Synthetic generation


def test_generate_synthetic_is_deterministic() -> None:
    """Same spec, size and seed give identical datasets."""
    spec = toy_spec()
    first = generate_synthetic(spec, 500, seed=3)
    second = generate_synthetic(spec, 500, seed=3)
    _assert_same_dataset(first, second)
    assert not np.array_equal(first.features, generate_synthetic(spec, 500, seed=4).features)


def test_biased_and_clean_share_everything_but_flipped_labels() -> None:
    """Bias only removes positives inside the biased group."""
    spec = toy_spec()
    biased = generate_synthetic(spec, 10000, seed=1, biased=True)
    clean = generate_synthetic(spec, 10000, seed=1, biased=False)
    assert np.array_equal(biased.features, clean.features)
    assert np.array_equal(biased.attributes, clean.attributes)
    changed = biased.labels != clean.labels
    assert changed.any()
    assert (biased.column("A")[changed] == 0).all()
    assert (clean.labels[changed] == 1).all()
    in_group = (clean.column("A") == 0) & (clean.labels == 1)
    assert changed.sum() / in_group.sum() == pytest.approx(0.5, abs=0.05)


def test_synthetic_attributes_follow_the_network() -> None:
    """Attribute marginals match the generating chain."""
    dataset = generate_synthetic(toy_spec(bias=False), 20000, seed=0)
    assert dataset.attribute_names == ("A", "B", "C")
    assert dataset.column("A").mean() == pytest.approx(0.5, abs=0.02)
    a = dataset.column("A") == 1
    assert dataset.column("B")[a].mean() == pytest.approx(0.8, abs=0.02)
    assert dataset.feature_dim == 4


def test_synthetic_demographic_is_held_out() -> None:
    """The demographic node is a separate column, not an attribute."""
    dataset = generate_synthetic(toy_spec(demographic="C"), 200, seed=0)
    assert dataset.attribute_names == ("A", "B")
    assert dataset.demographic_name == "C"
    assert dataset.demographic is not None
    assert dataset.demographic.shape == (200,)


def test_synthetic_rejects_empty_size() -> None:
    """At least one row is required."""
    with pytest.raises(ConfigurationError):
        generate_synthetic(toy_spec(), 0, seed=0)


def test_synthetic_spec_rejects_bias_on_demographic() -> None:
    """The bias attribute cannot be the held-out demographic."""
    with pytest.raises(ValidationError):
        toy_spec(demographic="A")


# Files


def test_dataset_csv_round_trip(tmp_path: Path) -> None:
    """CSV write then read is bit-identical, demographic included."""
    dataset = generate_synthetic(toy_spec(demographic="C"), 300, seed=2)
    path = tmp_path / "out" / "dataset.csv"
    write_dataset_csv(dataset, path)
    _assert_same_dataset(read_dataset_csv(path), dataset)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "row_id,x.0,x.1,x.2,x.3,y.target,a.A,a.B,d.C"


def test_dataset_csv_rejects_bad_header(tmp_path: Path) -> None:
    """A file without a target column fails on line 1."""
    path = tmp_path / "bad.csv"
    path.write_text("row_id,x.0,a.A\n0,1.0,1\n", encoding="utf-8")
    with pytest.raises(ParseError) as caught:
        read_dataset_csv(path)
    assert caught.value.line == 1


def test_load_attribute_csv(celeba_file: Path) -> None:
    """-1 maps to 0; unlisted columns become 0/1 features."""
    dataset = load_attribute_csv(celeba_file, "Smiling", ["Big_Lips"], demographic_name="Male")
    assert dataset.labels.tolist() == [1, 0, 1, 0, 1, 0]
    assert dataset.attributes[:, 0].tolist() == [0, 1, 0, 1, 1, 0]
    assert dataset.features.tolist() == [[1.0], [1.0], [0.0], [0.0], [0.0], [1.0]]
    assert dataset.demographic is not None
    assert dataset.demographic.tolist() == [0, 1, 1, 0, 0, 1]
    assert dataset.row_ids[0] == "000000.jpg"


def test_load_attribute_csv_errors(tmp_path: Path, celeba_file: Path) -> None:
    """Missing columns, bad tokens and row-count mismatches name the line."""
    with pytest.raises(ParseError, match="not in header") as missing:
        load_attribute_csv(celeba_file, "Smiling", ["Bald"])
    assert missing.value.line == 2

    lines = celeba_text(CELEBA_COLUMNS, CELEBA_ROWS).splitlines()
    lines[3] = lines[3].replace("-1", "0", 1)
    bad_token = tmp_path / "bad_token.txt"
    bad_token.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="expected 1 or -1") as token:
        load_attribute_csv(bad_token, "Smiling", ["Male"])
    assert token.value.line == 4

    lines = celeba_text(CELEBA_COLUMNS, CELEBA_ROWS).splitlines()
    lines[0] = "7"
    short = tmp_path / "short.txt"
    short.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="declares 7 rows") as count:
        load_attribute_csv(short, "Smiling", ["Male"])
    assert count.value.line == 1


def test_load_dataset_detects_layout(tmp_path: Path, celeba_file: Path) -> None:
    """A bare integer first line means CelebA; anything else is the CSV layout."""
    celeba = load_dataset(celeba_file, "Smiling", ["Male", "Young"])
    assert celeba.attribute_names == ("Male", "Young")
    with pytest.raises(ConfigurationError):
        load_dataset(celeba_file)

    path = tmp_path / "dataset.csv"
    write_dataset_csv(generate_synthetic(toy_spec(), 50, seed=0), path)
    loaded = load_dataset(path, attribute_names=["B"])
    assert loaded.attribute_names == ("B",)
    with pytest.raises(ConfigurationError):
        load_dataset(path, target_name="other")


def test_read_binary_columns_both_layouts(tmp_path: Path, celeba_file: Path) -> None:
    """Named columns come back as one 0/1 matrix in the requested order."""
    matrix = read_binary_columns(celeba_file, ["Male", "Smiling"])
    assert matrix.tolist() == [[row[1], row[0]] for row in CELEBA_ROWS]

    dataset = generate_synthetic(toy_spec(demographic="C"), 40, seed=5)
    path = tmp_path / "dataset.csv"
    write_dataset_csv(dataset, path)
    columns = read_binary_columns(path, ["target", "B", "C"])
    assert columns[:, 0].tolist() == dataset.labels.tolist()
    assert columns[:, 1].tolist() == dataset.column("B").tolist()
    assert dataset.demographic is not None
    assert columns[:, 2].tolist() == dataset.demographic.tolist()
    with pytest.raises(ParseError):
        read_binary_columns(path, ["Z"])


def test_binary_column_names_come_from_the_header(tmp_path: Path, celeba_file: Path) -> None:
    """CelebA files offer every annotation; dataset CSVs offer target, attributes and demographic."""
    assert binary_column_names(celeba_file) == CELEBA_COLUMNS

    path = tmp_path / "dataset.csv"
    write_dataset_csv(generate_synthetic(toy_spec(demographic="C"), 10, seed=1), path)
    assert binary_column_names(path) == ("target", "A", "B", "C")

    write_dataset_csv(generate_synthetic(toy_spec(), 10, seed=1), path)
    assert binary_column_names(path) == ("target", "A", "B")


# Splits


def test_split_by_ratio() -> None:
    """Sizes follow the ratios, parts are disjoint and the split is seeded."""
    dataset = toy_dataset(np.random.default_rng(1), 100)
    train, val, test = split_by_ratio(dataset, (0.8, 0.1, 0.1), seed=0)
    assert (train.n_rows, val.n_rows, test.n_rows) == (80, 10, 10)
    ids = [*train.row_ids, *val.row_ids, *test.row_ids]
    assert sorted(ids, key=int) == list(dataset.row_ids)
    assert list(train.row_ids) == sorted(train.row_ids, key=int)
    again, _, _ = split_by_ratio(dataset, (0.8, 0.1, 0.1), seed=0)
    assert again.row_ids == train.row_ids
    with pytest.raises(ConfigurationError):
        split_by_ratio(dataset, (0.5, 0.5, 0.5), seed=0)


def test_split_by_partition(tmp_path: Path, celeba_file: Path) -> None:
    """Partition codes 0/1/2 select train, validation and test rows."""
    dataset = load_attribute_csv(celeba_file, "Smiling", ["Male"])
    partition = tmp_path / "partition.txt"
    codes = (0, 0, 1, 2, 0, 2)
    lines = "".join(f"{row_id} {code}\n" for row_id, code in zip(dataset.row_ids, codes, strict=True))
    partition.write_text(lines, encoding="utf-8")
    train, val, test = split_by_partition(dataset, partition)
    assert train.row_ids == (dataset.row_ids[0], dataset.row_ids[1], dataset.row_ids[4])
    assert val.row_ids == (dataset.row_ids[2],)
    assert test.row_ids == (dataset.row_ids[3], dataset.row_ids[5])

    partition.write_text("999999.jpg 0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="unknown row id"):
        split_by_partition(dataset, partition)
    partition.write_text(f"{dataset.row_ids[0]} 0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="have no partition"):
        split_by_partition(dataset, partition)


def test_split_rejects_empty_dataset() -> None:
    """Nothing to split is a data error."""
    empty = toy_dataset(np.random.default_rng(0), 0)
    with pytest.raises(DataError):
        split(empty, (0.8, 0.1, 0.1))
