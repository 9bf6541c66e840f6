"""Datasets: synthetic generation, CelebA annotation parsing, CSV round trips and splits.

A Dataset is the (x, y, a) triple of the training problem plus row identifiers and
an optional held-out demographic column. Every array is read-only; splitting or
selecting returns a new Dataset.
"""

from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from pydantic import Field, field_validator, model_validator

from bnmr._internal.arrays import FloatArray, IntArray, frozen_binary_array, frozen_float_array, require_finite
from bnmr.bayesnet import BayesianNetwork, sample_network
from bnmr.errors import ConfigurationError, DataError, ParseError, ShapeError
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "BiasRule",
    "Dataset",
    "FeatureRule",
    "LabelRule",
    "SplitSpec",
    "SyntheticSpec",
    "binary_column_names",
    "generate_synthetic",
    "load_attribute_csv",
    "load_dataset",
    "read_binary_columns",
    "read_dataset_csv",
    "split",
    "split_by_partition",
    "split_by_ratio",
    "write_dataset_csv",
]

_RATIO_TOLERANCE = 1e-9
_CELEBA_TOKENS = ("1", "-1")


class Dataset(StrictBaseModel):
    """Rows of (feature vector, binary target, binary attribute vector)."""

    features: FloatArray = Field(description="(n, d) feature matrix")
    labels: IntArray = Field(description="Length-n binary target")
    attributes: IntArray = Field(description="(n, K) binary attribute matrix")
    attribute_names: tuple[str, ...]
    target_name: str
    row_ids: tuple[str, ...]
    demographic: IntArray | None = Field(default=None, description="Held-out binary column, never used in training")
    demographic_name: str | None = None

    @field_validator("features", mode="before")
    @classmethod
    def _freeze_features(cls, values: ArrayLike) -> FloatArray:
        array = frozen_float_array(values)
        require_finite(array, "features")
        return array

    @field_validator("labels", "attributes", "demographic", mode="before")
    @classmethod
    def _freeze_binary(cls, values: ArrayLike | None) -> IntArray | None:
        return None if values is None else frozen_binary_array(values, "dataset columns")

    @model_validator(mode="after")
    def _check_schema(self) -> "Dataset":
        n = self.labels.shape[0]
        k = len(self.attribute_names)
        if self.labels.ndim != 1 or self.features.ndim != 2 or self.features.shape[0] != n:  # noqa: PLR2004
            msg = f"features {self.features.shape} and labels {self.labels.shape} do not align"
            raise ShapeError(msg)
        if self.attributes.shape != (n, k) or len(self.row_ids) != n:
            msg = f"attributes {self.attributes.shape} and {len(self.row_ids)} row ids for {n} rows and {k} names"
            raise ShapeError(msg)
        named = [*self.attribute_names, self.target_name]
        if self.demographic_name is not None:
            named.append(self.demographic_name)
        if len(set(named)) != len(named):
            msg = f"attribute, target and demographic names must be distinct, got {named}"
            raise ConfigurationError(msg)
        if (self.demographic is None) != (self.demographic_name is None):
            msg = "demographic column and demographic_name must be given together"
            raise ConfigurationError(msg)
        if self.demographic is not None and self.demographic.shape != (n,):
            msg = f"demographic column has shape {self.demographic.shape}, expected ({n},)"
            raise ShapeError(msg)
        return self

    @property
    def n_rows(self) -> int:
        """Number of rows."""
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        """Feature vector length."""
        return int(self.features.shape[1])

    def column(self, name: str) -> IntArray:
        """Binary attribute column by name.

        Returns:
            Read-only column view.

        Raises:
            ConfigurationError: If the attribute is unknown.

        """
        if name not in self.attribute_names:
            msg = f"unknown attribute '{name}'; dataset has {self.attribute_names}"
            raise ConfigurationError(msg)
        return self.attributes[:, self.attribute_names.index(name)]

    def take(self, indices: ArrayLike) -> "Dataset":
        """Subset of rows in the given order.

        Returns:
            New Dataset with the selected rows.

        """
        rows = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            attributes=self.attributes[rows],
            attribute_names=self.attribute_names,
            target_name=self.target_name,
            row_ids=tuple(self.row_ids[row] for row in rows),
            demographic=None if self.demographic is None else self.demographic[rows],
            demographic_name=self.demographic_name,
        )

    def with_attributes(self, names: Sequence[str]) -> "Dataset":
        """Restrict the attribute matrix to the named columns, in the given order.

        Returns:
            New Dataset whose attribute_names equal ``names``.

        """
        columns = [self.column(name) for name in names]
        matrix = np.stack(columns, axis=1) if columns else np.zeros((self.n_rows, 0), dtype=np.int64)
        return Dataset(
            features=self.features,
            labels=self.labels,
            attributes=matrix,
            attribute_names=tuple(names),
            target_name=self.target_name,
            row_ids=self.row_ids,
            demographic=self.demographic,
            demographic_name=self.demographic_name,
        )


class LabelRule(StrictBaseModel):
    """Logistic label model ``y = 1[intercept + a . coefficients + noise * eps > 0]`` with eps standard logistic."""

    intercept: float = 0.0
    coefficients: tuple[float, ...] = Field(description="One coefficient per network node")
    noise_scale: float = Field(default=1.0, ge=0.0)


class FeatureRule(StrictBaseModel):
    """Features are ``sum of shifts of active nodes + y * label_shift + sigma * N(0, I)``."""

    shifts: tuple[tuple[float, ...], ...] = Field(description="Per network node mean-shift vector")
    label_shift: tuple[float, ...] = Field(description="Mean shift of the positive class")
    sigma: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_dims(self) -> "FeatureRule":
        dim = len(self.label_shift)
        if dim == 0 or any(len(shift) != dim for shift in self.shifts):
            msg = f"every shift vector must have the label_shift length {dim} > 0"
            raise ShapeError(msg)
        return self


class BiasRule(StrictBaseModel):
    """Annotation bias: labels of one attribute group are flipped at given rates."""

    attribute: str
    group_value: int = Field(default=0, ge=0, le=1, description="Attribute value whose labels are corrupted")
    positive_flip: float = Field(ge=0.0, le=1.0, description="P(y: 1 -> 0) within the group")
    negative_flip: float = Field(default=0.0, ge=0.0, le=1.0, description="P(y: 0 -> 1) within the group")


class SyntheticSpec(StrictBaseModel):
    """Ground truth for a synthetic biased dataset."""

    attribute_network: BayesianNetwork
    label_rule: LabelRule
    feature_rule: FeatureRule
    bias_rule: BiasRule | None = None
    target_name: str = "target"
    demographic: str | None = Field(default=None, description="Network node held out as the demographic column")

    @model_validator(mode="after")
    def _check_alignment(self) -> "SyntheticSpec":
        names = self.attribute_network.node_names
        if self.attribute_network.prediction_node is not None:
            msg = "attribute network must not contain a prediction node"
            raise ConfigurationError(msg)
        if len(self.label_rule.coefficients) != len(names) or len(self.feature_rule.shifts) != len(names):
            msg = f"label coefficients and feature shifts need one entry per node of {names}"
            raise ShapeError(msg)
        for name in (self.demographic, None if self.bias_rule is None else self.bias_rule.attribute):
            if name is not None and name not in names:
                msg = f"'{name}' is not a node of the attribute network {names}"
                raise ConfigurationError(msg)
        if self.bias_rule is not None and self.bias_rule.attribute == self.demographic:
            msg = "bias attribute cannot be the held-out demographic"
            raise ConfigurationError(msg)
        return self

    @property
    def attribute_names(self) -> tuple[str, ...]:
        """Network nodes exposed as training attributes."""
        return tuple(name for name in self.attribute_network.node_names if name != self.demographic)


def generate_synthetic(spec: SyntheticSpec, n: int, seed: int, *, biased: bool = True) -> Dataset:
    """Sample a dataset from the spec.

    Attributes, clean labels and features use independent streams spawned from
    ``seed``, so the biased and clean versions of a dataset share everything except
    the flipped labels.

    Args:
        spec: Ground-truth generator
        n: Number of rows, >= 1
        seed: Root seed
        biased: Apply the bias rule (training data) or not (validation/test data)

    Returns:
        Generated Dataset; row ids are "0".."n-1".

    Raises:
        ConfigurationError: If n < 1.

    """
    if n < 1:
        msg = f"synthetic dataset needs at least 1 row, got {n}"
        raise ConfigurationError(msg)
    attribute_rng, label_rng, flip_rng, feature_rng = (
        np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(4)
    )
    nodes = sample_network(spec.attribute_network, n, attribute_rng)
    rule = spec.label_rule
    eta = rule.intercept + nodes @ np.asarray(rule.coefficients, dtype=np.float64)
    clean = (eta + rule.noise_scale * label_rng.logistic(size=n) > 0.0).astype(np.int64)
    labels = _apply_bias(spec, nodes, clean, flip_rng) if biased and spec.bias_rule is not None else clean
    shifts = np.asarray(spec.feature_rule.shifts, dtype=np.float64)
    label_shift = np.asarray(spec.feature_rule.label_shift, dtype=np.float64)
    noise = feature_rng.standard_normal((n, label_shift.shape[0]))
    features = nodes @ shifts + clean[:, None] * label_shift + spec.feature_rule.sigma * noise

    names = spec.attribute_network.node_names
    kept = [index for index, name in enumerate(names) if name != spec.demographic]
    demographic = None if spec.demographic is None else nodes[:, names.index(spec.demographic)]
    return Dataset(
        features=features,
        labels=labels,
        attributes=nodes[:, kept],
        attribute_names=spec.attribute_names,
        target_name=spec.target_name,
        row_ids=tuple(str(row) for row in range(n)),
        demographic=demographic,
        demographic_name=spec.demographic,
    )


def _apply_bias(spec: SyntheticSpec, nodes: IntArray, clean: IntArray, rng: np.random.Generator) -> IntArray:
    rule = spec.bias_rule
    if rule is None:  # pragma: no cover  # guarded by the caller
        return clean
    in_group = nodes[:, spec.attribute_network.node_names.index(rule.attribute)] == rule.group_value
    draws = rng.random(clean.shape[0])
    flip = in_group & np.where(clean == 1, draws < rule.positive_flip, draws < rule.negative_flip)
    return np.where(flip, 1 - clean, clean)


def _celeba_header(path: Path) -> tuple[int, tuple[str, ...]]:
    with path.open(encoding="utf-8") as handle:
        first = handle.readline().strip()
        header = tuple(handle.readline().split())
    try:
        declared = int(first)
    except ValueError:
        raise ParseError(path, 1, f"expected the row count, got {first!r}") from None
    if not header:
        raise ParseError(path, 2, "missing attribute header line")
    return declared, header


def _require_columns(path: Path, header: Sequence[str], wanted: Sequence[str], line: int = 2) -> None:
    missing = [name for name in wanted if name not in header]
    if missing:
        raise ParseError(path, line, f"columns {missing} not in header")


def load_attribute_csv(
    path: Path,
    target_name: str,
    attribute_names: Sequence[str],
    *,
    feature_names: Sequence[str] | None = None,
    demographic_name: str | None = None,
) -> Dataset:
    """Parse a CelebA ``list_attr_celeba`` annotation file.

    Line 1 holds the row count, line 2 the attribute header and every further line
    an image id followed by one ``1``/``-1`` token per attribute. ``-1`` maps to 0.

    Args:
        path: Annotation file
        target_name: Column used as the target y
        attribute_names: Columns forming the attribute matrix
        feature_names: Columns used as 0/1 features (default: every other column)
        demographic_name: Optional held-out column

    Returns:
        Parsed Dataset.

    Raises:
        ParseError: On missing columns, malformed tokens or a row-count mismatch.

    """
    header = _celeba_header(path)[1]
    held = [target_name, *attribute_names, *([demographic_name] if demographic_name else [])]
    features = list(feature_names) if feature_names is not None else [name for name in header if name not in held]
    _require_columns(path, header, [*held, *features])
    binary, row_ids = _celeba_binary(path)
    n = len(row_ids)
    return Dataset(
        features=binary[features].to_numpy(dtype=np.float64),
        labels=binary[target_name].to_numpy(),
        attributes=binary[list(attribute_names)].to_numpy().reshape(n, len(attribute_names)),
        attribute_names=tuple(attribute_names),
        target_name=target_name,
        row_ids=row_ids,
        demographic=None if demographic_name is None else binary[demographic_name].to_numpy(),
        demographic_name=demographic_name,
    )


def _celeba_binary(path: Path) -> tuple[pd.DataFrame, tuple[str, ...]]:
    declared, header = _celeba_header(path)
    try:
        frame = pd.read_csv(
            path, sep=r"\s+", skiprows=2, header=None, names=["image_id", *header], dtype=str, keep_default_na=False
        )
    except pd.errors.ParserError as error:
        raise ParseError(path, 0, f"malformed annotation rows: {error}") from error
    if len(frame) != declared:
        raise ParseError(path, 1, f"header declares {declared} rows but the file has {len(frame)}")
    values = frame[list(header)]
    bad = ~values.isin(_CELEBA_TOKENS).to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(path, int(row) + 3, f"expected 1 or -1 for '{header[col]}', got {values.iat[row, col]!r}")
    return (values == "1").astype(np.int64), tuple(frame["image_id"])


def write_dataset_csv(dataset: Dataset, path: Path) -> None:
    """Write the lossless CSV layout ``row_id,x.<j>...,y.<target>,a.<name>...[,d.<name>]``."""
    columns: dict[str, object] = {"row_id": list(dataset.row_ids)}
    columns.update({f"x.{j}": dataset.features[:, j] for j in range(dataset.feature_dim)})
    columns[f"y.{dataset.target_name}"] = dataset.labels
    columns.update({f"a.{name}": dataset.attributes[:, k] for k, name in enumerate(dataset.attribute_names)})
    if dataset.demographic is not None:
        columns[f"d.{dataset.demographic_name}"] = dataset.demographic
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _prefixed(columns: Sequence[str], prefix: str) -> list[str]:
    return [column for column in columns if column.startswith(prefix)]


def read_dataset_csv(path: Path) -> Dataset:
    """Read a file written by :func:`write_dataset_csv`.

    Returns:
        The stored Dataset, bit-identical to the one written.

    Raises:
        ParseError: If the header does not follow the layout.

    """
    frame = pd.read_csv(path, dtype={"row_id": str}, keep_default_na=False, float_precision="round_trip")
    columns = [str(column) for column in frame.columns]
    x_columns = _prefixed(columns, "x.")
    y_columns = _prefixed(columns, "y.")
    d_columns = _prefixed(columns, "d.")
    if not columns or columns[0] != "row_id" or len(y_columns) != 1 or len(d_columns) > 1:
        raise ParseError(path, 1, "header must be row_id, x.<j>..., exactly one y.<target>, a.<name>..., [d.<name>]")
    if x_columns != [f"x.{j}" for j in range(len(x_columns))]:
        raise ParseError(path, 1, f"feature columns must be x.0 .. x.{len(x_columns) - 1} in order")
    a_columns = _prefixed(columns, "a.")
    try:
        return Dataset(
            features=frame[x_columns].to_numpy(dtype=np.float64),
            labels=frame[y_columns[0]].to_numpy(),
            attributes=frame[a_columns].to_numpy().reshape(len(frame), len(a_columns)),
            attribute_names=tuple(column[2:] for column in a_columns),
            target_name=y_columns[0][2:],
            row_ids=tuple(frame["row_id"]),
            demographic=frame[d_columns[0]].to_numpy() if d_columns else None,
            demographic_name=d_columns[0][2:] if d_columns else None,
        )
    except ValueError as error:
        raise ParseError(path, 0, f"invalid dataset contents: {error}") from error


def _is_celeba_layout(path: Path) -> bool:
    with path.open(encoding="utf-8") as handle:
        return handle.readline().strip().isdigit()


def load_dataset(
    path: Path,
    target_name: str | None = None,
    attribute_names: Sequence[str] | None = None,
    *,
    feature_names: Sequence[str] | None = None,
    demographic_name: str | None = None,
) -> Dataset:
    """Load either layout, detected from the first line (a bare integer means CelebA).

    For the CelebA layout ``target_name`` and ``attribute_names`` are required; for
    the CSV layout an attribute list selects and orders the stored attributes.

    Returns:
        Loaded Dataset.

    Raises:
        ConfigurationError: If a CelebA file is given without target and attributes.

    """
    if _is_celeba_layout(path):
        if target_name is None or attribute_names is None:
            msg = f"{path} is a CelebA annotation file; target and attribute names are required"
            raise ConfigurationError(msg)
        return load_attribute_csv(
            path, target_name, attribute_names, feature_names=feature_names, demographic_name=demographic_name
        )
    dataset = read_dataset_csv(path)
    if target_name is not None and target_name != dataset.target_name:
        msg = f"{path} has target '{dataset.target_name}', expected '{target_name}'"
        raise ConfigurationError(msg)
    return dataset if attribute_names is None else dataset.with_attributes(attribute_names)


def binary_column_names(path: Path) -> tuple[str, ...]:
    """Names :func:`read_binary_columns` accepts for a file, read from its header only.

    Returns:
        Every annotation column of a CelebA file; target, attribute and demographic
        names of a dataset CSV.

    """
    if _is_celeba_layout(path):
        return _celeba_header(path)[1]
    header = [str(column) for column in pd.read_csv(path, nrows=0).columns]
    return tuple(column[2:] for prefix in ("y.", "a.", "d.") for column in _prefixed(header, prefix))


def read_binary_columns(path: Path, columns: Sequence[str]) -> IntArray:
    """Named binary columns of either layout as one matrix.

    CelebA files expose every header column; dataset CSVs expose the target,
    attribute and demographic columns under their plain names.

    Returns:
        ``(n, len(columns))`` read-only 0/1 matrix.

    Raises:
        ParseError: If a column is missing.

    """
    if _is_celeba_layout(path):
        _require_columns(path, _celeba_header(path)[1], columns)
        binary, _ = _celeba_binary(path)
        return frozen_binary_array(binary[list(columns)].to_numpy(), "annotation columns")
    dataset = read_dataset_csv(path)
    available = {dataset.target_name: dataset.labels}
    available.update(zip(dataset.attribute_names, dataset.attributes.T, strict=True))
    if dataset.demographic is not None and dataset.demographic_name is not None:
        available[dataset.demographic_name] = dataset.demographic
    _require_columns(path, tuple(available), columns, line=1)
    return frozen_binary_array(np.column_stack([available[name] for name in columns]), "dataset columns")


type SplitSpec = tuple[float, float, float] | Path


def split_by_ratio(
    dataset: Dataset, ratios: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle into train/val/test of ``round(r * n)`` rows (test takes the remainder).

    Returns:
        (train, val, test), each keeping the original row order.

    Raises:
        ConfigurationError: If a ratio is negative or they do not sum to 1.

    """
    if any(ratio < 0.0 for ratio in ratios) or abs(sum(ratios) - 1.0) > _RATIO_TOLERANCE:
        msg = f"split ratios must be non-negative and sum to 1, got {ratios}"
        raise ConfigurationError(msg)
    n = dataset.n_rows
    n_train = round(ratios[0] * n)
    n_val = min(round(ratios[1] * n), n - n_train)
    order = np.random.default_rng(seed).permutation(n)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    train, val, test = (dataset.take(np.sort(part)) for part in parts)
    return train, val, test


def split_by_partition(dataset: Dataset, partition_path: Path) -> tuple[Dataset, Dataset, Dataset]:
    """Split by a CelebA ``list_eval_partition`` file (``<id> <0|1|2>`` per line).

    Returns:
        (train, val, test) in file-independent original row order.

    Raises:
        ParseError: On unknown ids, bad partition codes or rows missing from the file.

    """
    frame = pd.read_csv(partition_path, sep=r"\s+", header=None, names=["row_id", "part"], dtype=str)
    position = {row_id: index for index, row_id in enumerate(dataset.row_ids)}
    assignment = np.full(dataset.n_rows, -1, dtype=np.int64)
    for line, (row_id, part) in enumerate(zip(frame["row_id"], frame["part"], strict=True), start=1):
        if row_id not in position:
            raise ParseError(partition_path, line, f"unknown row id {row_id!r}")
        if part not in {"0", "1", "2"}:
            raise ParseError(partition_path, line, f"partition must be 0, 1 or 2, got {part!r}")
        assignment[position[row_id]] = int(part)
    unassigned = np.flatnonzero(assignment < 0)
    if unassigned.size:
        ids = [dataset.row_ids[row] for row in unassigned[:5]]
        raise ParseError(partition_path, 0, f"{unassigned.size} rows have no partition, e.g. {ids}")
    train, val, test = (dataset.take(np.flatnonzero(assignment == part)) for part in range(3))
    return train, val, test


def split(dataset: Dataset, spec: SplitSpec, seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Split by ratio triple or partition file.

    Returns:
        (train, val, test).

    Raises:
        DataError: If the dataset is empty.

    """
    if dataset.n_rows == 0:
        msg = "cannot split an empty dataset"
        raise DataError(msg)
    if isinstance(spec, Path):
        return split_by_partition(dataset, spec)
    return split_by_ratio(dataset, spec, seed)
