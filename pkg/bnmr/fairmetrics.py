"""Fairness metrics, micro fairness validation sets and the calibrated fairness loss.

Reporting uses hard predictions thresholded at 0.5 (``tprd``, ``dig``); training
uses soft confidences (``soft_tprd``, ``fairness_loss``). Every disparity is in
[0, 1] and invariant to which attribute value is called group 1.
"""

import math
from collections.abc import Mapping, Sequence
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import Field, field_validator, model_validator

from bnmr._internal.arrays import FloatArray, IntArray, frozen_binary_array, frozen_float_array
from bnmr.bayesnet import BayesianNetwork, calibration_factors, chi2_independence
from bnmr.data import Dataset
from bnmr.diffcore import ClassifierParams, GradVector, confidence_gradient, predict_proba
from bnmr.errors import ConfigurationError, DataError, NetworkStateError, SamplingError, ShapeError
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "DEFAULT_MICRO_SET_SIZE",
    "PREDICTION_THRESHOLD",
    "DemographicDisparity",
    "Disparities",
    "FairnessNorm",
    "FairnessReport",
    "MicroValidationSet",
    "PhiMatrix",
    "accuracy",
    "demographic_report",
    "dig",
    "fairness_loss",
    "fairness_report",
    "hard_predictions",
    "phi_matrix",
    "sample_micro_sets",
    "soft_tprd",
    "tprd",
]

PREDICTION_THRESHOLD = 0.5
DEFAULT_MICRO_SET_SIZE = 20
_MEAN_TOLERANCE = 1e-12


class FairnessNorm(StrEnum):
    """Penalty applied to each calibrated group gap."""

    L1 = "L1"
    L2 = "L2"


class MicroValidationSet(StrictBaseModel):
    """Balanced y=1 rows for one attribute: ``size_per_side`` with A=1 and as many with A=0."""

    attribute: str
    size_per_side: int = Field(gt=0)
    pos_rows: tuple[int, ...] = Field(description="Validation row indices with A=1 and y=1")
    neg_rows: tuple[int, ...] = Field(description="Validation row indices with A=0 and y=1")
    pos_features: FloatArray
    neg_features: FloatArray

    @field_validator("pos_features", "neg_features", mode="before")
    @classmethod
    def _freeze(cls, values: ArrayLike) -> FloatArray:
        return frozen_float_array(values)

    @model_validator(mode="after")
    def _check_sides(self) -> "MicroValidationSet":
        size = self.size_per_side
        if len(self.pos_rows) != size or len(self.neg_rows) != size:
            msg = f"micro set for '{self.attribute}' needs {size} rows per side"
            raise ShapeError(msg)
        if self.pos_features.shape[0] != size or self.neg_features.shape[0] != size:
            msg = f"micro set for '{self.attribute}' has features for the wrong number of rows"
            raise ShapeError(msg)
        return self


class Disparities(StrictBaseModel):
    """Per-attribute disparities and their mean over defined attributes."""

    per_attribute: Mapping[str, float]
    mean: float = Field(ge=0.0, le=1.0)
    undefined: tuple[str, ...] = Field(default=(), description="Attributes one-sided among y=1 rows")
    degenerate: tuple[str, ...] = Field(default=(), description="Attributes whose group TPRs are both 0")

    @field_validator("per_attribute")
    @classmethod
    def _check_range(cls, values: Mapping[str, float]) -> Mapping[str, float]:
        if any(not 0.0 <= value <= 1.0 for value in values.values()):
            msg = f"disparities must lie in [0, 1], got {dict(values)}"
            raise DataError(msg)
        return values

    def notes(self, metric: str) -> tuple[str, ...]:
        """Human-readable notes about excluded or degenerate attributes.

        Returns:
            One note per affected attribute.

        """
        excluded = (f"{metric}: '{name}' is one-sided among y=1 rows; excluded from the mean" for name in self.undefined)
        zero = (f"{metric}: '{name}' has zero true positive rate in both groups" for name in self.degenerate)
        return (*excluded, *zero)


class DemographicDisparity(StrictBaseModel):
    """TPRD and DIG of a held-out demographic column."""

    name: str
    tprd: float = Field(ge=0.0, le=1.0)
    dig: float = Field(ge=0.0, le=1.0)


class PhiMatrix(StrictBaseModel):
    """Symmetric matrix of pairwise phi coefficients with a unit diagonal."""

    names: tuple[str, ...]
    values: FloatArray
    degenerate: tuple[str, ...] = Field(default=(), description="Constant columns; 0 against every other column")

    @field_validator("values", mode="before")
    @classmethod
    def _freeze(cls, values: ArrayLike) -> FloatArray:
        return frozen_float_array(values)

    def value(self, first: str, second: str) -> float:
        """Phi between two named columns.

        Returns:
            Coefficient in [0, 1].

        """
        return float(self.values[self.names.index(first), self.names.index(second)])

    def to_csv(self) -> str:
        """Render as CSV with a header row and a name column.

        Returns:
            CSV text, values with 17 significant digits.

        """
        lines = [",".join(("", *self.names))]
        lines.extend(
            ",".join((name, *(format(float(value), ".17g") for value in row)))
            for name, row in zip(self.names, self.values, strict=True)
        )
        return "\n".join(lines) + "\n"


class FairnessReport(StrictBaseModel):
    """Accuracy and disparities of a classifier on one dataset."""

    accuracy: float = Field(ge=0.0, le=1.0)
    per_attribute_tprd: Mapping[str, float]
    mean_tprd: float = Field(ge=0.0, le=1.0)
    per_attribute_dig: Mapping[str, float]
    mean_dig: float = Field(ge=0.0, le=1.0)
    demographic: DemographicDisparity | None = None
    phi: PhiMatrix | None = None
    notes: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_means(self) -> "FairnessReport":
        for values, mean in ((self.per_attribute_tprd, self.mean_tprd), (self.per_attribute_dig, self.mean_dig)):
            if any(not 0.0 <= value <= 1.0 for value in values.values()):
                msg = "per-attribute disparities must lie in [0, 1]"
                raise DataError(msg)
            expected = float(np.mean(list(values.values()))) if values else 0.0
            if abs(expected - mean) > _MEAN_TOLERANCE:
                msg = f"mean {mean} is not the mean of per-attribute values {dict(values)}"
                raise DataError(msg)
        return self

    def to_text(self) -> str:
        """Key-value document, one ``key = value`` per line.

        Returns:
            Text with fixed keys accuracy, mean_tprd, mean_dig, per_attribute.tprd.<name>,
            per_attribute.dig.<name>, demographic.*, phi.<a>.<b> and note lines.

        """
        lines = [
            f"accuracy = {self.accuracy:.17g}",
            f"mean_tprd = {self.mean_tprd:.17g}",
            f"mean_dig = {self.mean_dig:.17g}",
        ]
        lines.extend(f"per_attribute.tprd.{name} = {value:.17g}" for name, value in self.per_attribute_tprd.items())
        lines.extend(f"per_attribute.dig.{name} = {value:.17g}" for name, value in self.per_attribute_dig.items())
        if self.demographic is not None:
            lines.extend(
                (
                    f"demographic.name = {self.demographic.name}",
                    f"demographic.tprd = {self.demographic.tprd:.17g}",
                    f"demographic.dig = {self.demographic.dig:.17g}",
                )
            )
        if self.phi is not None:
            names = self.phi.names
            lines.extend(
                f"phi.{first}.{second} = {self.phi.value(first, second):.17g}"
                for i, first in enumerate(names)
                for second in names[i + 1 :]
            )
        lines.extend(f"note = {note}" for note in self.notes)
        return "\n".join(lines) + "\n"


def _check_lengths(predictions: ArrayLike, labels: ArrayLike, attributes: ArrayLike) -> tuple[IntArray, IntArray, IntArray]:
    y_hat = frozen_binary_array(predictions, "predictions")
    y = frozen_binary_array(labels, "labels")
    a = frozen_binary_array(attributes, "attributes")
    if a.ndim == 1:
        a = a[:, None]
    if y_hat.ndim != 1 or y.shape != y_hat.shape or a.ndim != 2 or a.shape[0] != y.shape[0]:  # noqa: PLR2004
        msg = f"predictions {y_hat.shape}, labels {y.shape} and attributes {a.shape} must share their row count"
        raise ShapeError(msg)
    return y_hat, y, a


def _attribute_names(names: Sequence[str] | None, width: int) -> tuple[str, ...]:
    resolved = tuple(names) if names is not None else tuple(f"A{index}" for index in range(width))
    if len(resolved) != width:
        msg = f"{len(resolved)} attribute names for {width} attribute columns"
        raise ShapeError(msg)
    return resolved


def _group_rates(values: FloatArray, labels: IntArray, column: IntArray) -> tuple[float, float] | None:
    """Mean of ``values`` over y=1 rows of group A=1 and group A=0, or None if one-sided."""
    positive = labels == 1
    ones = positive & (column == 1)
    zeros = positive & (column == 0)
    if not ones.any() or not zeros.any():
        return None
    return float(values[ones].mean()), float(values[zeros].mean())


def _gap(rates: tuple[float, float]) -> float:
    return abs(rates[0] - rates[1])


def _impact_gap(rates: tuple[float, float]) -> float:
    first, second = rates
    if first == 0.0 or second == 0.0:
        return 0.0 if first == second else 1.0
    return min(1.0, max(abs(1.0 - first / second), abs(1.0 - second / first)))


def _disparities(
    values: FloatArray, labels: IntArray, attributes: IntArray, names: tuple[str, ...], *, impact: bool
) -> Disparities:
    per_attribute: dict[str, float] = {}
    undefined: list[str] = []
    degenerate: list[str] = []
    for index, name in enumerate(names):
        rates = _group_rates(values, labels, attributes[:, index])
        if rates is None:
            undefined.append(name)
            continue
        if impact and rates == (0.0, 0.0):
            degenerate.append(name)
        per_attribute[name] = _impact_gap(rates) if impact else _gap(rates)
    mean = float(np.mean(list(per_attribute.values()))) if per_attribute else 0.0
    return Disparities(
        per_attribute=per_attribute, mean=mean, undefined=tuple(undefined), degenerate=tuple(degenerate)
    )


def hard_predictions(confidences: ArrayLike, threshold: float = PREDICTION_THRESHOLD) -> IntArray:
    """Threshold confidences into binary predictions (``confidence >= threshold``).

    Returns:
        int64 0/1 vector.

    """
    return (np.asarray(confidences, dtype=np.float64) >= threshold).astype(np.int64)


def accuracy(predictions: ArrayLike, labels: ArrayLike) -> float:
    """Fraction of predictions equal to the labels.

    Returns:
        Accuracy in [0, 1] (0 for an empty input).

    """
    y_hat = frozen_binary_array(predictions, "predictions")
    y = frozen_binary_array(labels, "labels")
    if y_hat.shape != y.shape:
        msg = f"predictions {y_hat.shape} and labels {y.shape} differ in length"
        raise ShapeError(msg)
    return float((y_hat == y).mean()) if y.size else 0.0


def tprd(
    predictions: ArrayLike, labels: ArrayLike, attributes: ArrayLike, names: Sequence[str] | None = None
) -> Disparities:
    """True positive rate disparity ``|TPR(A=1) - TPR(A=0)|`` per attribute.

    Args:
        predictions: Binary predictions
        labels: Binary ground truth
        attributes: ``(n, K)`` binary attribute matrix (a vector is one attribute)
        names: Attribute names (default A0, A1, ...)

    Returns:
        Disparities; one-sided attributes are listed in ``undefined`` and left out of the mean.

    """
    y_hat, y, a = _check_lengths(predictions, labels, attributes)
    return _disparities(y_hat.astype(np.float64), y, a, _attribute_names(names, a.shape[1]), impact=False)


def dig(
    predictions: ArrayLike, labels: ArrayLike, attributes: ArrayLike, names: Sequence[str] | None = None
) -> Disparities:
    """Disparate impact gap ``max(|1 - TPR1/TPR0|, |1 - TPR0/TPR1|)`` per attribute, clamped to [0, 1].

    A zero TPR against a positive one gives 1; two zero TPRs give 0 and are listed
    in ``degenerate``.

    Returns:
        Disparities as for :func:`tprd`.

    """
    y_hat, y, a = _check_lengths(predictions, labels, attributes)
    return _disparities(y_hat.astype(np.float64), y, a, _attribute_names(names, a.shape[1]), impact=True)


def soft_tprd(
    confidences: ArrayLike, labels: ArrayLike, attributes: ArrayLike, names: Sequence[str] | None = None
) -> Disparities:
    """Confidence-based TPRD: gap of mean confidence among y=1 rows of each group.

    Returns:
        Disparities over soft confidences.

    """
    scores = frozen_float_array(confidences)
    _, y, a = _check_lengths(np.zeros(scores.shape, dtype=np.int64), labels, attributes)
    if scores.ndim != 1 or ((scores < 0.0) | (scores > 1.0)).any():
        msg = "confidences must be a vector of values in [0, 1]"
        raise DataError(msg)
    return _disparities(scores, y, a, _attribute_names(names, a.shape[1]), impact=False)


def demographic_report(
    predictions: ArrayLike, labels: ArrayLike, demographic: ArrayLike, name: str = "demographic"
) -> DemographicDisparity:
    """Single-attribute TPRD and DIG of a held-out column.

    Returns:
        DemographicDisparity.

    Raises:
        DataError: If the column is one-sided among y=1 rows.

    """
    gap = tprd(predictions, labels, demographic, (name,))
    impact = dig(predictions, labels, demographic, (name,))
    if gap.undefined:
        msg = f"demographic column '{name}' is one-sided among y=1 rows"
        raise DataError(msg)
    return DemographicDisparity(name=name, tprd=gap.per_attribute[name], dig=impact.per_attribute[name])


def phi_matrix(data: ArrayLike, names: Sequence[str] | None = None) -> PhiMatrix:
    """Pairwise phi coefficients of binary columns.

    Constant columns are degenerate: phi against every other column is 0 and they are
    listed in ``degenerate``; the diagonal stays 1.

    Returns:
        PhiMatrix with a unit diagonal.

    """
    matrix = frozen_binary_array(data, "phi data")
    if matrix.ndim != 2:  # noqa: PLR2004  # rows x columns
        msg = f"phi data must be a 2-D matrix, got shape {matrix.shape}"
        raise ShapeError(msg)
    labels = _attribute_names(names, matrix.shape[1])
    width = matrix.shape[1]
    degenerate = tuple(
        name for index, name in enumerate(labels) if matrix.shape[0] == 0 or np.unique(matrix[:, index]).size < 2  # noqa: PLR2004
    )
    values = np.eye(width)
    for i in range(width):
        if labels[i] in degenerate:
            continue
        for j in range(i + 1, width):
            if labels[j] in degenerate:
                continue
            values[i, j] = values[j, i] = chi2_independence(matrix, i, j).phi
    return PhiMatrix(names=labels, values=values, degenerate=degenerate)


def fairness_report(
    predictions: ArrayLike,
    labels: ArrayLike,
    attributes: ArrayLike,
    names: Sequence[str],
    *,
    demographic: ArrayLike | None = None,
    demographic_name: str | None = None,
    phi_data: tuple[ArrayLike, Sequence[str]] | None = None,
) -> FairnessReport:
    """Assemble accuracy, TPRD, DIG and the optional demographic and phi sections.

    Returns:
        FairnessReport with notes for undefined attributes and a missing demographic.

    """
    gaps = tprd(predictions, labels, attributes, names)
    impacts = dig(predictions, labels, attributes, names)
    notes = list(gaps.notes("tprd") + impacts.notes("dig"))
    demographic_part: DemographicDisparity | None = None
    if demographic is None:
        notes.append("demographic: no demographic column; section omitted")
    else:
        try:
            demographic_part = demographic_report(predictions, labels, demographic, demographic_name or "demographic")
        except DataError as error:
            notes.append(f"demographic: {error}")
    return FairnessReport(
        accuracy=accuracy(predictions, labels),
        per_attribute_tprd=gaps.per_attribute,
        mean_tprd=gaps.mean,
        per_attribute_dig=impacts.per_attribute,
        mean_dig=impacts.mean,
        demographic=demographic_part,
        phi=None if phi_data is None else phi_matrix(*phi_data),
        notes=tuple(notes),
    )


def sample_micro_sets(
    validation: Dataset, attributes: Sequence[str], size_per_side: int = DEFAULT_MICRO_SET_SIZE // 2, seed: int = 0
) -> tuple[MicroValidationSet, ...]:
    """Draw one balanced micro validation set per attribute, without replacement.

    Each attribute gets its own stream spawned from ``seed``; sets of different
    attributes may share rows.

    Returns:
        One MicroValidationSet per attribute, in the given order.

    Raises:
        ConfigurationError: If no attributes are given or size_per_side < 1.
        SamplingError: If a side has fewer than size_per_side candidate rows.

    """
    if not attributes or size_per_side < 1:
        msg = f"need at least one attribute and a positive size per side, got {list(attributes)} / {size_per_side}"
        raise ConfigurationError(msg)
    streams = np.random.SeedSequence(seed).spawn(len(attributes))
    positive = validation.labels == 1
    sets: list[MicroValidationSet] = []
    for name, stream in zip(attributes, streams, strict=True):
        column = validation.column(name)
        rng = np.random.default_rng(stream)
        sides: list[IntArray] = []
        for side, value in (("positive", 1), ("negative", 0)):
            candidates = np.flatnonzero(positive & (column == value))
            if candidates.size < size_per_side:
                raise SamplingError(name, side, size_per_side - int(candidates.size))
            sides.append(np.sort(rng.choice(candidates, size=size_per_side, replace=False)))
        pos, neg = sides
        sets.append(
            MicroValidationSet(
                attribute=name,
                size_per_side=size_per_side,
                pos_rows=tuple(int(row) for row in pos),
                neg_rows=tuple(int(row) for row in neg),
                pos_features=validation.features[pos],
                neg_features=validation.features[neg],
            )
        )
    return tuple(sets)


def fairness_loss(
    params: ClassifierParams,
    micro_sets: Sequence[MicroValidationSet],
    bn: BayesianNetwork | None = None,
    norm: FairnessNorm = FairnessNorm.L1,
) -> tuple[float, GradVector]:
    """Calibrated equal-opportunity loss and its exact gradient.

    For micro set m with calibrators ``Z(1), Z(0)`` (1 without a network), the gap is
    ``d = Z(1) * mean f(Pos) - Z(0) * mean f(Neg)``; the loss is the mean of ``|d|``
    (L1) or ``d**2`` (L2) over sets. Calibrators are constants for the gradient and
    the L1 subgradient at ``d = 0`` is 0.

    Args:
        params: Classifier parameters to evaluate (the lookahead parameters in training)
        micro_sets: Non-empty micro validation sets
        bn: Network with a prediction node, or None for the uncalibrated loss
        norm: L1 or L2 penalty

    Returns:
        ``(value, grad)``.

    Raises:
        ConfigurationError: If micro_sets is empty.
        NetworkStateError: If bn has no prediction node.

    """
    if not micro_sets:
        msg = "fairness loss needs at least one micro validation set"
        raise ConfigurationError(msg)
    if bn is not None and bn.prediction_node is None:
        msg = "fairness loss calibration needs a network with a prediction node"
        raise NetworkStateError(msg)
    factors = calibration_factors(bn, [m.attribute for m in micro_sets]) if bn is not None else {}
    features = np.concatenate([block for m in micro_sets for block in (m.pos_features, m.neg_features)])
    confidences = predict_proba(params, features)

    count = len(micro_sets)
    terms: list[float] = []
    coefficients: list[FloatArray] = []
    offset = 0
    for m in micro_sets:
        z_pos, z_neg = factors.get(m.attribute, (1.0, 1.0))
        size = m.size_per_side
        s_pos = z_pos * float(confidences[offset : offset + size].mean())
        s_neg = z_neg * float(confidences[offset + size : offset + 2 * size].mean())
        offset += 2 * size
        gap = s_pos - s_neg
        terms.append(abs(gap) if norm is FairnessNorm.L1 else gap * gap)
        slope = (math.copysign(1.0, gap) if gap != 0.0 else 0.0) if norm is FairnessNorm.L1 else 2.0 * gap
        scale = slope / (size * count)
        coefficients.extend((np.full(size, scale * z_pos), np.full(size, -scale * z_neg)))
    _, grad = confidence_gradient(params, features, np.concatenate(coefficients))
    return float(np.mean(terms)), grad
