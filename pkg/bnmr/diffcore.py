"""Minimal differentiable binary classifier.

A multi-layer perceptron with rectified-linear hidden units and a sigmoid output,
stored as one flat parameter vector. Gradients are exact and computed by a manual
backward pass, either per sample (for sample reweighting) or summed against
arbitrary per-sample coefficients (for the fairness loss).

Flat layout: for every layer in order, the weight matrix of shape
``(dims[l], dims[l + 1])`` in row-major order followed by its bias vector.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import final

import numpy as np
from numpy.typing import ArrayLike
from pydantic import Field, field_validator, model_validator
from scipy.special import expit

from bnmr._internal.arrays import FloatArray, frozen_binary_array, frozen_float_array, require_finite
from bnmr.errors import ConfigurationError, ShapeError
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "LOG_FLOOR",
    "ClassifierParams",
    "GradVector",
    "batch_loss_and_grads",
    "confidence_gradient",
    "forward",
    "init_classifier",
    "lookahead",
    "parameter_count",
    "per_sample_loss_and_grad",
    "predict_proba",
    "sgd_step",
]

LOG_FLOOR = 1e-12


def parameter_count(layer_dims: Sequence[int]) -> int:
    """Count parameters of an MLP with the given layer widths.

    Returns:
        Sum over layers of ``dims[l] * dims[l + 1] + dims[l + 1]``.

    """
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(layer_dims, layer_dims[1:], strict=False))


def _validate_layer_dims(layer_dims: Sequence[int]) -> None:
    if len(layer_dims) < 2:  # noqa: PLR2004  # input and output layer
        msg = f"layer_dims needs at least 2 entries, got {len(layer_dims)}"
        raise ConfigurationError(msg)
    if any(dim <= 0 for dim in layer_dims):
        msg = f"layer_dims must all be positive, got {tuple(layer_dims)}"
        raise ConfigurationError(msg)
    if layer_dims[-1] != 1:
        msg = f"last layer must have exactly 1 output logit, got {layer_dims[-1]}"
        raise ConfigurationError(msg)


class ClassifierParams(StrictBaseModel):
    """Parameters of a feed-forward binary classifier.

    The flat vector is read-only; every update returns a new instance, so a
    tentative lookahead can never leak into the committed parameters.
    """

    layer_dims: tuple[int, ...] = Field(description="Layer widths; first is the feature dimension, last is 1")
    values: FloatArray = Field(description="Flat read-only parameter vector in layer order (weights, then bias)")

    @field_validator("layer_dims")
    @classmethod
    def _check_dims(cls, layer_dims: tuple[int, ...]) -> tuple[int, ...]:
        _validate_layer_dims(layer_dims)
        return layer_dims

    @field_validator("values", mode="before")
    @classmethod
    def _freeze_values(cls, values: ArrayLike) -> FloatArray:
        return frozen_float_array(values)

    @model_validator(mode="after")
    def _check_length(self) -> "ClassifierParams":
        expected = parameter_count(self.layer_dims)
        if self.values.ndim != 1 or self.values.shape[0] != expected:
            msg = f"parameter vector has shape {self.values.shape}, expected ({expected},) for dims {self.layer_dims}"
            raise ShapeError(msg)
        return self

    @property
    def n_parameters(self) -> int:
        """Length of the flat parameter vector."""
        return int(self.values.shape[0])

    @property
    def feature_dim(self) -> int:
        """Expected length of an input feature vector."""
        return self.layer_dims[0]

    def layers(self) -> tuple[tuple[FloatArray, FloatArray], ...]:
        """Split the flat vector into read-only (weights, bias) views per layer.

        Returns:
            One ``(W, b)`` pair per layer, ``W`` shaped ``(fan_in, fan_out)``.

        """
        views: list[tuple[FloatArray, FloatArray]] = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims, self.layer_dims[1:], strict=False):
            weights = self.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = self.values[offset : offset + fan_out]
            offset += fan_out
            views.append((weights, bias))
        return tuple(views)

    def with_values(self, values: ArrayLike) -> "ClassifierParams":
        """Create parameters with the same architecture and new values.

        Returns:
            New ClassifierParams instance.

        """
        return ClassifierParams(layer_dims=self.layer_dims, values=frozen_float_array(values))


class GradVector(StrictBaseModel):
    """Gradient aligned with the flat ClassifierParams layout."""

    values: FloatArray = Field(description="Flat read-only gradient vector")

    @field_validator("values", mode="before")
    @classmethod
    def _freeze_values(cls, values: ArrayLike) -> FloatArray:
        array = frozen_float_array(values)
        if array.ndim != 1:
            msg = f"gradient must be a flat vector, got shape {array.shape}"
            raise ShapeError(msg)
        return array

    @property
    def norm(self) -> float:
        """Euclidean norm of the gradient."""
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        """Return the number of gradient coordinates."""
        return int(self.values.shape[0])


@final
@dataclass(frozen=True)
class _ForwardCache:
    """Intermediate activations kept for the backward pass."""

    inputs: tuple[FloatArray, ...]  # input to each layer
    pre_activations: tuple[FloatArray, ...]  # z of each layer
    confidences: FloatArray


def init_classifier(layer_dims: Sequence[int], seed: int) -> ClassifierParams:
    """Initialise an MLP with seeded uniform weights and zero biases.

    Weights of each layer are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Args:
        layer_dims: Layer widths, first = feature dimension, last = 1
        seed: Seed for numpy's default generator

    Returns:
        Freshly initialised parameters; identical seeds give identical vectors.

    """
    dims = tuple(int(dim) for dim in layer_dims)
    _validate_layer_dims(dims)
    rng = np.random.default_rng(seed)
    chunks: list[FloatArray] = []
    for fan_in, fan_out in zip(dims, dims[1:], strict=False):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.extend((rng.uniform(-bound, bound, size=fan_in * fan_out), np.zeros(fan_out)))
    return ClassifierParams(layer_dims=dims, values=np.concatenate(chunks))


def _as_feature_matrix(params: ClassifierParams, features: ArrayLike) -> FloatArray:
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2 or matrix.shape[1] != params.feature_dim:  # noqa: PLR2004  # row-major batch
        msg = f"features have shape {matrix.shape}, expected (n, {params.feature_dim})"
        raise ShapeError(msg)
    require_finite(matrix, "features")
    return matrix


def _forward_cache(params: ClassifierParams, features: FloatArray) -> _ForwardCache:
    layers = params.layers()
    inputs: list[FloatArray] = [features]
    pre_activations: list[FloatArray] = []
    hidden = features
    for index, (weights, bias) in enumerate(layers):
        z = hidden @ weights + bias
        pre_activations.append(z)
        if index < len(layers) - 1:
            hidden = np.maximum(z, 0.0)
            inputs.append(hidden)
    logits = pre_activations[-1][:, 0]
    return _ForwardCache(inputs=tuple(inputs), pre_activations=tuple(pre_activations), confidences=expit(logits))


def _backward(params: ClassifierParams, cache: _ForwardCache, dlogit: FloatArray, *, per_sample: bool) -> FloatArray:
    """Backpropagate d(objective)/d(logit_i) to parameter gradients.

    Returns:
        ``(n, P)`` per-sample gradient matrix if ``per_sample`` else the summed ``(P,)`` gradient.

    """
    layers = params.layers()
    delta = dlogit[:, None]
    blocks: list[FloatArray] = []
    for index in range(len(layers) - 1, -1, -1):
        layer_input = cache.inputs[index]
        if per_sample:
            grad_weights = (layer_input[:, :, None] * delta[:, None, :]).reshape(delta.shape[0], -1)
            blocks.extend((delta, grad_weights))
        else:
            blocks.extend((delta.sum(axis=0), (layer_input.T @ delta).ravel()))
        if index > 0:
            delta = (delta @ layers[index][0].T) * (cache.pre_activations[index - 1] > 0.0)
    blocks.reverse()
    return np.concatenate(blocks, axis=1 if per_sample else 0)


def forward(params: ClassifierParams, x: ArrayLike) -> float:
    """Classifier confidence that x belongs to the positive class.

    Args:
        params: Classifier parameters
        x: Feature vector of length ``layer_dims[0]``

    Returns:
        sigmoid of the final logit.

    Raises:
        ShapeError: If x is not a vector of the expected length.

    """
    vector = np.asarray(x, dtype=np.float64)
    if vector.ndim != 1:
        msg = f"forward expects a single feature vector, got shape {vector.shape}"
        raise ShapeError(msg)
    return float(predict_proba(params, vector[None, :])[0])


def predict_proba(params: ClassifierParams, features: ArrayLike) -> FloatArray:
    """Batched confidences for an ``(n, d)`` feature matrix.

    Returns:
        Length-n vector of positive-class confidences.

    """
    return _forward_cache(params, _as_feature_matrix(params, features)).confidences


def batch_loss_and_grads(params: ClassifierParams, features: ArrayLike, labels: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Per-sample binary cross-entropy and its exact gradients, as arrays.

    Returns:
        ``(losses, grads)`` with losses shaped ``(n,)`` and grads ``(n, P)``.

    Raises:
        ShapeError: If features and labels disagree in length or batch is empty.

    """
    matrix = _as_feature_matrix(params, features)
    targets = frozen_binary_array(labels, "labels").astype(np.float64)
    if targets.shape != (matrix.shape[0],) or matrix.shape[0] == 0:
        msg = f"batch needs matching non-empty features {matrix.shape} and labels {targets.shape}"
        raise ShapeError(msg)
    cache = _forward_cache(params, matrix)
    p = cache.confidences
    losses = -(
        targets * np.log(np.maximum(p, LOG_FLOOR)) + (1.0 - targets) * np.log(np.maximum(1.0 - p, LOG_FLOOR))
    )
    grads = _backward(params, cache, p - targets, per_sample=True)
    return losses, grads


def per_sample_loss_and_grad(
    params: ClassifierParams, features: ArrayLike, labels: ArrayLike
) -> tuple[tuple[float, GradVector], ...]:
    """Binary cross-entropy of every sample with its exact parameter gradient.

    Args:
        params: Classifier parameters
        features: ``(n, d)`` feature matrix, n >= 1
        labels: Length-n binary labels

    Returns:
        One ``(loss, grad)`` pair per sample, in batch order.

    """
    losses, grads = batch_loss_and_grads(params, features, labels)
    return tuple((float(loss), GradVector(values=grad)) for loss, grad in zip(losses, grads, strict=True))


def confidence_gradient(
    params: ClassifierParams, features: ArrayLike, coefficients: ArrayLike
) -> tuple[FloatArray, GradVector]:
    """Gradient of ``sum_i c_i * f(x_i)`` with respect to the parameters.

    Returns:
        ``(confidences, grad)`` where confidences are f(x_i) at params.

    Raises:
        ShapeError: If coefficients do not match the number of rows.

    """
    matrix = _as_feature_matrix(params, features)
    coeffs = np.asarray(coefficients, dtype=np.float64)
    if coeffs.shape != (matrix.shape[0],):
        msg = f"coefficients have shape {coeffs.shape}, expected ({matrix.shape[0]},)"
        raise ShapeError(msg)
    cache = _forward_cache(params, matrix)
    p = cache.confidences
    grad = _backward(params, cache, coeffs * p * (1.0 - p), per_sample=False)
    return p, GradVector(values=grad)


def _weighted_step(
    params: ClassifierParams, grads: Sequence[GradVector], weights: ArrayLike, alpha: float
) -> ClassifierParams:
    rho = np.asarray(weights, dtype=np.float64)
    if rho.shape != (len(grads),):
        msg = f"got {len(grads)} gradients but weights of shape {rho.shape}"
        raise ShapeError(msg)
    if not alpha > 0.0:
        msg = f"step size alpha must be positive, got {alpha}"
        raise ConfigurationError(msg)
    if any(len(grad) != params.n_parameters for grad in grads):
        msg = f"every gradient must have {params.n_parameters} coordinates"
        raise ShapeError(msg)
    if not grads:
        return params.with_values(params.values)
    stacked = np.stack([grad.values for grad in grads])
    return params.with_values(params.values - alpha * (rho @ stacked))


def lookahead(
    params: ClassifierParams, grads: Sequence[GradVector], weights: ArrayLike, alpha: float
) -> ClassifierParams:
    """Tentative parameters after one weighted gradient step.

    ``theta' = theta - alpha * sum_i rho_i * grad_i``; the input is untouched.

    Args:
        params: Current parameters theta
        grads: Per-sample gradients taken at theta
        weights: Normalized weight vector rho, one entry per gradient
        alpha: Positive step size

    Returns:
        New parameters theta'.

    """
    return _weighted_step(params, grads, weights, alpha)


def sgd_step(
    params: ClassifierParams, grads: Sequence[GradVector], weights: ArrayLike, alpha: float
) -> ClassifierParams:
    """Committed weighted SGD update; same contract as :func:`lookahead`.

    Returns:
        New parameters theta_{t+1}.

    """
    return _weighted_step(params, grads, weights, alpha)
