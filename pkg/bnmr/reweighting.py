"""Bayesian-network-informed meta reweighting and its baselines.

Every training step weighs the samples of a batch before the committed SGD
update. BNMR starts from uniform weight logits, takes a tentative step, measures
the calibrated fairness loss of the tentative classifier on the micro validation
sets and moves the logits one meta step against that loss. Because the
tentative parameters are linear in the normalized weights, the meta-gradient is
exact and needs no second-order terms.

Baselines share the same loop: ``vanilla`` applies uniform weights and
``random`` draws weights from a symmetric Dirichlet distribution.
"""

import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from typing import override

import numpy as np
from numpy.typing import ArrayLike
from pydantic import Field, field_validator, model_validator
from scipy.special import softmax

from bnmr._internal.arrays import FloatArray, IntArray, frozen_float_array
from bnmr._internal.callback_handler import CallbackHandler
from bnmr.bayesnet import (
    BayesianNetwork,
    PredictionBuffer,
    append_prediction_node,
    learn_network,
    online_update,
)
from bnmr.config import Ablation, TrainConfig, TrainingMode
from bnmr.data import Dataset
from bnmr.diffcore import (
    ClassifierParams,
    GradVector,
    batch_loss_and_grads,
    init_classifier,
    lookahead,
    predict_proba,
    sgd_step,
)
from bnmr.errors import ConfigurationError, DataError, DivergenceError, ShapeError
from bnmr.fairmetrics import (
    FairnessReport,
    MicroValidationSet,
    accuracy,
    dig,
    fairness_loss,
    fairness_report,
    hard_predictions,
    sample_micro_sets,
    soft_tprd,
    tprd,
)
from bnmr.history import EpochRecord, StepRecord
from bnmr.observer import TrainingObserver
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "Ablation",
    "MetaWeights",
    "RandomWeights",
    "ReweightingStrategy",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "TrainingMode",
    "UniformWeights",
    "WeightState",
    "bnmr_train_step",
    "evaluate_classifier",
    "meta_weight_gradient",
    "run_label",
    "strategy_for",
    "tempered_softmax",
    "train",
]

_SUM_TOLERANCE = 1e-12
_SEED_BOUND = np.iinfo(np.int64).max


def tempered_softmax(logits: ArrayLike, temperature: float) -> FloatArray:
    """Normalize weight logits with a temperature: ``exp(w_i / tau) / sum_j exp(w_j / tau)``.

    Smaller temperatures sharpen the distribution; large ones approach uniform.

    Returns:
        Probability vector of the same length.

    Raises:
        ShapeError: If logits is not a non-empty vector.
        DataError: If logits contain NaN or infinite values.
        ConfigurationError: If temperature is not positive.

    """
    w = np.asarray(logits, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        msg = f"logits must be a non-empty vector, got shape {w.shape}"
        raise ShapeError(msg)
    if not np.isfinite(w).all():
        msg = "weight logits contain NaN or infinite values"
        raise DataError(msg)
    if not temperature > 0.0:
        msg = f"temperature must be positive, got {temperature}"
        raise ConfigurationError(msg)
    return softmax(w / temperature)


def meta_weight_gradient(
    grads: Sequence[GradVector], rho: ArrayLike, fair_grad: GradVector, alpha: float, temperature: float
) -> FloatArray:
    """Exact derivative of the fairness loss at the lookahead parameters with respect to the weight logits.

    ``c_j = -alpha * <g_j, fair_grad>`` is the derivative of the loss with respect
    to ``rho_j``; through the softmax Jacobian
    ``dL/dw_i = rho_i * (c_i - sum_j rho_j * c_j) / tau``.

    Args:
        grads: Per-sample gradients at the current parameters
        rho: Normalized weights the lookahead was taken with
        fair_grad: Fairness-loss gradient at the lookahead parameters
        alpha: Step size of the lookahead
        temperature: Softmax temperature tau

    Returns:
        Gradient vector with one entry per sample.

    Raises:
        ShapeError: If the lengths are inconsistent.
        ConfigurationError: If temperature is not positive.

    """
    weights = np.asarray(rho, dtype=np.float64)
    if not grads or weights.shape != (len(grads),):
        msg = f"got {len(grads)} gradients but weights of shape {weights.shape}"
        raise ShapeError(msg)
    if any(len(grad) != len(fair_grad) for grad in grads):
        msg = f"every per-sample gradient must have {len(fair_grad)} coordinates"
        raise ShapeError(msg)
    if not temperature > 0.0:
        msg = f"temperature must be positive, got {temperature}"
        raise ConfigurationError(msg)
    stacked = np.stack([grad.values for grad in grads])
    c = -alpha * (stacked @ fair_grad.values)
    return weights * (c - weights @ c) / temperature


class WeightState(StrictBaseModel):
    """Weight logits of one batch and the normalized weights derived from them."""

    logits: FloatArray = Field(description="Weight logits w, one per sample")
    temperature: float = Field(gt=0.0)
    rho: FloatArray = Field(description="Normalized weights; tempered_softmax(logits) unless normalization is ablated")

    @field_validator("logits", "rho", mode="before")
    @classmethod
    def _freeze(cls, values: ArrayLike) -> FloatArray:
        return frozen_float_array(values)

    @model_validator(mode="after")
    def _check_weights(self) -> "WeightState":
        if self.logits.ndim != 1 or self.rho.shape != self.logits.shape:
            msg = f"logits {self.logits.shape} and weights {self.rho.shape} must be vectors of equal length"
            raise ShapeError(msg)
        if (self.rho < 0.0).any() or abs(float(self.rho.sum()) - 1.0) > _SUM_TOLERANCE:
            msg = f"weights must be non-negative and sum to 1, got sum {float(self.rho.sum())!r}"
            raise DataError(msg)
        return self

    @classmethod
    def uniform(cls, size: int, temperature: float) -> "WeightState":
        """Zero logits, hence uniform weights.

        Returns:
            Initial weight state of a batch.

        """
        logits = np.zeros(size)
        return cls(logits=logits, temperature=temperature, rho=tempered_softmax(logits, temperature))

    def stepped(self, gradient: ArrayLike, meta_learning_rate: float, *, normalize: bool = True) -> "WeightState":
        """Take one gradient step on the logits and renormalize.

        Without normalization the logits are shifted to be non-negative and
        scaled to sum 1; if they are all equal the weights stay uniform.

        Returns:
            New weight state.

        """
        logits = self.logits - meta_learning_rate * np.asarray(gradient, dtype=np.float64)
        if normalize:
            rho = tempered_softmax(logits, self.temperature)
            return WeightState(logits=logits, temperature=self.temperature, rho=rho)
        shifted = logits - logits.min()
        total = float(shifted.sum())
        rho = shifted / total if total > 0.0 else np.full(logits.shape, 1.0 / logits.size)
        return WeightState(logits=logits, temperature=self.temperature, rho=rho)


class ReweightingStrategy(ABC):
    """Contract for choosing the sample weights of one batch."""

    @abstractmethod
    def weigh(
        self,
        params: ClassifierParams,
        grads: Sequence[GradVector],
        micro_sets: Sequence[MicroValidationSet],
        network: BayesianNetwork | None,
    ) -> tuple[FloatArray, float]:
        """Compute normalized weights for a batch.

        Args:
            params: Current classifier parameters
            grads: Per-sample gradients at params, in batch order
            micro_sets: Micro validation sets of the run
            network: Calibrating network, or None when calibration is off

        Returns:
            ``(rho, fair_loss)``; fair_loss is 0 for strategies that do not measure it.

        """
        ...


class UniformWeights(StrictBaseModel, ReweightingStrategy):
    """Plain mini-batch SGD: every sample weighs ``1 / n``."""

    config: TrainConfig

    @override
    def weigh(
        self,
        params: ClassifierParams,
        grads: Sequence[GradVector],
        micro_sets: Sequence[MicroValidationSet],
        network: BayesianNetwork | None,
    ) -> tuple[FloatArray, float]:
        _ = params, micro_sets, network
        return WeightState.uniform(len(grads), self.config.temperature).rho, 0.0


class RandomWeights(StrictBaseModel, ReweightingStrategy):
    """Weights drawn from a symmetric Dirichlet(1) distribution per batch."""

    config: TrainConfig
    rng: np.random.Generator

    @override
    def weigh(
        self,
        params: ClassifierParams,
        grads: Sequence[GradVector],
        micro_sets: Sequence[MicroValidationSet],
        network: BayesianNetwork | None,
    ) -> tuple[FloatArray, float]:
        _ = params, micro_sets, network
        return self.rng.dirichlet(np.ones(len(grads))), 0.0


class MetaWeights(StrictBaseModel, ReweightingStrategy):
    """One meta step on the weight logits against the calibrated fairness loss."""

    config: TrainConfig

    @override
    def weigh(
        self,
        params: ClassifierParams,
        grads: Sequence[GradVector],
        micro_sets: Sequence[MicroValidationSet],
        network: BayesianNetwork | None,
    ) -> tuple[FloatArray, float]:
        cfg = self.config
        state = WeightState.uniform(len(grads), cfg.temperature)
        tentative = lookahead(params, grads, state.rho, cfg.learning_rate)
        value, fair_grad = fairness_loss(tentative, micro_sets, network, cfg.norm)
        gradient = meta_weight_gradient(grads, state.rho, fair_grad, cfg.learning_rate, cfg.temperature)
        normalize = Ablation.NO_NORMALIZATION not in cfg.ablations
        return state.stepped(gradient, cfg.meta_learning_rate, normalize=normalize).rho, value


def strategy_for(cfg: TrainConfig, rng: np.random.Generator | None = None) -> ReweightingStrategy:
    """Pick the weighting strategy of a configuration.

    Args:
        cfg: Training configuration
        rng: Generator for random weights (default: seeded from cfg.seed)

    Returns:
        Strategy matching ``cfg.effective_mode``.

    """
    match cfg.effective_mode:
        case TrainingMode.BNMR:
            return MetaWeights(config=cfg)
        case TrainingMode.RANDOM:
            return RandomWeights(config=cfg, rng=rng if rng is not None else np.random.default_rng(cfg.seed))
        case TrainingMode.VANILLA:
            return UniformWeights(config=cfg)


def run_label(cfg: TrainConfig) -> str:
    """Name of the run configuration: the single ablation if any, else the mode.

    Returns:
        Label such as ``bnmr`` or ``no_calibration``.

    """
    return min(cfg.ablations).value if cfg.ablations else cfg.mode.value


class TrainState(StrictBaseModel):
    """Everything a training step reads and replaces."""

    params: ClassifierParams
    network: BayesianNetwork | None = Field(default=None, description="Calibrating network with a prediction node")
    buffer: PredictionBuffer | None = Field(default=None, description="Pending observations for the next online update")
    step: int = Field(default=0, ge=0, description="Number of completed steps")


class TrainResult(StrictBaseModel):
    """Outcome of a training run."""

    params: ClassifierParams = Field(description="Checkpoint with the highest validation accuracy")
    report: FairnessReport = Field(description="Test-set report of the selected checkpoint")
    history: tuple[EpochRecord, ...]
    network: BayesianNetwork | None = Field(description="Network at the end of training")
    best_epoch: int = Field(ge=1)


def _buffer_rows(network: BayesianNetwork, prediction_node: int, batch: Dataset) -> IntArray:
    prediction = network.cpt_of(prediction_node)
    return np.column_stack([batch.column(network.node_names[parent]) for parent in prediction.parent_order])


def _refresh(
    state: TrainState, batch: Dataset, step: int, cfg: TrainConfig
) -> tuple[BayesianNetwork | None, PredictionBuffer | None, bool]:
    network = state.network
    if network is None or network.prediction_node is None or state.buffer is None:
        return network, state.buffer, False
    predictions = hard_predictions(predict_proba(state.params, batch.features))
    buffer = state.buffer.extend(_buffer_rows(network, network.prediction_node, batch), predictions)
    if step % cfg.bn_update_interval:
        return network, buffer, False
    network = online_update(network, buffer, cfg.bn_prior_strength)
    return network, PredictionBuffer.empty(buffer.attributes.shape[1]), True


def bnmr_train_step(
    state: TrainState,
    batch: Dataset,
    micro_sets: Sequence[MicroValidationSet],
    cfg: TrainConfig,
    *,
    strategy: ReweightingStrategy | None = None,
    epoch: int = 1,
) -> tuple[TrainState, StepRecord]:
    """One weighted SGD step, followed by the online network update when due.

    Args:
        state: Parameters, network, buffer and completed step count
        batch: Non-empty batch of training rows
        micro_sets: Micro validation sets for the fairness loss
        cfg: Training configuration
        strategy: Weighting strategy (default: the one cfg selects)
        epoch: 1-based epoch, recorded in the step record

    Returns:
        ``(new_state, record)``.

    Raises:
        DivergenceError: If a loss, a weight or a parameter becomes non-finite.

    """
    chooser = strategy if strategy is not None else strategy_for(cfg)
    step = state.step + 1
    losses, grad_matrix = batch_loss_and_grads(state.params, batch.features, batch.labels)
    if not np.isfinite(losses).all():
        raise DivergenceError(step, "task loss is not finite")
    grads = tuple(GradVector(values=row) for row in grad_matrix)
    rho, fair = chooser.weigh(state.params, grads, micro_sets, state.network)
    if not math.isfinite(fair) or not np.isfinite(rho).all():
        raise DivergenceError(step, "fairness loss or sample weights are not finite")
    params = sgd_step(state.params, grads, rho, cfg.learning_rate)
    if not np.isfinite(params.values).all():
        raise DivergenceError(step, "parameters are not finite after the update")
    network, buffer, refreshed = _refresh(state, batch, step, cfg)
    record = StepRecord(
        epoch=epoch,
        step=step,
        task_loss=float(losses.mean()),
        fair_loss=fair,
        max_weight=min(1.0, float(rho.max())),
        network_refreshed=refreshed,
    )
    return TrainState(params=params, network=network, buffer=buffer, step=step), record


def evaluate_classifier(params: ClassifierParams, dataset: Dataset) -> FairnessReport:
    """Thresholded predictions of a classifier scored on a dataset.

    Returns:
        FairnessReport including the demographic section when the dataset has one.

    """
    predictions = hard_predictions(predict_proba(params, dataset.features))
    return fairness_report(
        predictions,
        dataset.labels,
        dataset.attributes,
        dataset.attribute_names,
        demographic=dataset.demographic,
        demographic_name=dataset.demographic_name,
    )


def _check_schema(train_set: Dataset, *others: Dataset) -> None:
    for other in others:
        if other.attribute_names != train_set.attribute_names or other.feature_dim != train_set.feature_dim:
            msg = (
                f"datasets disagree: attributes {other.attribute_names} vs {train_set.attribute_names}, "
                f"feature dim {other.feature_dim} vs {train_set.feature_dim}"
            )
            raise ConfigurationError(msg)
    if train_set.n_rows == 0:
        msg = "training set is empty"
        raise DataError(msg)


def _prepare_network(cfg: TrainConfig, train_set: Dataset, network: BayesianNetwork | None) -> BayesianNetwork | None:
    if not cfg.uses_network:
        return None
    bn = network if network is not None else learn_network(
        train_set.attributes, train_set.attribute_names, alpha=cfg.prune_alpha, pseudocount=cfg.pseudocount
    )
    if set(bn.attribute_names) != set(train_set.attribute_names):
        msg = f"network attributes {bn.attribute_names} do not match dataset attributes {train_set.attribute_names}"
        raise ConfigurationError(msg)
    return bn if bn.prediction_node is not None else append_prediction_node(bn)


def _initial_buffer(network: BayesianNetwork | None, cfg: TrainConfig) -> PredictionBuffer | None:
    if network is None or network.prediction_node is None or Ablation.NO_ONLINE_UPDATE in cfg.ablations:
        return None
    return PredictionBuffer.empty(len(network.cpt_of(network.prediction_node).parent_order))


def _draw_micro_sets(val_set: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> tuple[MicroValidationSet, ...]:
    seed = int(rng.integers(_SEED_BOUND))
    return sample_micro_sets(val_set, val_set.attribute_names, cfg.fairness_val_size // 2, seed)


def _epoch_record(
    state: TrainState,
    val_set: Dataset,
    micro_sets: Sequence[MicroValidationSet],
    cfg: TrainConfig,
    epoch: int,
    step_losses: Sequence[float],
) -> EpochRecord:
    confidences = predict_proba(state.params, val_set.features)
    predictions = hard_predictions(confidences)
    names = val_set.attribute_names
    fair, _ = fairness_loss(state.params, micro_sets, None, cfg.norm)
    return EpochRecord(
        epoch=epoch,
        step=state.step,
        accuracy=accuracy(predictions, val_set.labels),
        mean_tprd=tprd(predictions, val_set.labels, val_set.attributes, names).mean,
        mean_dig=dig(predictions, val_set.labels, val_set.attributes, names).mean,
        fair_loss=fair,
        task_loss=float(np.mean(step_losses)),
        soft_tprd=soft_tprd(confidences, val_set.labels, val_set.attributes, names).mean,
    )


class _Run:
    """Mutable bookkeeping of one call to :func:`train`."""

    def __init__(self, cfg: TrainConfig, name: str, handler: CallbackHandler) -> None:
        self.cfg = cfg
        self.name = name
        self.handler = handler
        init_stream, shuffle_stream, micro_stream, weight_stream = np.random.SeedSequence(cfg.seed).spawn(4)
        self.init_seed = int(init_stream.generate_state(1)[0])
        self.shuffle_rng = np.random.default_rng(shuffle_stream)
        self.micro_rng = np.random.default_rng(micro_stream)
        self.strategy = strategy_for(cfg, np.random.default_rng(weight_stream))

    def epoch(
        self, state: TrainState, train_set: Dataset, micro_sets: Sequence[MicroValidationSet], epoch: int
    ) -> tuple[TrainState, list[float]]:
        order = self.shuffle_rng.permutation(train_set.n_rows)
        losses: list[float] = []
        for start in range(0, train_set.n_rows, self.cfg.batch_size):
            batch = train_set.take(order[start : start + self.cfg.batch_size])
            state, record = bnmr_train_step(state, batch, micro_sets, self.cfg, strategy=self.strategy, epoch=epoch)
            losses.append(record.task_loss)
            if not self.handler:
                continue
            self.handler.on_step_end(self.name, record)
            if record.network_refreshed and state.network is not None:
                self.handler.on_network_update(self.name, record.step, state.network)
        return state, losses


def _train(
    run: _Run, train_set: Dataset, val_set: Dataset, test_set: Dataset, network: BayesianNetwork | None
) -> TrainResult:
    cfg = run.cfg
    _check_schema(train_set, val_set, test_set)
    micro_sets = _draw_micro_sets(val_set, cfg, run.micro_rng)
    bn = _prepare_network(cfg, train_set, network)
    params = init_classifier((train_set.feature_dim, *cfg.hidden_dims, 1), run.init_seed)
    state = TrainState(params=params, network=bn, buffer=_initial_buffer(bn, cfg))
    history: list[EpochRecord] = []
    best, best_epoch, best_accuracy = params, 1, -1.0
    for epoch in range(1, cfg.epochs + 1):
        if epoch > 1 and cfg.resample_micro_sets:
            micro_sets = _draw_micro_sets(val_set, cfg, run.micro_rng)
        state, losses = run.epoch(state, train_set, micro_sets, epoch)
        record = _epoch_record(state, val_set, micro_sets, cfg, epoch, losses)
        history.append(record)
        run.handler.on_epoch_end(run.name, record)
        if record.accuracy > best_accuracy:
            best, best_epoch, best_accuracy = state.params, epoch, record.accuracy
    return TrainResult(
        params=best,
        report=evaluate_classifier(best, test_set),
        history=tuple(history),
        network=state.network,
        best_epoch=best_epoch,
    )


def train(
    cfg: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    *,
    network: BayesianNetwork | None = None,
    observers: Sequence[TrainingObserver] = (),
    run_name: str | None = None,
) -> TrainResult:
    """Train a classifier and report on the checkpoint with the best validation accuracy.

    Randomness is split from ``cfg.seed`` into independent streams for the
    initial parameters, shuffling, micro-set sampling and random weights, so the
    same configuration always yields the same result.

    Args:
        cfg: Training configuration
        train_set: Rows the classifier and the network are fitted on
        val_set: Rows for micro sets, epoch metrics and checkpoint selection
        test_set: Rows of the final report
        network: Attribute network to calibrate with (default: learned from train_set)
        observers: Observers notified of run, step, network and epoch events
        run_name: Name passed to observers (default: ``<label>_<seed>``)

    Returns:
        TrainResult with the selected checkpoint, its test report and the history.

    Raises:
        ConfigurationError: If the datasets or the network disagree on attributes.
        SamplingError: If a micro validation set cannot be filled.
        DivergenceError: If training produces non-finite values.

    """
    name = run_name or f"{run_label(cfg)}_{cfg.seed}"
    handler = CallbackHandler(observers)
    handler.on_run_start(name, cfg)
    try:
        result = _train(_Run(cfg, name, handler), train_set, val_set, test_set, network)
    except Exception as error:
        handler.on_run_end(name, None, error)
        raise
    handler.on_run_end(name, result.report, None)
    return result
