"""Experiment configuration: key-value files validated into frozen models.

Files are flat ``section.key = value`` lines; ``#`` starts a comment. Values are
strings until pydantic validates them in lax mode, the only place this package
relaxes strict typing. Comma-separated values fill tuple fields.

Example::

    train.epochs = 5
    train.hidden_dims = 16
    data.synthetic_spec = synthetic.spec
    run.modes = vanilla, random, bnmr
    run.seeds = 0, 1, 2, 3, 4
"""

from collections.abc import Iterable, Mapping
from enum import StrEnum
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from bnmr.bayesnet import DEFAULT_PRIOR_STRENGTH, DEFAULT_PRUNE_ALPHA, DEFAULT_PSEUDOCOUNT
from bnmr.data import BiasRule, FeatureRule, LabelRule, SyntheticSpec
from bnmr.errors import ConfigurationError, ParseError
from bnmr.fairmetrics import DEFAULT_MICRO_SET_SIZE, FairnessNorm
from bnmr.network_format import read_network
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "RUN_LABELS",
    "Ablation",
    "DataSourceConfig",
    "ExperimentConfig",
    "RunPlan",
    "TrainConfig",
    "TrainingMode",
    "load_experiment_config",
    "load_synthetic_spec",
    "parse_key_values",
]

_MAX_EXHAUSTIVE_ATTRIBUTES = 6


class TrainingMode(StrEnum):
    """Sample weighting scheme."""

    BNMR = "bnmr"
    VANILLA = "vanilla"
    RANDOM = "random"


class Ablation(StrEnum):
    """Components of BNMR that can be switched off one at a time."""

    NO_NORMALIZATION = "no_normalization"
    NO_ONLINE_UPDATE = "no_online_update"
    NO_CALIBRATION = "no_calibration"
    NO_REWEIGHTING = "no_reweighting"


RUN_LABELS = (*(mode.value for mode in TrainingMode), *(ablation.value for ablation in Ablation))


def _split_list(value: object) -> object:
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    return value


class TrainConfig(StrictBaseModel):
    """Hyperparameters of one training run."""

    batch_size: int = Field(default=16, gt=0)
    learning_rate: float = Field(default=1e-4, gt=0.0, description="Step size alpha of lookahead and SGD")
    meta_learning_rate: float = Field(default=1e-2, ge=0.0, description="Step size of the weight-logit update")
    temperature: float = Field(default=0.9, gt=0.0, description="Softmax temperature tau")
    bn_update_interval: int = Field(default=50, gt=0, description="Steps N between online network updates")
    bn_prior_strength: float = Field(default=DEFAULT_PRIOR_STRENGTH, gt=0.0)
    fairness_val_size: int = Field(default=DEFAULT_MICRO_SET_SIZE, gt=0, description="Micro set size, both sides")
    epochs: int = Field(default=5, gt=0)
    hidden_dims: tuple[int, ...] = Field(default=(16,), description="Hidden layer widths of the classifier")
    norm: FairnessNorm = FairnessNorm.L1
    mode: TrainingMode = TrainingMode.BNMR
    ablations: frozenset[Ablation] = frozenset()
    seed: int = 0
    resample_micro_sets: bool = Field(default=False, description="Draw fresh micro sets every epoch")
    prune_alpha: float = Field(default=DEFAULT_PRUNE_ALPHA, gt=0.0, lt=1.0)
    pseudocount: float = Field(default=DEFAULT_PSEUDOCOUNT, ge=0.0)

    @field_validator("hidden_dims", "ablations", mode="before")
    @classmethod
    def _comma_list(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(width <= 0 for width in value):
            msg = f"hidden layer widths must be positive, got {value}"
            raise ConfigurationError(msg)
        return value

    @model_validator(mode="after")
    def _check_combination(self) -> "TrainConfig":
        if self.ablations and self.mode is not TrainingMode.BNMR:
            msg = f"ablations {sorted(self.ablations)} only apply to mode 'bnmr', not '{self.mode}'"
            raise ConfigurationError(msg)
        if self.fairness_val_size % 2:
            msg = f"fairness_val_size must be even (two equal sides), got {self.fairness_val_size}"
            raise ConfigurationError(msg)
        return self

    @property
    def effective_mode(self) -> TrainingMode:
        """Mode actually trained; BNMR without reweighting is vanilla."""
        return TrainingMode.VANILLA if Ablation.NO_REWEIGHTING in self.ablations else self.mode

    @property
    def uses_network(self) -> bool:
        """Whether the run needs a Bayesian network calibrator."""
        return self.effective_mode is TrainingMode.BNMR and Ablation.NO_CALIBRATION not in self.ablations

    def for_label(self, label: str, seed: int) -> "TrainConfig":
        """Derive the config of one run label (a mode or a single-ablation label).

        Returns:
            Copy with mode, ablations and seed set.

        Raises:
            ConfigurationError: If the label is unknown.

        """
        if label in {mode.value for mode in TrainingMode}:
            return self.model_copy(update={"mode": TrainingMode(label), "ablations": frozenset(), "seed": seed})
        if label in {ablation.value for ablation in Ablation}:
            ablations = frozenset({Ablation(label)})
            return self.model_copy(update={"mode": TrainingMode.BNMR, "ablations": ablations, "seed": seed})
        msg = f"unknown run label '{label}'; expected one of {RUN_LABELS}"
        raise ConfigurationError(msg)


class DataSourceConfig(StrictBaseModel):
    """Where the rows come from and which columns matter."""

    synthetic_spec: Path | None = None
    dataset: Path | None = Field(default=None, description="CelebA annotation file or dataset CSV")
    partition: Path | None = Field(default=None, description="CelebA eval-partition file")
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    train_rows: int = Field(default=20000, gt=0)
    val_rows: int = Field(default=2000, gt=0)
    test_rows: int = Field(default=5000, gt=0)
    network: Path | None = Field(default=None, description="Prebuilt attribute network (skips structure learning)")
    target: str | None = None
    attributes: tuple[str, ...] | None = None
    features: tuple[str, ...] | None = None
    demographic: str | None = None

    @field_validator("split_ratios", "attributes", "features", mode="before")
    @classmethod
    def _comma_list(cls, value: object) -> object:
        return _split_list(value)

    @model_validator(mode="after")
    def _check_source(self) -> "DataSourceConfig":
        if (self.synthetic_spec is None) == (self.dataset is None):
            msg = "exactly one of data.synthetic_spec and data.dataset must be set"
            raise ConfigurationError(msg)
        if self.attributes is not None and not 1 <= len(self.attributes) <= _MAX_EXHAUSTIVE_ATTRIBUTES:
            msg = f"data.attributes must name 1 to {_MAX_EXHAUSTIVE_ATTRIBUTES} attributes, got {len(self.attributes)}"
            raise ConfigurationError(msg)
        return self

    def resolved(self, base: Path) -> "DataSourceConfig":
        """Resolve relative paths against a base directory.

        Returns:
            Copy with absolute-or-base-relative paths.

        """
        fields = ("synthetic_spec", "dataset", "partition", "network")
        update = {name: base / path for name in fields if (path := getattr(self, name)) is not None}
        return self.model_copy(update=update)


class RunPlan(StrictBaseModel):
    """Which runs to execute and where to write them."""

    modes: tuple[str, ...] = ("vanilla", "random", "bnmr")
    seeds: tuple[int, ...] = (0,)
    parallel: bool = False
    out: Path | None = None

    @field_validator("modes", "seeds", mode="before")
    @classmethod
    def _comma_list(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("modes")
    @classmethod
    def _known_modes(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        unknown = [label for label in value if label not in RUN_LABELS]
        if unknown or not value or len(set(value)) != len(value):
            msg = f"run.modes must be distinct labels from {RUN_LABELS}, got {value}"
            raise ConfigurationError(msg)
        return value

    @field_validator("seeds")
    @classmethod
    def _some_seeds(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or len(set(value)) != len(value):
            msg = f"run.seeds must be a non-empty list of distinct seeds, got {value}"
            raise ConfigurationError(msg)
        return value


class ExperimentConfig(StrictBaseModel):
    """Everything a ``train`` or ``sweep`` invocation needs."""

    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataSourceConfig
    run: RunPlan = Field(default_factory=RunPlan)


def parse_key_values(lines: Iterable[str], source: str) -> tuple[dict[str, str], dict[str, int]]:
    """Read ``key = value`` lines.

    Returns:
        ``(values, line_numbers)`` keyed by the dotted key.

    Raises:
        ParseError: On a line without ``=``, an empty key or a duplicate key.

    """
    values: dict[str, str] = {}
    numbers: dict[str, int] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, separator, value = (part.strip() for part in line.partition("="))
        if not separator or not key:
            raise ParseError(source, number, f"expected 'key = value', got {line!r}")
        if key in values:
            raise ParseError(source, number, f"duplicate key '{key}' (first set on line {numbers[key]})")
        values[key] = value
        numbers[key] = number
    return values, numbers


def _nest(values: Mapping[str, str]) -> dict[str, object]:
    nested: dict[str, object] = {}
    sections: dict[str, dict[str, str]] = {}
    for key, value in values.items():
        section, _, name = key.partition(".")
        if name:
            sections.setdefault(section, {})[name] = value
        else:
            nested[key] = value
    nested.update(sections)
    return nested


def _validate[TModel: BaseModel](
    model: type[TModel], data: Mapping[str, object], numbers: Mapping[str, int], source: str
) -> TModel:
    try:
        return model.model_validate(data, strict=False)
    except ValidationError as error:
        first = error.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        nested_lines = (number for name, number in numbers.items() if key and name.startswith(f"{key}."))
        line = numbers.get(key) or next(nested_lines, 0)
        raise ParseError(source, line, f"{key or '<config>'}: {first['msg']}") from error


def load_experiment_config(path: Path) -> ExperimentConfig:
    """Load and validate an experiment config file.

    Relative data paths are resolved against the config file's directory.

    Returns:
        Validated ExperimentConfig.

    Raises:
        ParseError: On syntax errors, unknown keys or invalid values, naming the line.

    """
    values, numbers = parse_key_values(path.read_text(encoding="utf-8").splitlines(), str(path))
    config = _validate(ExperimentConfig, _nest(values), numbers, str(path))
    return config.model_copy(update={"data": config.data.resolved(path.parent)})


class _SpecFile(StrictBaseModel):
    """Raw synthetic spec keys before node names are resolved."""

    network: Path
    target: str = "target"
    demographic: str | None = None
    label: dict[str, str] = Field(default_factory=dict[str, str])
    features: dict[str, str] = Field(default_factory=dict[str, str])
    bias: dict[str, str] | None = None


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(item) for item in text.split(","))
    except ValueError:
        msg = f"{key} must be a comma-separated list of numbers, got {text!r}"
        raise ConfigurationError(msg) from None


def _build_spec(raw: _SpecFile, base: Path) -> SyntheticSpec:
    network = read_network(base / raw.network)
    nodes = network.node_names
    label = dict(raw.label)
    features = dict(raw.features)
    coefficients = tuple(float(label.pop(f"coefficient.{node}", "0")) for node in nodes)
    label_shift = _floats(features.pop("label_shift"), "features.label_shift") if "label_shift" in features else ()
    zero_shift = ",".join("0" for _ in label_shift) or "0"
    shifts = tuple(_floats(features.pop(f"shift.{node}", zero_shift), f"features.shift.{node}") for node in nodes)
    label_rule = LabelRule.model_validate({"coefficients": coefficients, **label}, strict=False)
    feature_rule = FeatureRule.model_validate({"shifts": shifts, "label_shift": label_shift, **features}, strict=False)
    bias_rule = None if raw.bias is None else BiasRule.model_validate(raw.bias, strict=False)
    return SyntheticSpec(
        attribute_network=network,
        label_rule=label_rule,
        feature_rule=feature_rule,
        bias_rule=bias_rule,
        target_name=raw.target,
        demographic=raw.demographic,
    )


def load_synthetic_spec(path: Path) -> SyntheticSpec:
    """Load a synthetic dataset spec.

    Keys: ``network`` (network file, relative to the spec), ``target``, ``demographic``,
    ``label.intercept``, ``label.noise_scale``, ``label.coefficient.<node>``,
    ``features.sigma``, ``features.label_shift``, ``features.shift.<node>`` and the
    optional ``bias.attribute``, ``bias.group_value``, ``bias.positive_flip``,
    ``bias.negative_flip``. Unlisted coefficients and shifts default to 0.

    Returns:
        Validated SyntheticSpec.

    Raises:
        ParseError: On any syntax or validation problem.

    """
    source = str(path)
    values, numbers = parse_key_values(path.read_text(encoding="utf-8").splitlines(), source)
    raw = _validate(_SpecFile, _nest(values), numbers, source)
    try:
        return _build_spec(raw, path.parent)
    except ParseError:
        raise
    except (ValidationError, ConfigurationError, ValueError) as error:
        raise ParseError(source, 0, f"invalid synthetic spec: {error}") from error
