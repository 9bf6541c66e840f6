"""Command-line entry point ``bnmr``.

Subcommands::

    bnmr gen-data --config synthetic.spec --rows 1000 --seed 0 --out data/
    bnmr bn-learn --dataset data/dataset.csv --attributes A,B,C --out net/
    bnmr train --config experiment.cfg --out runs/ [--seed 0,1,2] [--parallel]
    bnmr audit --dataset data/dataset.csv --predictions preds.txt --attributes A,B --out audit/
    bnmr phi --dataset list_attr_celeba.txt --columns Male,No_Beard --out phi/
    bnmr sweep --config experiment.cfg --taus 0.5,0.9,2.0 --out sweep/

Every output lands under ``--out`` with a fixed name, and repeated invocations
with the same inputs write byte-identical files.
"""

import argparse
import asyncio
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import override

import numpy as np
import pandas as pd
from pydantic import Field, ValidationError

from bnmr._internal.arrays import IntArray
from bnmr.bayesnet import BayesianNetwork, append_prediction_node, edge_dependencies, learn_network
from bnmr.config import (
    DataSourceConfig,
    ExperimentConfig,
    RunPlan,
    TrainConfig,
    load_experiment_config,
    load_synthetic_spec,
)
from bnmr.data import (
    Dataset,
    binary_column_names,
    generate_synthetic,
    load_dataset,
    read_binary_columns,
    split,
    write_dataset_csv,
)
from bnmr.errors import BnmrError, ConfigurationError, ParseError
from bnmr.fairmetrics import FairnessReport, PhiMatrix, fairness_report, phi_matrix
from bnmr.history import EpochRecord, write_history_csv
from bnmr.network_format import read_network, write_network
from bnmr.observer import TrainingObserver
from bnmr.reweighting import TrainResult, train
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "AGGREGATE_METRICS",
    "ExperimentData",
    "ProgressObserver",
    "RunOutcome",
    "aggregate_text",
    "cmd_audit",
    "cmd_bn_learn",
    "cmd_gen_data",
    "cmd_phi",
    "cmd_sweep",
    "cmd_train",
    "main",
    "prepare_data",
    "run_experiment",
]

AGGREGATE_METRICS = ("accuracy", "mean_tprd", "mean_dig")


class ProgressObserver(TrainingObserver):
    """Writes one line per epoch and per network refresh to stderr."""

    @override
    def on_epoch_end(self, run_name: str, record: EpochRecord) -> None:
        sys.stderr.write(
            f"[{run_name}] epoch {record.epoch} step {record.step}: accuracy={record.accuracy:.4f} "
            f"mean_tprd={record.mean_tprd:.4f} mean_dig={record.mean_dig:.4f} soft_tprd={record.soft_tprd:.4f}\n"
        )

    @override
    def on_network_update(self, run_name: str, step: int, network: BayesianNetwork) -> None:
        _ = network
        sys.stderr.write(f"[{run_name}] prediction node refreshed at step {step}\n")

    @override
    def on_run_end(self, run_name: str, report: FairnessReport | None, error: Exception | None) -> None:
        if error is not None:
            sys.stderr.write(f"[{run_name}] failed: {error}\n")
        elif report is not None:
            sys.stderr.write(f"[{run_name}] test accuracy={report.accuracy:.4f} mean_tprd={report.mean_tprd:.4f}\n")


class ExperimentData(StrictBaseModel):
    """Train, validation and test rows of one seed, plus an optional prebuilt network."""

    train: Dataset
    val: Dataset
    test: Dataset
    network: BayesianNetwork | None = None


class RunOutcome(StrictBaseModel):
    """Result of one (label, seed) run."""

    label: str
    seed: int
    result: TrainResult


class _Job(StrictBaseModel):
    name: str
    seed: int
    config: TrainConfig = Field(description="Config with mode, ablations, seed and temperature applied")


def _derived_seeds(seed: int, count: int) -> tuple[int, ...]:
    return tuple(int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count))


def prepare_data(source: DataSourceConfig, seed: int) -> ExperimentData:
    """Build the datasets of one seed.

    Synthetic specs generate biased training rows and clean validation and test
    rows from independent streams; file sources are split by partition file or
    by seeded ratios.

    Returns:
        ExperimentData for the seed.

    """
    network = read_network(source.network) if source.network is not None else None
    if source.synthetic_spec is not None:
        spec = load_synthetic_spec(source.synthetic_spec)
        train_seed, val_seed, test_seed = _derived_seeds(seed, 3)
        parts = (
            _select(generate_synthetic(spec, source.train_rows, train_seed, biased=True), source.attributes),
            _select(generate_synthetic(spec, source.val_rows, val_seed, biased=False), source.attributes),
            _select(generate_synthetic(spec, source.test_rows, test_seed, biased=False), source.attributes),
        )
    else:
        dataset = load_dataset(
            _required(source.dataset, "data.dataset"),
            source.target,
            source.attributes,
            feature_names=source.features,
            demographic_name=source.demographic,
        )
        parts = split(dataset, source.partition or source.split_ratios, seed)
    train_set, val_set, test_set = parts
    return ExperimentData(train=train_set, val=val_set, test=test_set, network=network)


def _select(dataset: Dataset, attributes: Sequence[str] | None) -> Dataset:
    return dataset if attributes is None else dataset.with_attributes(attributes)


def _required[T](value: T | None, name: str) -> T:
    if value is None:
        msg = f"{name} must be set"
        raise ConfigurationError(msg)
    return value


async def _run_jobs(
    jobs: Sequence[_Job], datasets: dict[int, ExperimentData], observers: Sequence[TrainingObserver], *, parallel: bool
) -> tuple[TrainResult, ...]:
    async def run_one(job: _Job) -> TrainResult:
        data = datasets[job.seed]
        try:
            return await asyncio.to_thread(
                train,
                job.config,
                data.train,
                data.val,
                data.test,
                network=data.network,
                observers=observers,
                run_name=job.name,
            )
        except BnmrError as error:
            error.add_note(f"in run {job.name}")
            raise

    if parallel:
        return tuple(await asyncio.gather(*(run_one(job) for job in jobs)))
    return tuple([await run_one(job) for job in jobs])


async def run_experiment(
    config: ExperimentConfig, observers: Sequence[TrainingObserver] = ()
) -> tuple[RunOutcome, ...]:
    """Train every (label, seed) pair of the run plan.

    Runs execute one after another, or concurrently in worker threads when
    ``run.parallel`` is set; outcomes are always ordered by label, then seed.

    Returns:
        One RunOutcome per pair.

    """
    datasets = {seed: prepare_data(config.data, seed) for seed in config.run.seeds}
    pairs = [(label, seed) for label in config.run.modes for seed in config.run.seeds]
    jobs = [_Job(name=f"{label}_{seed}", seed=seed, config=config.train.for_label(label, seed)) for label, seed in pairs]
    results = await _run_jobs(jobs, datasets, observers, parallel=config.run.parallel)
    return tuple(
        RunOutcome(label=label, seed=seed, result=result) for (label, seed), result in zip(pairs, results, strict=True)
    )


def aggregate_text(outcomes: Sequence[RunOutcome]) -> str:
    """Mean and sample standard deviation across seeds per label and metric.

    Returns:
        ``<label>.<metric>.mean = v`` and ``<label>.<metric>.std = v`` lines; the std
        of a single seed is 0.

    """
    frame = pd.DataFrame(
        [
            {"label": outcome.label, **{metric: getattr(outcome.result.report, metric) for metric in AGGREGATE_METRICS}}
            for outcome in outcomes
        ],
        columns=["label", *AGGREGATE_METRICS],
    )
    stats = frame.groupby("label", sort=False)[list(AGGREGATE_METRICS)].agg(["mean", "std"]).fillna(0.0)
    lines = [
        f"{label}.{metric}.{statistic} = {float(stats.loc[label, (metric, statistic)]):.17g}"
        for label in stats.index
        for metric in AGGREGATE_METRICS
        for statistic in ("mean", "std")
    ]
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _with_overrides(config: ExperimentConfig, seeds: Sequence[int] | None, *, parallel: bool) -> ExperimentConfig:
    run = config.run.model_copy(update={"parallel": parallel or config.run.parallel})
    if seeds is not None:
        run = RunPlan.model_validate({**run.model_dump(), "seeds": tuple(seeds)})
    return config.model_copy(update={"run": run})


def _output_dir(out: Path | None, config: ExperimentConfig) -> Path:
    return _required(out or config.run.out, "--out or run.out")


def cmd_gen_data(spec_path: Path, rows: int, seed: int, out: Path, *, biased: bool = True) -> Path:
    """Generate a synthetic dataset and write ``dataset.csv``.

    Returns:
        Path of the written file.

    """
    dataset = generate_synthetic(load_synthetic_spec(spec_path), rows, seed, biased=biased)
    target = out / "dataset.csv"
    write_dataset_csv(dataset, target)
    return target


def cmd_bn_learn(
    dataset_path: Path,
    attributes: Sequence[str],
    out: Path,
    *,
    alpha: float = 0.05,
    pseudocount: float = 1.0,
) -> BayesianNetwork:
    """Learn an attribute network, append the prediction node and write ``bn.txt`` and ``bn_edges.csv``.

    Returns:
        The written network.

    """
    data = read_binary_columns(dataset_path, attributes)
    attribute_network = learn_network(data, attributes, alpha=alpha, pseudocount=pseudocount)
    network = append_prediction_node(attribute_network)
    write_network(network, out / "bn.txt")
    edges = pd.DataFrame(
        [
            {"parent": e.parent, "child": e.child, "chi2": e.test.chi2, "p_value": e.test.p_value, "phi": e.test.phi}
            for e in edge_dependencies(attribute_network, data)
        ],
        columns=["parent", "child", "chi2", "p_value", "phi"],
    )
    edges.to_csv(out / "bn_edges.csv", index=False, float_format="%.17g", lineterminator="\n")
    return network


def cmd_train(
    config_path: Path,
    out: Path | None = None,
    *,
    seeds: Sequence[int] | None = None,
    parallel: bool = False,
    observers: Sequence[TrainingObserver] = (),
) -> tuple[RunOutcome, ...]:
    """Run the configured experiment and write reports, histories and ``aggregate.txt``.

    Returns:
        Outcomes in label, then seed order.

    """
    config = _with_overrides(load_experiment_config(config_path), seeds, parallel=parallel)
    directory = _output_dir(out, config)
    outcomes = asyncio.run(run_experiment(config, observers))
    for outcome in outcomes:
        stem = f"{outcome.label}_{outcome.seed}"
        _write_text(directory / f"report_{stem}.txt", outcome.result.report.to_text())
        write_history_csv(outcome.result.history, directory / f"history_{stem}.csv")
    _write_text(directory / "aggregate.txt", aggregate_text(outcomes))
    return outcomes


def _read_predictions(path: Path) -> list[int]:
    predictions: list[int] = []
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        token = raw.strip()
        if not token:
            continue
        if token not in {"0", "1"}:
            raise ParseError(path, number, f"expected a 0/1 prediction, got {token!r}")
        predictions.append(int(token))
    return predictions


def _demographic_column(dataset_path: Path, name: str | None) -> IntArray | None:
    if name is None or name not in binary_column_names(dataset_path):
        return None
    return read_binary_columns(dataset_path, [name])[:, 0]


def cmd_audit(
    dataset_path: Path,
    predictions_path: Path,
    attributes: Sequence[str],
    out: Path,
    *,
    target: str | None = None,
    demographic: str | None = None,
) -> FairnessReport:
    """Score stored predictions and write ``audit.txt``.

    A demographic column that the dataset lacks is reported as a note.

    Returns:
        FairnessReport with TPRD, DIG, the demographic section and phi among the attributes.

    """
    dataset = load_dataset(dataset_path, target, attributes)
    report = fairness_report(
        _read_predictions(predictions_path),
        dataset.labels,
        dataset.attributes,
        dataset.attribute_names,
        demographic=_demographic_column(dataset_path, demographic),
        demographic_name=demographic,
        phi_data=(dataset.attributes, dataset.attribute_names),
    )
    _write_text(out / "audit.txt", report.to_text())
    return report


def cmd_phi(dataset_path: Path, columns: Sequence[str], out: Path) -> PhiMatrix:
    """Write the pairwise phi table of binary columns as ``phi.csv``.

    Returns:
        The PhiMatrix.

    """
    matrix = phi_matrix(read_binary_columns(dataset_path, columns), columns)
    _write_text(out / "phi.csv", matrix.to_csv())
    return matrix


def cmd_sweep(
    config_path: Path,
    taus: Sequence[float],
    out: Path | None = None,
    *,
    seeds: Sequence[int] | None = None,
    parallel: bool = False,
    observers: Sequence[TrainingObserver] = (),
) -> pd.DataFrame:
    """Re-run BNMR for every temperature and seed; write histories and ``sweep.csv``.

    Returns:
        The sweep table with columns tau, seed, accuracy, mean_tprd, mean_dig.

    Raises:
        ConfigurationError: If a temperature is not positive.

    """
    if not taus or any(not tau > 0.0 for tau in taus):
        msg = f"temperatures must be positive, got {list(taus)}"
        raise ConfigurationError(msg)
    config = _with_overrides(load_experiment_config(config_path), seeds, parallel=parallel)
    directory = _output_dir(out, config)
    seeds_run = config.run.seeds
    jobs = [
        _Job(
            name=f"tau{tau:g}_{seed}",
            seed=seed,
            config=config.train.for_label("bnmr", seed).model_copy(update={"temperature": tau}),
        )
        for tau in taus
        for seed in seeds_run
    ]
    datasets = {seed: prepare_data(config.data, seed) for seed in seeds_run}
    results = asyncio.run(_run_jobs(jobs, datasets, observers, parallel=config.run.parallel))
    rows: list[dict[str, float | int]] = []
    for job, result in zip(jobs, results, strict=True):
        write_history_csv(result.history, directory / f"history_{job.name}.csv")
        rows.append({"tau": job.config.temperature, "seed": job.seed} | _metrics(result.report))
    table = pd.DataFrame(rows, columns=["tau", "seed", *AGGREGATE_METRICS])
    table.to_csv(directory / "sweep.csv", index=False, float_format="%.17g", lineterminator="\n")
    return table


def _metrics(report: FairnessReport) -> dict[str, float]:
    return {metric: getattr(report, metric) for metric in AGGREGATE_METRICS}


def _list_of[T](convert: Callable[[str], T]) -> Callable[[str], tuple[T, ...]]:
    def parse(text: str) -> tuple[T, ...]:
        try:
            values = tuple(convert(item.strip()) for item in text.split(",") if item.strip())
        except ValueError:
            msg = f"expected a comma-separated list, got {text!r}"
            raise argparse.ArgumentTypeError(msg) from None
        if not values:
            msg = "expected at least one value"
            raise argparse.ArgumentTypeError(msg)
        return values

    return parse


def _progress(args: argparse.Namespace) -> tuple[TrainingObserver, ...]:
    return () if args.quiet else (ProgressObserver(),)


def _first_seed(args: argparse.Namespace) -> int:
    return args.seed[0] if args.seed else 0


def _handle_gen_data(args: argparse.Namespace) -> None:
    cmd_gen_data(args.config, args.rows, _first_seed(args), args.out, biased=not args.clean)


def _handle_bn_learn(args: argparse.Namespace) -> None:
    cmd_bn_learn(args.dataset, args.attributes, args.out, alpha=args.alpha, pseudocount=args.pseudocount)


def _handle_train(args: argparse.Namespace) -> None:
    cmd_train(args.config, args.out, seeds=args.seed, parallel=args.parallel, observers=_progress(args))


def _handle_audit(args: argparse.Namespace) -> None:
    cmd_audit(
        args.dataset, args.predictions, args.attributes, args.out, target=args.target, demographic=args.demographic
    )


def _handle_phi(args: argparse.Namespace) -> None:
    cmd_phi(args.dataset, args.columns, args.out)


def _handle_sweep(args: argparse.Namespace) -> None:
    cmd_sweep(args.config, args.taus, args.out, seeds=args.seed, parallel=args.parallel, observers=_progress(args))


def _common(parser: argparse.ArgumentParser, *, config: bool, out_required: bool = True) -> None:
    if config:
        parser.add_argument("--config", type=Path, required=True, help="config or synthetic spec file")
    parser.add_argument("--out", type=Path, required=out_required, help="output directory")
    parser.add_argument("--seed", type=_list_of(int), default=None, help="seed or comma-separated seeds")


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--parallel", action="store_true", help="run seeds concurrently")
    parser.add_argument("--quiet", action="store_true", help="suppress progress lines")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per subcommand.

    Returns:
        Configured parser; each subparser sets ``handler``.

    """
    parser = argparse.ArgumentParser(prog="bnmr", description="Fairness-aware training with BNMR")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate a synthetic dataset")
    _common(gen, config=True)
    gen.add_argument("--rows", type=int, default=1000)
    gen.add_argument("--clean", action="store_true", help="skip the label bias rule")
    gen.set_defaults(handler=_handle_gen_data)

    learn = commands.add_parser("bn-learn", help="learn an attribute network")
    _common(learn, config=False)
    learn.add_argument("--dataset", type=Path, required=True)
    learn.add_argument("--attributes", type=_list_of(str), required=True)
    learn.add_argument("--alpha", type=float, default=0.05, help="chi-square pruning level")
    learn.add_argument("--pseudocount", type=float, default=1.0)
    learn.set_defaults(handler=_handle_bn_learn)

    run = commands.add_parser("train", help="run an experiment config")
    _common(run, config=True, out_required=False)
    _training_flags(run)
    run.set_defaults(handler=_handle_train)

    audit = commands.add_parser("audit", help="score stored predictions")
    _common(audit, config=False)
    audit.add_argument("--dataset", type=Path, required=True)
    audit.add_argument("--predictions", type=Path, required=True)
    audit.add_argument("--attributes", type=_list_of(str), required=True)
    audit.add_argument("--target", default=None, help="target column (CelebA files)")
    audit.add_argument("--demographic", default=None)
    audit.set_defaults(handler=_handle_audit)

    phi = commands.add_parser("phi", help="pairwise phi coefficients")
    _common(phi, config=False)
    phi.add_argument("--dataset", type=Path, required=True)
    phi.add_argument("--columns", type=_list_of(str), required=True)
    phi.set_defaults(handler=_handle_phi)

    sweep = commands.add_parser("sweep", help="temperature sensitivity sweep")
    _common(sweep, config=True, out_required=False)
    _training_flags(sweep)
    sweep.add_argument("--taus", type=_list_of(float), default=(0.5, 0.9, 2.0))
    sweep.set_defaults(handler=_handle_sweep)
    return parser


def _describe(error: Exception) -> str:
    if isinstance(error, ValidationError):
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or error.title
        return f"{location}: {first['msg']}"
    notes = getattr(error, "__notes__", ())
    return " ".join((str(error), *(f"({note})" for note in notes)))


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments and dispatch to a subcommand.

    Returns:
        0 on success, 1 on any error (reported as one line on stderr).

    """
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except (BnmrError, ValidationError, OSError) as error:
        sys.stderr.write(f"bnmr: error: {_describe(error)}\n")
        return 1
    return 0
