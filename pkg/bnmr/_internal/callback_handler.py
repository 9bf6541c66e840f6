"""Fan-out of training events to observers with error isolation."""

import sys
from collections.abc import Sequence

from bnmr.bayesnet import BayesianNetwork
from bnmr.config import TrainConfig
from bnmr.fairmetrics import FairnessReport
from bnmr.history import EpochRecord, StepRecord
from bnmr.observer import TrainingObserver


class CallbackHandler:
    """Notifies every observer of each event.

    An observer that raises is reported on stderr; the remaining observers and
    the training run are unaffected.
    """

    def __init__(self, observers: Sequence[TrainingObserver]) -> None:
        """Initialize with observers.

        Args:
            observers: Observer instances to notify, in order

        """
        self._observers = tuple(observers)

    def __bool__(self) -> bool:
        """Return whether any observer is attached."""
        return bool(self._observers)

    def _report(self, observer: TrainingObserver, hook: str, error: Exception) -> None:
        _ = self
        sys.stderr.write(f"Observer error in {observer.__class__.__name__}.{hook}: {error}\n")

    def on_run_start(self, run_name: str, config: TrainConfig) -> None:
        """Notify all observers of run start."""
        for observer in self._observers:
            try:
                observer.on_run_start(run_name, config)
            except Exception as e:  # noqa: BLE001  # Isolate observer errors
                self._report(observer, "on_run_start", e)

    def on_step_end(self, run_name: str, record: StepRecord) -> None:
        """Notify all observers of a finished step."""
        for observer in self._observers:
            try:
                observer.on_step_end(run_name, record)
            except Exception as e:  # noqa: BLE001  # Isolate observer errors
                self._report(observer, "on_step_end", e)

    def on_network_update(self, run_name: str, step: int, network: BayesianNetwork) -> None:
        """Notify all observers of a network refresh."""
        for observer in self._observers:
            try:
                observer.on_network_update(run_name, step, network)
            except Exception as e:  # noqa: BLE001  # Isolate observer errors
                self._report(observer, "on_network_update", e)

    def on_epoch_end(self, run_name: str, record: EpochRecord) -> None:
        """Notify all observers of a finished epoch."""
        for observer in self._observers:
            try:
                observer.on_epoch_end(run_name, record)
            except Exception as e:  # noqa: BLE001  # Isolate observer errors
                self._report(observer, "on_epoch_end", e)

    def on_run_end(self, run_name: str, report: FairnessReport | None, error: Exception | None) -> None:
        """Notify all observers of run end."""
        for observer in self._observers:
            try:
                observer.on_run_end(run_name, report, error)
            except Exception as e:  # noqa: BLE001  # Isolate observer errors
                self._report(observer, "on_run_end", e)
