"""Observer pattern for monitoring training runs.

Observers receive run, step, network and epoch events without being able to
change the trajectory: they see frozen values only, and errors they raise are
reported and swallowed.
"""

from bnmr.bayesnet import BayesianNetwork
from bnmr.config import TrainConfig
from bnmr.fairmetrics import FairnessReport
from bnmr.history import EpochRecord, StepRecord

__all__ = ["TrainingObserver"]


class TrainingObserver:
    """Base class for observing training runs.

    Subclass and override only the hooks you need; every hook defaults to a
    no-op. Hooks run synchronously on the training thread, so keep them cheap.
    Any exception raised by a hook is written to stderr and training continues.
    """

    def on_run_start(self, run_name: str, config: TrainConfig) -> None:
        """Handle run start.

        Args:
            run_name: Identifier of the run, e.g. ``bnmr_3``
            config: Hyperparameters the run uses

        """
        _ = self, run_name, config  # No-op in base implementation

    def on_step_end(self, run_name: str, record: StepRecord) -> None:
        """Handle the end of one training step.

        Args:
            run_name: Identifier of the run
            record: Losses and weight summary of the step

        """
        _ = self, run_name, record  # No-op in base implementation

    def on_network_update(self, run_name: str, step: int, network: BayesianNetwork) -> None:
        """Handle an online refresh of the prediction node.

        Args:
            run_name: Identifier of the run
            step: Global step at which the refresh happened
            network: Refreshed network

        """
        _ = self, run_name, step, network  # No-op in base implementation

    def on_epoch_end(self, run_name: str, record: EpochRecord) -> None:
        """Handle the end of an epoch.

        Args:
            run_name: Identifier of the run
            record: Validation metrics of the epoch

        """
        _ = self, run_name, record  # No-op in base implementation

    def on_run_end(self, run_name: str, report: FairnessReport | None, error: Exception | None) -> None:
        """Handle run end.

        Args:
            run_name: Identifier of the run
            report: Test-set report of the selected checkpoint (if successful)
            error: Exception that terminated the run (if any)

        """
        _ = self, run_name, report, error  # No-op in base implementation
