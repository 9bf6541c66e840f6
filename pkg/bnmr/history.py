"""Per-step and per-epoch training records and the history CSV."""

from collections.abc import Sequence
from pathlib import Path

import pandas as pd
from pydantic import Field

from bnmr.strict_base_model import StrictBaseModel

__all__ = ["HISTORY_COLUMNS", "EpochRecord", "StepRecord", "history_frame", "write_history_csv"]

HISTORY_COLUMNS = ("epoch", "step", "accuracy", "mean_tprd", "mean_dig", "fair_loss", "task_loss")


class StepRecord(StrictBaseModel):
    """Outcome of one training step."""

    epoch: int = Field(ge=1)
    step: int = Field(ge=1, description="1-based global step")
    task_loss: float = Field(ge=0.0, description="Mean cross-entropy of the batch at the pre-update parameters")
    fair_loss: float = Field(ge=0.0, description="Fairness loss at the lookahead parameters (0 for baselines)")
    max_weight: float = Field(ge=0.0, le=1.0, description="Largest sample weight applied to the batch")
    network_refreshed: bool = False


class EpochRecord(StrictBaseModel):
    """Validation metrics at the end of an epoch; one history CSV row."""

    epoch: int = Field(ge=1)
    step: int = Field(ge=0)
    accuracy: float = Field(ge=0.0, le=1.0)
    mean_tprd: float = Field(ge=0.0, le=1.0)
    mean_dig: float = Field(ge=0.0, le=1.0)
    fair_loss: float = Field(ge=0.0)
    task_loss: float = Field(ge=0.0, description="Mean of the epoch's step losses")
    soft_tprd: float = Field(default=0.0, ge=0.0, le=1.0, description="Confidence-based TPRD; not written to CSV")


def history_frame(records: Sequence[EpochRecord]) -> pd.DataFrame:
    """Tabulate epoch records in the fixed column order.

    Returns:
        DataFrame with one row per epoch.

    """
    rows = [record.model_dump(include=set(HISTORY_COLUMNS)) for record in records]
    return pd.DataFrame(rows, columns=list(HISTORY_COLUMNS))


def write_history_csv(records: Sequence[EpochRecord], path: Path) -> None:
    """Write ``epoch,step,accuracy,mean_tprd,mean_dig,fair_loss,task_loss`` rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    history_frame(records).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
