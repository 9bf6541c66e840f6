"""BNMR: fairness-aware training by Bayesian-network-informed meta reweighting."""

from bnmr.bayesnet import (
    BayesianNetwork,
    append_prediction_node,
    calibrator_z,
    learn_network,
    online_update,
    variable_elimination,
)
from bnmr.config import Ablation, ExperimentConfig, TrainConfig, TrainingMode, load_experiment_config
from bnmr.data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, split
from bnmr.diffcore import ClassifierParams, GradVector, init_classifier
from bnmr.errors import BnmrError
from bnmr.fairmetrics import FairnessNorm, FairnessReport, dig, fairness_loss, fairness_report, phi_matrix, tprd
from bnmr.observer import TrainingObserver
from bnmr.reweighting import TrainResult, bnmr_train_step, evaluate_classifier, train
from bnmr.strict_base_model import StrictBaseModel

__all__ = [
    "Ablation",
    "BayesianNetwork",
    "BnmrError",
    "ClassifierParams",
    "Dataset",
    "ExperimentConfig",
    "FairnessNorm",
    "FairnessReport",
    "GradVector",
    "StrictBaseModel",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "TrainingMode",
    "TrainingObserver",
    "append_prediction_node",
    "bnmr_train_step",
    "calibrator_z",
    "dig",
    "evaluate_classifier",
    "fairness_loss",
    "fairness_report",
    "generate_synthetic",
    "init_classifier",
    "learn_network",
    "load_dataset",
    "load_experiment_config",
    "online_update",
    "phi_matrix",
    "split",
    "tprd",
    "train",
    "variable_elimination",
]
