"""Neyman-Pearson classification under label noise via empirical likelihood."""

__version__ = "0.1.0"

from .binary import BinaryNpClassifier, classify_binary, fit_np_binary, np_binary_from_params
from .datagen import ScenarioSpec, load_scenario, oracle_drm_params, sample_test, sample_training
from .em import EmConfig, EmFitError, EmTrace, em_fit, fit_identity_noise
from .estimators import (
    NoisyLabelDRM,
    NoisyNPClassifier,
    NoisyNPMCClassifier,
    NoisyUmbrellaClassifier,
)
from .evalkit import run_experiment
from .io import read_dataset_csv, write_dataset_csv
from .model import (
    Basis,
    Dataset,
    ModelParams,
    ModelValidationError,
    NoiseMatrices,
    NpmcSpec,
    complete_noise_matrices,
    make_dataset,
    posterior,
)
from .npmc import HjConfig, classify_npmc, fit_npmc, npmc_from_params
from .umbrella import UmbrellaConfig, fit_umbrella

__all__ = [
    "Basis",
    "BinaryNpClassifier",
    "Dataset",
    "EmConfig",
    "EmFitError",
    "EmTrace",
    "HjConfig",
    "ModelParams",
    "ModelValidationError",
    "NoiseMatrices",
    "NoisyLabelDRM",
    "NoisyNPClassifier",
    "NoisyNPMCClassifier",
    "NoisyUmbrellaClassifier",
    "NpmcSpec",
    "ScenarioSpec",
    "UmbrellaConfig",
    "classify_binary",
    "classify_npmc",
    "complete_noise_matrices",
    "em_fit",
    "fit_identity_noise",
    "fit_np_binary",
    "fit_npmc",
    "fit_umbrella",
    "load_scenario",
    "make_dataset",
    "np_binary_from_params",
    "npmc_from_params",
    "oracle_drm_params",
    "posterior",
    "read_dataset_csv",
    "run_experiment",
    "sample_test",
    "sample_training",
    "write_dataset_csv",
    "__version__",
]
