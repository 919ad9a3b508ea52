"""Adversarial-variational sequential latent-variable models for RUL prognostics."""

import json

from ._avfp import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    Error,
    NumericError,
    ShapeError,
    TapeError,
    TrainingAborted,
    evaluate,
    gaussian_log_density,
    gradcheck,
    kalman_loglik,
    kl_diag_gaussians,
    load_subset,
    rmse,
    toy_gan,
    version,
    write_surrogate,
)
from . import _avfp


def _config_text(config):
    if config is None or isinstance(config, str):
        return config
    return json.dumps(config)


def default_config():
    return json.loads(_avfp.default_config())


def train(data_dir, config=None, subset="FD001", checkpoint=None):
    return _avfp.train(data_dir, _config_text(config), subset, checkpoint)


def run_experiment(data_dir, config=None, runs=1, same_seed=False, out=None, subset="FD001"):
    return _avfp.run_experiment(data_dir, _config_text(config), runs, same_seed, out, subset)


__version__ = version()
