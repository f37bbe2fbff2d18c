"""Differentially private pairwise learning by gradient perturbation."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    Bounds,
    Dataset,
    ModelParams,
    Sample,
    SyntheticDistribution,
    gen_synthetic,
    load_dataset,
    pair_stream,
    save_dataset,
)
from .losses import LossConstants, MetricLoss, PairwiseLoss, RankingLoss, make_loss, registered_constants  # noqa: E402
from .optimizer import TrainConfig, TrainResult, dp_pairwise_gd, exact_minimize  # noqa: E402
from .privacy import PrivacyBudget, calibrate_sigma_basic, calibrate_sigma_ma  # noqa: E402
from .risk import empirical_risk, empirical_risk_grad, excess_population_risk, population_risk_mc  # noqa: E402
