"""Soft labels from hard labels plus additional supervision.

Soft labels are affine combinations ``lam * onehot(y) + (1 - lam) * p_a``.
The package computes the optimal mixing coefficient and the exact bias/variance
split of ``KL(p_star || p_lam)``, evaluates the label-quality-aware
generalization bound, and runs desk-scale method comparisons on synthetic data
whose label posterior is known exactly.
"""

from softlabel.bounds import (
    BoundInputs,
    BoundReport,
    check_risk_gap,
    generalization_bound,
    mean_kl_gap,
    rate_crossover,
    risk_diff_bound,
)
from softlabel.classifier import SoftLabelClassifier, TrainConfig, evaluate, empirical_soft_risk, grad_check, train
from softlabel.divergence import binary_kl, hellinger_sq, kl, kl_smoothed, total_variation
from softlabel.mixing import DecompositionReport, bias, brute_force_lambda, decompose, optimal_lambda, variance
from softlabel.simplex import (
    LabelDistribution,
    LambdaInterval,
    affine_combine,
    dirac,
    lambda_feasible_range,
    restrict_exclude,
)
from softlabel.supervision import (
    LambdaPolicy,
    SoftLabelEncoder,
    SupervisionKind,
    build_soft_dataset,
    t1oc,
    t2oc,
    uniform_other,
)
from softlabel.synth import SupervisedInstance, SyntheticConfig, generate, label_noise_rate, posterior

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "BoundReport",
    "DecompositionReport",
    "LabelDistribution",
    "LambdaInterval",
    "LambdaPolicy",
    "SoftLabelClassifier",
    "SoftLabelEncoder",
    "SupervisedInstance",
    "SupervisionKind",
    "SyntheticConfig",
    "TrainConfig",
    "affine_combine",
    "bias",
    "binary_kl",
    "brute_force_lambda",
    "build_soft_dataset",
    "check_risk_gap",
    "decompose",
    "dirac",
    "empirical_soft_risk",
    "evaluate",
    "generalization_bound",
    "generate",
    "grad_check",
    "hellinger_sq",
    "kl",
    "kl_smoothed",
    "label_noise_rate",
    "lambda_feasible_range",
    "mean_kl_gap",
    "optimal_lambda",
    "posterior",
    "rate_crossover",
    "restrict_exclude",
    "risk_diff_bound",
    "t1oc",
    "t2oc",
    "total_variation",
    "train",
    "uniform_other",
    "variance",
]
