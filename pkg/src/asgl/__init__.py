"""Sparse-group and adaptive sparse-group LASSO for smooth convex M-estimation."""

from .errors import *  # noqa: F401,F403
from .groups import ActiveSets, GroupStructure, active_sets_from, build_groups, compare_supports
from .loss import (Dataset, loss_hessian, loss_score, loss_value, observation_scores,
                   sandwich_covariance)
from .penalty import (AdaptiveConfig, PenaltySpec, adaptive_weights, check_rate_feasibility,
                      penalty_value, tuning_from_rates)
from .pipeline import (KINDS, CvReport, PipelineConfig, cross_validate, first_step_estimator,
                       fit_estimator)
from .solver import (FitResult, SolverConfig, coefficient_drop_test, group_drop_test,
                     kkt_verify, soft_threshold, solve)

__version__ = "0.1.0"
