"""First-step estimate, adaptive weights, cross-validated tuning and final fit."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IllPosed, MaxIterations
from .groups import GroupStructure
from .loss import Dataset, get_family, loss_hessian, loss_score, loss_value
from .penalty import AdaptiveConfig, PenaltySpec, adaptive_weights, tuning_from_rates
from .solver import FitResult, GramProblem, SolverConfig, solve

log = logging.getLogger(__name__)

KINDS = ("lasso", "adaptive_lasso", "group_lasso", "adaptive_group_lasso", "sgl", "adaptive_sgl")
DEFAULT_GRID = (0.01, 0.0316, 0.1, 0.316, 1.0, 3.16, 10.0, 31.6, 100.0)


@dataclass(frozen=True)
class PipelineConfig:
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    cv_folds: int = 5
    grid_factors: tuple[float, ...] = DEFAULT_GRID
    xi_scale: str = "unit"  # or "sqrt_size"

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if len(self.grid_factors) == 0 or any(not f > 0 for f in self.grid_factors):
            raise ValueError("grid_factors must be non-empty and strictly positive")
        if self.xi_scale not in ("unit", "sqrt_size"):
            raise ValueError(f"unknown xi_scale {self.xi_scale!r}")
        object.__setattr__(self, "grid_factors", tuple(float(f) for f in self.grid_factors))


@dataclass
class CvReport:
    grid: list[tuple[float, float]]
    mean_validation_loss: np.ndarray
    se_validation_loss: np.ndarray
    selected: tuple[float, float]
    one_se_selected: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "grid": [list(p) for p in self.grid],
            "mean_validation_loss": self.mean_validation_loss.tolist(),
            "se_validation_loss": self.se_validation_loss.tolist(),
            "selected": list(self.selected),
            "one_se_selected": list(self.one_se_selected),
        }


@dataclass
class EstimatorFit:
    kind: str
    fit: FitResult
    cv: CvReport
    spec: PenaltySpec
    first_step: np.ndarray | None = None


def first_step_estimator(data: Dataset, family="squared", config: SolverConfig = SolverConfig(),
                         max_newton: int = 200) -> np.ndarray:
    """Unpenalized M-estimate (least squares, or damped Newton for other losses)."""
    fam = get_family(family)
    fam.validate(data.response)
    if data.T <= data.d:
        raise IllPosed(f"first step needs T > d (T = {data.T}, d = {data.d})")
    if fam.name == "squared":
        X = data.design
        q, r = np.linalg.qr(X)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-12 * max(diag.max(), 1.0):
            raise IllPosed("design is rank deficient")
        return solve_triangular(r, q.T @ data.response)
    theta = np.zeros(data.d)
    f = loss_value(data, theta, fam)
    for _ in range(max_newton):
        g = loss_score(data, theta, fam)
        H = loss_hessian(data, theta, fam)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            raise IllPosed("singular Hessian in the first-step Newton iteration")
        # on separable data the score vanishes while the Newton steps do not
        if np.linalg.norm(g) <= 1e-10 and np.linalg.norm(step) <= 1e-6 * (1 + np.linalg.norm(theta)):
            return theta
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            fc = loss_value(data, cand, fam)
            if fc <= f + 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        theta, f = cand, fc
    raise MaxIterations("first-step Newton did not converge (separable data?)", theta)


def base_weights(kind: str, groups: GroupStructure, config: PipelineConfig,
                 first_step=None, T: int | None = None):
    """Penalty weights for an estimator kind; adaptive kinds need ``first_step`` and ``T``."""
    if kind not in KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}; expected one of {KINDS}")
    alpha = np.ones(groups.d)
    if config.xi_scale == "sqrt_size":
        xi = np.sqrt(np.asarray(groups.group_sizes, dtype=float))
    else:
        xi = np.ones(groups.m)
    if kind.startswith("adaptive"):
        a_w, x_w = adaptive_weights(first_step, groups, config.adaptive, T)
        if kind in ("adaptive_lasso", "adaptive_sgl"):
            alpha = a_w
        if kind in ("adaptive_group_lasso", "adaptive_sgl"):
            xi = x_w
    return alpha, xi


def tuning_grid(kind: str, config: PipelineConfig, T: int) -> list[tuple[float, float]]:
    """Pairs ``(lambda, gamma)``, sorted from the largest total penalty down."""
    lam0, gam0 = tuning_from_rates(config.adaptive, T)
    factors = sorted(set(config.grid_factors), reverse=True)
    if kind in ("lasso", "adaptive_lasso"):
        grid = [(lam0 * f, 0.0) for f in factors]
    elif kind in ("group_lasso", "adaptive_group_lasso"):
        grid = [(0.0, gam0 * f) for f in factors]
    else:
        grid = [(lam0 * a, gam0 * b) for a in factors for b in factors]
    return sorted(grid, key=lambda p: (-(p[0] + p[1]), -p[0]))


def fold_indices(T: int, folds: int) -> list[np.ndarray]:
    """Held-out rows of each fold: consecutive blocks whose sizes differ by at most one."""
    return np.array_split(np.arange(T), folds)


def cross_validate(data: Dataset, groups: GroupStructure, kind: str, config: PipelineConfig,
                   alpha=None, xi=None, family="squared", T_rates: int | None = None) -> CvReport:
    """K-fold CV of the held-out loss over the tuning grid.

    Within each fold the grid is traversed from the largest to the smallest
    total penalty, warm-starting every fit from the previous one. Fold fits
    keep the per-observation levels ``lambda/T`` and ``gamma/T`` of the
    full-sample fit, so each grid point is scored at the penalty it would
    receive when refitted on all rows.
    """
    if config.cv_folds > data.T:
        raise ValueError("more folds than observations")
    if alpha is None or xi is None:
        alpha, xi = base_weights(kind, groups, config)
    grid = tuning_grid(kind, config, T_rates or data.T)
    fam = get_family(family)
    losses = np.empty((config.cv_folds, len(grid)))
    for f, held in enumerate(fold_indices(data.T, config.cv_folds)):
        keep = np.ones(data.T, dtype=bool)
        keep[held] = False
        train, valid = data.subset(keep), data.subset(held)
        gram = GramProblem(train) if fam.name == "squared" else None
        theta = None
        ratio = train.T / data.T
        for g, (lam, gam) in enumerate(grid):
            spec = PenaltySpec(lam * ratio, gam * ratio, alpha, xi)
            res = solve(train, groups, spec, fam, config.solver, warm_start=theta, gram=gram)
            theta = res.theta_hat
            losses[f, g] = loss_value(valid, theta, fam)
    mean = losses.mean(axis=0)
    se = losses.std(axis=0, ddof=1) / np.sqrt(config.cv_folds)
    # grid is ordered by decreasing penalty, so the first minimizer is the largest tie
    best = int(np.argmin(mean))
    within = np.flatnonzero(mean <= mean[best] + se[best])
    one_se = int(within.min())
    return CvReport(grid, mean, se, grid[best], grid[one_se])


def fit_estimator(data: Dataset, groups: GroupStructure, kind: str,
                  config: PipelineConfig = PipelineConfig(), T: int | None = None,
                  family="squared") -> EstimatorFit:
    """Cross-validate and refit one of the six sparse / group / sparse-group estimators.

    Adaptive weights come from the first step on the full sample and are held
    fixed across folds.
    """
    T = T or data.T
    first = None
    if kind.startswith("adaptive"):
        first = first_step_estimator(data, family, config.solver)
    alpha, xi = base_weights(kind, groups, config, first, T)
    cv = cross_validate(data, groups, kind, config, alpha, xi, family, T)
    lam, gam = cv.selected
    spec = PenaltySpec(lam, gam, alpha, xi)
    fit = solve(data, groups, spec, family, config.solver)
    return EstimatorFit(kind, fit, cv, spec, first)
