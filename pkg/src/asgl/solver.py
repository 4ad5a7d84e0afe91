"""Block coordinate descent for the sparse-group penalized criterion.

Each sweep visits the groups in order. A group whose thresholded partial
score passes the group drop test is set to exactly zero; otherwise the block
subproblem is solved by proximal gradient steps whose prox (soft-threshold
followed by group shrinkage) creates exact within-group zeros. For smooth
non-quadratic losses the default wraps that sweep in a proximal Newton loop:
the loss is replaced by its local quadratic model, the model problem is
solved by the same block sweep, and a line search on the true objective
picks the step. The same
subgradient conditions are re-evaluated from scratch by :func:`kkt_verify`
as a certificate for any candidate solution.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, IllPosed, NonFiniteObjective
from .groups import ActiveSets, GroupStructure, active_sets_from
from .loss import Dataset, get_family, loss_score, loss_value
from .penalty import PenaltySpec, penalty_value

log = logging.getLogger(__name__)

ARMIJO_INITIAL_STEP = 1.0
ARMIJO_SHRINK = 0.5
ARMIJO_SIGMA = 1e-4
BLOCK_STEPS_PER_VISIT = 10


def soft_threshold(x, t):
    """``sign(x) * max(|x| - t, 0)``, elementwise for arrays."""
    # "+ 0.0" turns the -0.0 produced for negative x into a bitwise zero
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0) + 0.0


def group_drop_test(score_block, l1_level, group_level) -> bool:
    """True when the block can be zero: ``||S(score, l1)||_2 <= group_level``."""
    z = soft_threshold(np.asarray(score_block, dtype=float), np.asarray(l1_level, dtype=float))
    return bool(np.linalg.norm(z) <= group_level)


def coefficient_drop_test(score_coord: float, l1_level: float) -> bool:
    return bool(abs(score_coord) <= l1_level)


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iters: int = 10000
    tol: float = 1e-8
    inner_tol: float = 1e-10
    max_inner_iters: int = 100000
    # "exact" (squared only), "newton", "backtracking", or "auto"
    step_rule: str = "auto"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.inner_tol > self.tol:
            raise ValueError("inner_tol must not exceed tol")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be positive")
        if self.step_rule not in ("auto", "exact", "newton", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    active: ActiveSets
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta_hat.tolist(),
            **self.active.to_dict(),
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class KKTReport:
    residual: float
    per_group: tuple[float, ...]
    zero_groups: tuple[bool, ...]


def kkt_verify(data: Dataset, groups: GroupStructure, spec: PenaltySpec, family, theta) -> KKTReport:
    """Largest violation of the subgradient optimality system at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (groups.d,) or data.d != groups.d:
        raise DimensionMismatch("theta, data and groups disagree on d")
    spec.check(groups)
    score = loss_score(data, theta, family)
    l1, l2 = spec.levels(data.T)
    per_group, zero = [], []
    for k, sl in enumerate(groups.slices()):
        s, t, a = score[sl], theta[sl], l1[sl]
        norm = np.linalg.norm(t)
        if norm == 0.0:
            r = np.linalg.norm(soft_threshold(s, a)) - l2[k]
        else:
            nz = t != 0
            r_zero = np.abs(s[~nz]) - a[~nz]
            r_nz = np.abs(s[nz] + a[nz] * np.sign(t[nz]) + l2[k] * t[nz] / norm)
            r = max(r_zero.max(initial=0.0), r_nz.max(initial=0.0))
        per_group.append(max(0.0, float(r)))
        zero.append(norm == 0.0)
    return KKTReport(max(per_group), tuple(per_group), tuple(zero))


def objective_value(data, groups, spec, family, theta) -> float:
    return loss_value(data, theta, family) + penalty_value(theta, groups, spec, data.T)


class GramProblem:
    """Squared-loss data reduced to ``G = X'X/T``, ``c = X'y/T`` and ``y'y/T``."""

    def __init__(self, data: Dataset):
        X, y = data.design, data.response
        self.T = data.T
        self.G = np.ascontiguousarray(X.T @ X / self.T)
        self.c = X.T @ y / self.T
        self.yy = float(y @ y / self.T)
        self._lips = {}

    def lipschitz(self, groups: GroupStructure) -> np.ndarray:
        key = groups.group_sizes
        if key not in self._lips:
            self._lips[key] = np.array([
                float(np.linalg.eigvalsh(self.G[sl, sl])[-1]) for sl in groups.slices()])
        return self._lips[key]

    def is_degenerate(self) -> bool:
        return np.linalg.matrix_rank(self.G, hermitian=True) < self.G.shape[0]


def _check_inputs(data, groups, spec, warm_start):
    if data.d != groups.d:
        raise DimensionMismatch(f"design has {data.d} columns but groups cover {groups.d}")
    spec.check(groups)
    if warm_start is None:
        return np.zeros(groups.d)
    theta = np.array(warm_start, dtype=float)
    if theta.shape != (groups.d,):
        raise DimensionMismatch(f"warm start has shape {theta.shape}, expected ({groups.d},)")
    return theta


def _unpenalized(spec: PenaltySpec) -> bool:
    return (spec.lam == 0 or not spec.alpha_weights.any()) and (
        spec.gamma == 0 or not spec.xi_weights.any())


def solve(data: Dataset, groups: GroupStructure, spec: PenaltySpec, family="squared",
          config: SolverConfig = SolverConfig(), warm_start=None, gram: GramProblem | None = None
          ) -> FitResult:
    """Minimize ``loss(theta) + (lam/T) sum alpha_j |theta_j| + (gamma/T) sum xi_k ||theta_k||``.

    ``gram`` lets callers reuse the squared-loss reduction across many fits
    on the same data (regularization paths, cross-validation).
    """
    fam = get_family(family)
    theta = _check_inputs(data, groups, spec, warm_start)
    fam.validate(data.response)
    rule = config.step_rule
    if rule == "auto":
        rule = "exact" if fam.name == "squared" else "newton"
    if rule == "exact" and fam.name != "squared":
        raise ValueError("the exact step rule is only available for the squared loss")
    if rule == "exact":
        gram = gram if gram is not None else GramProblem(data)
        if _unpenalized(spec) and gram.is_degenerate():
            raise IllPosed("unpenalized least squares with a rank-deficient design")
        return _solve_gram(gram, groups, spec, config, theta)
    if _unpenalized(spec) and data.T <= data.d:
        raise IllPosed("unpenalized fit needs more observations than coefficients")
    if rule == "newton":
        return _solve_newton(data, groups, spec, fam, config, theta)
    return _solve_general(data, groups, spec, fam, config, theta)


def _solve_gram(gram: GramProblem, groups, spec, config, theta) -> FitResult:
    offsets, sizes = groups.as_arrays()
    l1, l2 = spec.levels(gram.T)
    trace = np.full(config.max_outer_iters + 1, np.nan)
    sweeps, status, kkt = _kernels.bcd_gram(
        gram.G, gram.c, gram.yy, offsets, sizes, l1, l2, gram.lipschitz(groups), theta,
        config.max_outer_iters, config.tol, config.inner_tol, config.max_inner_iters, trace)
    if status == _kernels.STATUS_UNBOUNDED:
        raise IllPosed("objective is unbounded below along a zero-curvature block")
    trace = trace[: sweeps + 1]
    objective = float(trace[-1])
    if not np.isfinite(objective):
        raise NonFiniteObjective("objective overflowed")
    converged = status == _kernels.STATUS_OK
    if not converged:
        warnings.warn(f"solver hit max_outer_iters={config.max_outer_iters} "
                      f"(kkt residual {kkt:.3e})", RuntimeWarning, stacklevel=3)
    return FitResult(theta, active_sets_from(theta, groups), objective, float(kkt),
                     int(sweeps), converged, trace)


def _penalty(theta, l1, l2, groups):
    return float(l1 @ np.abs(theta)) + sum(
        l2[k] * float(np.linalg.norm(theta[sl])) for k, sl in enumerate(groups.slices()))


def _solve_newton(data: Dataset, groups, spec, fam, config, theta) -> FitResult:
    X, y, T = data.design, data.response, data.T
    l1, l2 = spec.levels(T)
    offsets, sizes = groups.as_arrays()
    slices = groups.slices()
    eta = X @ theta
    f = float(np.mean(fam.values(y, eta))) + _penalty(theta, l1, l2, groups)
    if not np.isfinite(f):
        raise NonFiniteObjective("objective is not finite at the starting point")
    trace = [f]
    inner_trace = np.empty(config.max_outer_iters + 1)
    converged, kkt, it = False, np.inf, 0
    for it in range(1, config.max_outer_iters + 1):
        w = fam.curvature(y, eta)
        g = X.T @ fam.deriv(y, eta) / T
        H = (X * w[:, None]).T @ X / T
        # a small ridge keeps saturated or rank-deficient models strictly convex;
        # the fixed points do not depend on H
        H[np.diag_indices_from(H)] += 1e-10 * max(1.0, float(np.max(np.diag(H))))
        H = np.ascontiguousarray(H)
        lips = np.array([float(np.linalg.eigvalsh(H[sl, sl])[-1]) for sl in slices])
        u = theta.copy()
        _kernels.bcd_gram(H, H @ theta - g, 0.0, offsets, sizes, l1, l2, lips, u,
                          config.max_outer_iters, config.inner_tol, config.inner_tol,
                          config.max_inner_iters, inner_trace)
        direction = u - theta
        pen = _penalty(theta, l1, l2, groups)
        decrease = float(g @ direction) + _penalty(u, l1, l2, groups) - pen
        step, cand = 1.0, u
        while True:
            eta_c = X @ cand
            f_c = float(np.mean(fam.values(y, eta_c))) + _penalty(cand, l1, l2, groups)
            # differences at rounding level carry no information near the optimum
            if (f_c <= f + ARMIJO_SIGMA * step * decrease
                    or abs(f_c - f) <= 1e-15 * max(1.0, abs(f)) or step < 1e-20):
                break
            step *= ARMIJO_SHRINK
            cand = theta + step * direction
        maxdelta = float(np.max(np.abs(cand - theta), initial=0.0))
        theta, eta, f = cand, eta_c, f_c
        trace.append(f)
        if not np.isfinite(f):
            raise NonFiniteObjective("objective overflowed")
        if maxdelta <= config.tol:
            kkt = kkt_verify(data, groups, spec, fam, theta).residual
            if kkt <= config.tol:
                converged = True
                break
    else:
        kkt = kkt_verify(data, groups, spec, fam, theta).residual
        warnings.warn(f"solver hit max_outer_iters={config.max_outer_iters} "
                      f"(kkt residual {kkt:.3e})", RuntimeWarning, stacklevel=3)
    return FitResult(theta, active_sets_from(theta, groups), trace[-1], float(kkt), it,
                     converged, np.asarray(trace))


def _solve_general(data: Dataset, groups, spec, fam, config, theta) -> FitResult:
    X, y, T = data.design, data.response, data.T
    l1, l2 = spec.levels(T)
    eta = X @ theta

    def block_obj(eta_rest, Xk, u, a, g):
        return (float(np.mean(fam.values(y, eta_rest + Xk @ u)))
                + float(a @ np.abs(u)) + g * float(np.linalg.norm(u)))

    def total():
        val = float(np.mean(fam.values(y, eta)))
        val += float(l1 @ np.abs(theta))
        val += sum(l2[k] * np.linalg.norm(theta[sl]) for k, sl in enumerate(groups.slices()))
        return val

    bound = fam.curvature_bound()
    safe = np.zeros(groups.m)
    if bound is not None:
        for k, sl in enumerate(groups.slices()):
            L = bound * np.linalg.norm(X[:, sl], 2) ** 2 / T
            safe[k] = 1.0 / L if L > 0 else np.inf
    trace = [total()]
    if not np.isfinite(trace[0]):
        raise NonFiniteObjective("objective is not finite at the starting point")
    converged, kkt, it = False, np.inf, 0
    for it in range(1, config.max_outer_iters + 1):
        maxdelta = 0.0
        for k, sl in enumerate(groups.slices()):
            Xk, a, g = X[:, sl], l1[sl], l2[k]
            old = theta[sl].copy()
            eta_rest = eta - Xk @ old
            zero_score = Xk.T @ fam.deriv(y, eta_rest) / T
            if group_drop_test(zero_score, a, g):
                new = np.zeros_like(old)
            else:
                new = _block_prox_gradient(fam, y, Xk, eta_rest, a, g, old, T, config, block_obj,
                                           safe[k])
            delta = new - old
            if np.any(delta):
                theta[sl] = new
                eta = eta_rest + Xk @ new
                maxdelta = max(maxdelta, float(np.max(np.abs(delta))))
        eta = X @ theta
        trace.append(total())
        if not np.isfinite(trace[-1]):
            raise NonFiniteObjective("objective overflowed")
        if maxdelta <= config.tol:
            kkt = kkt_verify(data, groups, spec, fam, theta).residual
            if kkt <= config.tol:
                converged = True
                break
    else:
        kkt = kkt_verify(data, groups, spec, fam, theta).residual
        warnings.warn(f"solver hit max_outer_iters={config.max_outer_iters} "
                      f"(kkt residual {kkt:.3e})", RuntimeWarning, stacklevel=3)
    return FitResult(theta, active_sets_from(theta, groups), trace[-1], float(kkt), it,
                     converged, np.asarray(trace))


def _sgl_prox(v, a, g, step):
    w = soft_threshold(v, step * a)
    n = np.linalg.norm(w)
    if n <= step * g:
        return np.zeros_like(w)
    return (1.0 - step * g / n) * w


def _block_prox_gradient(fam, y, Xk, eta_rest, a, g, u, T, config, block_obj, safe_step):
    """A few Armijo proximal-gradient steps on one block (inexact block update).

    ``safe_step`` is ``1/L`` for a block Lipschitz bound ``L`` when the family
    bounds its curvature; steps that small majorize the loss and are accepted
    without the numeric decrease test, which loses resolution near the optimum.
    """
    step = ARMIJO_INITIAL_STEP
    f_u = block_obj(eta_rest, Xk, u, a, g)
    for _ in range(min(config.max_inner_iters, BLOCK_STEPS_PER_VISIT)):
        grad = Xk.T @ fam.deriv(y, eta_rest + Xk @ u) / T
        while True:
            cand = _sgl_prox(u - step * grad, a, g, step)
            f_c = block_obj(eta_rest, Xk, cand, a, g)
            diff = cand - u
            if step <= safe_step or step < 1e-20:
                break
            if f_c <= f_u - ARMIJO_SIGMA / step * float(diff @ diff):
                break
            step *= ARMIJO_SHRINK
        if step < 1e-20:
            break
        u, f_u = cand, f_c
        if np.max(np.abs(diff)) / step <= config.inner_tol:
            break
    return u
