"""Smooth convex empirical criteria: value, score, Hessian and sandwich covariance.

Losses are written in terms of the linear predictor ``eta = X @ theta``; a
family supplies the per-observation loss and its first two derivatives in
``eta``. Anything following that contract (see :class:`LossFamily`) can be
plugged into the solver.

Users are responsible for the usual M-estimation conditions on their data
(stationarity/ergodicity, martingale-difference scores); nothing here checks
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidResponse, ProblemTooLarge, SingularHessian
from .groups import ActiveSets

MAX_DENSE_D = 2000


@dataclass(frozen=True)
class Dataset:
    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.design, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.response, dtype=float))
        if X.ndim != 2 or y.ndim != 1:
            raise DimensionMismatch("design must be 2-D and response 1-D")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"design has {X.shape[0]} rows but response has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains NaN or Inf")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)

    @property
    def T(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.design[rows], self.response[rows])


class LossFamily:
    """Per-observation loss ``l(y, eta)`` with derivatives in ``eta``."""

    name = "abstract"

    def validate(self, y: np.ndarray) -> None:
        pass

    def values(self, y, eta):
        raise NotImplementedError

    def deriv(self, y, eta):
        raise NotImplementedError

    def curvature(self, y, eta):
        raise NotImplementedError

    def curvature_bound(self) -> float | None:
        """Upper bound on ``curvature`` if one exists (used for step sizes)."""
        return None


class SquaredLoss(LossFamily):
    name = "squared"

    def values(self, y, eta):
        r = y - eta
        return 0.5 * r * r

    def deriv(self, y, eta):
        return eta - y

    def curvature(self, y, eta):
        return np.ones_like(eta)

    def curvature_bound(self):
        return 1.0


class LogisticLoss(LossFamily):
    name = "logistic"

    def validate(self, y):
        if not np.all((y == 0) | (y == 1)):
            raise InvalidResponse("logistic response must be coded 0/1")

    def values(self, y, eta):
        return np.logaddexp(0.0, eta) - y * eta

    def deriv(self, y, eta):
        return _expit(eta) - y

    def curvature(self, y, eta):
        p = _expit(eta)
        return p * (1.0 - p)

    def curvature_bound(self):
        return 0.25


def _expit(eta):
    # overflow-free logistic function
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


FAMILIES = {"squared": SquaredLoss(), "logistic": LogisticLoss()}


def get_family(family) -> LossFamily:
    if isinstance(family, LossFamily):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown loss family {family!r}; expected one of {sorted(FAMILIES)}")


def _prepare(data: Dataset, theta, family):
    fam = get_family(family)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.d,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({data.d},)")
    fam.validate(data.response)
    return fam, theta, data.design @ theta


def loss_value(data: Dataset, theta, family="squared") -> float:
    fam, _, eta = _prepare(data, theta, family)
    return float(np.mean(fam.values(data.response, eta)))


def loss_score(data: Dataset, theta, family="squared") -> np.ndarray:
    fam, _, eta = _prepare(data, theta, family)
    return data.design.T @ fam.deriv(data.response, eta) / data.T


def loss_hessian(data: Dataset, theta, family="squared") -> np.ndarray:
    if data.d > MAX_DENSE_D:
        raise ProblemTooLarge(f"dense Hessian not materialized for d = {data.d} > {MAX_DENSE_D}")
    fam, _, eta = _prepare(data, theta, family)
    w = fam.curvature(data.response, eta)
    X = data.design
    H = (X * w[:, None]).T @ X / data.T
    return 0.5 * (H + H.T)


def observation_scores(data: Dataset, theta, family="squared") -> np.ndarray:
    """Per-observation score vectors, shape ``(T, d)``."""
    fam, _, eta = _prepare(data, theta, family)
    return data.design * fam.deriv(data.response, eta)[:, None]


@dataclass(frozen=True)
class LossEvaluation:
    value: float
    score: np.ndarray
    hessian: np.ndarray | None = None


def evaluate(data: Dataset, theta, family="squared", with_hessian=False) -> LossEvaluation:
    H = loss_hessian(data, theta, family) if with_hessian else None
    return LossEvaluation(loss_value(data, theta, family), loss_score(data, theta, family), H)


def sandwich_covariance(data: Dataset, theta, family, active: ActiveSets | np.ndarray) -> np.ndarray:
    """``H^-1 M H^-1`` over the active coordinates, in sorted coordinate order."""
    if isinstance(active, ActiveSets):
        idx = np.array(sorted(active.active_coords), dtype=int)
    else:
        idx = np.asarray(active, dtype=int)
    if idx.size == 0:
        raise ValueError("active set is empty")
    H = loss_hessian(data, theta, family)[np.ix_(idx, idx)]
    if 1.0 / np.linalg.cond(H) < 1e-12:
        raise SingularHessian("Hessian restricted to the active set is numerically singular")
    G = observation_scores(data, theta, family)[:, idx]
    M = G.T @ G / data.T
    Hinv = np.linalg.inv(H)
    V = Hinv @ M @ Hinv
    return 0.5 * (V + V.T)
