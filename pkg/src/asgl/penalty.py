"""Sparse-group penalty, adaptive weights and the tuning-rate exponent system."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateWeight, DimensionMismatch
from .groups import GroupStructure

DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class PenaltySpec:
    """Tuning pair plus per-coefficient (l1) and per-group (l2) weights."""

    lam: float
    gamma: float
    alpha_weights: np.ndarray
    xi_weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_weights, dtype=float).copy()
        x = np.asarray(self.xi_weights, dtype=float).copy()
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be nonnegative")
        for name, w in (("alpha", a), ("xi", x)):
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError(f"{name} weights must be a finite nonnegative vector")
        a.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "alpha_weights", a)
        object.__setattr__(self, "xi_weights", x)

    @classmethod
    def uniform(cls, groups: GroupStructure, lam: float, gamma: float) -> "PenaltySpec":
        return cls(lam, gamma, np.ones(groups.d), np.ones(groups.m))

    def check(self, groups: GroupStructure) -> None:
        if self.alpha_weights.shape != (groups.d,) or self.xi_weights.shape != (groups.m,):
            raise DimensionMismatch(
                f"weights have lengths {self.alpha_weights.shape[0]}/{self.xi_weights.shape[0]}, "
                f"expected {groups.d}/{groups.m}")

    def levels(self, T: int) -> tuple[np.ndarray, np.ndarray]:
        """Effective thresholds ``lam*alpha/T`` (per coefficient) and ``gamma*xi/T`` (per group)."""
        return self.lam * self.alpha_weights / T, self.gamma * self.xi_weights / T

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "gamma": self.gamma,
                "alpha_weights": self.alpha_weights.tolist(),
                "xi_weights": self.xi_weights.tolist()}


def penalty_value(theta, groups: GroupStructure, spec: PenaltySpec, T: int) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (groups.d,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({groups.d},)")
    spec.check(groups)
    l1, l2 = spec.levels(T)
    norms = np.array([np.linalg.norm(theta[sl]) for sl in groups.slices()])
    return float(l1 @ np.abs(theta) + l2 @ norms)


@dataclass(frozen=True)
class AdaptiveConfig:
    """Weight exponents, shift exponent and tuning/dimension growth rates.

    Defaults are the simulation-study values: shift ``T**-0.2``, ``eta = 3.5``,
    ``mu = 2.5``, ``lambda_T = gamma_T = T**(1/8)``, ``d_T = O(T**(1/6))``.
    """

    eta: float = 3.5
    mu: float = 2.5
    kappa: float = 0.2
    beta_rate: float = 0.125
    alpha_rate: float = 0.125
    c_growth: float = 1.0 / 6.0

    def __post_init__(self):
        for name in ("eta", "mu", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptiveConfig":
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


def shift(T: float, kappa: float) -> float:
    return float(T) ** (-kappa)


def adaptive_weights(first_step, groups: GroupStructure, config: AdaptiveConfig, T: int):
    """Return ``(alpha, xi)`` from the shifted first-step estimate ``first_step + T**-kappa``.

    The shift is a signed scalar added to every coordinate before both the
    absolute values and the group norms are taken.
    """
    theta = np.asarray(first_step, dtype=float)
    if theta.shape != (groups.d,):
        raise DimensionMismatch(f"first step has shape {theta.shape}, expected ({groups.d},)")
    if T < 2:
        raise ValueError("T must be at least 2")
    shifted = theta + shift(T, config.kappa)
    mags = np.abs(shifted)
    if np.any(mags < DEGENERATE_TOL):
        j = int(np.argmin(mags))
        raise DegenerateWeight(f"shifted first-step coordinate {j} is {shifted[j]:.3e}")
    alpha = mags ** (-config.eta)
    norms = np.array([np.linalg.norm(shifted[sl]) for sl in groups.slices()])
    xi = norms ** (-config.mu)
    return alpha, xi


def tuning_from_rates(config: AdaptiveConfig, T: float) -> tuple[float, float]:
    return float(T) ** config.beta_rate, float(T) ** config.alpha_rate


@dataclass(frozen=True)
class RateCondition:
    name: str
    expression: str
    value: float
    sense: str  # "<0" or ">0"

    @property
    def slack(self) -> float:
        """Signed margin; positive iff the strict inequality holds."""
        return -self.value if self.sense == "<0" else self.value

    @property
    def holds(self) -> bool:
        return self.slack > 0

    def to_dict(self) -> dict:
        return {"name": self.name, "expression": self.expression, "value": self.value,
                "holds": self.holds, "slack": self.slack}


@dataclass(frozen=True)
class FeasibilityReport:
    config: AdaptiveConfig
    conditions: tuple[RateCondition, ...]

    @property
    def feasible(self) -> bool:
        return all(c.holds for c in self.conditions)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "feasible": self.feasible,
                "conditions": [c.to_dict() for c in self.conditions]}


def check_rate_feasibility(config: AdaptiveConfig) -> FeasibilityReport:
    """Evaluate the five strict inequalities tying tuning rates to weight exponents."""
    a, b = config.alpha_rate, config.beta_rate
    c, k = config.c_growth, config.kappa
    mu, eta = config.mu, config.eta
    conds = (
        RateCondition("i", "alpha + c/2 + kappa*mu - 1/2 < 0",
                      a + c / 2 + k * mu - 0.5, "<0"),
        RateCondition("ii", "alpha - 1/2 + ((1+mu)(1-c) - 1)/2 > 0",
                      a - 0.5 + ((1 + mu) * (1 - c) - 1) / 2, ">0"),
        RateCondition("iii", "beta + kappa*eta - 1/2 < 0",
                      b + k * eta - 0.5, "<0"),
        RateCondition("iv", "beta - 1/2 + ((1+eta)(1-c) - 1)/2 > 0",
                      b - 0.5 + ((1 + eta) * (1 - c) - 1) / 2, ">0"),
        RateCondition("v", "(1+mu)(1 - c/2 - kappa*eta - beta) + alpha - 1 > 0",
                      (1 + mu) * (1 - c / 2 - k * eta - b) + a - 1, ">0"),
    )
    return FeasibilityReport(config, conds)
