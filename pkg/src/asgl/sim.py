"""Monte Carlo harness: grouped Toeplitz-design DGP, replicated fits, summaries.

Each replication draws its own generator from ``(master_seed, replication,
stream)`` through a Philox counter-based bit generator, so replications are
independent of execution order and can run in worker processes.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cholesky, toeplitz

from .errors import ASGLError, InfeasibleScenario, InsufficientRecoveries
from .groups import ActiveSets, GroupStructure, active_sets_from, build_groups, compare_supports
from .loss import Dataset, sandwich_covariance
from .penalty import PenaltySpec
from .pipeline import KINDS, PipelineConfig, base_weights, first_step_estimator, fit_estimator
from .solver import solve

log = logging.getLogger(__name__)

ORACLE = "oracle"
METHODS = KINDS + (ORACLE,)
TABLE_LABELS = {
    "lasso": "Lasso", "adaptive_lasso": "aLasso", "group_lasso": "GLasso",
    "adaptive_group_lasso": "AGLasso", "sgl": "SGL", "adaptive_sgl": "ASGL", ORACLE: "Oracle",
}
# (x_scale, n_groups) of the three reference designs, keyed by T
TABLE1_DESIGNS = {500: (10.0, 4), 2000: (30.0, 8), 4000: (50.0, 18)}
MIN_NORMALITY_RECORDS = 30
MAX_INSTANCE_DRAWS = 1000


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class ScenarioSpec:
    T: int
    x_scale: float
    n_groups: int
    sigma: float = 0.3
    rho_choices: tuple[float, ...] = (0.5, 0.8, 0.9)
    group_size_range: tuple[int, int] = (5, 30)
    signal_range: tuple[float, float] = (0.1, 0.99)
    replications: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be positive")
        if self.d_T < 1:
            raise ValueError("scenario has d_T < 1")
        if any(not -1 < r < 1 for r in self.rho_choices):
            raise ValueError("correlations must lie in (-1, 1)")
        object.__setattr__(self, "rho_choices", tuple(float(r) for r in self.rho_choices))
        object.__setattr__(self, "group_size_range", tuple(int(v) for v in self.group_size_range))
        object.__setattr__(self, "signal_range", tuple(float(v) for v in self.signal_range))

    @property
    def d_T(self) -> int:
        # the tiny offset keeps exact products such as 10 * 64**(1/6) = 20 from rounding down
        return int(math.floor(self.x_scale * self.T ** (1.0 / 6.0) + 1e-9))

    @property
    def n_active_groups(self) -> int:
        return 2 * (self.n_groups // 3)

    @property
    def n_active(self) -> int:
        return 3 * (self.d_T // 9)

    @classmethod
    def table1(cls, T: int, **kw) -> "ScenarioSpec":
        x, ng = TABLE1_DESIGNS[T]
        return cls(T=T, x_scale=x, n_groups=ng, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        for key in ("rho_choices", "group_size_range", "signal_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_T(self, T: int) -> "ScenarioSpec":
        return ScenarioSpec(**{**asdict(self), "T": T})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TruthInstance:
    groups: GroupStructure
    beta0: np.ndarray
    truth_sets: ActiveSets
    rho_per_group: tuple[float, ...]

    @property
    def n_zero(self) -> int:
        return self.groups.d - len(self.truth_sets.active_coords)


def apportion_sizes(raw: Sequence[int], total: int) -> list[int]:
    """Rescale positive integers to sum to ``total`` (largest remainder, each >= 1)."""
    raw = np.asarray(raw, dtype=float)
    if len(raw) > total:
        raise InfeasibleScenario(f"{len(raw)} groups cannot partition {total} coefficients")
    scaled = raw * total / raw.sum()
    sizes = np.maximum(np.floor(scaled).astype(int), 1)
    frac = scaled - np.floor(scaled)
    while sizes.sum() < total:
        k = int(np.argmax(frac))
        sizes[k] += 1
        frac[k] = -1.0
    while sizes.sum() > total:
        # only reachable when the floor of 1 was enforced; shave the largest group
        sizes[int(np.argmax(sizes))] -= 1
    return sizes.tolist()


def generate_instance(spec: ScenarioSpec, seed) -> TruthInstance:
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(*np.atleast_1d(seed))
    d, m = spec.d_T, spec.n_groups
    lo, hi = spec.group_size_range
    n_ag, n_a = spec.n_active_groups, spec.n_active
    if n_a < n_ag or (n_ag == 0 and n_a > 0):
        raise InfeasibleScenario(f"{n_a} non-zeros cannot populate {n_ag} active groups")
    # redraw sizes and active groups until the active groups can host every non-zero
    for _ in range(MAX_INSTANCE_DRAWS):
        sizes = apportion_sizes(rng.integers(lo, hi + 1, size=m), d)
        active_groups = np.sort(rng.choice(m, size=n_ag, replace=False))
        if sum(sizes[k] for k in active_groups) >= n_a:
            break
    else:
        raise InfeasibleScenario(
            f"no draw in {MAX_INSTANCE_DRAWS} attempts lets {n_ag} active groups hold {n_a} non-zeros")
    groups = build_groups(sizes)
    # one guaranteed non-zero per active group, the rest uniform over the remaining slots
    chosen, spare = [], []
    for k in active_groups:
        idx = np.arange(groups.offsets[k], groups.offsets[k] + sizes[k])
        pick = int(rng.integers(sizes[k]))
        chosen.append(idx[pick])
        spare.extend(np.delete(idx, pick))
    extra = rng.choice(np.asarray(spare, dtype=int), size=n_a - n_ag, replace=False)
    support = np.sort(np.concatenate([np.asarray(chosen, dtype=int), extra]))
    beta0 = np.zeros(d)
    beta0[support] = rng.uniform(*spec.signal_range, size=n_a)
    rho = tuple(float(r) for r in rng.choice(spec.rho_choices, size=m))
    truth = active_sets_from(beta0, groups)
    inst = TruthInstance(groups, beta0, truth, rho)
    _check_instance(inst, spec)
    return inst


def _check_instance(inst: TruthInstance, spec: ScenarioSpec) -> None:
    assert len(inst.truth_sets.active_groups) == spec.n_active_groups
    assert len(inst.truth_sets.active_coords) == spec.n_active
    assert inst.n_zero == spec.d_T - spec.n_active


def toeplitz_cholesky(rho: float, size: int) -> np.ndarray:
    """Lower Cholesky factor of the correlation matrix ``rho**|i-j|``."""
    return cholesky(toeplitz(rho ** np.arange(size)), lower=True)


def generate_data(instance: TruthInstance, T: int, sigma: float, seed) -> Dataset:
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(*np.atleast_1d(seed))
    groups = instance.groups
    X = np.empty((T, groups.d))
    for k, sl in enumerate(groups.slices()):
        L = toeplitz_cholesky(instance.rho_per_group[k], groups.group_sizes[k])
        X[:, sl] = rng.standard_normal((T, groups.group_sizes[k])) @ L.T
    y = X @ instance.beta0 + sigma * rng.standard_normal(T)
    return Dataset(X, y)


@dataclass
class ReplicationRecord:
    method: str
    replication: int
    mse: float
    C: int
    IC: int
    exact_recovery: bool
    standardized_active_errors: np.ndarray | None = None
    theta_hat: np.ndarray | None = field(default=None, repr=False)


# Fixed tuning: T -> (lambda, gamma); None selects by cross-validation.
Tuning = Callable[[int], tuple[float, float]] | None


@dataclass(frozen=True)
class RateTuning:
    """Fixed tuning ``lambda_T = lam_scale * T**beta``, ``gamma_T = gam_scale * T**alpha``."""

    beta: float
    alpha: float
    lam_scale: float = 1.0
    gam_scale: float = 1.0

    def __call__(self, T: int) -> tuple[float, float]:
        return self.lam_scale * T ** self.beta, self.gam_scale * T ** self.alpha


def oracle_fit(data: Dataset, instance: TruthInstance) -> np.ndarray:
    """Least squares restricted to the true support."""
    idx = np.array(sorted(instance.truth_sets.active_coords), dtype=int)
    theta = np.zeros(instance.groups.d)
    if idx.size:
        theta[idx] = np.linalg.lstsq(data.design[:, idx], data.response, rcond=None)[0]
    return theta


def fit_method(method: str, data: Dataset, instance: TruthInstance,
               config: PipelineConfig, tuning: Tuning = None) -> np.ndarray:
    if method == ORACLE:
        return oracle_fit(data, instance)
    groups = instance.groups
    if tuning is None:
        return fit_estimator(data, groups, method, config).fit.theta_hat
    first = first_step_estimator(data) if method.startswith("adaptive") else None
    alpha, xi = base_weights(method, groups, config, first, data.T)
    lam, gam = tuning(data.T)
    if method in ("lasso", "adaptive_lasso"):
        gam = 0.0
    elif method in ("group_lasso", "adaptive_group_lasso"):
        lam = 0.0
    return solve(data, groups, PenaltySpec(lam, gam, alpha, xi), "squared", config.solver).theta_hat


def standardized_errors(data: Dataset, theta_hat, instance: TruthInstance) -> np.ndarray:
    """``sqrt(T) V^{-1/2} (theta_A - beta0_A)`` with the sandwich covariance ``V``."""
    idx = np.array(sorted(instance.truth_sets.active_coords), dtype=int)
    V = sandwich_covariance(data, theta_hat, "squared", idx)
    w, U = np.linalg.eigh(V)
    inv_sqrt = (U / np.sqrt(w)) @ U.T
    return math.sqrt(data.T) * inv_sqrt @ (theta_hat[idx] - instance.beta0[idx])


def score_fit(method, rep, theta, instance, data, with_errors=False) -> ReplicationRecord:
    est = active_sets_from(theta, instance.groups)
    cmp = compare_supports(est, instance.truth_sets)
    mse = float(np.sum((theta - instance.beta0) ** 2) / instance.groups.d)
    z = None
    if with_errors and cmp.exact_recovery and instance.truth_sets.active_coords:
        z = standardized_errors(data, theta, instance)
    return ReplicationRecord(method, rep, mse, cmp.C, cmp.IC, cmp.exact_recovery, z)


def run_replication(spec: ScenarioSpec, rep: int, methods: Sequence[str], config: PipelineConfig,
                    tuning: Tuning = None, with_errors: bool = False, instance=None):
    """Fit every method on one fresh draw; returns ``(records, failures)``."""
    records, failures = [], []
    try:
        inst = instance or generate_instance(spec, make_rng(spec.master_seed, rep, 0))
        data = generate_data(inst, spec.T, spec.sigma, make_rng(spec.master_seed, rep, 1))
    except ASGLError as exc:
        return [], [(m, rep, f"{type(exc).__name__}: {exc}") for m in methods]
    for method in methods:
        try:
            theta = fit_method(method, data, inst, config, tuning)
            records.append(score_fit(method, rep, theta, inst, data, with_errors))
        except ASGLError as exc:
            failures.append((method, rep, f"{type(exc).__name__}: {exc}"))
    return records, failures


def worker_count() -> int:
    env = os.environ.get("SGL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_many(spec, reps, methods, config, tuning, with_errors, instance=None, workers=None):
    workers = worker_count() if workers is None else workers
    args = [(spec, r, tuple(methods), config, tuning, with_errors, instance) for r in reps]
    if workers <= 1 or len(args) <= 1:
        results = [run_replication(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_replication, *zip(*args)))
    records, failures = [], []
    for recs, fails in results:  # replication-index order regardless of completion order
        records.extend(recs)
        failures.extend(fails)
    return records, failures


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    methods: tuple[str, ...]
    records: list[ReplicationRecord]
    failures: list[tuple[str, int, str]]

    def table(self) -> dict[str, dict]:
        out = {}
        for m in self.methods:
            rs = [r for r in self.records if r.method == m]
            n_fail = sum(1 for f in self.failures if f[0] == m)
            if not rs:
                out[m] = {"mse": math.nan, "C": math.nan, "IC": math.nan, "exact_rate": math.nan,
                          "n": 0, "failed": n_fail}
                continue
            out[m] = {
                "mse": float(np.mean([r.mse for r in rs])),
                "C": float(np.mean([r.C for r in rs])),
                "IC": float(np.mean([r.IC for r in rs])),
                "exact_rate": float(np.mean([r.exact_recovery for r in rs])),
                "n": len(rs),
                "failed": n_fail,
            }
        return out

    def truth_row(self) -> dict:
        return {"d_T": self.spec.d_T, "N_g": self.spec.n_groups, "S": self.spec.n_active_groups,
                "A": self.spec.n_active, "C": self.spec.d_T - self.spec.n_active, "IC": 0}


def run_scenario(spec: ScenarioSpec, methods: Sequence[str] = KINDS,
                 config: PipelineConfig = PipelineConfig(), tuning: Tuning = None,
                 workers: int | None = None) -> ScenarioResult:
    if spec.replications < 1:
        raise ValueError("replications must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    records, failures = _run_many(spec, range(spec.replications), methods, config, tuning,
                                  False, workers=workers)
    if failures:
        log.warning("%d method fits failed and are excluded", len(failures))
    return ScenarioResult(spec, tuple(methods), records, failures)


@dataclass(frozen=True)
class CurvePoint:
    T: int
    d_T: int
    recovery_rate: float
    std_error: float
    n: int
    failed: int


def selection_consistency_curve(template: ScenarioSpec, T_list: Sequence[int], method: str,
                                reps: int, config: PipelineConfig = PipelineConfig(),
                                tuning: Tuning = None, workers: int | None = None
                                ) -> list[CurvePoint]:
    """Empirical ``P(A_hat == A)`` per sample size, with binomial standard errors."""
    if list(T_list) != sorted(T_list):
        raise ValueError("T_list must be increasing")
    out = []
    for T in T_list:
        spec = template.with_T(T)
        records, failures = _run_many(spec, range(reps), [method], config, tuning, False,
                                      workers=workers)
        n = len(records)
        p = float(np.mean([r.exact_recovery for r in records])) if n else math.nan
        se = math.sqrt(p * (1 - p) / n) if n else math.nan
        out.append(CurvePoint(T, spec.d_T, p, se, n, len(failures)))
    return out


def normality_study(spec: ScenarioSpec, method: str, reps: int,
                    config: PipelineConfig = PipelineConfig(), tuning: Tuning = None,
                    instance_seed: int = 0, workers: int | None = None):
    """Repeated fits on one fixed truth, recording standardized active-set errors."""
    inst = generate_instance(spec, make_rng(spec.master_seed, instance_seed, 2))
    records, failures = _run_many(spec, range(reps), [method], config, tuning, True,
                                  instance=inst, workers=workers)
    return inst, records, failures


@dataclass(frozen=True)
class MomentReport:
    n_records: int
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray  # excess kurtosis

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def normality_diagnostic(records: Sequence[ReplicationRecord]) -> MomentReport:
    """Per-coordinate moments of the standardized errors of exact-recovery fits."""
    rows = [r.standardized_active_errors for r in records
            if r.exact_recovery and r.standardized_active_errors is not None]
    if len(rows) < MIN_NORMALITY_RECORDS:
        raise InsufficientRecoveries(
            f"{len(rows)} exact-recovery replications, need at least {MIN_NORMALITY_RECORDS}")
    Z = np.vstack(rows)
    mean = Z.mean(axis=0)
    c = Z - mean
    var = (c ** 2).mean(axis=0) * len(Z) / (len(Z) - 1)
    m2 = (c ** 2).mean(axis=0)
    skew = (c ** 3).mean(axis=0) / m2 ** 1.5
    kurt = (c ** 4).mean(axis=0) / m2 ** 2 - 3.0
    return MomentReport(len(Z), mean, var, skew, kurt)
