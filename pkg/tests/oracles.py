"""Reference implementations that share no code with the package."""

import numpy as np

from asgl.groups import build_groups
from asgl.loss import Dataset


def random_problem(seed, T=60, sizes=(3, 2, 4), family="squared", rho=0.0):
    """Gaussian design with a sparse truth; returns ``(data, groups, theta0)``."""
    rng = np.random.default_rng(seed)
    groups = build_groups(list(sizes))
    X = rng.standard_normal((T, groups.d))
    if rho:
        X[:, 1:] = rho * X[:, :-1] + np.sqrt(1 - rho ** 2) * X[:, 1:]
    theta0 = np.where(rng.random(groups.d) < 0.4, rng.uniform(-1.5, 1.5, groups.d), 0.0)
    eta = X @ theta0
    if family == "squared":
        y = eta + 0.3 * rng.standard_normal(T)
    else:
        y = (rng.random(T) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset(X, y), groups, theta0


def orthonormal_design(T, d, rng):
    """Design with X'X/T equal to the identity."""
    q, _ = np.linalg.qr(rng.standard_normal((T, d)))
    return q * np.sqrt(T)


def soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_cd(X, y, l1, sweeps=20000, tol=1e-14):
    """Plain cyclic coordinate descent for (1/2T)||y - X b||^2 + sum l1_j |b_j|."""
    T, d = X.shape
    b = np.zeros(d)
    r = y.copy()
    col = (X ** 2).sum(axis=0) / T
    for _ in range(sweeps):
        change = 0.0
        for j in range(d):
            old = b[j]
            z = X[:, j] @ r / T + col[j] * old
            b[j] = soft(z, l1[j]) / col[j]
            if b[j] != old:
                r -= X[:, j] * (b[j] - old)
                change = max(change, abs(b[j] - old))
        if change < tol:
            break
    return b


def grid_minimum_21(data, lam, gam, alpha, xi, step=0.001, half_width=2.0):
    """Exact minimum of the squared-loss objective over the cube grid, groups [2, 1].

    For fixed (t1, t2) the objective is a convex function of t3, so its minimum
    over the grid points in t3 sits at one of the two grid neighbours of the
    continuous minimizer; the scan over (t1, t2) is exhaustive.
    """
    X, y = data.design, data.response
    T = len(y)
    G, c, yy = X.T @ X / T, X.T @ y / T, y @ y / T
    n = int(round(half_width / step))
    ticks = np.arange(-n, n + 1) * step
    p1 = lam * np.asarray(alpha) / T
    q1, q2 = gam * xi[0] / T, gam * xi[1] / T
    p3 = p1[2] + q2
    best = np.inf
    t2 = ticks[None, :]
    for start in range(0, ticks.size, 200):
        t1 = ticks[start:start + 200, None]
        rest = (0.5 * (G[0, 0] * t1 ** 2 + 2 * G[0, 1] * t1 * t2 + G[1, 1] * t2 ** 2)
                - c[0] * t1 - c[1] * t2 + 0.5 * yy
                + p1[0] * np.abs(t1) + p1[1] * np.abs(t2) + q1 * np.sqrt(t1 ** 2 + t2 ** 2))
        lin = G[0, 2] * t1 + G[1, 2] * t2 - c[2]
        star = soft(-lin, p3) / G[2, 2]
        k = np.clip(np.floor(star / step), -n, n)
        for kk in (k, np.clip(k + 1, -n, n)):
            t3 = kk * step
            val = rest + 0.5 * G[2, 2] * t3 ** 2 + lin * t3 + p3 * np.abs(t3)
            best = min(best, float(val.min()))
    return best


def objective_21(data, lam, gam, alpha, xi, theta):
    X, y = data.design, data.response
    T = len(y)
    r = y - X @ theta
    return (r @ r / (2 * T) + lam / T * np.asarray(alpha) @ np.abs(theta)
            + gam / T * (xi[0] * np.hypot(theta[0], theta[1]) + xi[1] * abs(theta[2])))
