"""Compiled inner loops for the squared-loss (Gram form) block coordinate descent."""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_UNBOUNDED = 2


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _sgl_prox(v, l1, l2, step, out):
    n2 = 0.0
    for i in range(v.shape[0]):
        w = _soft(v[i], step * l1[i])
        out[i] = w
        n2 += w * w
    n = np.sqrt(n2)
    thr = step * l2
    if n <= thr:
        for i in range(out.shape[0]):
            out[i] = 0.0
    else:
        f = 1.0 - thr / n
        for i in range(out.shape[0]):
            out[i] *= f


@njit(cache=True)
def _block_obj_change(A, q, old, new, l1, l2):
    """f(new) - f(old) for the block objective, formed without cancellation."""
    c = old.shape[0]
    val = 0.0
    n_old = 0.0
    n_new = 0.0
    dn = 0.0
    for i in range(c):
        di = new[i] - old[i]
        acc = 0.0
        for j in range(c):
            acc += A[i, j] * (new[j] + old[j])
        val += 0.5 * di * acc - q[i] * di + l1[i] * (abs(new[i]) - abs(old[i]))
        n_old += old[i] * old[i]
        n_new += new[i] * new[i]
        dn += di * (new[i] + old[i])
    root = np.sqrt(n_new) + np.sqrt(n_old)
    if root > 0.0:
        # ||new|| - ||old|| = (||new||^2 - ||old||^2) / (||new|| + ||old||)
        val += l2 * dn / root
    return val


@njit(cache=True)
def _block_fista(A, q, l1, l2, L, u0, inner_tol, max_inner):
    """Minimize 0.5 u'Au - q'u + sum l1|u| + l2 ||u|| with restarted FISTA."""
    c = u0.shape[0]
    u = u0.copy()
    y = u0.copy()
    un = np.empty(c)
    v = np.empty(c)
    tk = 1.0
    step = 1.0 / L
    for it in range(max_inner):
        for i in range(c):
            g = -q[i]
            for j in range(c):
                g += A[i, j] * y[j]
            v[i] = y[i] - step * g
        _sgl_prox(v, l1, l2, step, un)
        gm = 0.0
        dot = 0.0
        for i in range(c):
            diff = abs(un[i] - y[i])
            if diff > gm:
                gm = diff
            dot += (y[i] - un[i]) * (un[i] - u[i])
        if gm * L <= inner_tol:
            for i in range(c):
                u[i] = un[i]
            break
        if dot > 0.0:
            tk = 1.0
            for i in range(c):
                y[i] = un[i]
                u[i] = un[i]
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        mom = (tk - 1.0) / tn
        for i in range(c):
            y[i] = un[i] + mom * (un[i] - u[i])
            u[i] = un[i]
        tk = tn
    return u


@njit(cache=True)
def kkt_residual_gram(s, theta, offsets, sizes, l1, l2):
    res = 0.0
    for k in range(offsets.shape[0]):
        a = offsets[k]
        b = a + sizes[k]
        n2 = 0.0
        for i in range(a, b):
            n2 += theta[i] * theta[i]
        if n2 == 0.0:
            z2 = 0.0
            for i in range(a, b):
                z = _soft(s[i], l1[i])
                z2 += z * z
            r = np.sqrt(z2) - l2[k]
        else:
            n = np.sqrt(n2)
            r = 0.0
            for i in range(a, b):
                if theta[i] == 0.0:
                    ri = abs(s[i]) - l1[i]
                else:
                    sg = 1.0 if theta[i] > 0 else -1.0
                    ri = abs(s[i] + l1[i] * sg + l2[k] * theta[i] / n)
                if ri > r:
                    r = ri
        if r > res:
            res = r
    return res


@njit(cache=True)
def objective_gram(G, c, yy, theta, offsets, sizes, l1, l2):
    d = theta.shape[0]
    val = 0.5 * yy
    for i in range(d):
        if theta[i] == 0.0:
            continue
        acc = 0.0
        for j in range(d):
            acc += G[i, j] * theta[j]
        val += 0.5 * theta[i] * acc - c[i] * theta[i] + l1[i] * abs(theta[i])
    for k in range(offsets.shape[0]):
        n2 = 0.0
        for i in range(offsets[k], offsets[k] + sizes[k]):
            n2 += theta[i] * theta[i]
        val += l2[k] * np.sqrt(n2)
    return val


@njit(cache=True)
def bcd_gram(G, c, yy, offsets, sizes, l1, l2, lips, theta, max_iter, tol,
             inner_tol, max_inner, trace):
    """Cyclic block coordinate descent on 0.5 t'Gt - c't + penalty.

    ``theta`` is updated in place. ``trace[0]`` receives the starting
    objective and ``trace[it + 1]`` the objective after sweep ``it``.
    Returns ``(sweeps, status, kkt_residual)``.
    """
    d = theta.shape[0]
    m = offsets.shape[0]
    s = G @ theta - c
    trace[0] = objective_gram(G, c, yy, theta, offsets, sizes, l1, l2)
    kkt = np.inf
    for it in range(max_iter):
        maxdelta = 0.0
        for k in range(m):
            a = offsets[k]
            b = a + sizes[k]
            ck = sizes[k]
            old = theta[a:b].copy()
            q = np.empty(ck)
            for i in range(ck):
                acc = s[a + i]
                for j in range(ck):
                    acc -= G[a + i, a + j] * old[j]
                q[i] = -acc
            z2 = 0.0
            for i in range(ck):
                z = _soft(q[i], l1[a + i])
                z2 += z * z
            if np.sqrt(z2) <= l2[k]:
                new = np.zeros(ck)
            elif lips[k] <= 0.0:
                return it, STATUS_UNBOUNDED, kkt
            elif ck == 1:
                new = np.empty(1)
                new[0] = _soft(q[0], l1[a] + l2[k]) / G[a, a]
            else:
                A = G[a:b, a:b]
                new = _block_fista(A, q, l1[a:b], l2[k], lips[k], old, inner_tol, max_inner)
                # keep the block monotone if the inner solve stopped early
                if _block_obj_change(A, q, old, new, l1[a:b], l2[k]) > 0.0:
                    new = old.copy()
            for i in range(ck):
                delta = new[i] - old[i]
                if delta != 0.0:
                    for r in range(d):
                        s[r] += G[r, a + i] * delta
                    if abs(delta) > maxdelta:
                        maxdelta = abs(delta)
                theta[a + i] = new[i]
        s = G @ theta - c
        trace[it + 1] = objective_gram(G, c, yy, theta, offsets, sizes, l1, l2)
        if maxdelta <= tol:
            kkt = kkt_residual_gram(s, theta, offsets, sizes, l1, l2)
            if kkt <= tol:
                return it + 1, STATUS_OK, kkt
    kkt = kkt_residual_gram(s, theta, offsets, sizes, l1, l2)
    return max_iter, STATUS_MAXITER, kkt
