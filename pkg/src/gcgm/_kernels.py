"""Compiled inner loops.  Random numbers come from a numpy Generator, either
drawn by the caller and passed in or drawn here from the Generator itself,
so the stream stays reproducible from the chain seed.
"""
import math

import numpy as np
from numba import njit

NEWTON_MAX_ITER = 100


@njit(cache=True)
def _chol_lower(a):
    """Lower Cholesky factor; ``ok`` is False when ``a`` is not positive definite."""
    p = a.shape[0]
    low = np.zeros((p, p))
    for j in range(p):
        s = a[j, j]
        for t in range(j):
            s -= low[j, t] * low[j, t]
        if not s > 0.0:
            return low, False
        low[j, j] = math.sqrt(s)
        for i in range(j + 1, p):
            s = a[i, j]
            for t in range(j):
                s -= low[i, t] * low[j, t]
            low[i, j] = s / low[j, j]
    return low, True


@njit(cache=True)
def _forward(low, b):
    n = b.shape[0]
    x = np.empty(n)
    for r in range(n):
        s = b[r]
        for t in range(r):
            s -= low[r, t] * x[t]
        x[r] = s / low[r, r]
    return x


@njit(cache=True)
def _backward_t(low, b):
    """Solve ``low' x = b``."""
    n = b.shape[0]
    x = np.empty(n)
    for r in range(n - 1, -1, -1):
        s = b[r]
        for t in range(r + 1, n):
            s -= low[t, r] * x[t]
        x[r] = s / low[r, r]
    return x


@njit(cache=True)
def _lower_inverse(low):
    n = low.shape[0]
    inv = np.zeros((n, n))
    for c in range(n):
        inv[c, c] = 1.0 / low[c, c]
        for r in range(c + 1, n):
            s = 0.0
            for t in range(c, r):
                s -= low[r, t] * inv[t, c]
            inv[r, c] = s / low[r, r]
    return inv


@njit(cache=True)
def _spd_solve(a, b):
    low, ok = _chol_lower(a)
    if not ok:
        return np.linalg.solve(a, b)
    return _backward_t(low, _forward(low, b))


@njit(cache=True)
def _spd_inverse(a):
    low, ok = _chol_lower(a)
    if not ok:
        return np.linalg.inv(a)
    li = _lower_inverse(low)
    p = a.shape[0]
    out = np.empty((p, p))
    for r in range(p):
        for c in range(r + 1):
            acc = 0.0
            for t in range(r, p):
                acc += li[t, r] * li[t, c]
            out[r, c] = acc
            out[c, r] = acc
    return out


@njit(cache=True)
def _chol_solve_block(a, b, m):
    """Solve ``a[:m, :m] x = b[:m]`` in place (``b`` receives ``x``, ``a`` its
    lower factor).  Returns False when the block is not positive definite."""
    for j in range(m):
        s = a[j, j]
        for t in range(j):
            s -= a[j, t] * a[j, t]
        if not s > 0.0:
            return False
        a[j, j] = math.sqrt(s)
        for i in range(j + 1, m):
            s = a[i, j]
            for t in range(j):
                s -= a[i, t] * a[j, t]
            a[i, j] = s / a[j, j]
    for r in range(m):
        s = b[r]
        for t in range(r):
            s -= a[r, t] * b[t]
        b[r] = s / a[r, r]
    for r in range(m - 1, -1, -1):
        s = b[r]
        for t in range(r + 1, m):
            s -= a[t, r] * b[t]
        b[r] = s / a[r, r]
    return True


@njit(cache=True)
def bartlett_covariance(chol_psi, chi2, normals):
    """Covariance ``W^{-1}`` and precision ``W`` for a Wishart draw via Bartlett.

    ``chol_psi`` is the lower Cholesky factor of the Wishart scale matrix,
    ``chi2[i]`` the squared Bartlett diagonal and ``normals`` the strictly
    lower entries in row-major order.
    """
    p = chol_psi.shape[0]
    a = np.zeros((p, p))
    k = 0
    for i in range(p):
        a[i, i] = np.sqrt(chi2[i])
        for j in range(i):
            a[i, j] = normals[k]
            k += 1
    m = chol_psi @ a
    precision = m @ m.T
    m_inv = _lower_inverse(m)
    sigma = m_inv.T @ m_inv
    return sigma, precision


@njit(cache=True)
def _offpattern_max(k, adj):
    p = k.shape[0]
    worst = 0.0
    for i in range(p):
        for j in range(i + 1, p):
            if not adj[i, j]:
                v = abs(k[i, j]) / np.sqrt(abs(k[i, i] * k[j, j]))
                if v > worst:
                    worst = v
    return worst


@njit(cache=True)
def complete_covariance(sigma, adj, tol, max_sweeps):
    """Cyclic vertex-wise completion of ``sigma`` to a matrix whose inverse
    vanishes off the pattern ``adj``.

    Each vertex update keeps ``W`` equal to ``sigma`` on the vertex's edges
    and diagonal and re-derives the remaining entries of its row from the
    neighbour regression.  Returns ``(K, sweeps, history, converged)`` where
    ``history[s]`` is the largest scaled off-pattern entry of ``W^{-1}`` after
    sweep ``s``.
    """
    p = sigma.shape[0]
    w = sigma.copy()
    history = np.empty(max_sweeps)
    nbr = np.empty(p, dtype=np.int64)
    sub = np.empty((p, p))
    rhs = np.empty(p)
    k = _spd_inverse(w)
    for sweep in range(max_sweeps):
        for j in range(p):
            m = 0
            for t in range(p):
                if t != j and adj[j, t]:
                    nbr[m] = t
                    m += 1
            if m == 0:
                for t in range(p):
                    if t != j:
                        w[t, j] = 0.0
                        w[j, t] = 0.0
                continue
            for a in range(m):
                rhs[a] = sigma[nbr[a], j]
                for c in range(a + 1):
                    sub[a, c] = w[nbr[a], nbr[c]]
            if _chol_solve_block(sub, rhs, m):
                beta = rhs
            else:
                beta = np.linalg.solve(w[nbr[:m]][:, nbr[:m]], sigma[nbr[:m], j])
            for t in range(p):
                if t == j:
                    continue
                acc = 0.0
                for a in range(m):
                    acc += w[t, nbr[a]] * beta[a]
                w[t, j] = acc
                w[j, t] = acc
        k = _spd_inverse(w)
        err = _offpattern_max(k, adj)
        history[sweep] = err
        if err <= tol:
            return k, sweep + 1, history[: sweep + 1], True
    return k, max_sweeps, history, False


@njit(cache=True)
def edge_toggle_terms(k, d, i, j):
    """Quantities of the Cholesky factor of ``k`` with nodes ordered
    ``(rest..., i, j)`` that govern toggling edge ``(i, j)``.

    Returns ``(t, a, x0, x_cur)``: ``a`` is the diagonal entry for ``i``,
    ``x_cur`` the current ``(i, j)`` factor entry and ``x0`` the value it takes
    when the edge is absent.  ``t`` is the log of the one-dimensional integral
    that adding the free entry contributes to a G-Wishart-type density with
    scale ``d``:  ``log a + log sqrt(2 pi / d_jj) + d_jj (x0 - mu)^2 / 2`` with
    ``mu = -a d_ij / d_jj``.
    """
    p = k.shape[0]
    m = p - 2
    s_ii = 0.0
    s_ij = 0.0
    if m > 0:
        rest = np.empty(m, dtype=np.int64)
        c = 0
        for t in range(p):
            if t != i and t != j:
                rest[c] = t
                c += 1
        krr = np.empty((m, m))
        rhs = np.empty((m, 2))
        for a_ in range(m):
            rhs[a_, 0] = k[rest[a_], i]
            rhs[a_, 1] = k[rest[a_], j]
            for b_ in range(m):
                krr[a_, b_] = k[rest[a_], rest[b_]]
        v = np.linalg.solve(krr, rhs)
        for a_ in range(m):
            s_ii += k[i, rest[a_]] * v[a_, 0]
            s_ij += k[i, rest[a_]] * v[a_, 1]
    a = np.sqrt(k[i, i] - s_ii)
    x0 = -s_ij / a
    x_cur = x0 + k[i, j] / a
    djj = d[j, j]
    mu = -a * d[i, j] / djj
    t = np.log(a) + 0.5 * np.log(2.0 * np.pi / djj) + 0.5 * djj * (x0 - mu) ** 2
    return t, a, x0, x_cur


@njit(cache=True)
def is_positive_definite(k):
    p = k.shape[0]
    low = np.zeros((p, p))
    for j in range(p):
        s = k[j, j]
        for t in range(j):
            s -= low[j, t] * low[j, t]
        if not s > 0.0:
            return False
        low[j, j] = np.sqrt(s)
        for i in range(j + 1, p):
            s = k[i, j]
            for t in range(j):
                s -= low[i, t] * low[j, t]
            low[i, j] = s / low[j, j]
    return True


@njit(cache=True)
def _chol_logdet(k):
    """``(ok, log det k)``; ``ok`` is False when ``k`` is not positive definite."""
    p = k.shape[0]
    low = np.zeros((p, p))
    logdet = 0.0
    for j in range(p):
        s = k[j, j]
        for t in range(j):
            s -= low[j, t] * low[j, t]
        if not s > 0.0:
            return False, 0.0
        low[j, j] = np.sqrt(s)
        logdet += 2.0 * np.log(low[j, j])
        for i in range(j + 1, p):
            s = k[i, j]
            for t in range(j):
                s -= low[i, t] * low[j, t]
            low[i, j] = s / low[j, j]
    return True, logdet


@njit(cache=True)
def _pattern_mismatch(w, sigma, adj):
    p = w.shape[0]
    worst = 0.0
    for i in range(p):
        for j in range(i, p):
            if i == j or adj[i, j]:
                v = abs(w[i, j] - sigma[i, j]) / np.sqrt(sigma[i, i] * sigma[j, j])
                if v > worst:
                    worst = v
    return worst


@njit(cache=True)
def newton_complete(sigma, adj, k0, tol, max_iter):
    """Damped Newton solve of the same completion problem.

    Minimizes ``tr(sigma K) - log det K`` over ``K`` supported on the diagonal
    and the edges of ``adj``; at the optimum ``K^{-1}`` equals ``sigma`` on
    that support.  ``k0`` must be positive definite and respect the pattern.
    Returns ``(K, iterations, residual, converged)`` where ``residual`` is the
    largest scaled mismatch between ``K^{-1}`` and ``sigma`` on the support.
    """
    p = sigma.shape[0]
    m = p
    for i in range(p):
        for j in range(i + 1, p):
            if adj[i, j]:
                m += 1
    pi = np.empty(m, dtype=np.int64)
    pj = np.empty(m, dtype=np.int64)
    sc = np.empty(m)
    c = 0
    for i in range(p):
        pi[c] = i
        pj[c] = i
        sc[c] = 0.5
        c += 1
    for i in range(p):
        for j in range(i + 1, p):
            if adj[i, j]:
                pi[c] = i
                pj[c] = j
                sc[c] = 1.0
                c += 1
    k = k0.copy()
    ok, logdet = _chol_logdet(k)
    f = np.sum(sigma * k) - logdet
    w = np.linalg.inv(k)
    residual = _pattern_mismatch(w, sigma, adj)
    grad = np.empty(m)
    hess = np.empty((m, m))
    for it in range(max_iter):
        if residual <= tol:
            return k, it, residual, True
        for e in range(m):
            i, j = pi[e], pj[e]
            grad[e] = 2.0 * sc[e] * (sigma[i, j] - w[i, j])
            for g in range(e, m):
                a, b = pi[g], pj[g]
                h = sc[e] * sc[g] * (w[j, a] * w[b, i] + w[j, b] * w[a, i] + w[i, a] * w[b, j] + w[i, b] * w[a, j])
                hess[e, g] = h
                hess[g, e] = h
        step = np.linalg.solve(hess, grad)
        decrement = 0.0
        for e in range(m):
            decrement += grad[e] * step[e]
        t = 1.0
        moved = False
        while t > 1e-12:
            trial = k.copy()
            for e in range(m):
                trial[pi[e], pj[e]] -= t * step[e]
                if pi[e] != pj[e]:
                    trial[pj[e], pi[e]] -= t * step[e]
            ok, logdet = _chol_logdet(trial)
            if ok:
                f_new = np.sum(sigma * trial) - logdet
                # near the optimum f changes below rounding; trust the full step
                if f_new <= f - 0.25 * t * decrement or decrement < 1e-10:
                    k = trial
                    f = f_new
                    moved = True
                    break
            t *= 0.5
        w = np.linalg.inv(k)
        residual = _pattern_mismatch(w, sigma, adj)
        if not moved:
            break
    return k, max_iter, residual, residual <= tol


@njit(cache=True)
def gwishart_draw(chol_psi, chi2, normals, adj, tol, max_sweeps):
    """Full G-Wishart draw from pre-drawn Bartlett variates.

    Returns ``(K, sweeps, residual, status)`` with ``status`` 0 on success,
    3 on success after the cyclic sweeps stalled and Newton finished the
    completion, 1 when neither converged and 2 when the zero-enforced matrix
    is not positive definite.
    """
    p = adj.shape[0]
    n_edges = 0
    for i in range(p):
        for j in range(i + 1, p):
            if adj[i, j]:
                n_edges += 1
    sigma, k_full = bartlett_covariance(chol_psi, chi2, normals)
    sweeps = 0
    residual = 0.0
    polished = False
    if n_edges == p * (p - 1) // 2:
        k = k_full
    elif n_edges == 0:
        k = np.zeros((p, p))
        for i in range(p):
            k[i, i] = 1.0 / sigma[i, i]
    else:
        k, sweeps, history, converged = complete_covariance(sigma, adj, tol, max_sweeps)
        residual = history[sweeps - 1]
        if not converged:
            # slow linear convergence; finish the same problem with Newton
            k0 = np.zeros((p, p))
            for i in range(p):
                k0[i, i] = k[i, i]
                for j in range(i + 1, p):
                    if adj[i, j]:
                        k0[i, j] = 0.5 * (k[i, j] + k[j, i])
                        k0[j, i] = k0[i, j]
            if not is_positive_definite(k0):
                k0 = np.zeros((p, p))
                for i in range(p):
                    k0[i, i] = 1.0 / sigma[i, i]
            k, _, residual, converged = newton_complete(sigma, adj, k0, tol, NEWTON_MAX_ITER)
            if not converged:
                return k, sweeps, residual, 1
            polished = True
    out = np.empty((p, p))
    for i in range(p):
        out[i, i] = k[i, i]
        for j in range(i + 1, p):
            v = 0.5 * (k[i, j] + k[j, i]) if adj[i, j] else 0.0
            out[i, j] = v
            out[j, i] = v
    if not is_positive_definite(out):
        return out, sweeps, residual, 2
    return out, sweeps, residual, 3 if polished else 0


@njit(cache=True)
def accumulate(adj, k, edge_counts, psum, psumsq, pmin, pmax, hist, n_bins):
    """Add one retained ``(G, K)`` sample to the accumulator arrays in place."""
    p = k.shape[0]
    width = 2.0 / n_bins
    pair = 0
    for i in range(p):
        for j in range(i + 1, p):
            if adj[i, j]:
                r = -k[i, j] / np.sqrt(k[i, i] * k[j, j])
                if r > 1.0:
                    r = 1.0
                elif r < -1.0:
                    r = -1.0
                edge_counts[i, j] += 1
                edge_counts[j, i] += 1
                psum[i, j] += r
                psum[j, i] += r
                psumsq[i, j] += r * r
                psumsq[j, i] += r * r
                if r < pmin[i, j]:
                    pmin[i, j] = r
                    pmin[j, i] = r
                if r > pmax[i, j]:
                    pmax[i, j] = r
                    pmax[j, i] = r
                b = int(np.floor((r + 1.0) / width))
                if b < 0:
                    b = 0
                elif b > n_bins - 1:
                    b = n_bins - 1
                hist[pair, b] += 1
            pair += 1


def _special(name):
    """ctypes handle to a double-valued scipy.special Cython function."""
    import ctypes

    import scipy.special.cython_special as cs
    from numba.extending import get_cython_function_address

    for key, capsule in cs.__pyx_capi__.items():
        if (key == name or key.endswith("fuse_1" + name)) and repr(capsule).find('"double (double') >= 0:
            addr = get_cython_function_address("scipy.special.cython_special", key)
            return ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double, ctypes.c_int)(addr)
    raise ImportError(f"scipy.special.cython_special does not export a double {name}")


_log_ndtr = _special("log_ndtr")
_ndtri_exp = _special("ndtri_exp")
_ndtri = _special("ndtri")
# below this the plain normal CDF loses relative precision
_TAIL = -8.0


# scipy entry points are ctypes pointers, which numba cannot cache
@njit
def truncnorm_scalar(a, b, u):
    """Scalar twin of :func:`gcgm.copula.truncnorm_standard`; returns ``(x, underflow)``."""
    flip = a > 0.0
    lo = -b if flip else a
    hi = -a if flip else b
    if flip:
        u = 1.0 - u
    if hi > _TAIL and (lo > _TAIL or lo == -np.inf):
        # lo <= 0 here, so both CDF values are accurate in linear space
        p_lo = 0.5 * math.erfc(-lo / np.sqrt(2.0))
        p_hi = 0.5 * math.erfc(-hi / np.sqrt(2.0))
        q = p_lo + u * (p_hi - p_lo)
        if p_hi > p_lo and 0.0 < q < 1.0 - 1e-10:
            x = _ndtri(q, 0)
            if flip:
                x = -x
            return min(max(x, a), b), False
    log_lo = _log_ndtr(lo, 0)
    log_hi = _log_ndtr(hi, 0)
    ratio = np.exp(log_lo - log_hi)
    logp = log_hi + np.log(u + (1.0 - u) * ratio)
    x = _ndtri_exp(min(logp, 0.0), 0)
    if flip:
        x = -x
    bad = not ((log_hi - log_lo) > 1e-300) or not np.isfinite(x)
    if x < a:
        x = a
    elif x > b:
        x = b
    if bad:
        if np.isfinite(a) and np.isfinite(b):
            x = 0.5 * (a + b)
        elif np.isfinite(a):
            x = a
        else:
            x = b
    return x, bad


@njit
def resample_scan(z, k, columns, rows, col_start, level_start, uniforms):
    """Level-major Gibbs scan over the rank-likelihood columns of ``z``.

    ``rows[level_start[l]:level_start[l + 1]]`` are the rows at level ``l``;
    column ``columns[c]`` owns levels ``col_start[c]:col_start[c + 1]``.
    ``uniforms`` are consumed in that same row order.  Returns the number of
    underflowed cells.
    """
    n, p = z.shape
    n_bad = 0
    u_pos = 0
    mean = np.empty(n)
    for c in range(columns.shape[0]):
        j = columns[c]
        kjj = k[j, j]
        sd = 1.0 / np.sqrt(kjj)
        for s in range(n):
            acc = 0.0
            for t in range(p):
                if t != j:
                    acc += z[s, t] * k[t, j]
            mean[s] = -acc / kjj
        first = col_start[c]
        last = col_start[c + 1]
        for lev in range(first, last):
            lower = -np.inf
            upper = np.inf
            if lev > first:
                for r in rows[level_start[lev - 1]:level_start[lev]]:
                    if z[r, j] > lower:
                        lower = z[r, j]
            if lev + 1 < last:
                for r in rows[level_start[lev + 1]:level_start[lev + 2]]:
                    if z[r, j] < upper:
                        upper = z[r, j]
            for r in rows[level_start[lev]:level_start[lev + 1]]:
                x, bad = truncnorm_scalar((lower - mean[r]) / sd, (upper - mean[r]) / sd, uniforms[u_pos])
                u_pos += 1
                z[r, j] = mean[r] + sd * x
                if bad:
                    n_bad += 1
    return n_bad


@njit(cache=True)
def _column_frame(k, d, order, j):
    """Upper Cholesky factor ``U`` of ``k`` on the nodes ``order`` and
    ``w = U d[order, j]``."""
    m = order.shape[0]
    sub = np.empty((m, m))
    dcol = np.empty(m)
    for a in range(m):
        dcol[a] = d[order[a], j]
        for b in range(m):
            sub[a, b] = k[order[a], order[b]]
    low, ok = _chol_lower(sub)
    if not ok:
        low = np.linalg.cholesky(sub)
    u = low.T.copy()
    return u, u @ dcol


@njit(cache=True)
def _toggle_order(p, i, j):
    """Nodes other than ``j`` with ``i`` moved to the end."""
    order = np.empty(p - 1, dtype=np.int64)
    c = 0
    for t in range(p):
        if t != i and t != j:
            order[c] = t
            c += 1
    order[p - 2] = i
    return order


@njit(cache=True)
def _toggle_frame(k, d, i, j):
    """Node order ``(rest..., i)`` ahead of ``j``, the upper Cholesky factor
    ``U`` of ``k`` on those nodes and ``w = U d[order, j]``."""
    order = _toggle_order(k.shape[0], i, j)
    u, w = _column_frame(k, d, order, j)
    return order, u, w


@njit(cache=True)
def _column_gaussian(u, w, djj, free):
    """Gaussian integral over the free entries ``f`` of the last factor column.

    The column is ``v = M f``: free rows copy an entry of ``f`` and pinned rows
    take the value that zeroes the matching precision entry,
    ``v_r = -sum_{l<r} u[l, r] v_l / u[r, r]``.  The integrand is
    ``exp(-djj |v|^2 / 2 - w'v)``.  Returns ``(log_integral, mean, chol, M)``
    where ``chol`` is the lower Cholesky factor of the precision ``djj M'M``.
    """
    m = u.shape[0]
    nf = 0
    for r in range(m):
        if free[r]:
            nf += 1
    mm = np.zeros((m, nf))
    c = 0
    for r in range(m):
        if free[r]:
            mm[r, c] = 1.0
            c += 1
        else:
            for l in range(r):
                for q in range(nf):
                    mm[r, q] -= u[l, r] * mm[l, q]
            for q in range(nf):
                mm[r, q] /= u[r, r]
    if nf == 0:
        return 0.0, np.zeros(0), np.zeros((0, 0)), mm
    a = djj * (mm.T @ mm)
    cvec = mm.T @ w
    chol, ok = _chol_lower(a)
    if not ok:
        chol = np.linalg.cholesky(a)
    y = _backward_t(chol, _forward(chol, cvec))
    logdet = 0.0
    for q in range(nf):
        logdet += 2.0 * np.log(chol[q, q])
    log_int = 0.5 * nf * np.log(2.0 * np.pi) - 0.5 * logdet + 0.5 * np.dot(cvec, y)
    return log_int, -y, chol, mm


@njit(cache=True)
def collapsed_toggle_terms(k, d, i, j, adj):
    """Log ratio (edge present over edge absent) of the G-Wishart-type density
    with scale ``d``, integrated over the free factor entries of node ``j``
    given the precision block of the other nodes.

    ``adj`` supplies the other edges of ``j``; its ``(i, j)`` entry is ignored.
    """
    order, u, w = _toggle_frame(k, d, i, j)
    m = order.shape[0]
    free = np.empty(m, dtype=np.bool_)
    for r in range(m):
        free[r] = adj[order[r], j]
    free[m - 1] = True
    with_edge = _column_gaussian(u, w, d[j, j], free)[0] + np.log(u[m - 1, m - 1])
    free[m - 1] = False
    without = _column_gaussian(u, w, d[j, j], free)[0]
    return with_edge - without


@njit(cache=True)
def _draw_column(k, d, j, order, u, w, adj, schur, normals):
    """Copy of ``k`` with the free entries of column ``j`` drawn from their
    Gaussian conditional and ``k[j, j]`` set so that the Schur complement of
    the other nodes equals ``schur``."""
    m = order.shape[0]
    free = np.empty(m, dtype=np.bool_)
    for r in range(m):
        free[r] = adj[order[r], j]
    _, mean, chol, mm = _column_gaussian(u, w, d[j, j], free)
    nf = mean.shape[0]
    f = mean.copy()
    if nf > 0:
        f += _backward_t(chol, normals[:nf].copy())
    v = mm @ f
    new_col = u.T @ v
    out = k.copy()
    for r in range(m):
        val = new_col[r] if free[r] else 0.0
        out[order[r], j] = val
        out[j, order[r]] = val
    out[j, j] = np.dot(v, v) + schur
    return out


@njit(cache=True)
def redraw_column(k, d, i, j, adj, normals):
    """Copy of ``k`` whose row/column ``j`` is redrawn from its conditional
    under graph ``adj`` and scale ``d``, given the block of the other nodes
    and the last factor diagonal entry.  ``normals`` holds at least ``p - 1``
    standard normal variates.
    """
    order, u, w = _toggle_frame(k, d, i, j)
    m = order.shape[0]
    kcol = np.empty(m)
    for r in range(m):
        kcol[r] = k[order[r], j]
    v_cur = _forward(u.T.copy(), kcol)
    schur = k[j, j] - np.dot(v_cur, v_cur)
    return _draw_column(k, d, j, order, u, w, adj, schur, normals)


@njit(cache=True)
def precision_gibbs(rng, k, adj, d, b):
    """One scan of node-wise Gibbs updates leaving ``W_G(b, d)`` invariant.

    For each node ``j`` the Schur complement ``k_jj - k_j' K_{-j}^{-1} k_j``
    is drawn from ``Gamma(b/2, rate d_jj/2)`` and the free entries of column
    ``j`` from their Gaussian conditional given the other nodes.
    """
    p = k.shape[0]
    for j in range(p):
        order = np.empty(p - 1, dtype=np.int64)
        c = 0
        for t in range(p):
            if t != j:
                order[c] = t
                c += 1
        schur = 2.0 * rng.standard_gamma(0.5 * b) / d[j, j]
        normals = np.empty(p - 1)
        for t in range(p - 1):
            normals[t] = rng.standard_normal()
        if p == 1:
            k = k.copy()
            k[0, 0] = schur
            continue
        u, w = _column_frame(k, d, order, j)
        k = _draw_column(k, d, j, order, u, w, adj, schur, normals)
    return k


@njit(cache=True)
def elimination_order(adj):
    """Greedy minimum-fill elimination order (ties: fewer neighbours, then
    lower index).  Perfect for chordal graphs."""
    p = adj.shape[0]
    a = adj.copy()
    done = np.zeros(p, dtype=np.bool_)
    order = np.empty(p, dtype=np.int64)
    for step in range(p):
        best = -1
        best_fill = p * p
        best_deg = p
        for v in range(p):
            if done[v]:
                continue
            deg = 0
            fill = 0
            for x in range(p):
                if x != v and not done[x] and a[v, x]:
                    deg += 1
                    for y in range(x + 1, p):
                        if y != v and not done[y] and a[v, y] and not a[x, y]:
                            fill += 1
            if fill < best_fill or (fill == best_fill and deg < best_deg):
                best = v
                best_fill = fill
                best_deg = deg
        order[step] = best
        done[best] = True
        for x in range(p):
            if not done[x] and a[best, x]:
                for y in range(p):
                    if y != x and not done[y] and a[best, y]:
                        a[x, y] = True
    return order


@njit(cache=True)
def gwishart_exact(rng, adj, b, d, max_tries):
    """Exact draw from ``W_G(b, d)`` by rejection on the upper factor.

    With ``K = Phi' Phi`` and ``Phi = Psi T`` (``T`` the upper Cholesky factor
    of ``d^{-1}``), the free entries of ``Psi`` have independent chi and
    standard normal laws and the entries at non-edges are functions of them.
    The target carries the extra factor ``exp(-sum psi_rs^2 / 2)`` over those
    entries, which is at most one, so proposals from the free laws are
    accepted with exactly that probability.  Nodes are first put in a
    fill-reducing order.  Returns ``(K, tries)``; ``tries`` is ``-1`` when
    ``max_tries`` proposals were all rejected.
    """
    p = adj.shape[0]
    perm = elimination_order(adj)
    ap = np.empty((p, p), dtype=np.bool_)
    dp = np.empty((p, p))
    diagonal = True
    for r in range(p):
        for s in range(p):
            ap[r, s] = adj[perm[r], perm[s]]
            dp[r, s] = d[perm[r], perm[s]]
            if r != s and dp[r, s] != 0.0:
                diagonal = False
    t = np.zeros((p, p))
    if diagonal:
        for r in range(p):
            t[r, r] = 1.0 / np.sqrt(dp[r, r])
    else:
        low, ok = _chol_lower(_spd_inverse(dp))
        if not ok:
            low = np.linalg.cholesky(np.linalg.inv(dp))
        t = low.T.copy()
    nu = np.zeros(p, dtype=np.int64)
    for r in range(p):
        for s in range(r + 1, p):
            if ap[r, s]:
                nu[r] += 1
    psi = np.zeros((p, p))
    phi = np.zeros((p, p))
    tries = 0
    accepted = False
    while tries < max_tries and not accepted:
        tries += 1
        log_acc = 0.0
        for r in range(p):
            psi[r, r] = np.sqrt(2.0 * rng.standard_gamma(0.5 * (b + nu[r])))
            phi[r, r] = psi[r, r] * t[r, r]
            for s in range(r + 1, p):
                if ap[r, s]:
                    psi[r, s] = rng.standard_normal()
                    acc = 0.0
                    for q in range(r, s + 1):
                        acc += psi[r, q] * t[q, s]
                    phi[r, s] = acc
                else:
                    # pinned so that K[r, s] = 0
                    acc = 0.0
                    for l in range(r):
                        acc += phi[l, r] * phi[l, s]
                    phi[r, s] = -acc / phi[r, r]
                    acc = 0.0
                    for q in range(r, s):
                        acc += psi[r, q] * t[q, s]
                    psi[r, s] = (phi[r, s] - acc) / t[s, s]
                    log_acc -= 0.5 * psi[r, s] * psi[r, s]
        accepted = np.log(rng.random()) < log_acc
    kp = phi.T @ phi
    out = np.empty((p, p))
    for r in range(p):
        for s in range(p):
            if r == s or ap[r, s]:
                out[perm[r], perm[s]] = kp[r, s]
            else:
                out[perm[r], perm[s]] = 0.0
    return out, tries if accepted else -1


@njit(cache=True)
def edge_sweep(rng, k, adj, d_post, d_prior, b, pair_i, pair_j, log_odds, max_tries):
    """Exchange toggles of the pairs ``(pair_i[s], pair_j[s])`` in turn.

    Each toggle draws an exact auxiliary ``W_{G'}(b, d_prior)`` matrix, a
    uniform and, on acceptance, the ``p - 1`` normals of the column redraw,
    all from ``rng``.  ``adj`` is updated in place.  Returns the new ``K``
    and integer stats ``[accepted, births, deaths, max_tries, total_tries,
    status, failed_at]``; status 1 means an auxiliary draw exhausted
    ``max_tries``.
    """
    p = k.shape[0]
    stats = np.zeros(7, dtype=np.int64)
    stats[6] = -1
    normals = np.empty(p - 1)
    for s in range(pair_i.shape[0]):
        i = pair_i[s]
        j = pair_j[s]
        birth = not adj[i, j]
        adj[i, j] = birth
        adj[j, i] = birth
        k_aux, tries = gwishart_exact(rng, adj, b, d_prior, max_tries)
        if tries < 0:
            adj[i, j] = not birth
            adj[j, i] = not birth
            stats[5] = 1
            stats[6] = s
            return k, stats
        stats[4] += tries
        if tries > stats[3]:
            stats[3] = tries
        delta = collapsed_toggle_terms(k, d_post, i, j, adj) - collapsed_toggle_terms(k_aux, d_prior, i, j, adj)
        logr = log_odds + delta if birth else -log_odds - delta
        if np.log(rng.random()) < logr:
            for t in range(p - 1):
                normals[t] = rng.standard_normal()
            k = redraw_column(k, d_post, i, j, adj, normals)
            stats[0] += 1
            if birth:
                stats[1] += 1
            else:
                stats[2] += 1
        else:
            adj[i, j] = not birth
            adj[j, i] = not birth
    return k, stats
