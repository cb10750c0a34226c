"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``*_nb`` is a plain-loop implementation that is
compiled with ``numba.njit`` when numba is importable, and ``*_np`` is a
vectorised numpy implementation.  The public name (without suffix) is bound
to one of the two at import time.  Set ``CALIBRA_NO_JIT=1`` to force the
numpy path (numba is then never imported).

Both paths implement the same arithmetic, but summation order differs, so
results agree to rounding error rather than bit for bit.  Within one path
everything is deterministic.
"""

import math
import os

import numpy as np

_DISABLED = os.environ.get("CALIBRA_NO_JIT", "").strip().lower() in ("1", "true", "yes", "on")

if _DISABLED:
    HAVE_NUMBA = False
else:
    try:
        import numba

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA


def _jit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# pool adjacent violators
# ---------------------------------------------------------------------------


@_jit
def pav_nb(y, w):
    n = y.shape[0]
    vals = np.empty(n)
    wts = np.empty(n)
    ends = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        vals[top] = y[i]
        wts[top] = w[i]
        ends[top] = i + 1
        top += 1
        while top > 1 and vals[top - 2] >= vals[top - 1]:
            wsum = wts[top - 2] + wts[top - 1]
            vals[top - 2] = (wts[top - 2] * vals[top - 2] + wts[top - 1] * vals[top - 1]) / wsum
            wts[top - 2] = wsum
            ends[top - 2] = ends[top - 1]
            top -= 1
    return vals[:top].copy(), wts[:top].copy(), ends[:top].copy()


def pav_np(y, w):
    # PAV is inherently sequential; this is the interpreter-level stack version.
    vals, wts, ends = [], [], []
    for i in range(len(y)):
        vals.append(float(y[i]))
        wts.append(float(w[i]))
        ends.append(i + 1)
        while len(vals) > 1 and vals[-2] >= vals[-1]:
            wsum = wts[-2] + wts[-1]
            v = (wts[-2] * vals[-2] + wts[-1] * vals[-1]) / wsum
            e = ends[-1]
            del vals[-1], wts[-1], ends[-1]
            vals[-1], wts[-1], ends[-1] = v, wsum, e
    return np.array(vals), np.array(wts), np.array(ends, dtype=np.int64)


# ---------------------------------------------------------------------------
# weighted simple linear regression, best single attribute
# ---------------------------------------------------------------------------


@_jit
def linear_fit_nb(X, z, w):
    n, p = X.shape
    wsum = 0.0
    wz = 0.0
    for i in range(n):
        wsum += w[i]
        wz += w[i] * z[i]
    zm = wz / wsum
    szz = 0.0
    for i in range(n):
        d = z[i] - zm
        szz += w[i] * d * d
    best_attr = 0
    best_sse = np.inf
    best_slope = 0.0
    best_icpt = zm
    for c in range(p):
        lo = X[0, c]
        hi = X[0, c]
        wx = 0.0
        for i in range(n):
            v = X[i, c]
            wx += w[i] * v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            slope = 0.0
            icpt = zm
            sse = szz
        else:
            xm = wx / wsum
            sxx = 0.0
            sxz = 0.0
            for i in range(n):
                dx = X[i, c] - xm
                sxx += w[i] * dx * dx
                sxz += w[i] * dx * (z[i] - zm)
            if sxx > 0.0:
                slope = sxz / sxx
                icpt = zm - slope * xm
                sse = szz - slope * sxz
            else:  # spread lost to underflow: treat as constant
                slope = 0.0
                icpt = zm
                sse = szz
        if sse < best_sse:
            best_sse = sse
            best_attr = c
            best_slope = slope
            best_icpt = icpt
    return best_attr, best_slope, best_icpt


def linear_fit_np(X, z, w):
    wsum = w.sum()
    zm = (w * z).sum() / wsum
    dz = z - zm
    szz = (w * dz * dz).sum()
    xm = (w[:, None] * X).sum(axis=0) / wsum
    dx = X - xm
    sxx = (w[:, None] * dx * dx).sum(axis=0)
    const = (X.max(axis=0) == X.min(axis=0)) | ~(sxx > 0.0)
    sxz = (w[:, None] * dx * dz[:, None]).sum(axis=0)
    safe = np.where(const, 1.0, sxx)
    slope = np.where(const, 0.0, sxz / safe)
    icpt = np.where(const, zm, zm - slope * xm)
    sse = np.where(const, szz, szz - slope * sxz)
    c = int(np.argmin(sse))  # first minimum: lowest index wins ties
    return c, float(slope[c]), float(icpt[c])


# ---------------------------------------------------------------------------
# LogitBoost with simple-linear weak learners (full runs)
# ---------------------------------------------------------------------------


@_jit
def _softmax_rows_nb(F, P, p_clip):
    n, m = F.shape
    for i in range(n):
        mx = F[i, 0]
        for j in range(1, m):
            if F[i, j] > mx:
                mx = F[i, j]
        s = 0.0
        for j in range(m):
            e = math.exp(F[i, j] - mx)
            P[i, j] = e
            s += e
        for j in range(m):
            q = P[i, j] / s
            if q < p_clip:
                q = p_clip
            elif q > 1.0 - p_clip:
                q = 1.0 - p_clip
            P[i, j] = q


@_jit
def _apply_linear_step_nb(X, attrs, slopes, icpts, F):
    # F_j += (m-1)/m * (f_j - mean_k f_k), summed in class order
    n, m = F.shape
    scale = (m - 1.0) / m
    f = np.empty(m)
    for i in range(n):
        s = 0.0
        for j in range(m):
            f[j] = icpts[j] + slopes[j] * X[i, attrs[j]]
            s = s + f[j]
        mean = s / m
        for j in range(m):
            F[i, j] = F[i, j] + scale * (f[j] - mean)


@_jit
def boost_linear_nb(X, Y, F0, n_iter, z_max, w_min, p_clip):
    n, m = Y.shape
    F = F0.copy()
    P = np.empty((n, m))
    attrs = np.zeros((n_iter, m), dtype=np.int64)
    slopes = np.zeros((n_iter, m))
    icpts = np.zeros((n_iter, m))
    z = np.empty(n)
    w = np.empty(n)
    for it in range(n_iter):
        _softmax_rows_nb(F, P, p_clip)
        for j in range(m):
            if m == 2 and j == 1:
                # class 2 responses are the exact negation of class 1
                attrs[it, 1] = attrs[it, 0]
                slopes[it, 1] = -slopes[it, 0]
                icpts[it, 1] = -icpts[it, 0]
                continue
            for i in range(n):
                q = P[i, j]
                r = Y[i, j] - q
                wt = q * (1.0 - q)
                lim = abs(r) / z_max
                if lim > wt:
                    wt = lim
                if wt < w_min:
                    wt = w_min
                w[i] = wt
                z[i] = r / wt
            a, s, c = linear_fit_nb(X, z, w)
            attrs[it, j] = a
            slopes[it, j] = s
            icpts[it, j] = c
        _apply_linear_step_nb(X, attrs[it], slopes[it], icpts[it], F)
        for i in range(n):
            for j in range(m):
                if not math.isfinite(F[i, j]):
                    return attrs, slopes, icpts, F, it
    return attrs, slopes, icpts, F, -1


@_jit
def eval_linear_nb(X, attrs, slopes, icpts, F0):
    F = F0.copy()
    for it in range(attrs.shape[0]):
        _apply_linear_step_nb(X, attrs[it], slopes[it], icpts[it], F)
    return F


@_jit
def linear_rmse_path_nb(X, Y, attrs, slopes, icpts):
    n, m = Y.shape
    k = attrs.shape[0]
    F = np.zeros((n, m))
    P = np.empty((n, m))
    out = np.empty(k)
    for it in range(k):
        _apply_linear_step_nb(X, attrs[it], slopes[it], icpts[it], F)
        _softmax_rows_nb(F, P, 0.0)
        acc = 0.0
        for i in range(n):
            for j in range(m):
                d = P[i, j] - Y[i, j]
                acc += d * d
        out[it] = math.sqrt(acc / (n * m))
    return out


def _softmax_rows_np(F, p_clip):
    E = np.exp(F - F.max(axis=1, keepdims=True))
    P = E / E.sum(axis=1, keepdims=True)
    if p_clip > 0.0:
        np.clip(P, p_clip, 1.0 - p_clip, out=P)
    return P


def _apply_linear_step_np(X, attrs, slopes, icpts, F):
    m = F.shape[1]
    scale = (m - 1.0) / m
    f = [icpts[j] + slopes[j] * X[:, attrs[j]] for j in range(m)]
    s = f[0]
    for j in range(1, m):
        s = s + f[j]
    mean = s / m
    for j in range(m):
        F[:, j] = F[:, j] + scale * (f[j] - mean)


def boost_linear_np(X, Y, F0, n_iter, z_max, w_min, p_clip):
    n, m = Y.shape
    F = F0.copy()
    attrs = np.zeros((n_iter, m), dtype=np.int64)
    slopes = np.zeros((n_iter, m))
    icpts = np.zeros((n_iter, m))
    for it in range(n_iter):
        P = _softmax_rows_np(F, p_clip)
        for j in range(m):
            if m == 2 and j == 1:
                attrs[it, 1] = attrs[it, 0]
                slopes[it, 1] = -slopes[it, 0]
                icpts[it, 1] = -icpts[it, 0]
                continue
            q = P[:, j]
            r = Y[:, j] - q
            w = np.maximum(np.maximum(q * (1.0 - q), np.abs(r) / z_max), w_min)
            attrs[it, j], slopes[it, j], icpts[it, j] = linear_fit_np(X, r / w, w)
        _apply_linear_step_np(X, attrs[it], slopes[it], icpts[it], F)
        if not np.isfinite(F).all():
            return attrs, slopes, icpts, F, it
    return attrs, slopes, icpts, F, -1


def eval_linear_np(X, attrs, slopes, icpts, F0):
    F = F0.copy()
    for it in range(attrs.shape[0]):
        _apply_linear_step_np(X, attrs[it], slopes[it], icpts[it], F)
    return F


def linear_rmse_path_np(X, Y, attrs, slopes, icpts):
    n, m = Y.shape
    F = np.zeros((n, m))
    out = np.empty(attrs.shape[0])
    for it in range(attrs.shape[0]):
        _apply_linear_step_np(X, attrs[it], slopes[it], icpts[it], F)
        P = _softmax_rows_np(F, 0.0)
        out[it] = math.sqrt(((P - Y) ** 2).sum() / (n * m))
    return out


# ---------------------------------------------------------------------------
# C4.5 numeric threshold scan (information gain on class labels)
# ---------------------------------------------------------------------------


@_jit
def _entropy_nb(counts, total):
    h = 0.0
    if total <= 0:
        return 0.0
    for c in counts:
        if c > 0:
            q = c / total
            h -= q * math.log2(q)
    return h


@_jit
def entropy_split_nb(x, y, m, min_leaf):
    """x sorted ascending, y aligned class indices.  Returns gain, cut, split_info."""
    n = x.shape[0]
    right = np.zeros(m)
    for i in range(n):
        right[y[i]] += 1.0
    left = np.zeros(m)
    h_parent = _entropy_nb(right, n)
    best_gain = -1.0
    best_pos = -1
    best_si = 0.0
    for i in range(n - 1):
        left[y[i]] += 1.0
        right[y[i]] -= 1.0
        nl = i + 1
        nr = n - nl
        if x[i] == x[i + 1] or nl < min_leaf or nr < min_leaf:
            continue
        gain = h_parent - (nl / n) * _entropy_nb(left, nl) - (nr / n) * _entropy_nb(right, nr)
        if gain > best_gain + 1e-12:
            best_gain = gain
            best_pos = i
            pl = nl / n
            pr = nr / n
            best_si = -pl * math.log2(pl) - pr * math.log2(pr)
    return best_gain, best_pos, best_si


def _entropy_rows_np(counts):
    tot = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), 0.0)
        lg = np.where(q > 0, np.log2(np.where(q > 0, q, 1.0)), 0.0)
    return -(q * lg).sum(axis=1)


def entropy_split_np(x, y, m, min_leaf):
    n = x.shape[0]
    onehot = np.zeros((n, m))
    onehot[np.arange(n), y] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = onehot.sum(axis=0)
    right = total - left
    nl = np.arange(1, n, dtype=float)
    nr = n - nl
    h_parent = _entropy_rows_np(total[None, :])[0]
    gain = h_parent - (nl / n) * _entropy_rows_np(left) - (nr / n) * _entropy_rows_np(right)
    ok = (x[:-1] != x[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return -1.0, -1, 0.0
    cand = np.flatnonzero(ok)
    g = gain[cand]
    # first position within 1e-12 of the maximum, matching the loop's strict-improvement rule
    best = -1.0
    pos = -1
    for k in range(cand.shape[0]):
        if g[k] > best + 1e-12:
            best = g[k]
            pos = cand[k]
    pl = (pos + 1) / n
    pr = 1.0 - pl
    si = -pl * math.log2(pl) - pr * math.log2(pr)
    return float(best), int(pos), float(si)


# ---------------------------------------------------------------------------
# weighted-SSE binary split scan over presorted columns (stumps, trees)
# ---------------------------------------------------------------------------


@_jit
def sse_split_nb(X, order, mask, z, w, min_leaf):
    """Best SSE-reducing binary split over rows with ``mask`` set.

    ``order[:, c]`` sorts column ``c`` ascending over *all* rows.  Returns
    (column, threshold, left value, right value, gain); column is -1 when no
    admissible split exists.
    """
    n, p = X.shape
    wt = 0.0
    wzt = 0.0
    cnt = 0
    for i in range(n):
        if mask[i]:
            wt += w[i]
            wzt += w[i] * z[i]
            cnt += 1
    base = wzt * wzt / wt
    best_gain = 0.0
    best_c = -1
    best_thr = 0.0
    best_l = 0.0
    best_r = 0.0
    for c in range(p):
        wl = 0.0
        wzl = 0.0
        nl = 0
        prev = -1
        for k in range(n):
            i = order[k, c]
            if not mask[i]:
                continue
            if prev >= 0 and X[i, c] != X[prev, c] and nl >= min_leaf and cnt - nl >= min_leaf:
                wr = wt - wl
                if wl > 0.0 and wr > 0.0:
                    wzr = wzt - wzl
                    gain = wzl * wzl / wl + wzr * wzr / wr - base
                    if gain > best_gain + 1e-12 * (abs(base) + 1.0):
                        best_gain = gain
                        best_c = c
                        best_thr = 0.5 * (X[prev, c] + X[i, c])
                        best_l = wzl / wl
                        best_r = wzr / wr
            wl += w[i]
            wzl += w[i] * z[i]
            nl += 1
            prev = i
    return best_c, best_thr, best_l, best_r, best_gain


def sse_split_np(X, order, mask, z, w, min_leaf):
    n, p = X.shape
    wt = w[mask].sum()
    wzt = (w * z)[mask].sum()
    cnt = int(mask.sum())
    base = wzt * wzt / wt
    tol = 1e-12 * (abs(base) + 1.0)
    best = (-1, 0.0, 0.0, 0.0, 0.0)
    for c in range(p):
        idx = order[:, c]
        idx = idx[mask[idx]]
        xs = X[idx, c]
        wl = np.cumsum(w[idx])[:-1]
        wzl = np.cumsum((w * z)[idx])[:-1]
        nl = np.arange(1, cnt)
        wr = wt - wl
        ok = (xs[:-1] != xs[1:]) & (nl >= min_leaf) & (cnt - nl >= min_leaf) & (wl > 0) & (wr > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, wzl * wzl / wl + (wzt - wzl) ** 2 / wr - base, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[4] + tol:
            best = (c, 0.5 * (xs[k] + xs[k + 1]), wzl[k] / wl[k], (wzt - wzl[k]) / wr[k], float(gain[k]))
    return best


if USE_JIT:
    pav = pav_nb
    linear_fit = linear_fit_nb
    boost_linear = boost_linear_nb
    eval_linear = eval_linear_nb
    linear_rmse_path = linear_rmse_path_nb
    entropy_split = entropy_split_nb
    sse_split = sse_split_nb
else:
    pav = pav_np
    linear_fit = linear_fit_np
    boost_linear = boost_linear_np
    eval_linear = eval_linear_np
    linear_rmse_path = linear_rmse_path_np
    entropy_split = entropy_split_np
    sse_split = sse_split_np
