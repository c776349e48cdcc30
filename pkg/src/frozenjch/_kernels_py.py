"""Pure-Python implementations of the numerical kernels.

These mirror :mod:`frozenjch._kernels` (Cython) call for call and are used
when the compiled extension is unavailable or ``FROZENJCH_PURE_PYTHON=1``.
"""

import numpy as np

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2


def enumerate_configs(M, n_max, n_total):
    """All local-index configurations with total excitation ``n_total``.

    Rows are in lexicographic order of the local indices (site 0 most
    significant); the local index is ``tls * (n_max + 1) + n``.
    """
    d0 = n_max + 1
    d = 2 * d0
    exc = np.array([i // d0 + i % d0 for i in range(d)])
    cap = d0  # max excitation of a single site

    rows = []
    current = [0] * M

    def rec(site, remaining):
        if site == M:
            if remaining == 0:
                rows.append(list(current))
            return
        left_after = M - site - 1
        for i in range(d):
            e = exc[i]
            r = remaining - e
            if r < 0 or r > left_after * cap:
                continue
            current[site] = i
            rec(site + 1, r)

    rec(0, n_total)
    if not rows:
        return np.zeros((0, M), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def config_keys(local, d):
    """Mixed-radix integer key of each configuration row."""
    local = np.asarray(local, dtype=np.int64)
    M = local.shape[1]
    weights = d ** np.arange(M - 1, -1, -1, dtype=np.int64)
    return local @ weights


def _lookup(keys, targets):
    pos = np.searchsorted(keys, targets)
    pos = np.minimum(pos, len(keys) - 1)
    found = keys[pos] == targets
    return pos, found


def jch_triplets(local, keys, n_max, g, J, omega_r, omega_a):
    """Sparse (row, col, value) triplets of the JCH Hamiltonian.

    Open boundaries; the basis ``keys`` must be sorted and closed under the
    excitation-conserving terms. Returns float64 arrays; both triangles of
    every off-diagonal pair are emitted.
    """
    local = np.asarray(local, dtype=np.int64)
    D, M = local.shape
    d0 = n_max + 1
    d = 2 * d0
    tls = local // d0
    n = local % d0
    weights = d ** np.arange(M - 1, -1, -1, dtype=np.int64)
    idx = np.arange(D, dtype=np.int64)

    rows = [idx]
    cols = [idx]
    vals = [omega_r * n.sum(axis=1) + omega_a * tls.sum(axis=1)]

    if g != 0.0:
        for j in range(M):
            # a_j sigma^+_j : |g, n> -> sqrt(n) |e, n-1>
            mask = (tls[:, j] == 0) & (n[:, j] > 0)
            src = idx[mask]
            target = keys[mask] + (d0 - 1) * weights[j]
            pos, found = _lookup(keys, target)
            amp = g * np.sqrt(n[mask, j].astype(float))
            pos, src, amp = pos[found], src[found], amp[found]
            rows += [pos, src]
            cols += [src, pos]
            vals += [amp, amp]

    if J != 0.0:
        for j in range(M - 1):
            for p, q in ((j, j + 1), (j + 1, j)):
                # a_p^dag a_q
                mask = (n[:, q] > 0) & (n[:, p] < n_max)
                src = idx[mask]
                target = keys[mask] + weights[p] - weights[q]
                pos, found = _lookup(keys, target)
                amp = -J * np.sqrt((n[mask, q] * (n[mask, p] + 1)).astype(float))
                rows.append(pos[found])
                cols.append(src[found])
                vals.append(amp[found])

    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def sc_rhs(y, M, g, J, omega_r, omega_a, out):
    """Mean-field right-hand side on the real layout [Re a, Im a, Re m, Im m, z]."""
    ar = y[0:M]
    ai = y[M:2 * M]
    mr = y[2 * M:3 * M]
    mi = y[3 * M:4 * M]
    z = y[4 * M:5 * M]
    nbr = np.zeros(M)
    nbi = np.zeros(M)
    nbr[1:] += ar[:-1]
    nbr[:-1] += ar[1:]
    nbi[1:] += ai[:-1]
    nbi[:-1] += ai[1:]
    out[0:M] = omega_r * ai + g * mi - J * nbi
    out[M:2 * M] = -omega_r * ar - g * mr + J * nbr
    out[2 * M:3 * M] = 2.0 * omega_a * mi - g * z * ai
    out[3 * M:4 * M] = -2.0 * omega_a * mr + g * z * ar
    out[4 * M:5 * M] = 4.0 * g * (ai * mr - ar * mi)
    return out


def _rms(v):
    return np.sqrt(np.dot(v, v) / v.size)


def sc_integrate(y0, M, g, J, omega_r, omega_a, t_samples, rtol, atol,
                 max_steps, A, B, C, E3, E5):
    """Adaptive DOP853 integration sampled exactly at ``t_samples``.

    Steps are clipped so that every sample time is landed on. Returns
    ``(samples, nfev, status, t_fail)``.
    """
    y = np.array(y0, dtype=float)
    n = y.size
    ns = len(t_samples)
    out = np.empty((ns, n))
    out[0] = y
    n_stages = len(B)
    K = np.empty((n_stages + 1, n))
    f = np.empty(n)
    sc_rhs(y, M, g, J, omega_r, omega_a, f)
    nfev = 1
    t = float(t_samples[0])
    if ns == 1:
        return out, nfev, STATUS_OK, t

    # initial step (Hairer, Norsett & Wanner II.4)
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t_samples[-1] - t)
    y1 = y + h0 * f
    f1 = np.empty(n)
    sc_rhs(y1, M, g, J, omega_r, omega_a, f1)
    nfev += 1
    d2 = _rms((f1 - f) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    h_abs = min(100 * h0, h1)

    exponent = -1.0 / 8.0
    steps = 0
    ynew = np.empty(n)
    fnew = np.empty(n)
    for k in range(1, ns):
        t_target = float(t_samples[k])
        while t < t_target:
            min_step = 10 * abs(np.nextafter(t, np.inf) - t)
            rejected = False
            while True:
                if not h_abs >= min_step:  # also catches NaN
                    return out[:k], nfev, STATUS_STEP_UNDERFLOW, t
                clipped = h_abs >= t_target - t
                h = t_target - t if clipped else h_abs
                K[0] = f
                for s in range(1, n_stages):
                    dy = h * (A[s, :s] @ K[:s])
                    sc_rhs(y + dy, M, g, J, omega_r, omega_a, K[s])
                ynew[:] = y + h * (B @ K[:n_stages])
                sc_rhs(ynew, M, g, J, omega_r, omega_a, fnew)
                nfev += n_stages
                K[n_stages] = fnew
                scale = atol + np.maximum(np.abs(y), np.abs(ynew)) * rtol
                err5 = (E5 @ K) / scale
                err3 = (E3 @ K) / scale
                e5 = np.dot(err5, err5)
                e3 = np.dot(err3, err3)
                if e5 == 0.0 and e3 == 0.0:
                    err = 0.0
                else:
                    err = abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * n)
                    if err != err:
                        # inf/inf when the tolerance scale underflows
                        err = np.inf
                if err < 1.0:
                    factor = MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, SAFETY * err ** exponent)
                    if rejected:
                        factor = min(1.0, factor)
                    proposal = h * factor
                    h_abs = max(h_abs, proposal) if clipped else proposal
                    break
                h_abs = h * max(MIN_FACTOR, SAFETY * err ** exponent)
                rejected = True
            t = t_target if clipped else t + h
            y[:] = ynew
            f[:] = fnew
            steps += 1
            if steps > max_steps:
                return out[:k], nfev, STATUS_MAX_STEPS, t
        out[k] = y
    return out, nfev, STATUS_OK, t
