# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: basis enumeration, Hamiltonian assembly, mean-field DOP853.

Call signatures and results match :mod:`frozenjch._kernels_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, nextafter, INFINITY

cnp.import_array()

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0

cdef enum:
    _OK = 0
    _UNDERFLOW = 1
    _MAXSTEPS = 2

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2


def enumerate_configs(int M, int n_max, long n_total):
    cdef int d0 = n_max + 1
    cdef int d = 2 * d0
    cdef long cap = d0
    cdef long[::1] exc = np.empty(d, dtype=np.int64)
    cdef int i, site
    for i in range(d):
        exc[i] = i // d0 + i % d0

    # ways[s, r]: number of completions of sites s..M-1 with r remaining
    cdef long rmax = n_total if n_total > 0 else 0
    cdef cnp.int64_t[:, ::1] ways = np.zeros((M + 1, rmax + 1), dtype=np.int64)
    cdef long r
    ways[M, 0] = 1
    for site in range(M - 1, -1, -1):
        for r in range(rmax + 1):
            for i in range(d):
                if exc[i] <= r:
                    ways[site, r] += ways[site + 1, r - exc[i]]
    if n_total < 0:
        return np.zeros((0, M), dtype=np.int64)
    cdef long D = ways[0, n_total]
    out_arr = np.zeros((D, M), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    if D == 0:
        return out_arr

    # iterative depth-first fill in lexicographic order
    cdef long[::1] cur = np.zeros(M, dtype=np.int64)
    cdef long[::1] rem = np.zeros(M + 1, dtype=np.int64)
    cdef long row = 0
    cdef int s
    rem[0] = n_total
    site = 0
    cur[0] = -1
    while site >= 0:
        cur[site] += 1
        while cur[site] < d and (exc[cur[site]] > rem[site]
                                  or ways[site + 1, rem[site] - exc[cur[site]]] == 0):
            cur[site] += 1
        if cur[site] >= d:
            site -= 1
            continue
        rem[site + 1] = rem[site] - exc[cur[site]]
        if site == M - 1:
            for s in range(M):
                out[row, s] = cur[s]
            row += 1
        else:
            site += 1
            cur[site] = -1
    return out_arr


cdef inline long _find(const cnp.int64_t[::1] keys, long D, cnp.int64_t target) nogil:
    cdef long lo = 0
    cdef long hi = D - 1
    cdef long mid
    while lo <= hi:
        mid = (lo + hi) >> 1
        if keys[mid] == target:
            return mid
        elif keys[mid] < target:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


def jch_triplets(local, keys, int n_max, double g, double J,
                 double omega_r, double omega_a):
    cdef const cnp.int64_t[:, ::1] loc = np.ascontiguousarray(local, dtype=np.int64)
    cdef const cnp.int64_t[::1] ks = np.ascontiguousarray(keys, dtype=np.int64)
    cdef long D = loc.shape[0]
    cdef int M = loc.shape[1]
    cdef int d0 = n_max + 1
    cdef int d = 2 * d0
    cdef cnp.int64_t[::1] w = np.empty(M, dtype=np.int64)
    cdef int j, p, q, k
    w[M - 1] = 1
    for j in range(M - 2, -1, -1):
        w[j] = w[j + 1] * d

    cdef long cap = D * (1 + 2 * M + 2 * (M - 1) + 1)
    rows_arr = np.empty(cap, dtype=np.int64)
    cols_arr = np.empty(cap, dtype=np.int64)
    vals_arr = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    cdef long nnz = 0
    cdef long i, pos
    cdef long ntot, ttot, t_j, n_j, n_p, n_q
    cdef double amp

    with nogil:
        for i in range(D):
            ntot = 0
            ttot = 0
            for j in range(M):
                ntot += loc[i, j] % d0
                ttot += loc[i, j] // d0
            rows[nnz] = i
            cols[nnz] = i
            vals[nnz] = omega_r * ntot + omega_a * ttot
            nnz += 1
            if g != 0.0:
                for j in range(M):
                    t_j = loc[i, j] // d0
                    n_j = loc[i, j] % d0
                    if t_j == 0 and n_j > 0:
                        pos = _find(ks, D, ks[i] + (d0 - 1) * w[j])
                        if pos >= 0:
                            amp = g * sqrt(<double>n_j)
                            rows[nnz] = pos
                            cols[nnz] = i
                            vals[nnz] = amp
                            rows[nnz + 1] = i
                            cols[nnz + 1] = pos
                            vals[nnz + 1] = amp
                            nnz += 2
            if J != 0.0:
                for j in range(M - 1):
                    for k in range(2):
                        if k == 0:
                            p = j
                            q = j + 1
                        else:
                            p = j + 1
                            q = j
                        n_p = loc[i, p] % d0
                        n_q = loc[i, q] % d0
                        if n_q > 0 and n_p < n_max:
                            pos = _find(ks, D, ks[i] + w[p] - w[q])
                            if pos >= 0:
                                rows[nnz] = pos
                                cols[nnz] = i
                                vals[nnz] = -J * sqrt(<double>(n_q * (n_p + 1)))
                                nnz += 1
    return rows_arr[:nnz], cols_arr[:nnz], vals_arr[:nnz]


cdef void _rhs(const double* y, int M, double g, double J, double wr,
               double wa, double* out) noexcept nogil:
    cdef int j
    cdef double ar, ai, mr, mi, z, nbr, nbi
    for j in range(M):
        ar = y[j]
        ai = y[M + j]
        mr = y[2 * M + j]
        mi = y[3 * M + j]
        z = y[4 * M + j]
        nbr = 0.0
        nbi = 0.0
        if j > 0:
            nbr += y[j - 1]
            nbi += y[M + j - 1]
        if j < M - 1:
            nbr += y[j + 1]
            nbi += y[M + j + 1]
        out[j] = wr * ai + g * mi - J * nbi
        out[M + j] = -wr * ar - g * mr + J * nbr
        out[2 * M + j] = 2.0 * wa * mi - g * z * ai
        out[3 * M + j] = -2.0 * wa * mr + g * z * ar
        out[4 * M + j] = 4.0 * g * (ai * mr - ar * mi)


def sc_rhs(y, int M, double g, double J, double omega_r, double omega_a, out):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] ov = out
    _rhs(&yv[0], M, g, J, omega_r, omega_a, &ov[0])
    return out


def sc_integrate(y0, int M, double g, double J, double omega_r, double omega_a,
                 t_samples, double rtol, double atol, long max_steps,
                 A, B, C, E3, E5):
    cdef double[::1] ts = np.ascontiguousarray(t_samples, dtype=np.float64)
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] e3 = np.ascontiguousarray(E3, dtype=np.float64)
    cdef const double[::1] e5 = np.ascontiguousarray(E5, dtype=np.float64)
    cdef int n = 5 * M
    cdef long ns = ts.shape[0]
    cdef int n_stages = b.shape[0]
    out_arr = np.empty((ns, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] y = np.array(y0, dtype=np.float64)
    cdef double[::1] f = np.empty(n)
    cdef double[::1] ynew = np.empty(n)
    cdef double[::1] ytmp = np.empty(n)
    cdef double[::1] f1 = np.empty(n)
    cdef double[:, ::1] K = np.empty((n_stages + 1, n))
    cdef int i, s, q
    cdef long k, steps = 0, nfev = 0
    cdef double t, t_target, h, h_abs, h0, h1, d0_, d1_, d2_, sc, acc, min_step
    cdef double err, e5n, e3n, r5, r3, factor, proposal
    cdef double exponent = -1.0 / 8.0
    cdef bint clipped, rejected
    cdef int status = 0

    for i in range(n):
        out[0, i] = y[i]
    t = ts[0]
    with nogil:
        _rhs(&y[0], M, g, J, omega_r, omega_a, &f[0])
    nfev = 1
    if ns == 1:
        return out_arr, nfev, STATUS_OK, t

    d0_ = 0.0
    d1_ = 0.0
    for i in range(n):
        sc = atol + fabs(y[i]) * rtol
        d0_ += (y[i] / sc) ** 2
        d1_ += (f[i] / sc) ** 2
    d0_ = sqrt(d0_ / n)
    d1_ = sqrt(d1_ / n)
    if d0_ < 1e-5 or d1_ < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0_ / d1_
    if h0 > ts[ns - 1] - t:
        h0 = ts[ns - 1] - t
    for i in range(n):
        ytmp[i] = y[i] + h0 * f[i]
    _rhs(&ytmp[0], M, g, J, omega_r, omega_a, &f1[0])
    nfev += 1
    d2_ = 0.0
    for i in range(n):
        sc = atol + fabs(y[i]) * rtol
        d2_ += ((f1[i] - f[i]) / sc) ** 2
    d2_ = sqrt(d2_ / n) / h0
    if d1_ <= 1e-15 and d2_ <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / (d1_ if d1_ > d2_ else d2_), 1.0 / 8.0)
    h_abs = 100 * h0 if 100 * h0 < h1 else h1

    with nogil:
        for k in range(1, ns):
            t_target = ts[k]
            while t < t_target:
                min_step = 10 * fabs(nextafter(t, INFINITY) - t)
                rejected = False
                while True:
                    if not h_abs >= min_step:  # also catches NaN
                        status = _UNDERFLOW
                        break
                    clipped = h_abs >= t_target - t
                    if clipped:
                        h = t_target - t
                    else:
                        h = h_abs
                    for i in range(n):
                        K[0, i] = f[i]
                    for s in range(1, n_stages):
                        for i in range(n):
                            acc = 0.0
                            for q in range(s):
                                acc += a[s, q] * K[q, i]
                            ytmp[i] = y[i] + h * acc
                        _rhs(&ytmp[0], M, g, J, omega_r, omega_a, &K[s, 0])
                    for i in range(n):
                        acc = 0.0
                        for q in range(n_stages):
                            acc += b[q] * K[q, i]
                        ynew[i] = y[i] + h * acc
                    _rhs(&ynew[0], M, g, J, omega_r, omega_a, &K[n_stages, 0])
                    nfev += n_stages
                    e5n = 0.0
                    e3n = 0.0
                    for i in range(n):
                        sc = fabs(y[i])
                        if fabs(ynew[i]) > sc:
                            sc = fabs(ynew[i])
                        sc = atol + sc * rtol
                        r5 = 0.0
                        r3 = 0.0
                        for q in range(n_stages + 1):
                            r5 += e5[q] * K[q, i]
                            r3 += e3[q] * K[q, i]
                        e5n += (r5 / sc) ** 2
                        e3n += (r3 / sc) ** 2
                    if e5n == 0.0 and e3n == 0.0:
                        err = 0.0
                    else:
                        err = fabs(h) * e5n / sqrt((e5n + 0.01 * e3n) * n)
                        if err != err:
                            # inf/inf when the tolerance scale underflows
                            err = INFINITY
                    if err < 1.0:
                        if err == 0.0:
                            factor = MAX_FACTOR
                        else:
                            factor = SAFETY * pow(err, exponent)
                            if factor > MAX_FACTOR:
                                factor = MAX_FACTOR
                        if rejected and factor > 1.0:
                            factor = 1.0
                        proposal = h * factor
                        if clipped:
                            if proposal > h_abs:
                                h_abs = proposal
                        else:
                            h_abs = proposal
                        break
                    factor = SAFETY * pow(err, exponent)
                    if factor < MIN_FACTOR:
                        factor = MIN_FACTOR
                    h_abs = h * factor
                    rejected = True
                if status != 0:
                    break
                if clipped:
                    t = t_target
                else:
                    t = t + h
                for i in range(n):
                    y[i] = ynew[i]
                    f[i] = K[n_stages, i]
                steps += 1
                if steps > max_steps:
                    status = _MAXSTEPS
                    break
            if status != 0:
                break
            for i in range(n):
                out[k, i] = y[i]
    if status != 0:
        return out_arr[:k], nfev, status, t
    return out_arr, nfev, STATUS_OK, t
