# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled multinomial kernels; see ``_kernels_py.py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, exp, sqrt, floor, fabs, copysign
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t C1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t C2 = 0x94D049BB133111EBULL
cdef double U53 = 1.0 / 9007199254740992.0
cdef double ZERO_PROB = 1e-15

cdef double[10] FC = [
    0.08106146679532726,
    0.04134069595540929,
    0.02767792568499834,
    0.02079067210376509,
    0.01664469118982119,
    0.01387612882307075,
    0.01189670994589177,
    0.01041126526197209,
    0.009255462182712733,
    0.008330563433362871,
]

ctypedef struct stream_t:
    uint64_t key
    uint64_t counter


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * C1
    z = (z ^ (z >> 27)) * C2
    return z ^ (z >> 31)


cdef inline uint64_t derive(uint64_t key, uint64_t tag) noexcept nogil:
    return mix64((key ^ mix64(tag + GOLDEN)) + GOLDEN)


cdef inline double uniform(stream_t *st) noexcept nogil:
    st.counter += 1
    cdef uint64_t z = mix64(st.key + st.counter * GOLDEN)
    return (<double>(z >> 11) + 0.5) * U53


cdef inline double fc(int64_t k) noexcept nogil:
    cdef double kp1, kp1sq
    if k < 10:
        return FC[k]
    kp1 = k + 1.0
    kp1sq = kp1 * kp1
    return (1.0 / 12.0 - (1.0 / 360.0 - 1.0 / 1260.0 / kp1sq) / kp1sq) / kp1


cdef int64_t binomial_inversion(stream_t *st, int64_t n, double p) noexcept nogil:
    cdef double q = 1.0 - p
    cdef double qn = exp(<double>n * log1p(-p))
    cdef double r = p / q
    cdef double g = r * <double>(n + 1)
    cdef double np_ = <double>n * p
    cdef double bound = np_ + 10.0 * sqrt(np_ * q + 1.0)
    cdef double px, u
    cdef int64_t x
    if <double>n < bound:
        bound = <double>n
    while True:
        x = 0
        px = qn
        u = uniform(st)
        while u > px:
            x += 1
            if <double>x > bound:
                break
            u -= px
            px *= g / <double>x - r
        else:
            return x


cdef int64_t binomial_btrd(stream_t *st, int64_t n, double p) noexcept nogil:
    cdef double q = 1.0 - p
    cdef int64_t m = <int64_t>floor(<double>(n + 1) * p)
    cdef double r = p / q
    cdef double nr = <double>(n + 1) * r
    cdef double npq = <double>n * p * q
    cdef double sqrt_npq = sqrt(npq)
    cdef double b = 1.15 + 2.53 * sqrt_npq
    cdef double a = -0.0873 + 0.0248 * b + 0.01 * p
    cdef double c = <double>n * p + 0.5
    cdef double alpha = (2.83 + 5.1 / b) * sqrt_npq
    cdef double v_r = 0.92 - 4.2 / b
    cdef double u_rv_r = 0.86 * v_r
    cdef double u, v, us, kf, f, rho, t, h, km
    cdef int64_t k, i, nm, nk
    while True:
        v = uniform(st)
        if v <= u_rv_r:
            u = v / v_r - 0.43
            return <int64_t>floor((2.0 * a / (0.5 - fabs(u)) + b) * u + c)
        if v >= v_r:
            u = uniform(st) - 0.5
        else:
            u = v / v_r - 0.93
            u = copysign(0.5, u) - u
            v = uniform(st) * v_r
        us = 0.5 - fabs(u)
        kf = floor((2.0 * a / us + b) * u + c)
        if kf < 0.0 or kf > <double>n:
            continue
        k = <int64_t>kf
        v = v * alpha / (a / (us * us) + b)
        km = <double>(k - m if k > m else m - k)
        if km <= 15.0:
            f = 1.0
            if m < k:
                i = m
                while i < k:
                    i += 1
                    f *= nr / <double>i - r
            elif m > k:
                i = k
                while i < m:
                    i += 1
                    v *= nr / <double>i - r
            if v <= f:
                return k
            continue
        v = log(v)
        rho = (km / npq) * (((km / 3.0 + 0.625) * km + 1.0 / 6.0) / npq + 0.5)
        t = -km * km / (2.0 * npq)
        if v < t - rho:
            return k
        if v > t + rho:
            continue
        nm = n - m + 1
        h = (<double>m + 0.5) * log(<double>(m + 1) / (r * <double>nm)) + fc(m) + fc(n - m)
        nk = n - k + 1
        if v <= (h + <double>(n + 1) * log(<double>nm / <double>nk)
                 + (<double>k + 0.5) * log(<double>nk * r / <double>(k + 1))
                 - fc(k) - fc(n - k)):
            return k


cdef inline int64_t binomial_half(stream_t *st, int64_t n, double p) noexcept nogil:
    if <double>n * p < 10.0:
        return binomial_inversion(st, n, p)
    return binomial_btrd(st, n, p)


cdef inline int64_t binomial(stream_t *st, int64_t n, double p) noexcept nogil:
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if p > 0.5:
        return n - binomial_half(st, n, 1.0 - p)
    return binomial_half(st, n, p)


cdef int row_counts(const double *pi, Py_ssize_t n_k, int64_t nu, uint64_t key,
                    int64_t *out, double *p, double *suffix) noexcept nogil:
    cdef Py_ssize_t j, last = -1
    cdef double acc = 0.0, cond
    cdef int64_t remaining = nu, cnt
    cdef stream_t st
    for j in range(n_k):
        p[j] = pi[j] if pi[j] >= ZERO_PROB else 0.0
        out[j] = 0
    j = n_k - 1
    while j >= 0:
        if p[j] > 0.0:
            last = j
            break
        j -= 1
    if last < 0:
        return -1
    j = last
    while j >= 0:
        acc += p[j]
        suffix[j] = acc
        j -= 1
    st.key = key
    st.counter = 0
    for j in range(last):
        if remaining == 0:
            break
        if p[j] == 0.0:
            continue
        cond = p[j] / suffix[j]
        cnt = binomial(&st, remaining, cond)
        out[j] = cnt
        remaining -= cnt
    out[last] += remaining
    return 0


def derive_key(key, tag):
    """Child key of ``key`` for integer ``tag`` (reduced modulo 2**64)."""
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t t = <uint64_t>(int(tag) & 0xFFFFFFFFFFFFFFFF)
    return derive(k, t)


def multinomial_row(pi, nu, key):
    """Counts ``W ~ Multinomial(nu, pi)`` for one row drawn from stream ``key``."""
    cdef double[::1] pv = np.ascontiguousarray(pi, dtype=np.float64)
    cdef Py_ssize_t n_k = pv.shape[0]
    out = np.zeros(n_k, dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef double[::1] p = np.empty(n_k, dtype=np.float64)
    cdef double[::1] s = np.empty(n_k, dtype=np.float64)
    cdef int rc
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t n = nu
    if n_k == 0:
        raise ValueError("attention row has no positive weight")
    with nogil:
        rc = row_counts(&pv[0], n_k, n, k, &ov[0], &p[0], &s[0])
    if rc != 0:
        raise ValueError("attention row has no positive weight")
    return out


def multinomial_counts(pi, nu, base_key):
    """Counts for a ``(heads, rows, n_k)`` block.

    Row ``(h, r)`` uses stream ``derive_key(derive_key(base_key, h), r)``.
    """
    arr = np.ascontiguousarray(pi, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("expected a (heads, rows, keys) array")
    cdef double[:, :, ::1] pv = arr
    cdef Py_ssize_t n_h = pv.shape[0], n_r = pv.shape[1], n_k = pv.shape[2]
    out = np.zeros((n_h, n_r, n_k), dtype=np.int64)
    if n_h == 0 or n_r == 0:
        return out
    if n_k == 0:
        raise ValueError("attention row has no positive weight")
    cdef int64_t[:, :, ::1] ov = out
    cdef uint64_t base = <uint64_t>(int(base_key) & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t n = nu
    cdef Py_ssize_t h, r
    cdef uint64_t hkey
    cdef int rc = 0
    cdef double *p = <double *>malloc(2 * n_k * sizeof(double))
    if p == NULL:
        raise MemoryError()
    try:
        with nogil:
            for h in range(n_h):
                hkey = derive(base, <uint64_t>h)
                for r in range(n_r):
                    rc = row_counts(&pv[h, r, 0], n_k, n, derive(hkey, <uint64_t>r),
                                    &ov[h, r, 0], p, p + n_k)
                    if rc != 0:
                        break
                if rc != 0:
                    break
    finally:
        free(p)
    if rc != 0:
        raise ValueError("attention row has no positive weight")
    return out


def multinomial_counts_multi(pi, nu, base_keys):
    """Counts for a ``(blocks, heads, rows, n_k)`` stack.

    Block ``i`` is drawn exactly as ``multinomial_counts(pi[i], nu, base_keys[i])``.
    """
    arr = np.ascontiguousarray(pi, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError("expected a (blocks, heads, rows, keys) array")
    keys = np.array([int(k) & 0xFFFFFFFFFFFFFFFF for k in base_keys], dtype=np.uint64)
    if keys.shape[0] != arr.shape[0]:
        raise ValueError(f"{keys.shape[0]} keys for {arr.shape[0]} blocks")
    cdef double[:, :, :, ::1] pv = arr
    cdef uint64_t[::1] kv = keys
    cdef Py_ssize_t n_b = pv.shape[0], n_h = pv.shape[1], n_r = pv.shape[2], n_k = pv.shape[3]
    out = np.zeros((n_b, n_h, n_r, n_k), dtype=np.int64)
    if n_b == 0 or n_h == 0 or n_r == 0:
        return out
    if n_k == 0:
        raise ValueError("attention row has no positive weight")
    cdef int64_t[:, :, :, ::1] ov = out
    cdef int64_t n = nu
    cdef Py_ssize_t i, h, r
    cdef uint64_t hkey
    cdef int rc = 0
    cdef double *p = <double *>malloc(2 * n_k * sizeof(double))
    if p == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n_b):
                for h in range(n_h):
                    hkey = derive(kv[i], <uint64_t>h)
                    for r in range(n_r):
                        rc = row_counts(&pv[i, h, r, 0], n_k, n, derive(hkey, <uint64_t>r),
                                        &ov[i, h, r, 0], p, p + n_k)
                        if rc != 0:
                            break
                    if rc != 0:
                        break
                if rc != 0:
                    break
    finally:
        free(p)
    if rc != 0:
        raise ValueError("attention row has no positive weight")
    return out
