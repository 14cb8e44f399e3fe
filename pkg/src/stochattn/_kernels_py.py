"""Pure-Python multinomial kernels.

Mirrors ``_kernels.pyx`` operation for operation so that both backends
produce identical counts for the same keys. Any change here must be made
in the Cython source as well (``tests/test_kernels.py`` enforces parity).
"""

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB
_U53 = 1.0 / 9007199254740992.0
ZERO_PROB = 1e-15

# Stirling series corrections log(k!) - [(k+.5)log(k+1) - (k+1) + .5log(2pi)]
_FC = (
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
)


def mix64(z):
    z = ((z ^ (z >> 30)) * _C1) & MASK64
    z = ((z ^ (z >> 27)) * _C2) & MASK64
    return z ^ (z >> 31)


def derive_key(key, tag):
    """Child key of ``key`` for integer ``tag`` (reduced modulo 2**64)."""
    return mix64(((key ^ mix64((tag + GOLDEN) & MASK64)) + GOLDEN) & MASK64)


class _Stream:
    __slots__ = ("key", "counter")

    def __init__(self, key):
        self.key = key
        self.counter = 0

    def uniform(self):
        # open interval (0, 1); never returns 0 so log() is always defined
        self.counter += 1
        z = mix64((self.key + self.counter * GOLDEN) & MASK64)
        return ((z >> 11) + 0.5) * _U53


def _fc(k):
    if k < 10:
        return _FC[k]
    kp1 = k + 1.0
    kp1sq = kp1 * kp1
    return (1.0 / 12.0 - (1.0 / 360.0 - 1.0 / 1260.0 / kp1sq) / kp1sq) / kp1


def _binomial_inversion(st, n, p):
    q = 1.0 - p
    qn = math.exp(n * math.log1p(-p))
    r = p / q
    g = r * (n + 1)
    np_ = n * p
    bound = min(float(n), np_ + 10.0 * math.sqrt(np_ * q + 1.0))
    while True:
        x = 0
        px = qn
        u = st.uniform()
        while u > px:
            x += 1
            if x > bound:
                break
            u -= px
            px *= g / x - r
        else:
            return x


def _binomial_btrd(st, n, p):
    # Hormann (1993), transformed rejection with decomposition; p <= 0.5, n*p >= 10
    q = 1.0 - p
    m = int(math.floor((n + 1) * p))
    r = p / q
    nr = (n + 1) * r
    npq = n * p * q
    sqrt_npq = math.sqrt(npq)
    b = 1.15 + 2.53 * sqrt_npq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    alpha = (2.83 + 5.1 / b) * sqrt_npq
    v_r = 0.92 - 4.2 / b
    u_rv_r = 0.86 * v_r
    while True:
        v = st.uniform()
        if v <= u_rv_r:
            u = v / v_r - 0.43
            return int(math.floor((2.0 * a / (0.5 - abs(u)) + b) * u + c))
        if v >= v_r:
            u = st.uniform() - 0.5
        else:
            u = v / v_r - 0.93
            u = math.copysign(0.5, u) - u
            v = st.uniform() * v_r
        us = 0.5 - abs(u)
        kf = math.floor((2.0 * a / us + b) * u + c)
        if kf < 0.0 or kf > n:
            continue
        k = int(kf)
        v = v * alpha / (a / (us * us) + b)
        km = abs(k - m)
        if km <= 15:
            f = 1.0
            if m < k:
                i = m
                while i < k:
                    i += 1
                    f *= nr / i - r
            elif m > k:
                i = k
                while i < m:
                    i += 1
                    v *= nr / i - r
            if v <= f:
                return k
            continue
        v = math.log(v)
        rho = (km / npq) * (((km / 3.0 + 0.625) * km + 1.0 / 6.0) / npq + 0.5)
        t = -km * km / (2.0 * npq)
        if v < t - rho:
            return k
        if v > t + rho:
            continue
        nm = n - m + 1
        h = (m + 0.5) * math.log((m + 1) / (r * nm)) + _fc(m) + _fc(n - m)
        nk = n - k + 1
        if v <= (h + (n + 1) * math.log(nm / nk)
                 + (k + 0.5) * math.log(nk * r / (k + 1)) - _fc(k) - _fc(n - k)):
            return k


def _binomial(st, n, p):
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if p > 0.5:
        return n - _binomial_half(st, n, 1.0 - p)
    return _binomial_half(st, n, p)


def _binomial_half(st, n, p):
    if n * p < 10.0:
        return _binomial_inversion(st, n, p)
    return _binomial_btrd(st, n, p)


def _row_counts(pi, nu, key, out):
    n_k = len(pi)
    p = [v if v >= ZERO_PROB else 0.0 for v in pi]
    last = -1
    for j in range(n_k - 1, -1, -1):
        if p[j] > 0.0:
            last = j
            break
    if last < 0:
        raise ValueError("attention row has no positive weight")
    suffix = [0.0] * n_k
    acc = 0.0
    for j in range(last, -1, -1):
        acc += p[j]
        suffix[j] = acc
    st = _Stream(key)
    remaining = nu
    for j in range(last):
        if remaining == 0:
            break
        if p[j] == 0.0:
            continue
        cond = p[j] / suffix[j]
        c = _binomial(st, remaining, cond)
        out[j] = c
        remaining -= c
    out[last] += remaining


def multinomial_row(pi, nu, key):
    """Counts ``W ~ Multinomial(nu, pi)`` for one row drawn from stream ``key``."""
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    out = [0] * pi.shape[0]
    _row_counts(pi.tolist(), int(nu), int(key) & MASK64, out)
    return np.array(out, dtype=np.int64)


def multinomial_counts(pi, nu, base_key):
    """Counts for a ``(heads, rows, n_k)`` block.

    Row ``(h, r)`` uses stream ``derive_key(derive_key(base_key, h), r)``.
    """
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    if pi.ndim != 3:
        raise ValueError("expected a (heads, rows, keys) array")
    n_h, n_r, n_k = pi.shape
    nu = int(nu)
    base_key = int(base_key) & MASK64
    out = np.zeros(pi.shape, dtype=np.int64)
    rows = pi.tolist()
    for h in range(n_h):
        hkey = derive_key(base_key, h)
        for r in range(n_r):
            buf = [0] * n_k
            _row_counts(rows[h][r], nu, derive_key(hkey, r), buf)
            out[h, r] = buf
    return out


def multinomial_counts_multi(pi, nu, base_keys):
    """Counts for a ``(blocks, heads, rows, n_k)`` stack.

    Block ``i`` is drawn exactly as ``multinomial_counts(pi[i], nu, base_keys[i])``.
    """
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    if pi.ndim != 4:
        raise ValueError("expected a (blocks, heads, rows, keys) array")
    base_keys = list(base_keys)
    if len(base_keys) != pi.shape[0]:
        raise ValueError(f"{len(base_keys)} keys for {pi.shape[0]} blocks")
    out = np.zeros(pi.shape, dtype=np.int64)
    for i, key in enumerate(base_keys):
        out[i] = multinomial_counts(pi[i], nu, key)
    return out
