"""Softmax attention and its multinomial (stochastic) replacement.

Deterministic attention returns ``o = pi^T V``, the expectation of a value
row under the categorical distribution ``pi``. Stochastic attention swaps
that expectation for the average of ``nu`` draws from ``pi``::

    W ~ Multinomial(nu, pi),   pi_tilde = W / nu,   o_tilde = pi_tilde^T V

``E[pi_tilde] = pi`` and ``Cov[pi_tilde] = (diag(pi) - pi pi^T) / nu``, so
``nu`` is a concentration knob: ``nu -> inf`` recovers ``o``.

Randomness comes from :class:`~stochattn.rng.Stream` keys, never from
global state; a given (weights, nu, stream) always produces the same draw.
"""

import numbers

import numpy as np

from . import kernels
from .errors import AllMasked, DimensionMismatch, NonFinite
from .rng import Stream

SIMPLEX_ATOL = 1e-12


def check_nu(nu):
    if isinstance(nu, bool) or not isinstance(nu, numbers.Integral):
        if isinstance(nu, numbers.Real) and float(nu).is_integer():
            nu = int(nu)
        else:
            raise ValueError(f"nu must be a positive integer, got {nu!r}")
    nu = int(nu)
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    return nu


def check_simplex(weights):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DimensionMismatch("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    return w


def softmax_rows(scores, mask=None):
    """Row-wise softmax over the last axis with optional boolean ``mask``.

    Masked entries (``mask == False``) get weight exactly 0. Used by both the
    single-row API and the encoder.
    """
    s = np.asarray(scores, dtype=np.float64)
    if mask is None:
        shifted = s - s.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
    filled = np.where(mask, s, -np.inf)
    top = filled.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(filled - np.where(np.isfinite(top), top, 0.0)), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_weights(scores, mask=None):
    """Masked softmax of a single score vector.

    Parameters
    ----------
    scores : array_like, shape (n_k,)
        Attention scores; callers apply the ``1/sqrt(d)`` scaling.
    mask : array_like of bool, optional
        ``True`` where a position may be attended. Masked scores are never
        read, so they may hold anything (including ``-inf`` or ``nan``).

    Returns
    -------
    ndarray, shape (n_k,)
        Weights on the simplex; masked positions are exactly 0.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionMismatch("scores must be a vector")
    m = np.ones(s.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != s.shape:
        raise DimensionMismatch(f"mask shape {m.shape} != scores shape {s.shape}")
    if not m.any():
        raise AllMasked("no attendable position")
    if not np.all(np.isfinite(s[m])):
        raise NonFinite("unmasked scores must be finite")
    return softmax_rows(s, m)


def deterministic_output(weights, values):
    """``sum_j weights[j] * values[j]``."""
    w = np.asarray(weights, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if w.ndim != 1 or v.ndim == 0 or v.shape[0] != w.shape[0]:
        raise DimensionMismatch(
            f"{w.shape[0] if w.ndim == 1 else w.shape} weights vs {v.shape[0]} value rows"
        )
    return w @ v


def sample_stochastic_weights(weights, nu, rng):
    """One draw of ``Multinomial(nu, weights) / nu`` from stream ``rng``.

    Entries are multiples of ``1/nu`` summing to 1. Weights below ``1e-15``
    are treated as exact zeros, so masked positions never gain mass.
    """
    w = check_simplex(weights)
    nu = check_nu(nu)
    counts = kernels.multinomial_row(w, nu, _key(rng))
    return counts / nu


def draw_stochastic_weights(weights, nu, rng, size):
    """``size`` independent draws as a ``(size, n_k)`` array.

    Row ``i`` equals ``sample_stochastic_weights(weights, nu, rng.child(0, i))``.
    """
    w = check_simplex(weights)
    nu = check_nu(nu)
    block = np.broadcast_to(w, (1, int(size), w.shape[0]))
    return kernels.multinomial_counts(block, nu, _key(rng))[0] / nu


def sample_weight_block(pi, nu, rng):
    """Stochastic weights for a ``(heads, rows, n_k)`` block of softmax rows.

    Row ``(h, r)`` draws from ``rng.child(h, r)``.
    """
    nu = check_nu(nu)
    return kernels.multinomial_counts(pi, nu, _key(rng)) / nu


def stochastic_output(weights, values, nu, rng):
    """Stochastic attention output for one row: ``sample(weights)^T values``."""
    w = check_simplex(weights)
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] != w.shape[0]:
        raise DimensionMismatch(f"{w.shape[0]} weights vs {v.shape[0]} value rows")
    return deterministic_output(sample_stochastic_weights(w, nu, rng), v)


def stochastic_weight_covariance(weights, nu):
    """Exact covariance ``(diag(pi) - pi pi^T) / nu`` of the stochastic weights."""
    w = check_simplex(weights)
    nu = check_nu(nu)
    return (np.diag(w) - np.outer(w, w)) / nu


def stochastic_output_covariance(weights, values, nu):
    """``V^T Cov(pi_tilde) V``, the covariance of the stochastic output."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    return v.T @ stochastic_weight_covariance(weights, nu) @ v


def _key(rng):
    if isinstance(rng, Stream):
        return rng.key
    if isinstance(rng, numbers.Integral):
        return Stream.from_seed(rng).key
    raise TypeError("rng must be a Stream or an integer seed")
