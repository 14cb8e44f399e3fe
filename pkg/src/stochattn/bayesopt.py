"""One-dimensional Bayesian optimization of the integer concentration ``nu``.

Each loss evaluation also yields a deviation scale ``s(nu)`` and a residual
scale ``s0``. The surrogate is a conjugate Bayesian regression in log-log
space::

    ln s(nu) = a ln(nu) + ln(b) + eps * z,    z ~ N(0, 1)

with a normal-inverse-gamma prior on ``((a, ln b), eps^2)``. A Thompson draw
of the parameters turns ``E[(s(nu) - s0)^2]`` into a function of ``nu``
whose minimiser has a closed form: writing ``u = b nu^a`` and using the
lognormal moments ``E[zeta] = exp(eps^2/2)``, ``E[zeta^2] = exp(2 eps^2)``,

    E[(u zeta - s0)^2] = u^2 exp(2 eps^2) - 2 s0 u exp(eps^2 / 2) + s0^2

is minimised at ``u* = s0 exp(-3 eps^2 / 2)``, i.e.
``nu* = (u* / b)^(1/a)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .calibration import eval_loss, target_scale
from .errors import DegenerateDesign, NonPositiveScale, ZeroExponent
from .rng import derive_seed


@dataclass(frozen=True)
class SearchDomain:
    nu_min: int
    nu_max: int

    def __post_init__(self):
        if int(self.nu_min) < 1 or int(self.nu_max) < int(self.nu_min):
            raise ValueError(f"invalid domain [{self.nu_min}, {self.nu_max}]")
        object.__setattr__(self, "nu_min", int(self.nu_min))
        object.__setattr__(self, "nu_max", int(self.nu_max))

    @property
    def size(self):
        return self.nu_max - self.nu_min + 1

    def __contains__(self, nu):
        return self.nu_min <= nu <= self.nu_max


@dataclass(frozen=True)
class SurrogatePrior:
    """Normal-inverse-gamma prior; coefficients are ordered ``(a, ln b)``."""

    mean: tuple = (-1.0, 0.0)
    precision: float = 1e-8
    shape: float = 1.0
    scale: float = 1e-3


DEFAULT_PRIOR = SurrogatePrior()


@dataclass(frozen=True, eq=False)
class SurrogatePosterior:
    """Posterior over ``(a, ln b)`` and ``eps^2``.

    ``(a, ln b) | eps^2 ~ N(mean, eps^2 * scale_matrix)`` and
    ``eps^2 ~ InvGamma(shape, scale)``.
    """

    mean: np.ndarray
    scale_matrix: np.ndarray
    shape: float
    scale: float
    n_obs: int

    @property
    def covariance(self):
        """Marginal covariance of ``(a, ln b)`` (multivariate t); needs ``shape > 1``."""
        if self.shape <= 1:
            return np.full((2, 2), np.inf)
        return self.scale_matrix * self.scale / (self.shape - 1.0)

    @property
    def eps2_mean(self):
        return self.scale / (self.shape - 1.0) if self.shape > 1 else math.inf

    def summary(self):
        return {
            "a_mean": float(self.mean[0]),
            "ln_b_mean": float(self.mean[1]),
            "scale_matrix": self.scale_matrix.tolist(),
            "ig_shape": float(self.shape),
            "ig_scale": float(self.scale),
            "n_obs": int(self.n_obs),
        }


def fit_surrogate(history, prior=DEFAULT_PRIOR):
    """Conjugate update of the log-log regression on ``(ln nu, ln s)`` pairs."""
    nus = np.array([r.nu for r in history], dtype=np.float64)
    scales = np.array([r.scale_estimate for r in history], dtype=np.float64)
    if np.any(~(scales > 0)) or not np.all(np.isfinite(scales)):
        raise NonPositiveScale("every record needs a positive, finite scale estimate")
    if len(set(nus.tolist())) < 2:
        raise DegenerateDesign("need at least two distinct nu values")
    x = np.column_stack([np.log(nus), np.ones_like(nus)])
    y = np.log(scales)
    m0 = np.asarray(prior.mean, dtype=np.float64)
    lam0 = prior.precision * np.eye(2)
    lam_n = x.T @ x + lam0
    mean = np.linalg.solve(lam_n, lam0 @ m0 + x.T @ y)
    resid = y - x @ mean
    shift = mean - m0
    shape = prior.shape + 0.5 * len(y)
    scale = prior.scale + 0.5 * (resid @ resid + shift @ lam0 @ shift)
    return SurrogatePosterior(mean, np.linalg.inv(lam_n), shape, scale, len(y))


def thompson_draw(posterior, rng):
    """One posterior draw ``(a, ln_b, eps2)``."""
    eps2 = posterior.scale / rng.gamma(posterior.shape)
    chol = np.linalg.cholesky(eps2 * posterior.scale_matrix)
    a, ln_b = posterior.mean + chol @ rng.standard_normal(2)
    return float(a), float(ln_b), float(eps2)


def surrogate_objective(nu, a, ln_b, eps2, s0):
    """``E[(s(nu) - s0)^2]`` under the sampled surrogate (vectorised in ``nu``)."""
    u = np.exp(ln_b + a * np.log(np.asarray(nu, dtype=np.float64)))
    return u * u * math.exp(2.0 * eps2) - 2.0 * s0 * u * math.exp(0.5 * eps2) + s0 * s0


def continuous_minimizer(a, ln_b, eps2, s0):
    """``ln nu*`` of the sampled surrogate objective over ``nu > 0``."""
    if a == 0:
        raise ZeroExponent("surrogate is flat in nu")
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    return (math.log(s0) - 1.5 * eps2 - ln_b) / a


def _nearest_int(value):
    lo = math.floor(value)
    return int(lo) if value - lo <= 0.5 else int(lo) + 1


def project(log_nu, domain):
    """Nearest integer in the domain; exact halves go to the smaller ``nu``."""
    if log_nu <= math.log(domain.nu_min):
        return domain.nu_min
    if log_nu >= math.log(domain.nu_max):
        return domain.nu_max
    return min(max(_nearest_int(math.exp(log_nu)), domain.nu_min), domain.nu_max)


def acquisition_minimizer(a, ln_b, eps2, s0, domain):
    """Integer ``nu`` minimising the sampled surrogate objective."""
    return project(continuous_minimizer(a, ln_b, eps2, s0), domain)


def space_filling_point(domain, evaluated=()):
    """Geometric midpoint of the widest unexplored gap in ``log nu``."""
    inside = sorted({math.log(v) for v in evaluated if v in domain})
    edges = [math.log(domain.nu_min), *inside, math.log(domain.nu_max)]
    widths = [hi - lo for lo, hi in zip(edges[:-1], edges[1:])]
    k = int(np.argmax(widths))
    mid = 0.5 * (edges[k] + edges[k + 1])
    return project(mid, domain)


def initial_points(domain):
    """The two geometric third-points of the log-domain."""
    lo, hi = math.log(domain.nu_min), math.log(domain.nu_max)
    return [project(lo + (hi - lo) / 3.0, domain), project(lo + 2.0 * (hi - lo) / 3.0, domain)]


def avoid_repeat(nu, target, domain, evaluated):
    """Step away from already-evaluated integers, towards ``target`` first."""
    if nu not in evaluated:
        return nu
    first = 1 if target >= nu else -1
    for step in (first, -first):
        cand = nu + step
        while cand in domain:
            if cand not in evaluated:
                return cand
            cand += step
    return nu


def suggest_next(history, domain, s0, rng, prior=DEFAULT_PRIOR):
    """Next ``nu`` to evaluate given the history so far."""
    if domain.size == 1:
        return domain.nu_min
    evaluated = {r.nu for r in history}
    usable = [r for r in history if r.scale_estimate > 0 and math.isfinite(r.scale_estimate)]
    if len({r.nu for r in usable}) < 2:
        nu = space_filling_point(domain, evaluated)
        return avoid_repeat(nu, nu, domain, evaluated)
    post = fit_surrogate(usable, prior)
    a, ln_b, eps2 = thompson_draw(post, rng)
    try:
        log_nu = continuous_minimizer(a, ln_b, eps2, s0)
    except ZeroExponent:
        free = [v for v in range(domain.nu_min, domain.nu_max + 1) if v not in evaluated]
        return int(rng.choice(free)) if free else int(rng.integers(domain.nu_min, domain.nu_max + 1))
    nu = project(log_nu, domain)
    return avoid_repeat(nu, math.exp(min(log_nu, 700.0)), domain, evaluated)


def select_best(history):
    """``nu`` with the lowest recorded loss; ties go to the smaller ``nu``."""
    return min(history, key=lambda r: (r.loss_estimate, r.nu)).nu


def calibrate_nu(model, batch, domain, K, master_seed, prior=DEFAULT_PRIOR, s0=None,
                 on_iteration=None):
    """Run ``K`` suggest/evaluate rounds and return ``(nu_star, history)``.

    The residual scale ``s0`` is computed once over every calibration case
    unless given. The first two rounds evaluate :func:`initial_points`.
    ``on_iteration(k, record, posterior)`` is called after each round;
    ``posterior`` is the surrogate the suggestion came from, or None.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if s0 is None:
        s0 = target_scale(model, batch.cases, batch.batch_size)
    rng = np.random.default_rng(derive_seed(master_seed, 0xB0))
    init = initial_points(domain)
    history = []
    for k in range(K):
        evaluated = {r.nu for r in history}
        post = None
        if k < len(init):
            nu = avoid_repeat(init[k], init[k], domain, evaluated)
        else:
            usable = [r for r in history if r.scale_estimate > 0]
            if len({r.nu for r in usable}) >= 2:
                post = fit_surrogate(usable, prior)
            nu = suggest_next(history, domain, s0, rng, prior)
        record = eval_loss(model, batch, nu, derive_seed(master_seed, 1000 + k))
        history.append(record)
        if on_iteration is not None:
            on_iteration(k, record, post)
    return select_best(history), history
