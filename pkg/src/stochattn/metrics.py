"""Probabilistic-forecast verification for scalar ensembles.

Every method's output flows through :class:`PredictiveEnsemble`, so there is
one metric code path for stochastic attention and all baselines.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ensemble import PredictiveEnsemble, central_interval, empirical_cdf
from .errors import EmptyCalibration, EmptyInput, LengthMismatch, TooFewSamples

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _check_lengths(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} ensembles vs {len(b)} targets")


def pit(ensembles, targets):
    """PIT value of each target under its ensemble's empirical CDF."""
    _check_lengths(ensembles, targets)
    return np.array([empirical_cdf(e, float(y)) for e, y in zip(ensembles, targets)])


def w1_to_uniform(pit_values):
    """Exact Wasserstein-1 distance between the empirical PIT law and U[0, 1].

    Integrates ``|F(t) - t|`` over the steps of the empirical CDF ``F``; on a
    step ``[lo, hi)`` with height ``c`` the integral is ``g(hi - c) - g(lo - c)``
    with ``g(x) = x|x|/2``.
    """
    u = np.sort(np.asarray(pit_values, dtype=np.float64).ravel())
    if u.size == 0:
        raise EmptyInput("no PIT values")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("PIT values must lie in [0, 1]")
    n = u.size
    edges = np.concatenate([[0.0], u, [1.0]])
    heights = np.arange(n + 1) / n
    lo, hi = edges[:-1], edges[1:]
    g = lambda x: 0.5 * x * np.abs(x)  # noqa: E731
    return float(np.sum(g(hi - heights) - g(lo - heights)))


def pit_histogram(pit_values, bins=20):
    """``(left_edges, right_edges, counts)`` on equal-width bins of [0, 1]."""
    counts, edges = np.histogram(np.asarray(pit_values), bins=bins, range=(0.0, 1.0))
    return edges[:-1], edges[1:], counts


def coverage_and_sharpness(ensembles, targets, level):
    """Fraction of targets inside the closed central interval, and its mean width."""
    _check_lengths(ensembles, targets)
    if not ensembles:
        raise EmptyInput("no ensembles")
    bounds = np.array([central_interval(e, level) for e in ensembles])
    y = np.asarray(targets, dtype=np.float64)
    inside = (y >= bounds[:, 0]) & (y <= bounds[:, 1])
    return float(inside.mean()), float(np.mean(bounds[:, 1] - bounds[:, 0]))


def _abs_pair_sum(x):
    # sum_{i,k} |x_i - x_k| via order statistics
    s = np.sort(x)
    m = s.shape[0]
    return 2.0 * float(np.dot(2.0 * np.arange(1, m + 1) - m - 1.0, s))


def crps_decomposed(ensemble, target):
    """Ensemble CRPS split as ``error_term - spread_term``.

    ``error_term = mean |x_m - y|`` and ``spread_term`` is half the mean
    absolute difference over all ``M^2`` ordered pairs (self-pairs included).

    Returns
    -------
    (crps, error_term, spread_term)
    """
    x = _samples(ensemble)
    if x.shape[0] < 2:
        raise TooFewSamples("CRPS needs at least 2 samples")
    m = x.shape[0]
    error = float(np.mean(np.abs(x - float(target))))
    spread = _abs_pair_sum(x) / (2.0 * m * m)
    return error - spread, error, spread


def energy_score(ensemble, target):
    """``E||X - y|| - E||X - X'|| / 2`` with the all-pairs estimator.

    Samples may be scalars ``(M,)`` or vectors ``(M, d)``; for scalars this
    coincides with the CRPS.
    """
    x = _samples(ensemble)
    if x.shape[0] < 2:
        raise TooFewSamples("energy score needs at least 2 samples")
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(target, dtype=np.float64).reshape(1, -1)
    first = np.linalg.norm(x - y, axis=1).mean()
    diffs = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    return float(first - 0.5 * diffs.mean())


def _samples(ensemble):
    if isinstance(ensemble, PredictiveEnsemble):
        return ensemble.samples
    return np.asarray(ensemble, dtype=np.float64)


def point_accuracy(predictions, targets):
    """``(rmse, mae)``."""
    _check_lengths(predictions, targets)
    if len(predictions) == 0:
        raise EmptyInput("no predictions")
    err = np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err)))


def apply_temperature(ensembles, tau):
    """Rescale each ensemble about its own mean by ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if tau == 1.0:
        return list(ensembles)
    out = []
    for e in ensembles:
        mu = e.samples.mean()
        meta = dict(e.meta, temperature=float(tau))
        out.append(PredictiveEnsemble(mu + tau * (e.samples - mu), e.deterministic_value, meta))
    return out


def _golden(f, lo, hi, tol):
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def temperature_scale(cal_ensembles, cal_targets, eval_ensembles=None, mode="w1",
                      level=0.95, target_coverage=None, bounds=(1e-2, 1e3)):
    """Fit one temperature ``tau`` on a calibration split and apply it.

    ``mode="w1"`` minimises PIT W1 on the calibration split: a coarse
    log-spaced scan picks the best bracket, then golden-section search
    refines it in ``log10(tau)`` (W1 is piecewise constant in ``tau``, so a
    bare golden search can stall on a plateau far from the optimum).

    ``mode="coverage"`` bisects ``tau`` until the calibration coverage at
    ``level`` reaches ``target_coverage``.

    Returns ``(tau, scaled)`` where ``scaled`` is ``eval_ensembles`` (or the
    calibration ensembles when none are given) rescaled by ``tau``.
    """
    _check_lengths(cal_ensembles, cal_targets)
    if not cal_ensembles:
        raise EmptyCalibration("temperature scaling needs a calibration split")
    y = np.asarray(cal_targets, dtype=np.float64)
    centred = [(e.samples.mean(), e.samples - e.samples.mean()) for e in cal_ensembles]
    lo, hi = math.log10(bounds[0]), math.log10(bounds[1])

    def scaled(log_tau):
        tau = 10.0 ** log_tau
        return [PredictiveEnsemble(mu + tau * dev, mu) for mu, dev in centred]

    if mode == "w1":
        def loss(log_tau):
            return w1_to_uniform(pit(scaled(log_tau), y))

        grid = np.linspace(lo, hi, 51)
        values = [loss(g) for g in grid]
        best = int(np.argmin(values))
        step = grid[1] - grid[0]
        a, b = max(lo, grid[best] - step), min(hi, grid[best] + step)
        log_tau = _golden(loss, a, b, 1e-4)
        if loss(log_tau) > values[best]:
            log_tau = grid[best]
    elif mode == "coverage":
        if target_coverage is None:
            raise ValueError("coverage mode needs target_coverage")

        def cov(log_tau):
            return coverage_and_sharpness(scaled(log_tau), y, level)[0]

        a, b = lo, hi
        for _ in range(60):
            mid = (a + b) / 2.0
            if cov(mid) < target_coverage:
                a = mid
            else:
                b = mid
        log_tau = b
    else:
        raise ValueError(f"unknown temperature mode {mode!r}")
    tau = 10.0 ** log_tau
    target = cal_ensembles if eval_ensembles is None else eval_ensembles
    return tau, apply_temperature(target, tau)


@dataclass
class MetricReport:
    method: str
    dataset: str
    seed: int
    rmse: float
    mae: float
    pit_w1: float
    crps: float
    crps_error_term: float
    crps_spread_term: float
    energy_score: float
    coverage: dict = field(default_factory=dict)
    sharpness: dict = field(default_factory=dict)
    variant: str = "native"
    temperature: float = 1.0
    n_cases: int = 0
    ensemble_size: int = 0

    def to_dict(self):
        return asdict(self)

    def check(self, atol=1e-10):
        if abs(self.crps - (self.crps_error_term - self.crps_spread_term)) > atol:
            raise AssertionError(f"{self.method}: CRPS decomposition identity violated")
        if any(not 0.0 <= c <= 1.0 for c in self.coverage.values()):
            raise AssertionError(f"{self.method}: coverage outside [0, 1]")
        return self


def evaluate_ensembles(ensembles, targets, levels, method, dataset, seed,
                       variant="native", temperature=1.0):
    """All summaries for one method on one split.

    Point accuracy uses each ensemble's sample mean. CRPS and energy score
    are averaged over cases.
    """
    _check_lengths(ensembles, targets)
    y = np.asarray(targets, dtype=np.float64)
    rmse, mae = point_accuracy([e.mean for e in ensembles], y)
    parts = np.array([crps_decomposed(e, t) for e, t in zip(ensembles, y)])
    error = float(parts[:, 1].mean())
    spread = float(parts[:, 2].mean())
    cov, sharp = {}, {}
    for level in levels:
        c, w = coverage_and_sharpness(ensembles, y, level)
        cov[_level_key(level)] = c
        sharp[_level_key(level)] = w
    report = MetricReport(
        method=method, dataset=dataset, seed=int(seed), rmse=rmse, mae=mae,
        pit_w1=w1_to_uniform(pit(ensembles, y)),
        crps=error - spread, crps_error_term=error, crps_spread_term=spread,
        energy_score=float(np.mean([energy_score(e, t) for e, t in zip(ensembles, y)])),
        coverage=cov, sharpness=sharp, variant=variant, temperature=float(temperature),
        n_cases=len(ensembles), ensemble_size=int(ensembles[0].size) if ensembles else 0,
    )
    return report.check()


def _level_key(level):
    return format(float(level), "g")
