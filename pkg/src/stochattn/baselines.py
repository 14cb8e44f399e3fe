"""Lightweight uncertainty baselines on the same frozen encoder.

All three act only on the pooled features and the linear readout, so the
encoder is shared bit-for-bit with stochastic attention:

* MC dropout: inverted dropout on the pooled features at test time.
* SWAG-diagonal: Gaussian over the readout ``(w, b)`` from a constant
  learning-rate SGD trajectory on the ridge objective.
* Bootstrap readout ensemble: ``L`` ridge refits on resampled training sets.
"""

from dataclasses import dataclass, replace

import numpy as np

from .backbone import feature_matrix, forward_deterministic, pooled_features, solve_ridge
from .ensemble import PredictiveEnsemble
from .errors import TooFewSnapshots
from .rng import Stream

LOCATIONS = ("pooled_features", "readout_inputs")


@dataclass(frozen=True)
class DropoutSpec:
    """Test-time dropout.

    The readout inputs *are* the pooled features in this model, so the two
    locations are equivalent; both names are accepted.
    """

    rate: float = 0.1
    location: str = "pooled_features"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.location not in LOCATIONS:
            raise ValueError(f"unknown dropout location {self.location!r}")


def mc_dropout_ensemble(model, x, spec, M, seed):
    """``M`` passes with independent inverted-dropout masks on the pooled features."""
    phi = pooled_features(model, x)
    det = forward_deterministic(model, x)
    if spec.rate == 0.0:
        samples = np.full(M, det)
    else:
        rng = Stream.from_seed(seed, 0xD0).numpy()
        keep = rng.random((M, phi.shape[0])) >= spec.rate
        samples = (keep * phi / (1.0 - spec.rate)) @ model.readout_weights + model.readout_bias
    return PredictiveEnsemble(samples, det, {"method": "mc_dropout", "rate": float(spec.rate)})


@dataclass(frozen=True, eq=False)
class ReadoutPosterior:
    """Diagonal Gaussian over the readout parameters ``[w..., b]``."""

    mean: np.ndarray
    diag_variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        var = np.asarray(self.diag_variance, dtype=np.float64).ravel()
        if mean.shape != var.shape:
            raise ValueError("mean and variance lengths differ")
        if np.any(var < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "diag_variance", var)


def swag_diag_from_snapshots(snapshots):
    """SWA mean and clamped diagonal variance ``mean(theta^2) - mean(theta)^2``."""
    theta = np.asarray(snapshots, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[0] < 2:
        raise TooFewSnapshots("need at least 2 snapshots")
    mean = theta.mean(axis=0)
    second = (theta ** 2).mean(axis=0)
    return ReadoutPosterior(mean, np.maximum(second - mean ** 2, 0.0))


@dataclass(frozen=True)
class SGDSchedule:
    steps: int = 2000
    lr: float = 0.01
    batch_size: int = 16
    burn_in: int = 500
    snapshot_every: int = 50


def swag_diag_readout(model, train, ridge, schedule=SGDSchedule(), seed=0, return_trajectory=False):
    """Run minibatch SGD on the ridge objective and summarise the snapshots.

    The objective per step is the minibatch mean of ``(y - w.phi - b)^2``
    plus ``ridge / n |w|^2``, i.e. the full ridge objective divided by
    ``n``. SGD starts from the closed-form solution, so the trajectory
    samples the stationary spread around it.
    """
    phi = feature_matrix(model, train)
    y = np.array([c.target for c in train], dtype=np.float64)
    n, d = phi.shape
    w, b = solve_ridge(phi, y, ridge)
    theta = np.concatenate([w, [b]])
    x = np.hstack([phi, np.ones((n, 1))])
    penalty = np.full(d + 1, ridge / n)
    penalty[-1] = 0.0
    rng = Stream.from_seed(seed, 0x5A6).numpy()
    bs = min(schedule.batch_size, n)
    snaps = []
    for step in range(1, schedule.steps + 1):
        idx = rng.choice(n, size=bs, replace=False)
        resid = y[idx] - x[idx] @ theta
        grad = -2.0 * x[idx].T @ resid / bs + 2.0 * penalty * theta
        theta = theta - schedule.lr * grad
        if step > schedule.burn_in and (step - schedule.burn_in) % schedule.snapshot_every == 0:
            snaps.append(theta.copy())
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("SGD diverged; lower the learning rate")
    post = swag_diag_from_snapshots(snaps)
    return (post, np.array(snaps)) if return_trajectory else post


def swag_diag_ensemble(model, posterior, x, M, seed, scale=1.0):
    """Readout draws ``theta ~ N(mean, 0.5 * scale * diag_variance)`` on frozen features.

    Using the same ``seed`` for every input shares the ``M`` sampled
    readouts across inputs, as when sampling ``M`` networks.
    """
    phi = np.append(pooled_features(model, x), 1.0)
    rng = Stream.from_seed(seed, 0x5A7).numpy()
    sd = np.sqrt(0.5 * scale * posterior.diag_variance)
    theta = posterior.mean + rng.standard_normal((M, posterior.mean.shape[0])) * sd
    det = float(phi @ posterior.mean)
    return PredictiveEnsemble(theta @ phi, det, {"method": "swag_diag", "scale": float(scale)})


def bootstrap_indices(n, L, seed):
    """``(L, n)`` resampling indices used by :func:`deep_ensemble_readout`."""
    return Stream.from_seed(seed, 0xB007).numpy().integers(0, n, size=(L, n))


def deep_ensemble_readout(model, train, L, seed, ridge):
    """``L`` copies of ``model`` with readouts refit on bootstrap resamples."""
    if L < 2:
        raise ValueError("L must be >= 2")
    train = tuple(train)
    phi = feature_matrix(model, train)
    y = np.array([c.target for c in train], dtype=np.float64)
    members = []
    for idx in bootstrap_indices(len(train), L, seed):
        w, b = solve_ridge(phi[idx], y[idx], ridge)
        members.append(replace(model, readout_weights=w, readout_bias=b))
    return members


def deep_ensemble_predict(members, x, reference=None):
    """Pool member predictions into one ensemble of size ``L``.

    ``reference`` supplies the deterministic value (defaults to the member
    mean).
    """
    phi = pooled_features(members[0], x)
    samples = np.array([phi @ m.readout_weights + m.readout_bias for m in members])
    det = forward_deterministic(reference, x) if reference is not None else samples.mean()
    return PredictiveEnsemble(samples, det, {"method": "deep_ensemble", "L": len(members)})
