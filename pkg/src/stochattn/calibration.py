"""Monte Carlo estimates of the calibration loss for a concentration ``nu``.

For a held-out pair ``(x, y)`` the loss compares two magnitudes:

* ``delta = |f_nu(x) - f(x)|``, how far one stochastic pass lands from the
  deterministic prediction, and
* ``r = |y - f(x)|``, how far the deterministic prediction is from the truth.

``eval_loss`` averages ``(delta - r)^2`` over ``B`` held-out cases and ``M``
passes per case. For each case the mean over passes splits exactly into
``var(delta) + (mean(delta) - r)^2`` when the variance uses divisor ``M``.

Each of the ``B`` draws is a minibatch of ``batch_size`` cases; ``delta``
and ``r`` are then Euclidean norms over the minibatch outputs. With the
default ``batch_size=1`` they are absolute values of a single case.

The inner expectation is conditioned on ``x`` while each ``delta`` is
paired with the single residual of its own draw, i.e. the estimator
follows the batch loop literally.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import jsonio
from .backbone import forward_deterministic, forward_stochastic, forward_stochastic_passes
from .errors import EmptyBatch, MissingTarget, TooFewSamples
from .rng import derive_seed

_hooks = []


@dataclass(frozen=True)
class CalibrationBatch:
    cases: tuple
    B: int
    M: int
    batch_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        if not self.cases:
            raise EmptyBatch("calibration batch has no cases")
        if any(c.target is None for c in self.cases):
            raise MissingTarget("every calibration case needs a target")
        if self.B < 1 or self.M < 1 or self.batch_size < 1:
            raise ValueError("B, M and batch_size must be >= 1")
        if self.B * self.batch_size > len(self.cases):
            raise ValueError(f"B*batch_size={self.B * self.batch_size} exceeds the "
                             f"{len(self.cases)} calibration cases")


@dataclass(frozen=True)
class CalibrationRecord:
    nu: int
    loss_estimate: float
    scale_estimate: float
    target_scale: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nu"]), float(d["loss_estimate"]), float(d["scale_estimate"]),
                   float(d["target_scale"]))


def add_eval_hook(fn):
    """Register ``fn(record, deltas, residuals)``, called after every :func:`eval_loss`."""
    _hooks.append(fn)
    return fn


def remove_eval_hook(fn):
    _hooks.remove(fn)


def deviation_magnitude(model, x, nu, pass_index, master_seed):
    """``|f_nu(x) - f(x)|`` for one stochastic pass."""
    return abs(forward_stochastic(model, x, nu, pass_index, master_seed) - forward_deterministic(model, x))


def residual_magnitude(model, case):
    """``|y - f(x)|``."""
    if case.target is None:
        raise MissingTarget("case has no target")
    return abs(case.target - forward_deterministic(model, case))


def loss_decomposition(deltas, r):
    """``(var(deltas), (mean(deltas) - r)^2)`` with population variance."""
    d = np.asarray(deltas, dtype=np.float64).ravel()
    if d.size < 2:
        raise TooFewSamples("need at least 2 deviation samples")
    return float(d.var()), float((d.mean() - r) ** 2)


def draw_batch(batch, master_seed):
    """``(B, batch_size)`` case indices drawn without replacement for one evaluation."""
    rng = np.random.default_rng(derive_seed(master_seed, 0xBA7C))
    n = batch.B * batch.batch_size
    return rng.permutation(len(batch.cases))[:n].reshape(batch.B, batch.batch_size)


def deviation_samples(model, case, nu, M, master_seed):
    """``M`` deviation magnitudes for one case, with the deterministic output."""
    det = forward_deterministic(model, case)
    devs = np.abs(forward_stochastic_passes(model, case, nu, range(M), master_seed) - det)
    return devs, det


def eval_loss(model, batch, nu, master_seed, return_samples=False):
    """Estimate the calibration loss at ``nu``.

    Flat case ``i`` of the draw (minibatch ``i // batch_size``) uses passes
    ``0..M-1`` under seed ``derive_seed(master_seed, i)``. Returns a
    :class:`CalibrationRecord`, or ``(record, deltas, residuals)`` with
    ``return_samples=True``; ``deltas`` has shape ``(B, M)``.
    """
    idx = draw_batch(batch, master_seed)
    sq_dev = np.zeros((batch.B, batch.M))
    sq_res = np.zeros(batch.B)
    for b, row in enumerate(idx):
        for j, i in enumerate(row):
            case = batch.cases[i]
            devs, det = deviation_samples(model, case, nu, batch.M,
                                          derive_seed(master_seed, b * batch.batch_size + j))
            sq_dev[b] += devs ** 2
            sq_res[b] += (case.target - det) ** 2
    deltas, resid = np.sqrt(sq_dev), np.sqrt(sq_res)
    per_case = np.mean((deltas - resid[:, None]) ** 2, axis=1)
    record = CalibrationRecord(
        nu=int(nu),
        loss_estimate=float(per_case.mean()),
        scale_estimate=float(deltas.mean()),
        target_scale=float(resid.mean()),
    )
    for fn in list(_hooks):
        fn(record, deltas, resid)
    if return_samples:
        return record, deltas, resid
    return record


def target_scale(model, cases, batch_size=1):
    """Mean residual norm over consecutive ``batch_size`` groups of ``cases``.

    A trailing incomplete group is dropped (there is none when
    ``batch_size=1``).
    """
    r = np.array([residual_magnitude(model, c) for c in cases])
    n = (r.shape[0] // batch_size) * batch_size
    if n == 0:
        raise EmptyBatch(f"fewer than batch_size={batch_size} cases")
    return float(np.mean(np.sqrt(np.sum(r[:n].reshape(-1, batch_size) ** 2, axis=1))))


def loss_curve(model, cases, nus, M, master_seed, batch_size=1):
    """Loss at each ``nu`` on every case with a shared seed (common random numbers)."""
    batch = CalibrationBatch(tuple(cases), len(cases) // batch_size, M, batch_size)
    return [eval_loss(model, batch, nu, master_seed) for nu in nus]


def write_history(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(jsonio.dumps(rec.to_dict()) + "\n")


def read_history(path):
    with open(path, encoding="utf-8") as fh:
        return [CalibrationRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
