"""Predictive ensembles from repeated stochastic passes."""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .backbone import forward_deterministic, forward_stochastic_passes


@dataclass(frozen=True, eq=False)
class PredictiveEnsemble:
    samples: np.ndarray
    deterministic_value: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).ravel()
        if s.size < 2:
            raise ValueError("an ensemble needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("ensemble samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "deterministic_value", float(self.deterministic_value))

    @property
    def size(self):
        return self.samples.shape[0]

    @property
    def mean(self):
        return float(self.samples.mean())


def draw_ensemble(model, x, nu, M, master_seed, meta=None):
    """``M`` stochastic passes of ``x``; pass ``m`` uses ``pass_index=m``."""
    if M < 2:
        raise ValueError("M must be >= 2")
    samples = forward_stochastic_passes(model, x, nu, range(M), master_seed)
    info = {"method": "sa", "nu": int(nu), "master_seed": int(master_seed)}
    info.update(meta or {})
    return PredictiveEnsemble(samples, forward_deterministic(model, x), info)


def empirical_cdf(ensemble, point):
    """Mid-distribution CDF: ``(#{x < point} + #{x == point} / 2) / M``."""
    s = ensemble.samples
    below = np.count_nonzero(s < point)
    ties = np.count_nonzero(s == point)
    return (below + 0.5 * ties) / s.shape[0]


def central_interval(ensemble, level):
    """Central ``level`` interval from type-7 (linear) empirical quantiles."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(ensemble.samples, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def write_ensembles(ensembles, csv_path, meta_path, case_ids=None, meta=None):
    """Dump as ``case_id,sample_index,value`` rows plus a JSON sidecar."""
    case_ids = list(range(len(ensembles))) if case_ids is None else list(case_ids)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "sample_index", "value"])
        for cid, ens in zip(case_ids, ensembles):
            for m, v in enumerate(ens.samples):
                w.writerow([cid, m, repr(float(v))])
    sidecar = dict(meta or (ensembles[0].meta if ensembles else {}))
    sidecar["deterministic_values"] = [e.deterministic_value for e in ensembles]
    sidecar["case_ids"] = case_ids
    jsonio.dump(sidecar, meta_path)


def read_ensembles(csv_path, meta_path):
    meta = jsonio.load(meta_path)
    rows = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["case_id"]), []).append((int(rec["sample_index"]), float(rec["value"])))
    det = meta.pop("deterministic_values")
    ids = meta.pop("case_ids")
    out = []
    for cid, d in zip(ids, det):
        vals = [v for _, v in sorted(rows[cid])]
        out.append(PredictiveEnsemble(np.array(vals), d, dict(meta)))
    return out
