"""Synthetic and tabular regression data with seeded splits."""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .backbone import InputCase
from .errors import EmptySplit, InvalidRange, MissingColumn, ParseError
from .rng import Stream


@dataclass(frozen=True)
class Dataset:
    cases: tuple
    name: str
    noise_sigma: float = 0.0
    standardize: bool = False

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise ValueError("dataset is empty")
        dims = {c.features.shape[0] for c in cases}
        if len(dims) != 1:
            raise ValueError(f"mixed feature dimensions {sorted(dims)}")
        object.__setattr__(self, "cases", cases)

    def __len__(self):
        return len(self.cases)

    @property
    def n_features(self):
        return self.cases[0].features.shape[0]

    def features(self):
        return np.array([c.features for c in self.cases])

    def targets(self):
        return np.array([c.target for c in self.cases], dtype=np.float64)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    cal_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.cal_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"each split fraction must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError(f"split fractions sum to {sum(fracs)!r}, not 1")


def make_sinusoid(n, x_range=(-3.0, 3.0), amplitude=1.0, frequency=1.0, noise_sigma=0.1, seed=0):
    """``y = amplitude * sin(frequency * x) + N(0, noise_sigma^2)``, x uniform on the range."""
    lo, hi = (float(v) for v in x_range)
    if not lo < hi:
        raise InvalidRange(f"need lo < hi, got ({lo}, {hi})")
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(Stream.from_seed(seed, 0x51).key)
    x = rng.uniform(lo, hi, size=n)
    y = amplitude * np.sin(frequency * x)
    if noise_sigma > 0:
        y = y + rng.normal(0.0, noise_sigma, size=n)
    cases = tuple(InputCase(np.array([xi]), yi) for xi, yi in zip(x, y))
    return Dataset(cases, "sinusoid", float(noise_sigma), False)


def load_csv(path, target_column, feature_columns=None, standardize=True):
    """Read a headered, comma-separated numeric table.

    No quoting is supported. ``feature_columns=None`` takes every column other
    than the target. Standardization is only recorded here; it is applied by
    :func:`standardize_splits` with training-split statistics.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=",", quoting=csv.QUOTE_NONE)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        columns = [c for c in header if c != target_column] if feature_columns is None else list(feature_columns)
        for col in [target_column, *columns]:
            if col not in header:
                raise MissingColumn(col)
        idx = {name: i for i, name in enumerate(header)}
        cases = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = {}
            for col in [*columns, target_column]:
                cell = row[idx[col]] if idx[col] < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(row_no, col, cell) from None
                if not math.isfinite(value):
                    raise ParseError(row_no, col, cell)
                values[col] = value
            cases.append(InputCase(np.array([values[c] for c in columns]), values[target_column]))
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return Dataset(tuple(cases), name, 0.0, bool(standardize))


def split(dataset, spec):
    """Seeded shuffle, then contiguous train/cal/test blocks.

    Train and cal sizes are floored; test takes the remainder.
    """
    parts = split_indices(len(dataset), spec)
    out = []
    for suffix, idx in zip(("train", "cal", "test"), parts):
        out.append(replace(dataset, cases=tuple(dataset.cases[i] for i in idx),
                           name=f"{dataset.name}:{suffix}"))
    return tuple(out)


def split_indices(n, spec):
    """Index arrays behind :func:`split` for a dataset of size ``n``."""
    n_train = int(math.floor(spec.train_frac * n + 1e-9))
    n_cal = int(math.floor(spec.cal_frac * n + 1e-9))
    n_test = n - n_train - n_cal
    if min(n_train, n_cal, n_test) < 1:
        raise EmptySplit(f"{n} cases give split sizes ({n_train}, {n_cal}, {n_test})")
    order = np.random.default_rng(Stream.from_seed(spec.seed, 0x5917).key).permutation(n)
    return order[:n_train], order[n_train:n_train + n_cal], order[n_train + n_cal:]


def standardize_splits(train, *others):
    """Scale every feature column with the training split's mean and std.

    Columns with zero training variance are only centred.
    """
    x = train.features()
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    def apply(ds):
        cases = tuple(InputCase((c.features - mean) / std, c.target) for c in ds.cases)
        return replace(ds, cases=cases)

    return (apply(train), *(apply(ds) for ds in others)), (mean, std)
