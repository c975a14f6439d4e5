"""Dataset ingestion, normalisation, the synthetic step-function generator,
and evaluation metrics.

The normalisation recipe maps every input column affinely onto [0, 3]
(fitted on the training split) and standardises targets by the training
mean and population standard deviation; both transforms are inverted for
evaluation, and predictive densities carry the Jacobian of the inverse
target map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .deep import PredictiveDist
from .errors import DomainError, ParseError

INPUT_RANGE = 3.0


@dataclass(frozen=True)
class Dataset:
    """Inputs (N x D), optional targets (N,), optional fitted transforms."""

    inputs: np.ndarray
    targets: np.ndarray = None
    column_names: tuple = None
    transforms: "Transforms" = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "inputs", x)
        if self.targets is not None:
            y = np.asarray(self.targets, dtype=float).ravel()
            if y.size != x.shape[0]:
                raise DomainError("targets length must match inputs")
            object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class Transforms:
    """Per-column affine input map to [0, 3] plus target standardisation."""

    input_shift: np.ndarray   # column minima
    input_scale: np.ndarray   # 3 / (max - min); 0 flags a constant column
    target_shift: float
    target_scale: float       # population std of the training targets

    def apply_inputs(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        out = (x - self.input_shift[None, :]) * self.input_scale[None, :]
        const = self.input_scale == 0
        if np.any(const):
            out[:, const] = INPUT_RANGE / 2.0
        return out

    def invert_inputs(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        const = self.input_scale == 0
        safe = np.where(const, 1.0, self.input_scale)
        out[:] = x / safe[None, :] + self.input_shift[None, :]
        if np.any(const):
            out[:, const] = self.input_shift[const]
        return out

    def apply_targets(self, y):
        return (np.asarray(y, dtype=float) - self.target_shift) / self.target_scale

    def invert_targets(self, y):
        return np.asarray(y, dtype=float) * self.target_scale + self.target_shift

    def apply(self, ds: Dataset) -> Dataset:
        y = None if ds.targets is None else self.apply_targets(ds.targets)
        return replace(ds, inputs=self.apply_inputs(ds.inputs), targets=y,
                       transforms=self)


def fit_transforms(train: Dataset) -> Transforms:
    """Fit the input range map and target standardisation on a training set."""
    if train.n < 1:
        raise DomainError("training set must be nonempty")
    x = train.inputs
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0, INPUT_RANGE / np.where(span > 0, span, 1.0), 0.0)
    if train.targets is None:
        raise DomainError("fit_transforms requires targets")
    mean = float(np.mean(train.targets))
    std = float(np.std(train.targets))  # population (1/N) convention
    if std == 0:
        std = 1.0
    return Transforms(lo, scale, mean, std)


def load_matrix(path: str):
    """Numeric CSV with a header row -> (column names, float matrix)."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        rows = []
        for rnum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}:{rnum}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                bad = next(i for i, cell in enumerate(row)
                           if not _is_float(cell))
                raise ParseError(
                    f"{path}:{rnum}: non-numeric value {row[bad]!r} in column {bad + 1}")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return tuple(header), np.asarray(rows, dtype=float)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path: str) -> Dataset:
    """Parse a UTF-8 CSV with header; last column is the target."""
    names, mat = load_matrix(path)
    if mat.shape[1] < 2:
        raise ParseError(f"{path}: need at least one feature column plus a target")
    return Dataset(mat[:, :-1], mat[:, -1], column_names=names)


def save_predictions(path: str, inputs, names, mean, std, nmll_point=None):
    """Prediction CSV: input columns, mean, std and per-point nmll."""
    inputs = np.asarray(inputs, dtype=float)
    cols = [inputs[:, j] for j in range(inputs.shape[1])] + [mean, std]
    header = list(names) + ["mean", "std"]
    if nmll_point is not None:
        cols.append(nmll_point)
        header.append("nmll_point")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def multistep_synthetic(n_points: int = 300, n_steps: int = 5,
                        noise_std: float = 0.05, seed: int = 0) -> Dataset:
    """Noisy staircase: inputs uniform on [0, 1], level index floor(n_steps*t)
    rescaled to [0, 1], Gaussian noise added; deterministic per seed."""
    if n_steps < 2:
        raise DomainError("n_steps must be >= 2")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, size=n_points)
    f = np.clip(np.floor(n_steps * t) / (n_steps - 1), 0.0, 1.0)
    y = f + noise_std * rng.standard_normal(n_points)
    return Dataset(t[:, None], y, column_names=("t", "y"))


def multistep_truth(t, n_steps: int = 5):
    return np.clip(np.floor(n_steps * np.asarray(t, dtype=float)) / (n_steps - 1),
                   0.0, 1.0)


def metrics(pred: PredictiveDist, y_true):
    """(RMSE, NMLL) of a predictive mixture in original target units."""
    y = np.asarray(y_true, dtype=float).ravel()
    if y.size != pred.means.shape[1]:
        raise DomainError("prediction/target length mismatch")
    rmse = float(np.sqrt(np.mean((pred.mixture_mean() - y) ** 2)))
    nmll = float(-np.mean(pred.log_density(y)))
    return rmse, nmll
