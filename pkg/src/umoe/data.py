"""Dataset loading, uncertainty injection, chained-equations imputation,
and construction of density-valued training sets.

Uncertainty enters as cell-wise masking: a masked cell's value is
replaced by a kernel mixture over imputation draws, while labels always
stay observed. The imputer is a simplified chained-equations scheme:
column-order sweeps of ordinary least squares on the currently completed
table, redrawing each missing cell as prediction plus Gaussian residual
noise, repeated for several independent draws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density import DensityModel
from .errors import DataError, InputError
from .seeding import derive_seed
from .validation import check_count, check_positive, decimal_floor

TASKS = ("regression", "classification")

# Residual variances below this are treated as an exact fit, so redraws
# reproduce the regression prediction without noise.
_ZERO_RESIDUAL_VAR = 1e-20


@dataclass
class Dataset:
    """A fully observed tabular dataset."""

    feature_matrix: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    task: str
    class_count: int | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.feature_matrix = np.ascontiguousarray(np.atleast_2d(np.asarray(self.feature_matrix, dtype=float)))
        if self.task not in TASKS:
            raise InputError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.feature_matrix.size == 0:
            raise InputError("dataset needs at least one instance and one feature")
        if not np.all(np.isfinite(self.feature_matrix)):
            raise InputError("feature matrix contains missing or non-finite values")
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != self.feature_matrix.shape[1]:
            raise InputError("feature_names length does not match the feature count")
        if self.task == "classification":
            self.labels = np.asarray(self.labels, dtype=int)
            if self.class_count is None:
                self.class_count = int(self.labels.max()) + 1 if self.labels.size else 0
            if self.labels.min() < 0 or self.labels.max() >= self.class_count:
                raise InputError("classification labels must lie in [0, class_count)")
        else:
            self.labels = np.asarray(self.labels, dtype=float)
        if self.labels.shape != (self.feature_matrix.shape[0],):
            raise InputError("labels length does not match the instance count")

    @property
    def n_instances(self) -> int:
        return self.feature_matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.feature_matrix.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            self.feature_matrix[idx],
            self.labels[idx],
            self.feature_names,
            self.task,
            self.class_count,
            self.class_names,
        )


@dataclass
class Scaler:
    """Per-feature standardization statistics fit on observed cells only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, missing_mask: np.ndarray | None = None) -> "Scaler":
        x = np.asarray(features, dtype=float)
        if missing_mask is None:
            observed = np.ones_like(x, dtype=bool)
        else:
            observed = ~np.asarray(missing_mask, dtype=bool)
        mean = np.empty(x.shape[1])
        std = np.empty(x.shape[1])
        for j in range(x.shape[1]):
            col = x[observed[:, j], j]
            if col.size == 0:
                raise DataError(f"feature column {j} has no observed values")
            mean[j] = col.mean()
            std[j] = col.std()
        std[std == 0.0] = 1.0  # constant columns keep their raw offset
        return cls(mean=mean, std=std)

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean


@dataclass
class MaskedDataset:
    """A dataset with per-cell missing flags; masked cells hold NaN."""

    features: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    task: str
    class_count: int | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=float))
        self.mask = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        if self.features.shape != self.mask.shape:
            raise InputError("features and mask shapes differ")
        if np.any(np.isnan(self.features) != self.mask):
            raise InputError("NaN cells must coincide with the mask")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    @property
    def u_actual(self) -> float:
        return self.n_masked / float(self.mask.size)


@dataclass
class UncertainInstance:
    """One instance: standardized certain values, an optional density over the rest, a label."""

    uid: int
    certain_dims: tuple[int, ...]
    certain_values: np.ndarray
    density: Optional[DensityModel]
    label: float | int
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.certain_dims = tuple(int(d) for d in self.certain_dims)
        self.certain_values = np.asarray(self.certain_values, dtype=float)
        has_uncertain = self.density is not None
        if has_uncertain and len(self.density.uncertain_dims) == 0:
            raise InputError("density over zero dimensions")

    @property
    def uncertain_dims(self) -> tuple[int, ...]:
        return self.density.uncertain_dims if self.density is not None else ()


@dataclass
class UncertainDataset:
    """Instances sharing one schema, scaler and task."""

    instances: list[UncertainInstance]
    scaler: Scaler
    task: str
    n_features: int
    feature_names: tuple[str, ...]
    class_count: int | None = None
    class_names: tuple[str, ...] | None = None
    u_actual: float = 0.0

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def labels(self) -> np.ndarray:
        dtype = int if self.task == "classification" else float
        return np.array([inst.label for inst in self.instances], dtype=dtype)

    def subset(self, indices) -> "UncertainDataset":
        """A view over a subset of instances; instance objects (and their caches) are shared."""
        picked = [self.instances[int(i)] for i in indices]
        return UncertainDataset(
            picked, self.scaler, self.task, self.n_features,
            self.feature_names, self.class_count, self.class_names, self.u_actual,
        )


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise DataError(f"non-numeric value {cell!r} at line {line}, column {column!r}") from exc


def load_csv(path: str, task: str, label_column: str, allow_missing: bool = False):
    """Parse a UTF-8 CSV with a header row.

    Classification labels are mapped to contiguous indices in order of
    first appearance. With ``allow_missing`` the result is a
    :class:`MaskedDataset` where empty or ``NA`` feature cells are
    flagged missing; otherwise such cells are an error. Label cells may
    never be missing.
    """
    if task not in TASKS:
        raise InputError(f"task must be one of {TASKS}, got {task!r}")
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not found in {path}")
        label_idx = header.index(label_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)

        rows: list[list[float]] = []
        mask_rows: list[list[bool]] = []
        raw_labels: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line_no} has {len(row)} cells, header has {len(header)}")
            values: list[float] = []
            missing: list[bool] = []
            for i, cell in enumerate(row):
                name = header[i]
                cell = cell.strip()
                if i == label_idx:
                    if cell == "" or cell == "NA":
                        raise DataError(f"missing label at line {line_no}, column {name!r}")
                    raw_labels.append(cell)
                    continue
                if cell == "" or cell == "NA":
                    if not allow_missing:
                        raise DataError(f"missing value at line {line_no}, column {name!r}")
                    values.append(math.nan)
                    missing.append(True)
                else:
                    values.append(_parse_float(cell, line_no, name))
                    missing.append(False)
            rows.append(values)
            mask_rows.append(missing)
        if not rows:
            raise DataError(f"{path} has no data rows")

    features = np.array(rows, dtype=float)
    mask = np.array(mask_rows, dtype=bool)
    if task == "classification":
        seen: dict[str, int] = {}
        for lab in raw_labels:
            if lab not in seen:
                seen[lab] = len(seen)
        labels = np.array([seen[lab] for lab in raw_labels], dtype=int)
        class_names = tuple(seen)
        class_count = len(seen)
    else:
        labels = np.array(
            [_parse_float(lab, 0, label_column) for lab in raw_labels], dtype=float
        )
        class_names = None
        class_count = None

    if allow_missing:
        return MaskedDataset(features, mask, labels, feature_names, task, class_count, class_names)
    return Dataset(features, labels, feature_names, task, class_count, class_names)


def inject_uncertainty(dataset: Dataset, mask_fraction: float, seed: int) -> MaskedDataset:
    """Flag exactly floor(mask_fraction * I * k) feature cells missing, uniformly without replacement.

    Labels are never masked. Deterministic given the seed.
    """
    if not (0.0 <= mask_fraction < 1.0):
        raise InputError(f"mask fraction must lie in [0, 1), got {mask_fraction}")
    total = dataset.n_instances * dataset.n_features
    n_masked = decimal_floor(mask_fraction, total)
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=n_masked, replace=False)
    mask = np.zeros(total, dtype=bool)
    mask[flat] = True
    mask = mask.reshape(dataset.n_instances, dataset.n_features)
    features = dataset.feature_matrix.copy()
    features[mask] = math.nan
    return MaskedDataset(
        features, mask, dataset.labels, dataset.feature_names,
        dataset.task, dataset.class_count, dataset.class_names,
    )


def _fit_column_regression(x: np.ndarray, target_col: int, observed: np.ndarray):
    others = [j for j in range(x.shape[1]) if j != target_col]
    design = np.column_stack([np.ones(int(observed.sum())), x[observed][:, others]])
    response = x[observed, target_col]
    coef, *_ = np.linalg.lstsq(design, response, rcond=None)
    residuals = response - design @ coef
    dof = design.shape[0] - design.shape[1]
    var = float(residuals @ residuals) / dof if dof > 0 else 0.0
    sd = math.sqrt(var) if var > _ZERO_RESIDUAL_VAR else 0.0
    return others, coef, sd


def impute_chained(
    masked: MaskedDataset, n_draws: int = 20, n_sweeps: int = 5, seed: int = 0
) -> list[np.ndarray | None]:
    """Simplified chained-equations imputation.

    Missing cells start at the observed column mean; for ``n_sweeps``
    sweeps the features are cycled in column order, each refit by OLS on
    all other (currently completed) features, and every missing cell is
    redrawn as prediction plus Gaussian noise with the regression's
    residual standard deviation. The whole procedure runs ``n_draws``
    times with distinct sub-seeds.

    Returns, per instance, a ``(n_draws, n_missing)`` array over its
    missing columns (ascending column order), or ``None`` when the
    instance has no missing cells.
    """
    check_count(n_draws, "n_draws", 2)
    check_count(n_sweeps, "n_sweeps", 1)
    features, mask = masked.features, masked.mask
    n, k = features.shape
    observed_counts = (~mask).sum(axis=0)
    for j, count in enumerate(observed_counts):
        if count == 0:
            raise DataError(f"feature column {j} ({masked.feature_names[j]!r}) is entirely missing")
        if count < 2:
            raise DataError(f"feature column {j} ({masked.feature_names[j]!r}) has fewer than 2 observed values")

    column_means = np.array([features[~mask[:, j], j].mean() for j in range(k)])
    column_stds = np.array([features[~mask[:, j], j].std() for j in range(k)])

    completed_draws = []
    for d in range(n_draws):
        rng = np.random.default_rng(derive_seed(seed, "draw", d))
        x = features.copy()
        for j in range(k):
            x[mask[:, j], j] = column_means[j]
        for _ in range(n_sweeps):
            for j in range(k):
                miss = mask[:, j]
                if not miss.any():
                    continue
                if k == 1:
                    # nothing to regress on: draw from the observed column statistics
                    x[miss, j] = column_means[j] + column_stds[j] * rng.standard_normal(int(miss.sum()))
                    continue
                others, coef, sd = _fit_column_regression(x, j, ~miss)
                design_miss = np.column_stack([np.ones(int(miss.sum())), x[miss][:, others]])
                prediction = design_miss @ coef
                x[miss, j] = prediction + sd * rng.standard_normal(int(miss.sum()))
        completed_draws.append(x)

    per_instance: list[np.ndarray | None] = []
    for i in range(n):
        cols = np.flatnonzero(mask[i])
        if cols.size == 0:
            per_instance.append(None)
        else:
            per_instance.append(np.stack([draw[i, cols] for draw in completed_draws]))
    return per_instance


def build_uncertain_dataset(
    masked: MaskedDataset,
    draws: list[np.ndarray | None],
    bandwidth: float = 0.1,
) -> UncertainDataset:
    """Standardize on the observed cells and turn imputation draws into kernel mixtures.

    Each instance with missing cells gets a :class:`DensityModel` whose
    centers are its standardized draws over its own missing columns; the
    bandwidth applies in standardized space.
    """
    check_positive(bandwidth, "bandwidth")
    if len(draws) != masked.n_instances:
        raise InputError("draws list length does not match the instance count")
    scaler = Scaler.fit(masked.features, masked.mask)
    instances = []
    for i in range(masked.n_instances):
        missing_cols = tuple(int(c) for c in np.flatnonzero(masked.mask[i]))
        certain_cols = tuple(int(c) for c in np.flatnonzero(~masked.mask[i]))
        raw = masked.features[i]
        certain_std = (raw[list(certain_cols)] - scaler.mean[list(certain_cols)]) / scaler.std[list(certain_cols)]
        if missing_cols:
            draw = draws[i]
            if draw is None:
                raise InputError(f"instance {i} is masked but has no imputation draws")
            cols = list(missing_cols)
            centers = (np.asarray(draw, dtype=float) - scaler.mean[cols]) / scaler.std[cols]
            model = DensityModel(centers, bandwidth, missing_cols)
        else:
            model = None
        instances.append(
            UncertainInstance(
                uid=i,
                certain_dims=certain_cols,
                certain_values=certain_std,
                density=model,
                label=masked.labels[i],
            )
        )
    return UncertainDataset(
        instances=instances,
        scaler=scaler,
        task=masked.task,
        n_features=masked.n_features,
        feature_names=masked.feature_names,
        class_count=masked.class_count,
        class_names=masked.class_names,
        u_actual=masked.u_actual,
    )


def dataset_from_arrays(features, labels, task: str, feature_names=None, class_count=None) -> Dataset:
    """Convenience constructor for fully certain in-memory data."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(features.shape[1]))
    return Dataset(features, labels, tuple(feature_names), task, class_count)


def prepare_uncertain_dataset(
    dataset: Dataset,
    mask_fraction: float,
    seed: int,
    n_draws: int = 20,
    n_sweeps: int = 5,
    bandwidth: float = 0.1,
) -> UncertainDataset:
    """mask -> impute -> build, in one step (library convenience)."""
    masked = inject_uncertainty(dataset, mask_fraction, seed)
    if masked.n_masked == 0:
        draws: list[np.ndarray | None] = [None] * masked.n_instances
    else:
        draws = impute_chained(masked, n_draws, n_sweeps, derive_seed(seed, "impute"))
    return build_uncertain_dataset(masked, draws, bandwidth)


def synthesize_dataset(
    kind: str, n_instances: int, n_features: int, seed: int, noise_std: float = 0.05
) -> Dataset:
    """Deterministic desk-scale synthetic data.

    Regression: correlated Gaussian features (equicorrelation 0.6 via a
    shared factor, scaled to std 1.5) with target
    ``sum_j sin(x_j) + 0.1 * x_0 * x_1`` plus Gaussian noise. The
    correlation matters: it is what makes chained-equations imputation
    informative, mirroring real tabular data.
    Classification: two interleaved half-moon classes in the first two
    dimensions plus standard-normal noise dimensions.
    """
    if kind not in TASKS:
        raise InputError(f"kind must be one of {TASKS}, got {kind!r}")
    if n_instances < 20:
        raise InputError(f"need at least 20 instances, got {n_instances}")
    if n_features < 2:
        raise InputError(f"need at least 2 features, got {n_features}")
    rng = np.random.default_rng(seed)
    names = tuple(f"x{j}" for j in range(n_features))
    if kind == "regression":
        rho, scale = 0.6, 1.5
        shared = rng.standard_normal((n_instances, 1))
        x = scale * (math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * rng.standard_normal((n_instances, n_features)))
        y = np.sin(x).sum(axis=1) + 0.1 * x[:, 0] * x[:, 1]
        if noise_std > 0:
            y = y + noise_std * rng.standard_normal(n_instances)
        return Dataset(x, y, names, "regression")

    half = n_instances // 2
    counts = (n_instances - half, half)
    x = rng.standard_normal((n_instances, n_features))
    labels = np.zeros(n_instances, dtype=int)
    theta0 = rng.uniform(0.0, math.pi, counts[0])
    theta1 = rng.uniform(0.0, math.pi, counts[1])
    x[: counts[0], 0] = np.cos(theta0)
    x[: counts[0], 1] = np.sin(theta0)
    x[counts[0] :, 0] = 1.0 - np.cos(theta1)
    x[counts[0] :, 1] = 0.5 - np.sin(theta1)
    x[:, :2] += 0.1 * rng.standard_normal((n_instances, 2))
    labels[counts[0] :] = 1
    order = rng.permutation(n_instances)
    return Dataset(x[order], labels[order], names, "classification", class_count=2)
