"""Metrics, fold construction, nested cross-validation with subspace-count
tuning, the subspace-iteration sweep, and the threshold robustness sweep.

Per outer fold the training portion alone is masked, imputed and turned
into a density-valued dataset; test rows stay fully observed, so no
training-time artifact ever depends on test features. Inner folds split
the prepared training instances to pick the subspace count, the winner
is refit on the whole outer-training data, and every method is scored on
the same untouched test fold.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, UncertainDataset, build_uncertain_dataset, impute_chained, inject_uncertainty
from .errors import InputError, UmoeError
from .model import BaselineMoE, BaselineNN, UMoE
from .seeding import derive_seed

METHODS = ("umoe", "moe_mode", "moe_mean", "nn_mode", "nn_mean")
_MOE_REDUCERS = {"moe_mode": "mode", "moe_mean": "mean"}
_NN_REDUCERS = {"nn_mode": "mode", "nn_mean": "mean"}


@dataclass(frozen=True)
class PipelineSettings:
    """Data-preparation and network hyperparameters shared by all methods."""

    n_samples: int = 100
    bandwidth: float = 0.1
    impute_draws: int = 20
    impute_sweeps: int = 5
    hidden_layers: tuple[int, ...] = (16, 16)
    learning_rate: float = 0.01
    epochs: int = 150
    batch_size: int = 16
    gate_batch_size: int = 24
    elastic_alpha: float = 0.5
    elastic_lambda: float = 0.002
    n_starts: int = 10
    mode_step_tol: float = 1e-8
    mode_max_iter: int = 500
    include_expert_predictions: bool = False


@dataclass(frozen=True)
class NCVConfig:
    """Nested cross-validation protocol parameters."""

    outer_folds: int = 5
    inner_folds: int = 3
    subspace_candidates: tuple[int, ...] = (2, 3, 4)
    methods: tuple[str, ...] = METHODS
    mask_fraction: float = 0.4
    threshold: float = 0.8
    seed: int = 0
    workers: int = 1
    settings: PipelineSettings = field(default_factory=PipelineSettings)

    def __post_init__(self) -> None:
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise InputError("outer_folds and inner_folds must both be >= 2")
        if not self.subspace_candidates:
            raise InputError("subspace_candidates must be nonempty")
        if any(int(c) < 2 for c in self.subspace_candidates):
            raise InputError("every subspace candidate must be >= 2")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise InputError(f"unknown methods {unknown}; valid: {METHODS}")
        if not (0.0 <= self.mask_fraction < 1.0):
            raise InputError("mask_fraction must lie in [0, 1)")
        if not (0.0 < self.threshold <= 1.0):
            raise InputError("threshold must lie in (0, 1]")


@dataclass
class FoldOutcome:
    n_star: int | None
    metric: float | None
    error: str | None = None


@dataclass
class NCVResult:
    task: str
    fold_records: list[dict[str, FoldOutcome]]
    fold_artifacts: list[dict[str, str]]
    method_means: dict[str, float | None]
    chosen_counts: dict[str, list[int]]


@dataclass
class SweepResult:
    task: str
    counts: tuple[int, ...]
    curves: dict[str, dict[int, float]]
    nn_reference: dict[str, float]


@dataclass
class ThresholdResult:
    task: str
    p_values: tuple[float, ...]
    method_means: dict[str, list[float | None]]


def evaluate(predictions, truths, task: str) -> float:
    """Accuracy (classification; probability rows are argmaxed, ties to the
    lowest class) or mean squared error (regression)."""
    preds = np.asarray(predictions)
    truth = np.asarray(truths)
    if preds.shape[0] != truth.shape[0]:
        raise InputError(f"{preds.shape[0]} predictions vs {truth.shape[0]} truths")
    if preds.shape[0] == 0:
        raise InputError("cannot evaluate zero predictions")
    if task == "regression":
        diff = preds.astype(float) - truth.astype(float)
        return float(np.mean(diff * diff))
    if task == "classification":
        if preds.ndim == 2:
            preds = np.argmax(preds, axis=1)
        return float(np.mean(preds.astype(int) == truth.astype(int)))
    raise InputError(f"unknown task {task!r}")


def stratified_folds(dataset: Dataset, n_folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint, covering folds whose sizes differ by at most one.

    Classification folds are class-stratified; regression folds are a
    seeded random partition. Deterministic given the seed.
    """
    n = dataset.n_instances
    if n_folds < 1 or n_folds > n:
        raise InputError(f"n_folds must lie in [1, {n}], got {n_folds}")
    rng = np.random.default_rng(seed)
    if dataset.task == "classification":
        parts = []
        for c in range(dataset.class_count):
            idx = np.flatnonzero(dataset.labels == c)
            parts.append(rng.permutation(idx))
        order = np.concatenate(parts) if parts else np.arange(0)
        return [np.sort(order[j::n_folds]) for j in range(n_folds)]
    perm = rng.permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, n_folds)]


def _hash_arrays(*arrays) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(np.asarray(arr))
        digest.update(str(a.shape).encode())
        digest.update(str(a.dtype).encode())
        digest.update(a.tobytes())
    return digest.hexdigest()


@dataclass
class FoldPrep:
    uncertain: UncertainDataset
    hashes: dict[str, str]


def _prepare_fold(
    dataset: Dataset, train_idx: np.ndarray, cfg: NCVConfig, fold: int
) -> FoldPrep:
    """Mask, impute and densify the training rows of one outer fold."""
    s = cfg.settings
    train_ds = dataset.subset(train_idx)
    masked = inject_uncertainty(train_ds, cfg.mask_fraction, derive_seed(cfg.seed, "mask", fold))
    if masked.n_masked > 0:
        draws = impute_chained(
            masked, s.impute_draws, s.impute_sweeps, derive_seed(cfg.seed, "impute", fold)
        )
    else:
        draws = [None] * masked.n_instances
    uncertain = build_uncertain_dataset(masked, draws, s.bandwidth)
    digest = hashlib.sha256()
    for draw, cols in zip(draws, (np.flatnonzero(m) for m in masked.mask)):
        digest.update(str(list(cols)).encode())
        if draw is None:
            digest.update(b"none")
        else:
            digest.update(np.ascontiguousarray(draw).tobytes())
    hashes = {
        "scaler": _hash_arrays(uncertain.scaler.mean, uncertain.scaler.std),
        "draws": digest.hexdigest(),
    }
    return FoldPrep(uncertain=uncertain, hashes=hashes)


def make_estimator(method: str, n_subspaces: int | None, threshold: float, settings: PipelineSettings, seed: int):
    """Build the estimator for one named method with shared hyperparameters."""
    s = settings
    common = dict(
        n_samples=s.n_samples,
        hidden_layers=s.hidden_layers,
        learning_rate=s.learning_rate,
        epochs=s.epochs,
        batch_size=s.batch_size,
        elastic_alpha=s.elastic_alpha,
        elastic_lambda=s.elastic_lambda,
        n_starts=s.n_starts,
        mode_step_tol=s.mode_step_tol,
        mode_max_iter=s.mode_max_iter,
        random_state=seed,
    )
    if method == "umoe":
        return UMoE(
            n_experts=int(n_subspaces),
            threshold=threshold,
            gate_batch_size=s.gate_batch_size,
            include_expert_predictions=s.include_expert_predictions,
            **common,
        )
    if method in _MOE_REDUCERS:
        return BaselineMoE(
            reducer=_MOE_REDUCERS[method],
            n_experts=int(n_subspaces),
            gate_batch_size=s.gate_batch_size,
            **common,
        )
    if method in _NN_REDUCERS:
        return BaselineNN(reducer=_NN_REDUCERS[method], **common)
    raise InputError(f"unknown method {method!r}")


def select_candidate(scores: dict[int, float], task: str) -> int:
    """Best inner-mean candidate; accuracy maximizes, error minimizes, ties to the smallest."""
    if not scores:
        raise InputError("no candidates to select from")
    best = None
    best_score = None
    for candidate in sorted(scores):
        score = scores[candidate]
        better = (
            best is None
            or (task == "classification" and score > best_score)
            or (task == "regression" and score < best_score)
        )
        if better:
            best, best_score = candidate, score
    return int(best)


def _method_metric(method, est, X_eval, y_eval, task) -> float:
    return evaluate(est.predict(X_eval), y_eval, task)


def _outer_fold_job(payload) -> tuple[int, dict[str, FoldOutcome], dict[str, str]]:
    dataset, cfg, fold, train_idx, test_idx, prep = payload
    if prep is None:
        prep = _prepare_fold(dataset, train_idx, cfg, fold)
    seed = derive_seed(cfg.seed, "fold", fold)
    train_ds = dataset.subset(train_idx)
    inner = stratified_folds(train_ds, cfg.inner_folds, derive_seed(cfg.seed, "inner", fold))
    X_test = dataset.feature_matrix[test_idx]
    y_test = dataset.labels[test_idx]
    records: dict[str, FoldOutcome] = {}
    artifacts = dict(prep.hashes)

    for method in cfg.methods:
        try:
            if method in _NN_REDUCERS:
                est = make_estimator(method, None, cfg.threshold, cfg.settings, seed)
                est.fit(prep.uncertain)
                records[method] = FoldOutcome(
                    None, _method_metric(method, est, X_test, y_test, dataset.task)
                )
                continue
            scores: dict[int, float] = {}
            candidate_errors: list[str] = []
            for candidate in cfg.subspace_candidates:
                inner_metrics = []
                try:
                    for v in range(cfg.inner_folds):
                        val_local = inner[v]
                        fit_local = np.concatenate(
                            [inner[w] for w in range(cfg.inner_folds) if w != v]
                        )
                        est = make_estimator(method, candidate, cfg.threshold, cfg.settings, seed)
                        est.fit(prep.uncertain.subset(fit_local))
                        preds = est.predict(dataset.feature_matrix[train_idx[val_local]])
                        inner_metrics.append(
                            evaluate(preds, train_ds.labels[val_local], dataset.task)
                        )
                    scores[int(candidate)] = float(np.mean(inner_metrics))
                except UmoeError as exc:
                    candidate_errors.append(f"candidate {candidate}: {exc}")
            if not scores:
                raise InputError("; ".join(candidate_errors) or "no viable subspace candidate")
            n_star = select_candidate(scores, dataset.task)
            est = make_estimator(method, n_star, cfg.threshold, cfg.settings, seed)
            est.fit(prep.uncertain)
            metric = _method_metric(method, est, X_test, y_test, dataset.task)
            if method == "umoe":
                artifacts["umoe_centroids"] = _hash_arrays(est.cluster_model_.centroids)
            records[method] = FoldOutcome(n_star, metric)
        except UmoeError as exc:
            records[method] = FoldOutcome(None, None, f"{type(exc).__name__}: {exc}")
    return fold, records, artifacts


def _aggregate(cfg_methods, fold_records) -> tuple[dict, dict]:
    means: dict[str, float | None] = {}
    chosen: dict[str, list[int]] = {}
    for method in cfg_methods:
        metrics = [r[method].metric for r in fold_records if r[method].metric is not None]
        means[method] = float(np.mean(metrics)) if metrics else None
        if method == "umoe" or method in _MOE_REDUCERS:
            chosen[method] = [r[method].n_star for r in fold_records if r[method].n_star is not None]
    return means, chosen


def nested_cv(dataset: Dataset, cfg: NCVConfig, _prepared: list[FoldPrep] | None = None) -> NCVResult:
    """Outer assessment loop with an inner subspace-count selection loop.

    Any method failure in a fold is recorded there and the run continues.
    Results are keyed by fold, so worker-level parallelism cannot change
    the output.
    """
    folds = stratified_folds(dataset, cfg.outer_folds, derive_seed(cfg.seed, "outer"))
    payloads = []
    for t, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[w] for w in range(len(folds)) if w != t])
        prep = _prepared[t] if _prepared is not None else None
        payloads.append((dataset, cfg, t, train_idx, test_idx, prep))
    if cfg.workers > 1 and _prepared is None:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            raw = list(pool.map(_outer_fold_job, payloads))
    else:
        raw = [_outer_fold_job(p) for p in payloads]
    raw.sort(key=lambda item: item[0])
    fold_records = [records for _, records, _ in raw]
    fold_artifacts = [artifacts for _, _, artifacts in raw]
    means, chosen = _aggregate(cfg.methods, fold_records)
    return NCVResult(dataset.task, fold_records, fold_artifacts, means, chosen)


def prepare_outer_folds(dataset: Dataset, cfg: NCVConfig) -> list[FoldPrep]:
    """Per-fold mask/impute/densify artifacts, reusable across threshold values."""
    folds = stratified_folds(dataset, cfg.outer_folds, derive_seed(cfg.seed, "outer"))
    preps = []
    for t in range(len(folds)):
        train_idx = np.concatenate([folds[w] for w in range(len(folds)) if w != t])
        preps.append(_prepare_fold(dataset, train_idx, cfg, t))
    return preps


def _sweep_fold_job(payload):
    dataset, cfg, counts, fold, train_idx, test_idx = payload
    prep = _prepare_fold(dataset, train_idx, cfg, fold)
    seed = derive_seed(cfg.seed, "fold", fold)
    X_test = dataset.feature_matrix[test_idx]
    y_test = dataset.labels[test_idx]
    curve: dict[str, dict[int, float | None]] = {}
    reference: dict[str, float | None] = {}
    for method in cfg.methods:
        if method in _NN_REDUCERS:
            try:
                est = make_estimator(method, None, cfg.threshold, cfg.settings, seed)
                est.fit(prep.uncertain)
                reference[method] = _method_metric(method, est, X_test, y_test, dataset.task)
            except UmoeError:
                reference[method] = None
            continue
        curve[method] = {}
        for count in counts:
            try:
                est = make_estimator(method, count, cfg.threshold, cfg.settings, seed)
                est.fit(prep.uncertain)
                curve[method][count] = _method_metric(method, est, X_test, y_test, dataset.task)
            except UmoeError:
                curve[method][count] = None
    return fold, curve, reference


def subspace_sweep(dataset: Dataset, counts, cv_folds: int, cfg: NCVConfig) -> SweepResult:
    """Plain cross-validation metric per subspace count, with constant single-network references."""
    counts = tuple(int(c) for c in counts)
    if not counts or any(c < 1 for c in counts):
        raise InputError("counts must be a nonempty list of positive integers")
    folds = stratified_folds(dataset, cv_folds, derive_seed(cfg.seed, "outer"))
    payloads = []
    for t, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[w] for w in range(len(folds)) if w != t])
        payloads.append((dataset, cfg, counts, t, train_idx, test_idx))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            raw = list(pool.map(_sweep_fold_job, payloads))
    else:
        raw = [_sweep_fold_job(p) for p in payloads]
    raw.sort(key=lambda item: item[0])

    curves: dict[str, dict[int, float]] = {}
    reference: dict[str, float] = {}
    for method in cfg.methods:
        if method in _NN_REDUCERS:
            vals = [ref[method] for _, _, ref in raw if ref[method] is not None]
            if vals:
                reference[method] = float(np.mean(vals))
            continue
        curves[method] = {}
        for count in counts:
            vals = [c[method][count] for _, c, _ in raw if c[method][count] is not None]
            if vals:
                curves[method][count] = float(np.mean(vals))
    return SweepResult(dataset.task, counts, curves, reference)


def threshold_sweep(dataset: Dataset, p_values, a: int, b: int, cfg: NCVConfig) -> ThresholdResult:
    """Nested cross-validation per threshold value with all seeds held fixed.

    Sampling, masking, imputation and fold seeds do not involve the
    threshold, so consecutive values differ only in the kept sample
    share.
    """
    p_values = tuple(float(p) for p in p_values)
    if not p_values or any(not (0.0 < p <= 1.0) for p in p_values):
        raise InputError("every threshold value must lie in (0, 1]")
    base = replace(cfg, outer_folds=int(a), inner_folds=int(b))
    prepared = prepare_outer_folds(dataset, base) if base.workers <= 1 else None
    per_method: dict[str, list[float | None]] = {m: [] for m in base.methods}
    for p in p_values:
        result = nested_cv(dataset, replace(base, threshold=p), _prepared=prepared)
        for method in base.methods:
            per_method[method].append(result.method_means[method])
    return ThresholdResult(dataset.task, p_values, per_method)
