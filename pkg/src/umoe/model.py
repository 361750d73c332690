"""Gated mixture-of-experts training over density-valued inputs.

Training decomposes the input space with k-means over each instance's
filtered samples, trains one expert per subspace on dominant-cell local
modes with cluster-share loss weights, then trains a softmax gate on
global modes plus each instance's cluster-probability vector while the
experts stay frozen. Two reference families share the machinery: a
single network on reduced points (mode or mean), and a hard-assignment
mixture without the probability side information or loss weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import UncertainDataset, UncertainInstance
from .density import (
    ModePoint,
    ModeSearchConfig,
    _density_batch,
    _pick_best,
    _top_rows,
    filter_top_p,
    global_mode_from_samples,
    pdf_mean,
    sample,
)
from .errors import FitError, InputError, SchemaError, TrainingError
from .nn import (
    PROB_FLOOR,
    Mlp,
    TrainConfig,
    _forward_cached,
    forward,
    init_mlp,
    mlp_from_state,
    mlp_state,
    train_weighted,
)
from .partition import (
    ClusterModel,
    _assignment_scores,
    assign_points,
    complete_rows,
    fit_kmeans,
)
from .seeding import derive_seed
from .serialization import load_arrays, save_arrays
from .validation import as_float_matrix, check_count, check_unit_interval

MODEL_FORMAT_VERSION = 1

REDUCERS = ("mode", "mean")


# ---------------------------------------------------------------------------
# per-instance artifacts (samples, global modes), batched across instances


def _sample_key(n_samples: int, base_seed: int) -> tuple:
    return ("samples", int(n_samples), int(base_seed))


def _mode_key(n_samples: int, base_seed: int, search: ModeSearchConfig) -> tuple:
    return ("gmode", int(n_samples), int(base_seed), search.n_starts, search.step_tol, search.max_iter)


def _ascend_grouped(centers, bandwidth, starts, config: ModeSearchConfig, member=None):
    """Mean-of-kernels ascent over a batch of instances.

    centers: (g, C, d); starts: (g, S, d). ``member(points, live)`` maps
    (m, S, d) candidate points of the live instance rows to an (m, S)
    acceptance mask; rejected proposals freeze their path.
    """
    x = np.array(starts, dtype=float)
    g, n_starts, _ = x.shape
    h2 = bandwidth * bandwidth
    active = np.ones((g, n_starts), dtype=bool)
    live = np.arange(g)
    center_norms = np.einsum("gcd,gcd->gc", centers, centers)
    for _ in range(config.max_iter):
        if live.size == 0:
            break
        cur = x[live]
        cen = centers[live]
        # ||x - c||^2 via the expanded form keeps temporaries at (g, S, C)
        cross = np.matmul(cur, cen.transpose(0, 2, 1))
        sq = (
            np.einsum("gsd,gsd->gs", cur, cur)[:, :, None]
            - 2.0 * cross
            + center_norms[live][:, None, :]
        )
        w = np.exp(-0.5 * np.maximum(sq, 0.0) / h2)
        total = w.sum(axis=2)
        moved = total > 0
        proposal = np.matmul(w, cen)
        proposal = np.where(
            moved[:, :, None], proposal / np.where(moved, total, 1.0)[:, :, None], cur
        )
        ok = member(proposal, live) if member is not None else np.ones_like(moved)
        step = np.abs(proposal - cur).max(axis=2)
        act = active[live]
        accepted = act & ok & moved
        x[live] = np.where(accepted[:, :, None], proposal, cur)
        frozen = act & (~(ok & moved) | (step < config.step_tol))
        active[live] &= ~frozen
        live = live[active[live].any(axis=1)]
    return x


def _best_per_instance(centers_row, bandwidth, finals_row) -> ModePoint:
    location, value = _pick_best(centers_row, bandwidth, finals_row)
    return ModePoint(location, value, "global")


def ensure_instance_artifacts(
    dataset: UncertainDataset, n_samples: int, search: ModeSearchConfig, base_seed: int
) -> tuple[tuple, tuple]:
    """Memoize each uncertain instance's sample set and global mode on the instance.

    Instances are shared between a dataset and its subsets, so nested
    runs over the same prepared data reuse these artifacts. Seeds derive
    from (base_seed, instance uid), independent of subset membership.
    """
    skey = _sample_key(n_samples, base_seed)
    mkey = _mode_key(n_samples, base_seed, search)
    pending: list[UncertainInstance] = []
    for inst in dataset.instances:
        if inst.density is None:
            continue
        if skey not in inst.cache:
            inst.cache[skey] = sample(
                inst.density, n_samples, derive_seed(base_seed, "sample", inst.uid)
            )
        if mkey not in inst.cache:
            pending.append(inst)

    groups: dict[tuple, list[UncertainInstance]] = {}
    for inst in pending:
        centers = inst.density.centers
        if np.all(centers == centers[0]):
            loc = centers[0].copy()
            value = float(_density_batch(centers, inst.density.bandwidth, loc[None, :])[0])
            inst.cache[mkey] = ModePoint(loc, value, "global")
            continue
        key = (centers.shape[1], centers.shape[0], inst.density.bandwidth, len(inst.cache[skey]))
        groups.setdefault(key, []).append(inst)

    for (_, _, bandwidth, n_drawn), members in groups.items():
        centers = np.stack([inst.density.centers for inst in members])
        starts = []
        for inst in members:
            c = inst.density.centers
            cd = _density_batch(c, bandwidth, c)
            picks = [_top_rows(c, cd, search.n_starts)]
            if n_drawn > 0:
                drawn = inst.cache[skey]
                picks.append(_top_rows(drawn.points, drawn.densities, search.n_starts))
            starts.append(np.vstack(picks))
        finals = _ascend_grouped(centers, bandwidth, np.stack(starts), search)
        for row, inst in enumerate(members):
            inst.cache[mkey] = _best_per_instance(inst.density.centers, bandwidth, finals[row])
    return skey, mkey


def _instance_templates(dataset: UncertainDataset) -> np.ndarray:
    """Full standardized feature vectors with certain values filled in (uncertain slots zero)."""
    templates = np.zeros((dataset.n_instances, dataset.n_features))
    for i, inst in enumerate(dataset.instances):
        if inst.certain_dims:
            templates[i, list(inst.certain_dims)] = inst.certain_values
    return templates


def reduce_instances(
    dataset: UncertainDataset,
    reducer: str,
    n_samples: int,
    search: ModeSearchConfig,
    base_seed: int,
) -> np.ndarray:
    """One standardized point per instance: its values, completed at the
    uncertain dimensions by the global mode or the density mean."""
    if reducer not in REDUCERS:
        raise InputError(f"reducer must be one of {REDUCERS}, got {reducer!r}")
    if reducer == "mode":
        _, mkey = ensure_instance_artifacts(dataset, n_samples, search, base_seed)
    points = _instance_templates(dataset)
    for i, inst in enumerate(dataset.instances):
        if inst.density is None:
            continue
        value = inst.cache[mkey].location if reducer == "mode" else pdf_mean(inst.density)
        points[i, list(inst.density.uncertain_dims)] = value
    return points


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class Decomposition:
    """Everything expert and gate training need, one row per instance."""

    cluster_model: ClusterModel
    cluster_probs: np.ndarray   # (I, E)
    dominant: np.ndarray        # (I,)
    weights: np.ndarray         # (I,) dominant-cluster share, 1 for certain instances
    global_points: np.ndarray   # (I, k) completed global modes
    local_points: np.ndarray    # (I, k) completed dominant-cell local modes
    uncertain: np.ndarray       # (I,) bool


def _batch_local_modes(dataset, pending, filtered, dominant, cluster_model, search):
    """Constrained ascent for instances whose global mode left their dominant cell."""
    results = {}
    groups: dict[tuple, list[int]] = {}
    for i in pending:
        inst = dataset.instances[i]
        groups.setdefault(
            (inst.density.n_dims, inst.density.centers.shape[0], inst.density.bandwidth), []
        ).append(i)

    for (dims, _, bandwidth), idx_list in groups.items():
        starts_list = []
        template_rows = np.zeros((len(idx_list), dataset.n_features))
        cols = np.zeros((len(idx_list), dims), dtype=int)
        targets = np.zeros(len(idx_list), dtype=int)
        for row, i in enumerate(idx_list):
            inst = dataset.instances[i]
            cols[row] = inst.density.uncertain_dims
            if inst.certain_dims:
                template_rows[row, list(inst.certain_dims)] = inst.certain_values
            targets[row] = dominant[i]
            filt = filtered[i]
            emb = complete_rows(
                filt.points, inst.density.uncertain_dims, inst.certain_values, dataset.n_features
            )
            in_cell = assign_points(cluster_model, emb) == dominant[i]
            picks = [_top_rows(filt.points[in_cell], filt.densities[in_cell], search.n_starts)]
            cen_emb = complete_rows(
                inst.density.centers, inst.density.uncertain_dims, inst.certain_values, dataset.n_features
            )
            cen_in = assign_points(cluster_model, cen_emb) == dominant[i]
            if cen_in.any():
                picks.append(inst.density.centers[cen_in])
            starts_list.append(np.vstack(picks))

        width = max(s.shape[0] for s in starts_list)
        starts = np.stack(
            [np.vstack([s, np.repeat(s[:1], width - s.shape[0], axis=0)]) if s.shape[0] < width else s
             for s in starts_list]
        )
        centers = np.stack([dataset.instances[i].density.centers for i in idx_list])

        def member(points, live):
            m, n_starts, _ = points.shape
            emb = np.repeat(template_rows[live][:, None, :], n_starts, axis=1)
            rows = np.arange(m)[:, None, None]
            ss = np.arange(n_starts)[None, :, None]
            emb[rows, ss, cols[live][:, None, :]] = points
            flat = emb.reshape(m * n_starts, dataset.n_features)
            labels = np.argmin(_assignment_scores(flat, cluster_model.centroids), axis=1)
            return labels.reshape(m, n_starts) == targets[live][:, None]

        finals = _ascend_grouped(centers, bandwidth, starts, search, member=member)
        for row, i in enumerate(idx_list):
            inst = dataset.instances[i]
            location, value = _pick_best(inst.density.centers, bandwidth, finals[row])
            results[i] = ModePoint(location, value, "local", cluster=int(dominant[i]))
    return results


def decompose(
    dataset: UncertainDataset,
    n_experts: int,
    threshold: float,
    n_samples: int,
    search: ModeSearchConfig,
    seed: int,
) -> Decomposition:
    """Partition the dataset and locate every instance's modes and cluster shares.

    Uncertain instances contribute their filtered samples (completed with
    their certain values) to the k-means fit; certain instances
    contribute their own feature vector and get a one-hot cluster vector
    with weight 1.
    """
    if dataset.n_instances == 0:
        raise InputError("dataset is empty")
    check_count(n_experts, "n_experts", 1)
    check_unit_interval(threshold, "threshold", open_low=True)
    check_count(n_samples, "n_samples", 1)

    skey, mkey = ensure_instance_artifacts(dataset, n_samples, search, seed)
    n, k = dataset.n_instances, dataset.n_features
    templates = _instance_templates(dataset)

    filtered = {}
    parts = []
    slices = []
    position = 0
    for i, inst in enumerate(dataset.instances):
        if inst.density is None:
            parts.append(templates[i : i + 1])
            slices.append((position, position + 1))
            position += 1
        else:
            filt = filter_top_p(inst.cache[skey], threshold)
            filtered[i] = filt
            parts.append(
                complete_rows(filt.points, inst.density.uncertain_dims, inst.certain_values, k)
            )
            slices.append((position, position + filt.kept_count))
            position += filt.kept_count
    rows = np.vstack(parts)

    cluster_model = fit_kmeans(rows, n_experts, derive_seed(seed, "kmeans"))
    labels = assign_points(cluster_model, rows)

    probs = np.zeros((n, n_experts))
    dominant = np.zeros(n, dtype=int)
    weights = np.ones(n)
    uncertain = np.zeros(n, dtype=bool)
    global_points = templates.copy()
    local_points = templates.copy()

    for i, inst in enumerate(dataset.instances):
        lo, hi = slices[i]
        if inst.density is None:
            cluster = int(labels[lo])
            probs[i, cluster] = 1.0
            dominant[i] = cluster
            continue
        uncertain[i] = True
        counts = np.bincount(labels[lo:hi], minlength=n_experts)
        probs[i] = counts / float(hi - lo)
        dominant[i] = int(np.argmax(probs[i]))
        weights[i] = probs[i, dominant[i]]
        mode = inst.cache[mkey]
        global_points[i] = complete_rows(
            mode.location[None, :], inst.density.uncertain_dims, inst.certain_values, k
        )[0]

    # local mode: reuse the global mode when it already lies in the dominant
    # cell (the constrained argmax equals the unconstrained one there)
    pending = []
    if uncertain.any():
        idx = np.flatnonzero(uncertain)
        in_cell = assign_points(cluster_model, global_points[idx]) == dominant[idx]
        for pos, i in enumerate(idx):
            if in_cell[pos]:
                local_points[i] = global_points[i]
            else:
                pending.append(int(i))
    if pending:
        local_modes = _batch_local_modes(dataset, pending, filtered, dominant, cluster_model, search)
        for i, mode in local_modes.items():
            inst = dataset.instances[i]
            local_points[i] = complete_rows(
                mode.location[None, :], inst.density.uncertain_dims, inst.certain_values, k
            )[0]

    return Decomposition(cluster_model, probs, dominant, weights, global_points, local_points, uncertain)


# ---------------------------------------------------------------------------
# expert and gate training


def _output_spec(task: str, class_count: int | None) -> tuple[str, int]:
    if task == "classification":
        if not class_count or class_count < 2:
            raise InputError("classification needs class_count >= 2")
        return "softmax", int(class_count)
    return "linear", 1


def train_experts(
    decomposition: Decomposition,
    dataset: UncertainDataset,
    hidden_layers: tuple[int, ...],
    train_config: TrainConfig,
    seed: int,
) -> tuple[list[Mlp], dict]:
    """One weighted training run per cluster over its dominant instances.

    A cluster that dominates no instance gets a copy of the largest
    cluster's expert; the fit report flags these fallbacks.
    """
    n_experts = decomposition.cluster_model.n_clusters
    kind, width = _output_spec(dataset.task, dataset.class_count)
    sizes = (dataset.n_features, *hidden_layers, width)
    y = dataset.labels
    counts = np.bincount(decomposition.dominant, minlength=n_experts)
    if counts.sum() == 0:
        raise FitError("decomposition covers no instances")
    experts: list[Mlp | None] = [None] * n_experts
    fallbacks = []
    for e in range(n_experts):
        idx = np.flatnonzero(decomposition.dominant == e)
        if idx.size == 0:
            fallbacks.append(e)
            continue
        net = init_mlp(sizes, kind, derive_seed(seed, "expert", e, "init"))
        cfg = replace(train_config, seed=derive_seed(seed, "expert", e, "train"))
        experts[e] = train_weighted(
            net, decomposition.local_points[idx], y[idx], decomposition.weights[idx], cfg
        )
    largest = int(np.argmax(counts))
    for e in fallbacks:
        experts[e] = experts[largest].copy()
    report = {"expert_row_counts": counts.tolist(), "expert_fallbacks": fallbacks}
    return experts, report  # type: ignore[return-value]


def combine_outputs(gate_weights: np.ndarray, expert_outputs: np.ndarray, task: str) -> np.ndarray:
    """Gated combination: weighted sum of scalar outputs, or mixture of class distributions."""
    if task == "regression":
        return np.einsum("ne,ne->n", gate_weights, expert_outputs[:, :, 0])
    return np.einsum("ne,new->nw", gate_weights, expert_outputs)


def gate_inputs(
    global_points: np.ndarray,
    cluster_vectors: np.ndarray,
    experts: list[Mlp],
    include_expert_predictions: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Gate feature matrix plus the frozen expert outputs at the same points."""
    expert_outputs = np.stack([forward(e, global_points) for e in experts], axis=1)
    parts = [global_points, cluster_vectors]
    if include_expert_predictions:
        parts.append(expert_outputs.reshape(global_points.shape[0], -1))
    return np.hstack(parts), expert_outputs


def _train_gate_network(
    gate: Mlp,
    X: np.ndarray,
    expert_outputs: np.ndarray,
    y: np.ndarray,
    task: str,
    config: TrainConfig,
    loss_history: list[float] | None = None,
) -> Mlp:
    """SGD on the combined prediction's loss with expert outputs held fixed.

    The gradient reaches the gate through the softmax mixture only;
    expert parameters never change (their outputs enter as constants).
    """
    net = gate.copy()
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    if task == "classification":
        y = np.asarray(y, dtype=int)
    else:
        y = np.asarray(y, dtype=float)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        Xp, yp, op = X[perm], y[perm], expert_outputs[perm]
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            stop = start + config.batch_size
            activations, pre = _forward_cached(net, Xp[start:stop])
            g = activations[-1]
            outputs = op[start:stop]
            targets = yp[start:stop]
            size = g.shape[0]
            combined = combine_outputs(g, outputs, task)
            if task == "regression":
                err = combined - targets
                loss = float(np.mean(err * err))
                dldg = 2.0 * err[:, None] * outputs[:, :, 0]
            else:
                picked = combined[np.arange(size), targets]
                floored = np.maximum(picked, PROB_FLOOR)
                loss = float(np.mean(-np.log(floored)))
                dldg = -outputs[np.arange(size), :, targets] / floored[:, None]
                dldg[picked <= PROB_FLOOR] = 0.0
            if not math.isfinite(loss):
                raise TrainingError(f"gate training diverged to a non-finite loss at epoch {epoch}")
            inner = (dldg * g).sum(axis=1, keepdims=True)
            delta = g * (dldg - inner) / size
            lr = config.learning_rate
            lam = config.elastic_lambda
            l1_step = lr * lam * config.elastic_alpha
            l2_scale = 1.0 - lr * lam * 2.0 * (1.0 - config.elastic_alpha)
            for l in range(len(net.weights) - 1, -1, -1):
                w = net.weights[l]
                grad_w = delta.T @ activations[l]
                grad_b = delta.sum(axis=0)
                if l > 0:
                    delta = (delta @ w) * (pre[l - 1] > 0.0)
                if lam > 0.0:
                    w *= l2_scale
                    w -= l1_step * np.sign(w)
                w -= lr * grad_w
                net.biases[l] -= lr * grad_b
            epoch_losses.append(loss)
        if loss_history is not None:
            loss_history.append(float(np.mean(epoch_losses)))
    return net


def train_gate(
    decomposition: Decomposition,
    experts: list[Mlp],
    dataset: UncertainDataset,
    hidden_layers: tuple[int, ...],
    gate_config: TrainConfig,
    include_expert_predictions: bool,
    seed: int,
) -> Mlp:
    """Train the softmax gate on (global modes, certain values, cluster shares)."""
    X, expert_outputs = gate_inputs(
        decomposition.global_points, decomposition.cluster_probs, experts, include_expert_predictions
    )
    sizes = (X.shape[1], *hidden_layers, len(experts))
    gate = init_mlp(sizes, "softmax", derive_seed(seed, "gate", "init"))
    cfg = replace(gate_config, seed=derive_seed(seed, "gate", "train"))
    return _train_gate_network(gate, X, expert_outputs, dataset.labels, dataset.task, cfg)


# ---------------------------------------------------------------------------
# estimators


class _FittedMixin:
    def _require_fitted(self) -> None:
        if not hasattr(self, "fit_report_"):
            raise NotFittedError(f"{type(self).__name__} instance is not fitted yet")

    def _standardized(self, X) -> np.ndarray:
        X = as_float_matrix(X, "X")
        if X.shape[1] != self.n_features_:
            raise InputError(f"X has {X.shape[1]} features, model expects {self.n_features_}")
        return self.scaler_.transform(X)

    def _adopt_schema(self, dataset: UncertainDataset) -> None:
        if not isinstance(dataset, UncertainDataset):
            raise InputError("fit expects an UncertainDataset")
        if dataset.n_instances == 0:
            raise InputError("dataset is empty")
        self.task_ = dataset.task
        self.class_count_ = dataset.class_count
        self.class_names_ = dataset.class_names
        self.n_features_ = dataset.n_features
        self.feature_names_ = dataset.feature_names
        self.scaler_ = dataset.scaler


class _GatedEnsemble(_FittedMixin, BaseEstimator):
    """Shared prediction path for the gated ensembles (full model and hard baseline)."""

    include_expert_predictions = False

    def _expert_outputs(self, points: np.ndarray) -> np.ndarray:
        return np.stack([forward(e, points) for e in self.experts_], axis=1)

    def _gate_combine(self, points: np.ndarray, cluster_vectors: np.ndarray):
        outputs = self._expert_outputs(points)
        parts = [points, cluster_vectors]
        if self.include_expert_predictions:
            parts.append(outputs.reshape(points.shape[0], -1))
        g = forward(self.gate_, np.hstack(parts))
        return combine_outputs(g, outputs, self.task_), g, outputs

    def _predict_certain(self, X):
        points = self._standardized(X)
        assigned = assign_points(self.cluster_model_, points)
        onehot = np.eye(self.cluster_model_.n_clusters)[assigned]
        combined, g, _ = self._gate_combine(points, onehot)
        return combined, g, onehot

    def predict(self, X) -> np.ndarray:
        """Predicted values (regression) or class indices (classification)."""
        self._require_fitted()
        combined, _, _ = self._predict_certain(X)
        if self.task_ == "regression":
            return combined
        return np.argmax(combined, axis=1)

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        if self.task_ != "classification":
            raise InputError("predict_proba is only defined for classification models")
        return self._predict_certain(X)[0]

    def predict_detail(self, X) -> dict:
        """Predictions plus the gate weights and one-hot cluster vector per row."""
        self._require_fitted()
        combined, g, onehot = self._predict_certain(X)
        detail = {"gate_weights": g, "cluster_onehot": onehot}
        if self.task_ == "regression":
            detail["predictions"] = combined
        else:
            detail["predictions"] = np.argmax(combined, axis=1)
            detail["probabilities"] = combined
        return detail

    # -- shared fit plumbing -------------------------------------------------

    def _train_config(self, batch_size: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=batch_size,
            elastic_alpha=self.elastic_alpha,
            elastic_lambda=self.elastic_lambda,
            seed=0,
        )

    def _search_config(self) -> ModeSearchConfig:
        return ModeSearchConfig(
            n_starts=self.n_starts,
            step_tol=self.mode_step_tol,
            max_iter=self.mode_max_iter,
            sample_count=self.n_samples,
            seed=derive_seed(self.random_state, "mode"),
        )

    def _fit_from_decomposition(self, decomposition: Decomposition, dataset: UncertainDataset) -> None:
        hidden = tuple(int(h) for h in self.hidden_layers)
        experts, report = train_experts(
            decomposition, dataset, hidden, self._train_config(self.batch_size), self.random_state
        )
        gate = train_gate(
            decomposition,
            experts,
            dataset,
            hidden,
            self._train_config(self.gate_batch_size),
            self.include_expert_predictions,
            self.random_state,
        )
        self.cluster_model_ = decomposition.cluster_model
        self.experts_ = experts
        self.gate_ = gate
        self.fit_report_ = report

    def save(self, path: str) -> None:
        save_model(path, self)


class UMoE(_GatedEnsemble):
    """Uncertainty-aware mixture of experts.

    Fit on an :class:`~umoe.data.UncertainDataset`; predict on fully
    observed feature rows (raw units) or on uncertain instances via
    :meth:`predict_uncertain`.

    Parameters mirror the training pipeline: ``n_experts`` subspaces,
    ``threshold`` the kept share of highest-density samples,
    ``n_samples`` drawn per instance, plus the network hyperparameters
    shared by experts (``batch_size``) and gate (``gate_batch_size``).
    """

    _kind = "umoe"

    def __init__(
        self,
        n_experts: int = 2,
        threshold: float = 0.8,
        n_samples: int = 100,
        hidden_layers=(16, 16),
        learning_rate: float = 0.01,
        epochs: int = 150,
        batch_size: int = 16,
        gate_batch_size: int = 24,
        elastic_alpha: float = 0.5,
        elastic_lambda: float = 0.002,
        n_starts: int = 10,
        mode_step_tol: float = 1e-8,
        mode_max_iter: int = 500,
        include_expert_predictions: bool = False,
        random_state: int = 0,
    ):
        self.n_experts = n_experts
        self.threshold = threshold
        self.n_samples = n_samples
        self.hidden_layers = hidden_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.gate_batch_size = gate_batch_size
        self.elastic_alpha = elastic_alpha
        self.elastic_lambda = elastic_lambda
        self.n_starts = n_starts
        self.mode_step_tol = mode_step_tol
        self.mode_max_iter = mode_max_iter
        self.include_expert_predictions = include_expert_predictions
        self.random_state = random_state

    def fit(self, dataset: UncertainDataset) -> "UMoE":
        self._adopt_schema(dataset)
        decomposition = decompose(
            dataset,
            self.n_experts,
            self.threshold,
            self.n_samples,
            self._search_config(),
            self.random_state,
        )
        self._fit_from_decomposition(decomposition, dataset)
        return self

    def predict_uncertain(self, instances, seed: int | None = None) -> np.ndarray:
        """Predict for instances carrying a density over their uncertain dimensions.

        Samples each instance's density, filters by the training-time
        threshold, recomputes the cluster-probability vector and global
        mode with the trained partition, and runs the gated combination.
        Deterministic given the seed (defaults to ``random_state``).
        """
        combined = self._predict_uncertain_combined(instances, seed)
        if self.task_ == "regression":
            return combined
        return np.argmax(combined, axis=1)

    def predict_uncertain_proba(self, instances, seed: int | None = None) -> np.ndarray:
        if self.task_ != "classification":
            raise InputError("predict_uncertain_proba is only defined for classification models")
        return self._predict_uncertain_combined(instances, seed)

    def _predict_uncertain_combined(self, instances, seed: int | None) -> np.ndarray:
        self._require_fitted()
        base = self.random_state if seed is None else seed
        search = self._search_config()
        results = []
        for i, inst in enumerate(instances):
            if inst.density is None:
                raise InputError(
                    f"instance {i} has no density; predict on its feature vector instead"
                )
            drawn = sample(inst.density, self.n_samples, derive_seed(base, "predict", i))
            filt = filter_top_p(drawn, self.threshold)
            completed = complete_rows(
                filt.points, inst.density.uncertain_dims, inst.certain_values, self.n_features_
            )
            counts = np.bincount(
                assign_points(self.cluster_model_, completed),
                minlength=self.cluster_model_.n_clusters,
            )
            cluster_vec = counts / float(filt.kept_count)
            mode = global_mode_from_samples(inst.density, drawn, search)
            point = complete_rows(
                mode.location[None, :], inst.density.uncertain_dims, inst.certain_values, self.n_features_
            )
            combined, _, _ = self._gate_combine(point, cluster_vec[None, :])
            results.append(combined[0])
        return np.array(results)


class BaselineMoE(_GatedEnsemble):
    """Hard-assignment mixture reference: instances reduced to points, k-means
    on the points, unweighted experts, gate fed only the one-hot cluster."""

    _kind = "moe"

    def __init__(
        self,
        reducer: str = "mode",
        n_experts: int = 2,
        n_samples: int = 100,
        hidden_layers=(16, 16),
        learning_rate: float = 0.01,
        epochs: int = 150,
        batch_size: int = 16,
        gate_batch_size: int = 24,
        elastic_alpha: float = 0.5,
        elastic_lambda: float = 0.002,
        n_starts: int = 10,
        mode_step_tol: float = 1e-8,
        mode_max_iter: int = 500,
        random_state: int = 0,
    ):
        self.reducer = reducer
        self.n_experts = n_experts
        self.n_samples = n_samples
        self.hidden_layers = hidden_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.gate_batch_size = gate_batch_size
        self.elastic_alpha = elastic_alpha
        self.elastic_lambda = elastic_lambda
        self.n_starts = n_starts
        self.mode_step_tol = mode_step_tol
        self.mode_max_iter = mode_max_iter
        self.random_state = random_state

    def fit(self, dataset: UncertainDataset) -> "BaselineMoE":
        self._adopt_schema(dataset)
        check_count(self.n_experts, "n_experts", 1)
        points = reduce_instances(
            dataset, self.reducer, self.n_samples, self._search_config(), self.random_state
        )
        cluster_model = fit_kmeans(points, self.n_experts, derive_seed(self.random_state, "kmeans"))
        assigned = assign_points(cluster_model, points)
        onehot = np.eye(self.n_experts)[assigned]
        decomposition = Decomposition(
            cluster_model=cluster_model,
            cluster_probs=onehot,
            dominant=assigned,
            weights=np.ones(dataset.n_instances),
            global_points=points,
            local_points=points,
            uncertain=np.array([inst.density is not None for inst in dataset.instances]),
        )
        self._fit_from_decomposition(decomposition, dataset)
        return self


class BaselineNN(_FittedMixin, BaseEstimator):
    """Single network trained on reduced points (global modes or density means)."""

    _kind = "nn"

    def __init__(
        self,
        reducer: str = "mode",
        n_samples: int = 100,
        hidden_layers=(16, 16),
        learning_rate: float = 0.01,
        epochs: int = 150,
        batch_size: int = 16,
        elastic_alpha: float = 0.5,
        elastic_lambda: float = 0.002,
        n_starts: int = 10,
        mode_step_tol: float = 1e-8,
        mode_max_iter: int = 500,
        random_state: int = 0,
    ):
        self.reducer = reducer
        self.n_samples = n_samples
        self.hidden_layers = hidden_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.elastic_alpha = elastic_alpha
        self.elastic_lambda = elastic_lambda
        self.n_starts = n_starts
        self.mode_step_tol = mode_step_tol
        self.mode_max_iter = mode_max_iter
        self.random_state = random_state

    def _search_config(self) -> ModeSearchConfig:
        return ModeSearchConfig(
            n_starts=self.n_starts,
            step_tol=self.mode_step_tol,
            max_iter=self.mode_max_iter,
            sample_count=self.n_samples,
            seed=derive_seed(self.random_state, "mode"),
        )

    def fit(self, dataset: UncertainDataset) -> "BaselineNN":
        self._adopt_schema(dataset)
        points = reduce_instances(
            dataset, self.reducer, self.n_samples, self._search_config(), self.random_state
        )
        kind, width = _output_spec(dataset.task, dataset.class_count)
        hidden = tuple(int(h) for h in self.hidden_layers)
        sizes = (dataset.n_features, *hidden, width)
        net = init_mlp(sizes, kind, derive_seed(self.random_state, "expert", 0, "init"))
        config = TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            elastic_alpha=self.elastic_alpha,
            elastic_lambda=self.elastic_lambda,
            seed=derive_seed(self.random_state, "expert", 0, "train"),
        )
        self.net_ = train_weighted(net, points, dataset.labels, None, config)
        self.fit_report_ = {"rows": dataset.n_instances}
        return self

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        out = forward(self.net_, self._standardized(X))
        if self.task_ == "regression":
            return out[:, 0]
        return np.argmax(out, axis=1)

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        if self.task_ != "classification":
            raise InputError("predict_proba is only defined for classification models")
        return forward(self.net_, self._standardized(X))

    def save(self, path: str) -> None:
        save_model(path, self)


# ---------------------------------------------------------------------------
# persistence


def _params_jsonable(params: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def save_model(path: str, estimator) -> None:
    """Versioned dump of a fitted estimator: scaler, partition, networks, config."""
    estimator._require_fitted()
    arrays = {
        "scaler_mean": estimator.scaler_.mean,
        "scaler_std": estimator.scaler_.std,
    }
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": estimator._kind,
        "task": estimator.task_,
        "class_count": estimator.class_count_,
        "class_names": list(estimator.class_names_) if estimator.class_names_ else None,
        "feature_names": list(estimator.feature_names_),
        "n_features": estimator.n_features_,
        "params": _params_jsonable(estimator.get_params()),
        "fit_report": estimator.fit_report_,
        "networks": {},
    }
    if isinstance(estimator, _GatedEnsemble):
        arrays["centroids"] = estimator.cluster_model_.centroids
        meta["n_experts_fitted"] = len(estimator.experts_)
        for e, expert in enumerate(estimator.experts_):
            state, net_meta = mlp_state(expert)
            meta["networks"][f"expert{e}"] = net_meta
            for name, arr in state.items():
                arrays[f"expert{e}_{name}"] = arr
        state, net_meta = mlp_state(estimator.gate_)
        meta["networks"]["gate"] = net_meta
        for name, arr in state.items():
            arrays[f"gate_{name}"] = arr
    else:
        state, net_meta = mlp_state(estimator.net_)
        meta["networks"]["net"] = net_meta
        for name, arr in state.items():
            arrays[f"net_{name}"] = arr
    save_arrays(path, arrays, meta)


def _net_from(arrays: dict, meta: dict, prefix: str) -> Mlp:
    net_meta = meta["networks"][prefix]
    state = {
        name[len(prefix) + 1 :]: arr
        for name, arr in arrays.items()
        if name.startswith(prefix + "_")
    }
    return mlp_from_state(state, net_meta)


def load_model(path: str):
    """Rebuild a fitted estimator saved by :func:`save_model`; round-trip exact."""
    from .data import Scaler

    arrays, meta = load_arrays(path)
    if meta is None or "kind" not in meta:
        raise SchemaError(f"{path} is not a model dump")
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaError(f"unsupported model format version {meta.get('format_version')!r}")
    classes = {"umoe": UMoE, "moe": BaselineMoE, "nn": BaselineNN}
    kind = meta["kind"]
    if kind not in classes:
        raise SchemaError(f"unknown model kind {kind!r}")
    params = dict(meta["params"])
    if "hidden_layers" in params:
        params["hidden_layers"] = tuple(params["hidden_layers"])
    estimator = classes[kind](**params)
    estimator.task_ = meta["task"]
    estimator.class_count_ = meta["class_count"]
    estimator.class_names_ = tuple(meta["class_names"]) if meta["class_names"] else None
    estimator.feature_names_ = tuple(meta["feature_names"])
    estimator.n_features_ = int(meta["n_features"])
    estimator.scaler_ = Scaler(np.array(arrays["scaler_mean"]), np.array(arrays["scaler_std"]))
    estimator.fit_report_ = meta["fit_report"]
    if kind in ("umoe", "moe"):
        estimator.cluster_model_ = ClusterModel(np.array(arrays["centroids"]))
        estimator.experts_ = [
            _net_from(arrays, meta, f"expert{e}") for e in range(int(meta["n_experts_fitted"]))
        ]
        estimator.gate_ = _net_from(arrays, meta, "gate")
    else:
        estimator.net_ = _net_from(arrays, meta, "net")
    return estimator
