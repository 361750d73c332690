"""K-means partitioning of the completed feature space.

The partition is always fit in the full standardized feature space:
sample points over an instance's uncertain dimensions are completed with
that instance's certain attribute values before clustering, so one global
partition covers instances with different uncertain-dimension sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import FitError, InputError

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .density import FilteredSamples

MAX_LLOYD_ITERATIONS = 300


def complete_rows(
    points,
    uncertain_dims: Sequence[int] | None,
    certain_values,
    n_features: int,
) -> np.ndarray:
    """Scatter points over the uncertain dimensions into full feature vectors.

    ``points`` has one column per uncertain dimension; the remaining
    feature positions are filled with ``certain_values`` (given in
    ascending order of the certain dimensions). When the points already
    span all ``n_features`` dimensions they are returned as-is.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dims = list(range(pts.shape[1])) if uncertain_dims is None else [int(d) for d in uncertain_dims]
    if pts.shape[1] != len(dims):
        raise InputError(f"points have {pts.shape[1]} columns but {len(dims)} uncertain dims given")
    if len(dims) == n_features:
        return pts
    if certain_values is None:
        raise InputError("certain_values required when points do not span the feature space")
    certain = np.asarray(certain_values, dtype=float)
    out = np.empty((pts.shape[0], n_features), dtype=float)
    out[:, dims] = pts
    other = [d for d in range(n_features) if d not in set(dims)]
    if certain.shape[-1] != len(other):
        raise InputError(f"expected {len(other)} certain values, got {certain.shape[-1]}")
    out[:, other] = certain
    return out


@dataclass
class ClusterModel:
    """A fitted k-means partition. Assignment is nearest centroid, ties to the lowest index."""

    centroids: np.ndarray
    seed: int = 0
    inertia_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.centroids = np.ascontiguousarray(np.atleast_2d(np.asarray(self.centroids, dtype=float)))
        if self.centroids.size == 0:
            raise InputError("centroids must be nonempty")

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_features(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class ClusterProbabilityVector:
    """Relative frequencies of one instance's filtered samples across the clusters."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise InputError("probs must be a nonempty vector")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InputError("probabilities must lie in [0, 1]")


def _squared_distances(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||r - c||^2 expanded; clip tiny negative round-off.
    d2 = (
        np.sum(rows * rows, axis=1)[:, None]
        - 2.0 * rows @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _assignment_scores(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """||r - c||^2 minus the per-row constant ||r||^2: same argmin, fewer flops.

    Every nearest-centroid assignment in the package goes through this so
    tie behavior is identical between fitting and later assignment.
    """
    return np.sum(centroids * centroids, axis=1)[None, :] - 2.0 * rows @ centroids.T


def _plus_plus_init(rows: np.ndarray, e_count: int, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.integers(rows.shape[0]))
    centroids = [rows[first]]
    d2 = np.sum((rows - rows[first]) ** 2, axis=1)
    for _ in range(1, e_count):
        total = float(d2.sum())
        if total <= 0.0:
            raise FitError(f"fewer than {e_count} distinct rows; cannot seed that many clusters")
        nxt = int(rng.choice(rows.shape[0], p=d2 / total))
        centroids.append(rows[nxt])
        d2 = np.minimum(d2, np.sum((rows - rows[nxt]) ** 2, axis=1))
    return np.array(centroids)


def _update_centroids(
    rows: np.ndarray, labels: np.ndarray, dist_to_assigned: np.ndarray, e_count: int
) -> np.ndarray:
    """Mean update; an empty cluster is reseeded to the point farthest from its assigned centroid."""
    counts = np.bincount(labels, minlength=e_count)
    sums = np.column_stack(
        [np.bincount(labels, weights=rows[:, d], minlength=e_count) for d in range(rows.shape[1])]
    )
    centroids = np.zeros_like(sums)
    nonempty = counts > 0
    centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    if not nonempty.all():
        farthest = dist_to_assigned.copy()
        for j in np.flatnonzero(~nonempty):
            pick = int(np.argmax(farthest))
            centroids[j] = rows[pick]
            farthest[pick] = -np.inf
    return centroids


def fit_kmeans(rows, e_count: int, seed: int) -> ClusterModel:
    """Seeded k-means++ followed by Lloyd iterations until the assignment is a fixpoint.

    Deterministic given (rows, e_count, seed). Raises :class:`FitError`
    when there are fewer distinct rows than requested clusters.
    """
    rows = np.ascontiguousarray(np.atleast_2d(np.asarray(rows, dtype=float)))
    if e_count < 1:
        raise InputError(f"e_count must be >= 1, got {e_count}")
    if rows.shape[0] < e_count:
        raise FitError(f"{rows.shape[0]} rows cannot support {e_count} clusters")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(rows, e_count, rng)
    labels = None
    history: list[float] = []
    row_norms = np.sum(rows * rows, axis=1)
    indices = np.arange(rows.shape[0])
    for _ in range(MAX_LLOYD_ITERATIONS):
        scores = _assignment_scores(rows, centroids)
        new_labels = np.argmin(scores, axis=1)
        assigned = np.maximum(row_norms + scores[indices, new_labels], 0.0)
        history.append(float(assigned.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = _update_centroids(rows, labels, assigned, e_count)
    return ClusterModel(centroids=centroids, seed=int(seed), inertia_history=history)


def assign_points(model: ClusterModel, points) -> np.ndarray:
    """Nearest-centroid index for each row of ``points`` (ties to the lowest index)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.n_features:
        raise InputError(f"points have {pts.shape[1]} dims, model has {model.n_features}")
    return np.argmin(_assignment_scores(pts, model.centroids), axis=1)


def assign(model: ClusterModel, x) -> int:
    """Cluster index of a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("assign expects a single point; use assign_points for batches")
    return int(assign_points(model, x[None, :])[0])


def cluster_probabilities(
    model: ClusterModel,
    filtered: "FilteredSamples",
    certain_values=None,
    uncertain_dims: Sequence[int] | None = None,
) -> ClusterProbabilityVector:
    """Relative cluster frequencies of the filtered samples, completed with the certain values."""
    points = filtered.points
    if len(points) == 0:
        raise InputError("filtered sample set is empty")
    completed = complete_rows(points, uncertain_dims, certain_values, model.n_features)
    labels = assign_points(model, completed)
    counts = np.bincount(labels, minlength=model.n_clusters)
    return ClusterProbabilityVector(counts / float(len(points)))


def dominant_cluster(vector: ClusterProbabilityVector) -> tuple[int, float]:
    """Index and share of the cluster holding the most probability mass (ties to the lowest index)."""
    idx = int(np.argmax(vector.probs))
    return idx, float(vector.probs[idx])
