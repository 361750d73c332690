"""Kernel-mixture densities over the uncertain attributes of one instance.

A density model is an equal-weight mixture of isotropic Gaussian kernels
in standardized feature units, which keeps the density, its gradient and
its mean analytic. All operations are pure functions of their inputs;
sampling takes an explicit seed, so every result is reproducible.

Mode search is a deterministic multi-start ascent. Each step moves a
candidate to the kernel-weighted mean of the centers, which is the
analytic density gradient rescaled by a positive factor, so the density
is non-decreasing along every ascent path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .partition import ClusterModel, assign_points, complete_rows
from .validation import decimal_ceil

# Two ascent results whose densities agree within this relative window are
# treated as tied; the lexicographically smallest location wins.
_TIE_REL_TOL = 1e-9


@dataclass(frozen=True)
class ModeSearchConfig:
    """Settings for the multi-start density ascent."""

    n_starts: int = 10
    step_tol: float = 1e-8
    max_iter: int = 500
    sample_count: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise InputError("n_starts must be >= 1")
        if not self.step_tol > 0:
            raise InputError("step_tol must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")
        if self.sample_count < 0:
            raise InputError("sample_count must be >= 0")


@dataclass(frozen=True)
class DensityModel:
    """Equal-weight Gaussian-kernel mixture over an instance's uncertain dimensions.

    Parameters
    ----------
    centers : (n_kernels, n_dims) array
        Kernel locations in standardized units.
    bandwidth : float
        Shared isotropic kernel width per dimension, standardized units.
    uncertain_dims : tuple of int
        Original feature indices the model covers, strictly increasing.
    """

    centers: np.ndarray
    bandwidth: float
    uncertain_dims: tuple[int, ...]

    def __post_init__(self) -> None:
        centers = np.ascontiguousarray(np.atleast_2d(np.asarray(self.centers, dtype=float)))
        object.__setattr__(self, "centers", centers)
        dims = tuple(int(d) for d in self.uncertain_dims)
        object.__setattr__(self, "uncertain_dims", dims)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        if centers.size == 0:
            raise InputError("centers must be nonempty")
        if not np.all(np.isfinite(centers)):
            raise InputError("centers must be finite")
        if not self.bandwidth > 0:
            raise InputError(f"bandwidth must be positive, got {self.bandwidth}")
        if len(dims) != centers.shape[1]:
            raise InputError(
                f"{len(dims)} uncertain dims do not match center dimension {centers.shape[1]}"
            )
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise InputError("uncertain_dims must be strictly increasing")

    @property
    def n_dims(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class SampleSet:
    """Points drawn from a density model together with their density values."""

    points: np.ndarray
    densities: np.ndarray
    seed: int

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FilteredSamples:
    """The highest-density share of a sample set."""

    points: np.ndarray
    densities: np.ndarray
    p: float
    kept_count: int


@dataclass(frozen=True)
class ModePoint:
    """A located density maximum. ``kind`` is "global" or "local"; local modes carry their cluster."""

    location: np.ndarray
    density_value: float
    kind: str
    cluster: int | None = None


def _density_batch(centers: np.ndarray, bandwidth: float, points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    sq = np.einsum("ncd,ncd->nc", diff, diff)
    norm = (2.0 * math.pi * bandwidth * bandwidth) ** (-centers.shape[1] / 2.0)
    return norm * np.exp(-0.5 * sq / (bandwidth * bandwidth)).mean(axis=1)


def density(model: DensityModel, x) -> float | np.ndarray:
    """Mixture density at ``x`` (one point, or a stack of points one per row)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != model.n_dims:
        raise InputError(f"point has {pts.shape[1]} dims, model has {model.n_dims}")
    values = _density_batch(model.centers, model.bandwidth, pts)
    return float(values[0]) if single else values


def sample(model: DensityModel, m: int, seed: int) -> SampleSet:
    """Draw ``m`` points: a uniformly chosen kernel center plus Gaussian noise of width h.

    Bit-identical for equal (model, m, seed).
    """
    if m < 0:
        raise InputError(f"sample count must be >= 0, got {m}")
    if m == 0:
        return SampleSet(np.empty((0, model.n_dims)), np.empty(0), int(seed))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, model.centers.shape[0], size=m)
    points = model.centers[idx] + model.bandwidth * rng.standard_normal((m, model.n_dims))
    return SampleSet(points, _density_batch(model.centers, model.bandwidth, points), int(seed))


def filter_top_p(samples: SampleSet, p: float) -> FilteredSamples:
    """Keep the ceil(p * M) samples of highest density.

    Ties at the cutoff density are broken by original sample index
    (earlier-drawn samples are kept first). The kept count follows the
    decimal value of ``p``, guarded against float drift in ``p * M``.
    """
    if not (0.0 < p <= 1.0):
        raise InputError(f"p must lie in (0, 1], got {p}")
    m = len(samples)
    if m < 1:
        raise InputError("cannot filter an empty sample set")
    kept = min(max(decimal_ceil(p, m), 1), m)
    order = np.argsort(-samples.densities, kind="stable")[:kept]
    return FilteredSamples(
        points=samples.points[order],
        densities=samples.densities[order],
        p=float(p),
        kept_count=kept,
    )


def pdf_mean(model: DensityModel) -> np.ndarray:
    """Analytic mixture mean: the arithmetic mean of the kernel centers."""
    return model.centers.mean(axis=0)


def _ascend(
    centers: np.ndarray,
    bandwidth: float,
    starts: np.ndarray,
    config: ModeSearchConfig,
    member=None,
) -> np.ndarray:
    """Iterate kernel-weighted-mean steps from each start until the step is tiny.

    ``member`` (optional) maps candidate points to a boolean mask; a
    candidate whose proposal leaves the member region is frozen at its
    last accepted (in-region) location.
    """
    x = np.array(starts, dtype=float)
    h2 = bandwidth * bandwidth
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(config.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = x[idx]
        diff = cur[:, None, :] - centers[None, :, :]
        w = np.exp(-0.5 * np.einsum("scd,scd->sc", diff, diff) / h2)
        total = w.sum(axis=1)
        proposal = cur.copy()
        moved = total > 0
        proposal[moved] = (w[moved] @ centers) / total[moved, None]
        ok = np.ones(idx.size, dtype=bool) if member is None else np.asarray(member(proposal))
        step = np.abs(proposal - cur).max(axis=1)
        accepted = ok & moved
        x[idx[accepted]] = proposal[accepted]
        frozen = ~accepted | (step < config.step_tol)
        active[idx[frozen]] = False
    return x


def _pick_best(centers: np.ndarray, bandwidth: float, candidates: np.ndarray) -> tuple[np.ndarray, float]:
    """Highest-density candidate; near-ties resolved to the lexicographically smallest location."""
    values = _density_batch(centers, bandwidth, candidates)
    best = values.max()
    pool = candidates[values >= best * (1.0 - _TIE_REL_TOL)]
    order = np.lexsort(pool.T[::-1])
    location = np.array(pool[order[0]])
    value = float(_density_batch(centers, bandwidth, location[None, :])[0])
    return location, value


def _top_rows(points: np.ndarray, values: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(-values, kind="stable")[:count]
    return points[order]


def global_mode_from_samples(model: DensityModel, samples: SampleSet, search: ModeSearchConfig) -> ModePoint:
    """Global mode estimate seeded from the best kernel centers and the best given samples."""
    centers = model.centers
    if np.all(centers == centers[0]):
        loc = centers[0].copy()
        return ModePoint(loc, float(density(model, loc)), "global")
    center_densities = _density_batch(centers, model.bandwidth, centers)
    starts = [_top_rows(centers, center_densities, search.n_starts)]
    if len(samples) > 0:
        starts.append(_top_rows(samples.points, samples.densities, search.n_starts))
    finals = _ascend(centers, model.bandwidth, np.vstack(starts), search)
    location, value = _pick_best(centers, model.bandwidth, finals)
    return ModePoint(location, value, "global")


def global_mode(model: DensityModel, search: ModeSearchConfig = ModeSearchConfig()) -> ModePoint:
    """Best density maximum found by multi-start ascent over the whole space.

    Starts are the ``n_starts`` highest-density kernel centers plus the
    ``n_starts`` highest-density points of a seeded ``sample_count`` draw.
    """
    pool = sample(model, search.sample_count, search.seed)
    return global_mode_from_samples(model, pool, search)


def local_mode(
    model: DensityModel,
    partition: ClusterModel,
    target: int,
    filtered: FilteredSamples,
    search: ModeSearchConfig = ModeSearchConfig(),
    certain_values=None,
) -> ModePoint:
    """Density maximum restricted to the target cluster's nearest-centroid cell.

    Ascents are seeded from the highest-density filtered samples lying in
    the cell (plus any kernel centers in the cell); a proposal that leaves
    the cell freezes its path at the last in-cell point, so the result is
    always assigned to ``target``.
    """

    def member(points: np.ndarray) -> np.ndarray:
        full = complete_rows(points, model.uncertain_dims, certain_values, partition.n_features)
        return assign_points(partition, full) == target

    inside = member(filtered.points)
    if not inside.any():
        raise InputError(f"no filtered sample lies in cluster {target}'s cell")
    starts = [_top_rows(filtered.points[inside], filtered.densities[inside], search.n_starts)]
    centers_inside = member(model.centers)
    if centers_inside.any():
        starts.append(model.centers[centers_inside])
    finals = _ascend(model.centers, model.bandwidth, np.vstack(starts), search, member=member)
    location, value = _pick_best(model.centers, model.bandwidth, finals)
    return ModePoint(location, value, "local", cluster=int(target))
