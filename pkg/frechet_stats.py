"""
Frechet mean and variance on the supported group manifolds.

The Frechet functional F(m) = sum_i w_i d(m, g_i)^2 separates over the
factors of a product manifold, so every statistic is computed leaf by
leaf and recombined:

    SO2       Karcher iteration seeded from the best minimizer of each arc between
              consecutive antipodal points, where the functional is a quadratic
    Cn        exhaustive search over the n group elements
    LogScale  weighted arithmetic mean (the leaf is flat)
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from group_core import (
    CYCLIC,
    SO2,
    TWO_PI,
    GroupElement,
    GroupManifold,
    ManifoldMismatchError,
    leaf_canonical,
    leaf_delta,
    geodesic_distance,
    squared_distances,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200

# Relative slack under which two functional values count as a tie
TIE_TOL = 1e-12

# Arc minimizers this close to the best one are all polished by Karcher
SEED_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class WeightedPoseSample:
    """A finite weighted sample of poses on one manifold."""
    manifold: GroupManifold
    coords: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.coords.ndim != 2 or self.coords.shape[0] == 0:
            raise ValueError("A pose sample needs at least one element")
        if self.coords.shape[1] != self.manifold.dim:
            raise ValueError(
                f"Coordinates have {self.coords.shape[1]} columns, {self.manifold.name} needs {self.manifold.dim}"
            )
        if self.weights.shape != (self.coords.shape[0],):
            raise ValueError("Expected one weight per element")
        if np.any(self.weights < 0):
            raise ValueError("Sample weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"Sample weights must sum to 1, got {self.weights.sum()}")

    @classmethod
    def from_coords(
        cls,
        manifold: GroupManifold,
        coords: np.ndarray,
        weights: Optional[Sequence[float]] = None
    ) -> 'WeightedPoseSample':
        """Build a sample from an (n, dim) array, normalizing the weights (uniform by default)."""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape[0] == 0:
            raise ValueError("A pose sample needs at least one element")
        if weights is None:
            w = np.full(coords.shape[0], 1.0 / coords.shape[0])
        else:
            w = np.asarray(weights, dtype=float)
            total = w.sum()
            if total <= 0:
                raise ValueError("Sample weights must have a positive sum")
            w = w / total
        return cls(manifold, coords, w)

    @classmethod
    def from_elements(
        cls,
        elements: Sequence[GroupElement],
        weights: Optional[Sequence[float]] = None
    ) -> 'WeightedPoseSample':
        if not elements:
            raise ValueError("A pose sample needs at least one element")
        manifold = elements[0].manifold
        return cls.from_coords(manifold, manifold.coords_array(elements), weights)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def elements(self) -> list[GroupElement]:
        return [GroupElement(self.manifold, tuple(row)) for row in self.coords]

    def mix(self, other: 'WeightedPoseSample', alpha: float) -> 'WeightedPoseSample':
        """Mixture (1 - alpha) * self + alpha * other on the concatenated sample."""
        _check_manifold(self.manifold, other.manifold)
        coords = np.vstack([self.coords, other.coords])
        weights = np.concatenate([(1.0 - alpha) * self.weights, alpha * other.weights])
        return WeightedPoseSample(self.manifold, coords, weights / weights.sum())

    def translated(self, a: GroupElement) -> 'WeightedPoseSample':
        """Left translation {a o g_i} with unchanged weights."""
        _check_manifold(self.manifold, a.manifold)
        moved = np.empty_like(self.coords)
        for i, leaf in enumerate(self.manifold.leaves):
            moved[:, i] = leaf_canonical(leaf, self.coords[:, i] + a.coords[i])
        return WeightedPoseSample(self.manifold, moved, self.weights)


@dataclass(frozen=True)
class FrechetSummary:
    mean: GroupElement
    variance: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class MixtureDecomposition:
    """
    Five-term accounting of a mixture's Frechet variance.

    sigma2_next = kept_term + updated_term + drift_kept + drift_updated + residual
    """
    alpha: float
    sigma2_next: float
    kept_term: float
    updated_term: float
    drift_kept: float
    drift_updated: float
    residual: float
    sigma2_kept: float
    sigma2_updated: float
    mu_kept: Optional[GroupElement]
    mu_updated: GroupElement
    mu_next: GroupElement

    @property
    def drift_total(self) -> float:
        return self.drift_kept + self.drift_updated

    @property
    def terms_sum(self) -> float:
        return self.kept_term + self.updated_term + self.drift_kept + self.drift_updated + self.residual


def _check_manifold(a: GroupManifold, b: GroupManifold):
    if a != b:
        raise ManifoldMismatchError(f"Samples live on {a.name} and {b.name}")


def frechet_functional(sample: WeightedPoseSample, candidates: np.ndarray) -> np.ndarray:
    """Frechet functional evaluated at each candidate row, shape (m,)."""
    return squared_distances(sample.manifold, candidates, sample.coords) @ sample.weights


def _leaf_functional(leaf: GroupManifold, points: np.ndarray, weights: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    return squared_distances(leaf, candidates.reshape(-1, 1), points.reshape(-1, 1)) @ weights


def _pick_tied_minimum(candidates: np.ndarray, values: np.ndarray) -> int:
    """Index of the smallest candidate among those tied for the minimum value."""
    best = float(values.min())
    tied = np.flatnonzero(values <= best + TIE_TOL * max(1.0, abs(best)))
    return int(tied[np.argmin(candidates[tied])])


def _karcher_circle(
    circle: GroupManifold,
    points: np.ndarray,
    weights: np.ndarray,
    start: float,
    tol: float,
    max_iter: int
) -> tuple[float, bool, int]:
    mu = float(start)
    for iteration in range(1, max_iter + 1):
        step = float(weights @ leaf_delta(circle, mu, points))
        mu = float(leaf_canonical(circle, np.asarray(mu + step)))
        if abs(step) < tol:
            if TWO_PI - mu < TIE_TOL:
                mu = 0.0
            return mu, True, iteration
    return mu, False, max_iter


def _arc_minimizers(points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Minimizer of the circular Frechet functional on every arc between
    consecutive antipodal points, with the functional value there.

    On such an arc no sample wraps, so F(c + d) = S2 - 2 d S1 + d^2 W with
    S1, S2 the weighted sums of the offsets seen from the arc center c.
    Sums over each half-circle window come from prefix sums over three
    unrolled copies of the sorted samples, so the whole sweep is O(n log n).
    """
    order = np.argsort(points, kind='stable')
    xs, ws = points[order], weights[order]
    ext_x = np.concatenate([xs - TWO_PI, xs, xs + TWO_PI])
    ext_w = np.tile(ws, 3)
    c0 = np.concatenate([[0.0], np.cumsum(ext_w)])
    c1 = np.concatenate([[0.0], np.cumsum(ext_w * ext_x)])
    c2 = np.concatenate([[0.0], np.cumsum(ext_w * ext_x ** 2)])

    antipodes = np.sort(np.mod(points + np.pi, TWO_PI))
    ends = np.append(antipodes[1:], antipodes[0] + TWO_PI)
    centers = 0.5 * (antipodes + ends)
    half = 0.5 * (ends - antipodes)

    # Offsets wrap into (-pi, pi]
    lo = np.searchsorted(ext_x, centers - np.pi, side='right')
    hi = np.searchsorted(ext_x, centers + np.pi, side='right')
    total = c0[hi] - c0[lo]
    first = c1[hi] - c1[lo]
    second = c2[hi] - c2[lo]
    s1 = first - centers * total
    s2 = second - 2.0 * centers * first + centers ** 2 * total

    delta = np.clip(s1 / total, -half, half)
    values = s2 - 2.0 * delta * s1 + delta ** 2 * total
    return np.mod(centers + delta, TWO_PI), values


def _circle_mean(
    leaf: GroupManifold,
    points: np.ndarray,
    weights: np.ndarray,
    init: Optional[float],
    tol: float,
    max_iter: int
) -> tuple[float, bool, int]:
    if init is not None:
        starts = np.array([init])
    else:
        candidates, values = _arc_minimizers(points, weights)
        starts = candidates[values <= values.min() + SEED_TOL]

    runs = [_karcher_circle(leaf, points, weights, s, tol, max_iter) for s in starts]
    means = np.array([r[0] for r in runs])
    values = _leaf_functional(leaf, points, weights, means)
    best = _pick_tied_minimum(means, values)
    return runs[best]


def _leaf_mean(
    leaf: GroupManifold,
    points: np.ndarray,
    weights: np.ndarray,
    init: Optional[float],
    tol: float,
    max_iter: int
) -> tuple[float, bool, int]:
    if leaf.kind == SO2:
        return _circle_mean(leaf, points, weights, init, tol, max_iter)
    if leaf.kind == CYCLIC:
        candidates = np.arange(leaf.order, dtype=float)
        values = _leaf_functional(leaf, points, weights, candidates)
        return float(candidates[_pick_tied_minimum(candidates, values)]), True, 1
    # Flat leaf: the weighted mean is the exact minimizer and lies inside the bounds
    return float(weights @ points), True, 1


def frechet_mean(
    sample: WeightedPoseSample,
    init: Optional[GroupElement] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER
) -> FrechetSummary:
    """
    Frechet mean by Karcher iteration.

    Args:
        sample: Weighted poses
        init: Optional starting point (skips the grid seeding)
        tol: Stop once the weighted tangent mean is shorter than this
        max_iter: Iteration cap; hitting it yields converged=False

    Returns:
        FrechetSummary. Among tied minimizers the smallest coordinate wins.
    """
    manifold = sample.manifold
    if init is not None:
        _check_manifold(manifold, init.manifold)

    coords, converged, iterations = [], True, 0
    for i, leaf in enumerate(manifold.leaves):
        start = None if init is None else init.coords[i]
        value, ok, its = _leaf_mean(leaf, sample.coords[:, i], sample.weights, start, tol, max_iter)
        coords.append(value)
        converged = converged and ok
        iterations = max(iterations, its)

    mean = manifold.from_array(np.array(coords))
    if not converged:
        logger.warning(f"Karcher iteration did not converge within {max_iter} iterations on {manifold.name}")
    return FrechetSummary(
        mean=mean,
        variance=frechet_variance(sample, mean),
        converged=converged,
        iterations=iterations,
    )


def frechet_mean_oracle(sample: WeightedPoseSample, grid_points: int = 3600) -> FrechetSummary:
    """
    Brute-force Frechet mean: argmin of the functional over a uniform grid.

    Continuous factors use grid_points cells plus the sample's own coordinates
    (so a one-point sample returns that point exactly); Cn uses all n elements.
    """
    if grid_points < 8:
        raise ValueError(f"Oracle grid needs at least 8 points, got {grid_points}")
    manifold = sample.manifold
    coords = []
    for i, leaf in enumerate(manifold.leaves):
        points = sample.coords[:, i]
        if leaf.kind == SO2:
            grid = np.arange(grid_points) * (TWO_PI / grid_points)
            candidates = np.unique(np.concatenate([grid, points]))
        elif leaf.kind == CYCLIC:
            candidates = np.arange(leaf.order, dtype=float)
        else:
            grid = np.linspace(leaf.log_min, leaf.log_max, grid_points)
            candidates = np.unique(np.concatenate([grid, points]))
        values = _leaf_functional(leaf, points, sample.weights, candidates)
        coords.append(float(candidates[_pick_tied_minimum(candidates, values)]))

    mean = manifold.from_array(np.array(coords))
    return FrechetSummary(mean=mean, variance=frechet_variance(sample, mean), converged=True, iterations=0)


def frechet_variance(sample: WeightedPoseSample, mean: GroupElement) -> float:
    """Weighted mean squared geodesic distance to mean."""
    _check_manifold(sample.manifold, mean.manifold)
    return float(frechet_functional(sample, mean.as_array().reshape(1, -1))[0])


def mixture_decomposition(
    kept: Optional[WeightedPoseSample],
    updated: WeightedPoseSample,
    alpha: float,
    tol: float = DEFAULT_TOL
) -> MixtureDecomposition:
    """
    Split the Frechet variance of (1 - alpha) * kept + alpha * updated into
    component variances, mean-drift terms and a residual.

    The mixture variance is always measured on the concatenated weighted
    sample; the residual is whatever the four modelled terms do not explain
    (zero on flat geometry).

    Args:
        kept: Unchanged part of the dataset (may be None when alpha == 1)
        updated: Re-aligned part of the dataset
        alpha: Mixture weight of the updated part, in (0, 1]
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if kept is None and alpha < 1.0:
        raise ValueError("A kept sample is required when alpha < 1")

    upd = frechet_mean(updated, tol=tol)
    if alpha < 1.0:
        _check_manifold(kept.manifold, updated.manifold)
        old = frechet_mean(kept, tol=tol)
        mixed = kept.mix(updated, alpha)
    else:
        old = None
        mixed = updated
    nxt = frechet_mean(mixed, tol=tol)

    kept_term = (1.0 - alpha) * old.variance if old else 0.0
    updated_term = alpha * upd.variance
    drift_kept = (1.0 - alpha) * geodesic_distance(old.mean, nxt.mean) ** 2 if old else 0.0
    drift_updated = alpha * geodesic_distance(upd.mean, nxt.mean) ** 2
    residual = nxt.variance - (kept_term + updated_term + drift_kept + drift_updated)

    return MixtureDecomposition(
        alpha=alpha,
        sigma2_next=nxt.variance,
        kept_term=kept_term,
        updated_term=updated_term,
        drift_kept=drift_kept,
        drift_updated=drift_updated,
        residual=residual,
        sigma2_kept=old.variance if old else 0.0,
        sigma2_updated=upd.variance,
        mu_kept=old.mean if old else None,
        mu_updated=upd.mean,
        mu_next=nxt.mean,
    )
