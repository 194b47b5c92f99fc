"""
Synthetic specimens, scoring-function canonicalizers and the toy classifier.

Specimens are 2-D point sets, so every group action is an exact matrix
product and no resampling happens. A specimen keeps its canonical shape,
the pose it was drawn with and the composition of all corrections applied
so far; its observed shape is produced on demand from those.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, softmax

from frechet_stats import WeightedPoseSample
from group_core import (
    CYCLIC,
    LOG_SCALE,
    SO2,
    TWO_PI,
    GroupElement,
    GroupManifold,
    PoseDistribution,
    compose,
    compose_coords,
    exp_coords,
    inverse,
    inverse_coords,
    leaf_canonical,
    linear_parts,
    representation,
    sample_coords,
    squared_distances,
)

logger = logging.getLogger(__name__)

ORACLE = 'oracle'
NOISY = 'noisy'
TEMPLATE = 'template'
IDENTITY = 'identity'
VARIANTS = (ORACLE, NOISY, TEMPLATE, IDENTITY)

NOISE_VON_MISES = 'vonmises'
NOISE_WRAPPED_NORMAL = 'wrapnorm'

# Specimens scored per chunk when evaluating a template over a grid
SCORE_CHUNK = 64

# Scores closer than this (relative) are treated as tied grid cells
SCORE_TIE_TOL = 1e-9

REFINE_XTOL = 1e-6
REFINE_SWEEPS = 2


@dataclass(frozen=True, eq=False)
class Specimen:
    """
    A labeled synthetic object.

    observed = rho(true_pose o inverse(accumulated_correction)) . canonical_shape
    """
    id: int
    class_label: int
    canonical_shape: np.ndarray
    true_pose: GroupElement
    accumulated_correction: GroupElement

    @property
    def manifold(self) -> GroupManifold:
        return self.true_pose.manifold

    @property
    def pose(self) -> GroupElement:
        """Residual misalignment still present in the observed shape."""
        return compose(self.true_pose, inverse(self.accumulated_correction))

    def observed_shape(self) -> np.ndarray:
        return representation(self.pose).apply(self.canonical_shape)

    def with_correction(self, g_hat: GroupElement) -> 'Specimen':
        """Undo a predicted pose: x <- rho(g_hat)^-1 x, recorded as a composed correction."""
        return replace(self, accumulated_correction=compose(g_hat, self.accumulated_correction))

    def transformed(self, h: GroupElement) -> 'Specimen':
        """The specimen rho(h) x."""
        return replace(self, true_pose=compose(h, self.true_pose))

    def at_pose(self, g: GroupElement) -> 'Specimen':
        """Same shape placed at pose g with no corrections."""
        return replace(self, true_pose=g, accumulated_correction=g.manifold.identity())


@dataclass(frozen=True, eq=False)
class DatasetState:
    """The dataset D_t at bootstrap step t."""
    manifold: GroupManifold
    specimens: tuple
    step_t: int = 0

    def __len__(self) -> int:
        return len(self.specimens)

    def poses_array(self) -> np.ndarray:
        """Residual poses of all specimens, shape (n, dim)."""
        return poses_array(self.manifold, self.specimens)

    def pose_sample(self) -> WeightedPoseSample:
        return WeightedPoseSample.from_coords(self.manifold, self.poses_array())


def poses_array(manifold: GroupManifold, specimens: Sequence[Specimen]) -> np.ndarray:
    if not specimens:
        return np.zeros((0, manifold.dim))
    truth = manifold.coords_array([s.true_pose for s in specimens])
    corrections = manifold.coords_array([s.accumulated_correction for s in specimens])
    return compose_coords(manifold, truth, inverse_coords(manifold, corrections))


# Shapes and datasets

@dataclass(frozen=True)
class DatasetSpec:
    """How to generate a synthetic dataset."""
    manifold: GroupManifold
    num_classes: int
    per_class: int
    pose_dist: PoseDistribution
    shape_seed: int
    seed: Optional[int] = None
    points_per_shape: int = 12
    class_spread: float = 0.3
    jitter: float = 0.02

    def __post_init__(self):
        if self.num_classes < 1 or self.per_class < 1:
            raise ValueError("Dataset needs at least one class and one specimen per class")
        if self.points_per_shape < 3:
            raise ValueError("Shapes need at least 3 points")

    @property
    def specimen_seed(self) -> int:
        return self.shape_seed if self.seed is None else self.seed

    def to_dict(self) -> dict:
        return {
            'manifold': self.manifold.name,
            'num_classes': self.num_classes,
            'per_class': self.per_class,
            'pose_dist': self.pose_dist.to_text(),
            'shape_seed': self.shape_seed,
            'seed': self.specimen_seed,
            'points_per_shape': self.points_per_shape,
            'class_spread': self.class_spread,
            'jitter': self.jitter,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'DatasetSpec':
        return cls(
            manifold=GroupManifold.parse(data['manifold']),
            num_classes=int(data['num_classes']),
            per_class=int(data['per_class']),
            pose_dist=PoseDistribution.parse(data['pose_dist']),
            shape_seed=int(data['shape_seed']),
            seed=int(data['seed']),
            points_per_shape=int(data['points_per_shape']),
            class_spread=float(data['class_spread']),
            jitter=float(data['jitter']),
        )


def normalize_shape(points: np.ndarray) -> np.ndarray:
    """Scale a point set into the unit disc (largest radius 1)."""
    radius = np.max(np.linalg.norm(points, axis=-1))
    return points / radius if radius > 0 else points


def random_shape(rng: np.random.Generator, num_points: int) -> np.ndarray:
    """Asymmetric star polygon around the origin, unit-disc normalized."""
    angles = (np.arange(num_points) + rng.uniform(-0.3, 0.3, num_points)) * (TWO_PI / num_points)
    radii = rng.uniform(0.35, 1.0, num_points)
    return normalize_shape(np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1))


def symmetric_shape(fold: int, points_per_arm: int = 3, seed: int = 0) -> np.ndarray:
    """Shape with a fold-fold rotational stabilizer: one random arm repeated around the circle."""
    rng = np.random.default_rng(seed)
    angles = np.sort(rng.uniform(0.0, TWO_PI / fold, points_per_arm))
    radii = rng.uniform(0.35, 1.0, points_per_arm)
    arms = []
    for k in range(fold):
        a = angles + k * TWO_PI / fold
        arms.append(np.stack([radii * np.cos(a), radii * np.sin(a)], axis=1))
    return normalize_shape(np.concatenate(arms))


def class_shapes(spec: DatasetSpec) -> np.ndarray:
    """Per-class shapes, (num_classes, points, 2), shared body plan plus class offsets."""
    rng = np.random.default_rng(spec.shape_seed)
    base = random_shape(rng, spec.points_per_shape)
    shapes = [
        normalize_shape(base + spec.class_spread * rng.normal(size=base.shape))
        for _ in range(spec.num_classes)
    ]
    return np.stack(shapes)


def _build_specimens(spec: DatasetSpec, seed: int, per_class: int, poses: Optional[np.ndarray]) -> tuple:
    prototypes = class_shapes(spec)
    rng = np.random.default_rng(seed)
    total = spec.num_classes * per_class
    if poses is None:
        poses = sample_coords(spec.pose_dist, spec.manifold, rng, total)
    identity = spec.manifold.identity()
    specimens = []
    for idx in range(total):
        label = idx // per_class
        shape = normalize_shape(prototypes[label] + spec.jitter * rng.normal(size=prototypes[label].shape))
        specimens.append(Specimen(
            id=idx,
            class_label=label,
            canonical_shape=shape,
            true_pose=spec.manifold.from_array(poses[idx]),
            accumulated_correction=identity,
        ))
    return tuple(specimens)


def generate_dataset(spec: DatasetSpec) -> DatasetState:
    """
    Generate num_classes x per_class specimens with poses drawn i.i.d. from spec.pose_dist.

    Class shapes depend only on shape_seed; jitter and poses on the specimen seed.
    """
    specimens = _build_specimens(spec, spec.specimen_seed, spec.per_class, poses=None)
    logger.debug(f"Generated {len(specimens)} specimens on {spec.manifold.name}")
    return DatasetState(manifold=spec.manifold, specimens=specimens, step_t=0)


def held_out_test_set(spec: DatasetSpec, per_class: int, seed: int) -> DatasetState:
    """Fresh specimens of the same classes, all at the identity pose."""
    total = spec.num_classes * per_class
    poses = np.zeros((total, spec.manifold.dim))
    specimens = _build_specimens(spec, seed, per_class, poses=poses)
    return DatasetState(manifold=spec.manifold, specimens=specimens, step_t=0)


# Grids

@dataclass(frozen=True, eq=False)
class GroupGrid:
    """A finite subset of a manifold, stored lexicographically sorted."""
    manifold: GroupManifold
    resolution: tuple
    coords: np.ndarray

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def identity_index(self) -> int:
        hits = np.flatnonzero(np.all(self.coords == 0.0, axis=1))
        if hits.size == 0:
            raise ValueError("Grid does not contain the identity")
        return int(hits[0])

    def elements(self) -> list[GroupElement]:
        return [GroupElement(self.manifold, tuple(row)) for row in self.coords]

    def spacing(self) -> np.ndarray:
        """Cell size per leaf (zero for single-value axes)."""
        out = []
        for i in range(self.manifold.dim):
            axis = np.unique(self.coords[:, i])
            out.append(float(np.min(np.diff(axis))) if axis.size > 1 else 0.0)
        return np.array(out)


def _grid_from_axes(manifold: GroupManifold, axes: list[np.ndarray]) -> GroupGrid:
    mesh = np.meshgrid(*axes, indexing='ij')
    coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return GroupGrid(manifold=manifold, resolution=tuple(len(a) for a in axes), coords=coords)


def uniform_grid(manifold: GroupManifold, resolution: int = 64, scale_resolution: int = 5) -> GroupGrid:
    """Uniform grid per factor; always contains the identity."""
    axes = []
    for leaf in manifold.leaves:
        if leaf.kind == SO2:
            axes.append(np.arange(resolution) * (TWO_PI / resolution))
        elif leaf.kind == CYCLIC:
            axes.append(np.arange(leaf.order, dtype=float))
        else:
            axis = np.linspace(leaf.log_min, leaf.log_max, max(scale_resolution, 1))
            axes.append(np.unique(np.append(axis, 0.0)))
    return _grid_from_axes(manifold, axes)


def evaluation_grid(
    manifold: GroupManifold,
    rotation_order: int = 17,
    scales: Sequence[float] = (1.0, 1.125, 1.25)
) -> GroupGrid:
    """
    C_rotation_order rotations x the given scale factors.

    Scale factors need a LogScale factor on the manifold unless the only
    scale requested is 1.
    """
    if rotation_order < 1:
        raise ValueError(f"rotation_order must be >= 1, got {rotation_order}")
    rot_leaf = manifold.rotation_leaf()
    scale_leaf = manifold.scale_leaf()
    if rot_leaf is None and rotation_order != 1:
        raise ValueError(f"{manifold.name} has no rotation factor for a C{rotation_order} grid")
    log_scales = np.log(np.asarray(scales, dtype=float))
    if scale_leaf is None and np.any(log_scales != 0.0):
        raise ValueError(f"{manifold.name} has no scale factor for scales {list(scales)}")

    axes = []
    for i, leaf in enumerate(manifold.leaves):
        if i == rot_leaf:
            if leaf.kind == SO2:
                axes.append(np.arange(rotation_order) * (TWO_PI / rotation_order))
            else:
                if leaf.order % rotation_order:
                    raise ValueError(f"C{rotation_order} is not a subgroup of C{leaf.order}")
                axes.append(np.arange(rotation_order) * float(leaf.order // rotation_order))
        elif i == scale_leaf:
            if np.any(log_scales < leaf.log_min - 1e-12) or np.any(log_scales > leaf.log_max + 1e-12):
                raise ValueError(f"Scales {list(scales)} exceed bounds [{leaf.s_min}, {leaf.s_max}]")
            axes.append(np.sort(log_scales))
        else:
            axes.append(np.zeros(1))
    return _grid_from_axes(manifold, axes)


# Canonicalizers

@dataclass(frozen=True, eq=False)
class Canonicalizer:
    """
    A scoring-function canonicalizer phi(x) = argmin_g s(rho(g), x).

    Variants:
        oracle    s = d(g, pose)^2, argmin is the exact residual pose
        noisy     s = d(g, bias o noise o pose)^2 with per-specimen noise streams
        template  closest-point (chamfer) energy of rho(g)^-1 x against a learned template
        identity  s = d(g, e)^2, never moves anything (no-canonicalization baseline)

    Instances are immutable snapshots; template_update returns a new one.
    """
    variant: str
    manifold: GroupManifold
    temperature: float = 1.0
    noise_kappa: float = 100.0
    noise_kind: str = NOISE_VON_MISES
    noise_sigma: float = 0.0
    bias: Optional[GroupElement] = None
    seed: int = 0
    step: int = 0
    grid_resolution: int = 64
    scale_resolution: int = 5
    refine: bool = False
    ema_rate: float = 0.1
    per_class: bool = False
    template: Optional[np.ndarray] = None
    class_templates: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"Unknown canonicalizer variant: {self.variant}")
        if not self.temperature > 0:
            raise ValueError(f"Temperature must be > 0, got {self.temperature}")
        if self.variant == NOISY:
            if self.noise_kind not in (NOISE_VON_MISES, NOISE_WRAPPED_NORMAL):
                raise ValueError(f"Unknown noise kind: {self.noise_kind}")
            if self.noise_kind == NOISE_VON_MISES and not self.noise_kappa > 0:
                raise ValueError(f"Noise concentration must be > 0, got {self.noise_kappa}")
            if self.noise_sigma < 0:
                raise ValueError(f"Noise sigma must be >= 0, got {self.noise_sigma}")
        if self.bias is not None and self.bias.manifold != self.manifold:
            raise ValueError("Bias must live on the canonicalizer's manifold")
        if self.grid_resolution < 1:
            raise ValueError("grid_resolution must be >= 1")
        if not 0 < self.ema_rate <= 1:
            raise ValueError(f"ema_rate must be in (0, 1], got {self.ema_rate}")
        if self.variant == TEMPLATE and self.template is None and not self.class_templates:
            raise ValueError("Template canonicalizer needs an initial template")

    @classmethod
    def oracle(cls, manifold: GroupManifold, **kwargs) -> 'Canonicalizer':
        return cls(ORACLE, manifold, **kwargs)

    @classmethod
    def identity_baseline(cls, manifold: GroupManifold, **kwargs) -> 'Canonicalizer':
        return cls(IDENTITY, manifold, **kwargs)

    @classmethod
    def noisy(
        cls,
        manifold: GroupManifold,
        kappa: float = 100.0,
        bias: Optional[GroupElement] = None,
        **kwargs
    ) -> 'Canonicalizer':
        return cls(NOISY, manifold, noise_kappa=kappa, bias=bias, **kwargs)

    @classmethod
    def template_from(cls, dataset: DatasetState, per_class: bool = False, **kwargs) -> 'Canonicalizer':
        """
        Warm-start a template canonicalizer from a dataset.

        The template is the pointwise mean of the observed shapes, rescaled to
        their average RMS radius (averaging rotated copies shrinks the mean).
        """
        observed = np.stack([s.observed_shape() for s in dataset.specimens])
        labels = np.array([s.class_label for s in dataset.specimens])
        if per_class:
            templates = {
                int(label): _rescaled_mean(observed[labels == label])
                for label in np.unique(labels)
            }
            return cls(TEMPLATE, dataset.manifold, per_class=True, class_templates=templates, **kwargs)
        return cls(TEMPLATE, dataset.manifold, template=_rescaled_mean(observed), **kwargs)

    @property
    def is_analytic(self) -> bool:
        return self.variant != TEMPLATE

    def at_step(self, step: int) -> 'Canonicalizer':
        return replace(self, step=step)

    def with_noise_sigma(self, sigma: float) -> 'Canonicalizer':
        """Switch to wrapped-normal noise of the given scale (beta-controlled runs)."""
        return replace(self, noise_kind=NOISE_WRAPPED_NORMAL, noise_sigma=float(sigma))

    def grid(self) -> GroupGrid:
        return uniform_grid(self.manifold, self.grid_resolution, self.scale_resolution)

    def template_for(self, label: int) -> np.ndarray:
        if self.per_class:
            return self.class_templates[label]
        return self.template


def _rms_radius(points: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(points ** 2, axis=-1))))


def _rescaled_mean(shapes: np.ndarray) -> np.ndarray:
    mean = shapes.mean(axis=0)
    target = float(np.mean([_rms_radius(s) for s in shapes]))
    current = _rms_radius(mean)
    if current < 1e-12:
        logger.warning("Mean shape collapsed to the origin; template starts degenerate")
        return mean
    return mean * (target / current)


def tilted_mean(c: Canonicalizer) -> GroupElement:
    """
    The pose that c reports as the identity: the fixed point a biased run drifts toward.

    A canonicalizer biased by b reports a specimen at pose g as b o g, so the
    specimen looks aligned when b o g = e. Corrections therefore settle the
    residual poses at g = b^-1, not at b itself.
    """
    if c.bias is None:
        return c.manifold.identity()
    return inverse(c.bias)


def chamfer_distance(points: np.ndarray, template: np.ndarray) -> np.ndarray:
    """
    Symmetric closest-point energy between point sets.

    Args:
        points: (..., m, 2)
        template: (..., t, 2), broadcastable against points

    Returns:
        (...) array of mean_m min_t |p - q|^2 + mean_t min_m |p - q|^2
    """
    diff = points[..., :, None, :] - template[..., None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    return d2.min(axis=-1).mean(axis=-1) + d2.min(axis=-2).mean(axis=-1)


def predicted_poses(c: Canonicalizer, specimens: Sequence[Specimen]) -> np.ndarray:
    """Closed-form predictions of an analytic canonicalizer, shape (B, dim)."""
    manifold = c.manifold
    poses = poses_array(manifold, specimens)
    if c.variant == ORACLE:
        return poses
    if c.variant == IDENTITY:
        return np.zeros_like(poses)
    if c.variant != NOISY:
        raise ValueError(f"{c.variant} canonicalizer has no closed-form prediction")

    noise = np.empty_like(poses)
    for row, specimen in enumerate(specimens):
        rng = np.random.default_rng([c.seed, specimen.id, c.step])
        if c.noise_kind == NOISE_VON_MISES:
            noise[row] = rng.vonmises(0.0, c.noise_kappa, size=manifold.dim)
        else:
            noise[row] = rng.normal(0.0, c.noise_sigma, size=manifold.dim)
    noise = exp_coords(manifold, np.zeros(manifold.dim), noise)
    predictions = compose_coords(manifold, noise, poses)
    if c.bias is not None:
        predictions = compose_coords(manifold, c.bias.as_array(), predictions)
    return predictions


def _template_scores(c: Canonicalizer, specimens: Sequence[Specimen], candidates: np.ndarray) -> np.ndarray:
    """Chamfer energies for every (specimen, candidate) pair, shape (B, G)."""
    inv_linear = linear_parts(c.manifold, inverse_coords(c.manifold, candidates))
    observed = np.stack([s.observed_shape() for s in specimens])
    moved = np.einsum('gij,bmj->bgmi', inv_linear, observed)
    if c.per_class:
        templates = np.stack([c.template_for(s.class_label) for s in specimens])[:, None, :, :]
    else:
        templates = c.template[None, None, :, :]
    return chamfer_distance(moved, templates)


def _chunks(items: Sequence, size: int) -> list:
    return [items[i:i + size] for i in range(0, len(items), size)]


def score_grid(
    c: Canonicalizer,
    specimens: Sequence[Specimen],
    grid: GroupGrid,
    workers: int = 1
) -> np.ndarray:
    """
    Scores of every specimen at every grid element, shape (B, G).

    Chunks are scored in parallel and concatenated in order, so the
    result does not depend on the worker count.
    """
    specimens = list(specimens)
    if not specimens:
        return np.zeros((0, len(grid)))
    if c.is_analytic:
        predictions = predicted_poses(c, specimens)
        return squared_distances(c.manifold, predictions, grid.coords)

    chunks = _chunks(specimens, SCORE_CHUNK)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda chunk: _template_scores(c, chunk, grid.coords), chunks))
    else:
        parts = [_template_scores(c, chunk, grid.coords) for chunk in chunks]
    return np.concatenate(parts)


def score(c: Canonicalizer, g: GroupElement, x: Specimen) -> float:
    """Energy s(rho(g), x); lower is better."""
    if g.manifold != c.manifold:
        raise ValueError("g must live on the canonicalizer's manifold")
    candidates = g.as_array().reshape(1, -1)
    if c.is_analytic:
        return float(squared_distances(c.manifold, predicted_poses(c, [x]), candidates)[0, 0])
    return float(_template_scores(c, [x], candidates)[0, 0])


def _best_cell(scores: np.ndarray) -> int:
    """First (lexicographically smallest) grid cell among those tied for the minimum."""
    best = float(scores.min())
    tied = np.flatnonzero(scores <= best + SCORE_TIE_TOL * max(1.0, abs(best)))
    return int(tied[0])


def _refine(c: Canonicalizer, x: Specimen, start: np.ndarray, grid: GroupGrid) -> np.ndarray:
    """Coordinate-wise bounded Brent refinement of the continuous factors around a grid cell."""
    current = start.copy()
    current_score = float(_template_scores(c, [x], current.reshape(1, -1))[0, 0])
    spacing = grid.spacing()
    leaves = c.manifold.leaves

    for _ in range(REFINE_SWEEPS):
        for i, leaf in enumerate(leaves):
            if not leaf.is_continuous or spacing[i] == 0.0:
                continue

            def along(value: float, i=i, leaf=leaf) -> float:
                trial = current.copy()
                trial[i] = float(leaf_canonical(leaf, np.asarray(value)))
                return float(_template_scores(c, [x], trial.reshape(1, -1))[0, 0])

            lo, hi = current[i] - spacing[i], current[i] + spacing[i]
            if leaf.kind == LOG_SCALE:
                lo, hi = max(lo, leaf.log_min), min(hi, leaf.log_max)
            result = minimize_scalar(along, bounds=(lo, hi), method='bounded', options={'xatol': REFINE_XTOL})
            if result.fun < current_score:
                current[i] = float(leaf_canonical(leaf, np.asarray(result.x)))
                current_score = float(result.fun)
    return current


def canonicalize_batch(
    c: Canonicalizer,
    specimens: Sequence[Specimen],
    grid: Optional[GroupGrid] = None,
    refine: Optional[bool] = None,
    workers: int = 1
) -> np.ndarray:
    """Predicted poses g_hat for every specimen, shape (B, dim)."""
    specimens = list(specimens)
    if c.is_analytic:
        return predicted_poses(c, specimens)
    grid = grid or c.grid()
    refine = c.refine if refine is None else refine
    scores = score_grid(c, specimens, grid, workers=workers)
    best = np.array([grid.coords[_best_cell(row)] for row in scores])
    if refine:
        best = np.array([_refine(c, x, start, grid) for x, start in zip(specimens, best)])
    return best.reshape(len(specimens), c.manifold.dim)


def canonicalize(
    c: Canonicalizer,
    x: Specimen,
    grid: Optional[GroupGrid] = None,
    refine: Optional[bool] = None
) -> GroupElement:
    """
    phi(x): argmin of the score.

    Analytic variants return their closed-form minimizer; the template variant
    searches the grid (ties to the smallest coordinate) and optionally refines.
    """
    return c.manifold.from_array(canonicalize_batch(c, [x], grid, refine)[0])


def posterior_batch(c: Canonicalizer, specimens: Sequence[Specimen], grid: GroupGrid, workers: int = 1) -> np.ndarray:
    """Softmax of -score / temperature over the grid, shape (B, G)."""
    return softmax(-score_grid(c, specimens, grid, workers) / c.temperature, axis=1)


def posterior(c: Canonicalizer, x: Specimen, grid: GroupGrid) -> np.ndarray:
    """P_phi(g | x) over the grid."""
    return posterior_batch(c, [x], grid)[0]


def identity_losses(c: Canonicalizer, specimens: Sequence[Specimen], grid: GroupGrid, workers: int = 1) -> np.ndarray:
    """Per-specimen -log P_phi(identity | x): the prior-loss term used to rank specimens."""
    logits = -score_grid(c, specimens, grid, workers) / c.temperature
    return logsumexp(logits, axis=1) - logits[:, grid.identity_index]


def prior_loss(c: Canonicalizer, batch: Sequence[Specimen], grid: GroupGrid) -> float:
    """Mean cross-entropy against a Dirac prior at the identity."""
    if not batch:
        return 0.0
    return float(np.mean(identity_losses(c, batch, grid)))


def canonicalized_views(c: Canonicalizer, specimens: Sequence[Specimen], predictions: np.ndarray) -> list[Specimen]:
    """Specimens with their predicted poses undone (rho(g_hat)^-1 x)."""
    return [x.with_correction(c.manifold.from_array(p)) for x, p in zip(specimens, predictions)]


def template_update(c: Canonicalizer, canonicalized_batch: Sequence[Specimen]) -> Canonicalizer:
    """
    One exponential-moving-average step of the template toward a canonicalized batch.

    Point sets share a vertex ordering, so shapes are averaged point by point.
    """
    if c.variant != TEMPLATE:
        raise ValueError(f"template_update needs a template canonicalizer, got {c.variant}")
    if not canonicalized_batch:
        return c
    shapes = np.stack([s.observed_shape() for s in canonicalized_batch])
    rate = c.ema_rate
    if c.per_class:
        labels = np.array([s.class_label for s in canonicalized_batch])
        templates = dict(c.class_templates)
        for label in np.unique(labels):
            target = shapes[labels == label].mean(axis=0)
            templates[int(label)] = (1.0 - rate) * templates[int(label)] + rate * target
        return replace(c, class_templates=templates)
    return replace(c, template=(1.0 - rate) * c.template + rate * shapes.mean(axis=0))


def fit_template(
    c: Canonicalizer,
    specimens: Sequence[Specimen],
    passes: int,
    grid: Optional[GroupGrid] = None,
    workers: int = 1
) -> Canonicalizer:
    """Run template_update passes over a fixed set of specimens; the specimens themselves never move."""
    if c.variant != TEMPLATE:
        return c
    specimens = list(specimens)
    for _ in range(passes):
        predictions = canonicalize_batch(c, specimens, grid, workers=workers)
        c = template_update(c, canonicalized_views(c, specimens, predictions))
    return c


# Toy classifier

def canonicalized_shapes(
    c: Canonicalizer,
    specimens: Sequence[Specimen],
    grid: Optional[GroupGrid] = None,
    workers: int = 1
) -> np.ndarray:
    """rho(phi(x))^-1 applied to each observed shape, (B, m, 2)."""
    predictions = canonicalize_batch(c, specimens, grid, workers=workers)
    inv_linear = linear_parts(c.manifold, inverse_coords(c.manifold, predictions))
    observed = np.stack([s.observed_shape() for s in specimens])
    return np.einsum('bij,bmj->bmi', inv_linear, observed)


def fit_class_templates(
    c: Canonicalizer,
    specimens: Sequence[Specimen],
    grid: Optional[GroupGrid] = None,
    workers: int = 1
) -> dict[int, np.ndarray]:
    """Per-class mean canonicalized shapes: the classifier lives in the canonicalizer's frame."""
    shapes = canonicalized_shapes(c, specimens, grid, workers)
    labels = np.array([s.class_label for s in specimens])
    return {int(label): shapes[labels == label].mean(axis=0) for label in np.unique(labels)}


def classify_batch(
    specimens: Sequence[Specimen],
    canonicalizer: Canonicalizer,
    class_templates: Mapping[int, np.ndarray],
    grid: Optional[GroupGrid] = None,
    workers: int = 1
) -> np.ndarray:
    labels = sorted(class_templates)
    templates = np.stack([class_templates[label] for label in labels])
    shapes = canonicalized_shapes(canonicalizer, specimens, grid, workers)
    energies = chamfer_distance(shapes[:, None, :, :], templates[None, :, :, :])
    return np.array(labels)[np.argmin(energies, axis=1)]


def toy_classify(
    x: Specimen,
    canonicalizer: Canonicalizer,
    class_templates: Mapping[int, np.ndarray],
    grid: Optional[GroupGrid] = None
) -> int:
    """Nearest class template after undoing the canonicalizer's pose; ties go to the smaller label."""
    return int(classify_batch([x], canonicalizer, class_templates, grid)[0])


def grid_accuracy(
    test_set: DatasetState,
    canonicalizer: Canonicalizer,
    class_templates: Mapping[int, np.ndarray],
    eval_grid: GroupGrid,
    grid: Optional[GroupGrid] = None,
    workers: int = 1
) -> np.ndarray:
    """Accuracy of the toy classifier with every test specimen moved to each evaluation cell."""
    truth = np.array([s.class_label for s in test_set.specimens])

    def cell_accuracy(cell: np.ndarray) -> float:
        pose = test_set.manifold.from_array(cell)
        moved = [s.at_pose(pose) for s in test_set.specimens]
        predicted = classify_batch(moved, canonicalizer, class_templates, grid)
        return float(np.mean(predicted == truth))

    cells = list(eval_grid.coords)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(cell_accuracy, cells)))
    return np.array([cell_accuracy(cell) for cell in cells])
