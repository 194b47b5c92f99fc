"""
Group manifolds used for pose alignment.

Supported groups are planar rotations (SO2), the cyclic subgroups C_n,
a bounded log-scale line and flat one-level products of those. All of
them are abelian, so the metrics below are bi-invariant.

Coordinates:
    SO2       angle theta in [0, 2*pi)
    Cn        index k in {0..n-1}
    LogScale  u = log(s) in [log s_min, log s_max]
    Product   tuple of the factor coordinates, in factor order

Besides the element-level API (compose, inverse, geodesic_distance,
log_map, exp_map, sample) the module exposes vectorized helpers over
coordinate arrays of shape (n, dim), used by the statistics and the
simulation code.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

SO2 = 'SO2'
CYCLIC = 'Cn'
LOG_SCALE = 'LogScale'
PRODUCT = 'Product'

# Slack allowed when validating LogScale coordinates that come out of arithmetic
BOUNDS_SLACK = 1e-12


class ManifoldMismatchError(ValueError):
    """Raised when an operation mixes elements of different manifolds."""


@dataclass(frozen=True)
class GroupManifold:
    """
    A supported group manifold.

    Build instances through so2(), cyclic(), log_scale(), product()
    or GroupManifold.parse() rather than directly.
    """
    kind: str
    order: int = 1
    s_min: float = 1.0
    s_max: float = 1.0
    factors: tuple = ()
    metric_weights: tuple = ()

    def __post_init__(self):
        if self.kind == CYCLIC:
            if int(self.order) != self.order or self.order < 1:
                raise ValueError(f"Cn order must be a positive integer, got {self.order}")
        elif self.kind == LOG_SCALE:
            if not (0 < self.s_min <= 1.0 <= self.s_max):
                raise ValueError(
                    f"LogScale bounds must satisfy 0 < s_min <= 1 <= s_max, "
                    f"got [{self.s_min}, {self.s_max}]"
                )
        elif self.kind == PRODUCT:
            if not self.factors:
                raise ValueError("Product manifold needs at least one factor")
            for factor in self.factors:
                if factor.kind == PRODUCT:
                    raise ValueError("Product factors must not be products themselves")
            if len(self.metric_weights) != len(self.factors):
                raise ValueError(
                    f"Expected {len(self.factors)} metric weights, got {len(self.metric_weights)}"
                )
            if any(w <= 0 for w in self.metric_weights):
                raise ValueError(f"Metric weights must be positive: {self.metric_weights}")
        elif self.kind != SO2:
            raise ValueError(f"Unknown manifold kind: {self.kind}")

    # Structure

    @property
    def leaves(self) -> tuple:
        """Factor manifolds (a non-product manifold is its own single leaf)."""
        return self.factors if self.kind == PRODUCT else (self,)

    @property
    def weights(self) -> np.ndarray:
        if self.kind == PRODUCT:
            return np.asarray(self.metric_weights, dtype=float)
        return np.ones(1)

    @property
    def dim(self) -> int:
        return len(self.leaves)

    @property
    def log_min(self) -> float:
        return math.log(self.s_min)

    @property
    def log_max(self) -> float:
        return math.log(self.s_max)

    @property
    def is_continuous(self) -> bool:
        return self.kind in (SO2, LOG_SCALE)

    @property
    def diameter(self) -> float:
        """Largest geodesic distance between two elements."""
        if self.kind == SO2:
            return math.pi
        if self.kind == CYCLIC:
            return TWO_PI * (self.order // 2) / self.order
        if self.kind == LOG_SCALE:
            return self.log_max - self.log_min
        return math.sqrt(sum(w * leaf.diameter ** 2 for w, leaf in zip(self.metric_weights, self.factors)))

    def rotation_leaf(self) -> Optional[int]:
        """Index of the first rotation-like leaf (SO2 or Cn), if any."""
        for i, leaf in enumerate(self.leaves):
            if leaf.kind in (SO2, CYCLIC):
                return i
        return None

    def scale_leaf(self) -> Optional[int]:
        """Index of the LogScale leaf, if any."""
        for i, leaf in enumerate(self.leaves):
            if leaf.kind == LOG_SCALE:
                return i
        return None

    # Elements

    def identity(self) -> 'GroupElement':
        return GroupElement(self, tuple(0.0 for _ in self.leaves))

    def element(self, *coords: float) -> 'GroupElement':
        """Element from raw coordinates; angles/indices are reduced, scales validated."""
        return GroupElement(self, tuple(coords))

    def from_array(self, coords: np.ndarray) -> 'GroupElement':
        """Element from a coordinate row, clamping LogScale coordinates into bounds."""
        row = canonical_coords(self, np.asarray(coords, dtype=float).reshape(1, self.dim))[0]
        return GroupElement(self, tuple(row))

    def coords_array(self, elements: Sequence['GroupElement']) -> np.ndarray:
        """Stack element coordinates into an (n, dim) float array."""
        for g in elements:
            if g.manifold != self:
                raise ManifoldMismatchError(f"Element on {g.manifold.name} given for {self.name}")
        if not elements:
            return np.zeros((0, self.dim))
        return np.array([g.coords for g in elements], dtype=float)

    # Text form

    @property
    def name(self) -> str:
        if self.kind == SO2:
            return 'so2'
        if self.kind == CYCLIC:
            return f'c{self.order}'
        if self.kind == LOG_SCALE:
            return f'scale:{self.s_min!r}:{self.s_max!r}'
        text = '*'.join(leaf.name for leaf in self.factors)
        if any(w != 1.0 for w in self.metric_weights):
            text += '@' + ','.join(repr(float(w)) for w in self.metric_weights)
        return text

    @classmethod
    def parse(cls, text: str) -> 'GroupManifold':
        """
        Parse a manifold description.

        Examples: 'so2', 'c17', 'scale:0.8:1.25', 'rotoscale',
        'so2*scale:0.8:1.25', 'so2*scale:0.8:1.25@1,0.5'.
        """
        text = text.strip().lower()
        if text == 'rotoscale':
            return rotoscale()
        weights = None
        if '@' in text:
            text, weight_text = text.split('@', 1)
            weights = [float(w) for w in weight_text.split(',')]
        parts = [p.strip() for p in text.split('*')]
        leaves = [_parse_leaf(p) for p in parts]
        if len(leaves) == 1 and weights is None:
            return leaves[0]
        return product(*leaves, weights=weights)


def _parse_leaf(text: str) -> GroupManifold:
    if text == 'so2':
        return so2()
    if text.startswith('scale'):
        pieces = text.split(':')
        if len(pieces) == 1:
            return log_scale()
        if len(pieces) != 3:
            raise ValueError(f"Expected scale:S_MIN:S_MAX, got '{text}'")
        return log_scale(float(pieces[1]), float(pieces[2]))
    if text.startswith('c'):
        body = text[1:].lstrip('n:')
        try:
            return cyclic(int(body))
        except ValueError:
            raise ValueError(f"Bad cyclic group '{text}'") from None
    raise ValueError(f"Unknown manifold '{text}'")


def so2() -> GroupManifold:
    return GroupManifold(SO2)


def cyclic(order: int) -> GroupManifold:
    return GroupManifold(CYCLIC, order=int(order))


def log_scale(s_min: float = 0.8, s_max: float = 1.25) -> GroupManifold:
    return GroupManifold(LOG_SCALE, s_min=float(s_min), s_max=float(s_max))


def product(*factors: GroupManifold, weights: Optional[Sequence[float]] = None) -> GroupManifold:
    if weights is None:
        weights = [1.0] * len(factors)
    return GroupManifold(
        PRODUCT,
        factors=tuple(factors),
        metric_weights=tuple(float(w) for w in weights),
    )


def rotoscale(s_min: float = 0.8, s_max: float = 1.25) -> GroupManifold:
    """Rotation x bounded scale, the group used for the robustness grid."""
    return product(so2(), log_scale(s_min, s_max))


@dataclass(frozen=True)
class GroupElement:
    """A point on a GroupManifold. Coordinates are canonicalized on construction."""
    manifold: GroupManifold
    coords: tuple

    def __post_init__(self):
        if len(self.coords) != self.manifold.dim:
            raise ValueError(
                f"{self.manifold.name} expects {self.manifold.dim} coordinates, got {len(self.coords)}"
            )
        values = []
        for leaf, value in zip(self.manifold.leaves, self.coords):
            value = float(value)
            if leaf.kind == SO2:
                value = float(_wrap_angle(np.asarray(value)))
            elif leaf.kind == CYCLIC:
                value = int(round(value)) % leaf.order
            else:
                if not (leaf.log_min - BOUNDS_SLACK <= value <= leaf.log_max + BOUNDS_SLACK):
                    raise ValueError(
                        f"Log-scale coordinate {value} outside [{leaf.log_min}, {leaf.log_max}]"
                    )
                value = min(max(value, leaf.log_min), leaf.log_max)
            values.append(value)
        object.__setattr__(self, 'coords', tuple(values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    def __str__(self) -> str:
        parts = []
        for leaf, value in zip(self.manifold.leaves, self.coords):
            if leaf.kind == SO2:
                parts.append(f"SO2(theta={value:.6f})")
            elif leaf.kind == CYCLIC:
                parts.append(f"C{leaf.order}(k={value})")
            else:
                parts.append(f"LogScale(u={value:.6f})")
        return ' x '.join(parts)


@dataclass(frozen=True, eq=False)
class Representation:
    """Homogeneous 3x3 planar transform of a group element (rotation and uniform scale)."""
    element: GroupElement
    matrix: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (m, 2) point array."""
        return np.asarray(points, dtype=float) @ self.matrix[:2, :2].T


# Vectorized leaf arithmetic

def _wrap_angle(x: np.ndarray) -> np.ndarray:
    out = np.mod(x, TWO_PI)
    # np.mod returns 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def leaf_canonical(leaf: GroupManifold, x: np.ndarray) -> np.ndarray:
    if leaf.kind == SO2:
        return _wrap_angle(x)
    if leaf.kind == CYCLIC:
        return np.mod(np.rint(x), leaf.order)
    return np.clip(x, leaf.log_min, leaf.log_max)


def leaf_delta(leaf: GroupManifold, base: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Signed tangent coordinate of x seen from base; antipodal ties resolve to +pi."""
    if leaf.kind == SO2:
        d = np.mod(x - base + math.pi, TWO_PI) - math.pi
        return np.where(d <= -math.pi, math.pi, d)
    if leaf.kind == CYCLIC:
        n = leaf.order
        dk = np.mod(np.rint(x) - np.rint(base), n)
        dk = np.where(2 * dk > n, dk - n, dk)
        return dk * (TWO_PI / n)
    return x - base


def _leaf_distance(leaf: GroupManifold, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if leaf.kind == SO2:
        d = np.abs(_wrap_angle(a) - _wrap_angle(b))
        return np.minimum(d, TWO_PI - d)
    if leaf.kind == CYCLIC:
        n = leaf.order
        dk = np.abs(np.rint(a) - np.rint(b))
        return np.minimum(dk, n - dk) * (TWO_PI / n)
    return np.abs(a - b)


def _leaf_exp(leaf: GroupManifold, base: np.ndarray, v: np.ndarray) -> np.ndarray:
    if leaf.kind == CYCLIC:
        steps = np.rint(v * leaf.order / TWO_PI)
        return np.mod(np.rint(base) + steps, leaf.order)
    return leaf_canonical(leaf, base + v)


def _leaf_angle(leaf: GroupManifold, x: np.ndarray) -> np.ndarray:
    """Rotation angle realized by a leaf coordinate (zero for scale leaves)."""
    if leaf.kind == SO2:
        return x
    if leaf.kind == CYCLIC:
        return x * (TWO_PI / leaf.order)
    return np.zeros_like(x)


def canonical_coords(manifold: GroupManifold, coords: np.ndarray) -> np.ndarray:
    """Reduce angles and indices and clamp log-scales for an (n, dim) array."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    out = np.empty_like(coords)
    for i, leaf in enumerate(manifold.leaves):
        out[:, i] = leaf_canonical(leaf, coords[:, i])
    return out


def compose_coords(manifold: GroupManifold, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Group law on coordinate arrays (broadcasting)."""
    return canonical_coords(manifold, np.atleast_2d(a) + np.atleast_2d(b))


def inverse_coords(manifold: GroupManifold, a: np.ndarray) -> np.ndarray:
    return canonical_coords(manifold, -np.atleast_2d(a))


def log_coords(manifold: GroupManifold, base: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Tangent vectors at base pointing to each row of coords, shape (n, dim)."""
    coords = np.atleast_2d(coords)
    base = np.asarray(base, dtype=float).reshape(-1)
    out = np.empty(coords.shape, dtype=float)
    for i, leaf in enumerate(manifold.leaves):
        out[:, i] = leaf_delta(leaf, base[i], coords[:, i])
    return out


def exp_coords(manifold: GroupManifold, base: np.ndarray, v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(v)
    base = np.asarray(base, dtype=float).reshape(-1)
    out = np.empty(v.shape, dtype=float)
    for i, leaf in enumerate(manifold.leaves):
        out[:, i] = _leaf_exp(leaf, base[i], v[:, i])
    return out


def squared_distances(manifold: GroupManifold, candidates: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """
    Weighted squared geodesic distances between every candidate and every point.

    Args:
        candidates: (m, dim) coordinates
        coords: (n, dim) coordinates

    Returns:
        (m, n) array
    """
    candidates = np.atleast_2d(candidates)
    coords = np.atleast_2d(coords)
    total = np.zeros((candidates.shape[0], coords.shape[0]))
    for i, (leaf, w) in enumerate(zip(manifold.leaves, manifold.weights)):
        d = _leaf_distance(leaf, candidates[:, i][:, None], coords[:, i][None, :])
        total += w * d * d
    return total


def distances_to(manifold: GroupManifold, base: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Geodesic distances from one base point to each row of coords."""
    return np.sqrt(squared_distances(manifold, np.asarray(base).reshape(1, -1), coords)[0])


def rotation_scale(manifold: GroupManifold, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total rotation angle and scale factor realized by each coordinate row."""
    coords = np.atleast_2d(coords)
    angle = np.zeros(coords.shape[0])
    log_s = np.zeros(coords.shape[0])
    for i, leaf in enumerate(manifold.leaves):
        if leaf.kind == LOG_SCALE:
            log_s += coords[:, i]
        else:
            angle += _leaf_angle(leaf, coords[:, i])
    return angle, np.exp(log_s)


def linear_parts(manifold: GroupManifold, coords: np.ndarray) -> np.ndarray:
    """2x2 linear parts s * R(theta) for each coordinate row, shape (n, 2, 2)."""
    angle, scale = rotation_scale(manifold, coords)
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty((angle.shape[0], 2, 2))
    out[:, 0, 0] = scale * c
    out[:, 0, 1] = -scale * s
    out[:, 1, 0] = scale * s
    out[:, 1, 1] = scale * c
    return out


# Element-level operations

def _check_same(g: GroupElement, h: GroupElement):
    if g.manifold != h.manifold:
        raise ManifoldMismatchError(
            f"Cannot combine {g.manifold.name} element with {h.manifold.name} element"
        )


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """Group law g o h."""
    _check_same(g, h)
    row = compose_coords(g.manifold, g.as_array(), h.as_array())[0]
    return GroupElement(g.manifold, tuple(row))


def inverse(g: GroupElement) -> GroupElement:
    """
    Group inverse.

    LogScale coordinates are clamped, so the inverse is exact only when the
    scale bounds are symmetric in log space (the rotoscale default is).
    """
    row = inverse_coords(g.manifold, g.as_array())[0]
    return GroupElement(g.manifold, tuple(row))


def geodesic_distance(g: GroupElement, h: GroupElement) -> float:
    _check_same(g, h)
    return float(np.sqrt(squared_distances(g.manifold, g.as_array(), h.as_array())[0, 0]))


def tangent_norm(manifold: GroupManifold, v: np.ndarray) -> float:
    """Riemannian norm of a tangent vector (product metric weights applied)."""
    v = np.asarray(v, dtype=float).reshape(-1)
    return float(np.sqrt(np.sum(manifold.weights * v * v)))


def log_map(base: GroupElement, g: GroupElement) -> np.ndarray:
    """Tangent vector at base pointing to g along the shorter geodesic."""
    _check_same(base, g)
    return log_coords(base.manifold, base.as_array(), g.as_array())[0]


def exp_map(base: GroupElement, v: np.ndarray) -> GroupElement:
    """
    Follow the one-parameter subgroup from base along v.

    Cn tangents snap to the nearest lattice multiple of 2*pi/n and
    LogScale results are clamped to the manifold's bounds.
    """
    v = np.asarray(v, dtype=float).reshape(1, base.manifold.dim)
    row = exp_coords(base.manifold, base.as_array(), v)[0]
    return GroupElement(base.manifold, tuple(row))


def representation(g: GroupElement) -> Representation:
    """Homogeneous 3x3 matrix of g acting on the plane about the origin."""
    matrix = np.eye(3)
    for leaf, value in zip(g.manifold.leaves, g.coords):
        if leaf.kind == LOG_SCALE:
            s = math.exp(value)
            factor = np.diag([s, s, 1.0])
        else:
            theta = float(_leaf_angle(leaf, np.asarray(float(value))))
            c, s = math.cos(theta), math.sin(theta)
            factor = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        matrix = matrix @ factor
    return Representation(element=g, matrix=matrix)


# Pose distributions

DIRAC = 'dirac'
UNIFORM = 'uniform'
VON_MISES = 'vonmises'
WRAPPED_NORMAL = 'wrapnorm'
MIXTURE = 'mixture'
PRODUCT_DIST = 'product'


@dataclass(frozen=True)
class PoseDistribution:
    """
    Sampling spec over a group: the pose distribution of a synthetic dataset.

    Locations are in tangent units of the leaf they are sampled on:
    radians for SO2 and Cn, log-scale units for LogScale.
    """
    kind: str
    loc: float = 0.0
    spread: float = 0.0
    components: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind == VON_MISES and not self.spread >= 0:
            raise ValueError(f"von Mises concentration must be >= 0, got {self.spread}")
        if self.kind == WRAPPED_NORMAL and not self.spread >= 0:
            raise ValueError(f"Wrapped normal sigma must be >= 0, got {self.spread}")
        if self.kind == MIXTURE:
            if not self.components or len(self.components) != len(self.weights):
                raise ValueError("Mixture needs one weight per component")
            if any(w < 0 for w in self.weights):
                raise ValueError(f"Mixture weights must be non-negative: {self.weights}")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise ValueError(f"Mixture weights must sum to 1, got {sum(self.weights)}")
        if self.kind == PRODUCT_DIST and not self.components:
            raise ValueError("Product distribution needs factor distributions")
        if self.kind not in (DIRAC, UNIFORM, VON_MISES, WRAPPED_NORMAL, MIXTURE, PRODUCT_DIST):
            raise ValueError(f"Unknown pose distribution kind: {self.kind}")

    @classmethod
    def parse(cls, text: str) -> 'PoseDistribution':
        """
        Parse the config text form.

        Grammar:
            uniform | dirac:LOC | vonmises:MU:KAPPA | wrapnorm:MU:SIGMA
            mixture:W*SPEC+W*SPEC...      (components are non-mixture specs)
            SPEC|SPEC...                  (one spec per product factor)
        """
        text = text.strip()
        if '|' in text:
            return product_pose(*(cls.parse(part) for part in text.split('|')))
        head, _, rest = text.partition(':')
        head = head.lower()
        try:
            if head == UNIFORM:
                return uniform_pose()
            if head == DIRAC:
                return dirac(float(rest))
            if head == VON_MISES:
                mu, kappa = rest.split(':')
                return von_mises(float(mu), float(kappa))
            if head == WRAPPED_NORMAL:
                mu, sigma = rest.split(':')
                return wrapped_normal(float(mu), float(sigma))
            if head == MIXTURE:
                components, weights = [], []
                for term in rest.split('+'):
                    weight, spec = term.split('*', 1)
                    weights.append(float(weight))
                    components.append(cls.parse(spec))
                return mixture(components, weights)
        except ValueError as e:
            raise ValueError(f"Bad pose distribution '{text}': {e}") from None
        raise ValueError(f"Unknown pose distribution '{text}'")

    def to_text(self) -> str:
        if self.kind == UNIFORM:
            return UNIFORM
        if self.kind == DIRAC:
            return f"{DIRAC}:{self.loc!r}"
        if self.kind in (VON_MISES, WRAPPED_NORMAL):
            return f"{self.kind}:{self.loc!r}:{self.spread!r}"
        if self.kind == MIXTURE:
            return f"{MIXTURE}:" + '+'.join(
                f"{w!r}*{c.to_text()}" for w, c in zip(self.weights, self.components)
            )
        return '|'.join(c.to_text() for c in self.components)


def dirac(loc: float = 0.0) -> PoseDistribution:
    return PoseDistribution(DIRAC, loc=float(loc))


def uniform_pose() -> PoseDistribution:
    return PoseDistribution(UNIFORM)


def von_mises(mu: float, kappa: float) -> PoseDistribution:
    return PoseDistribution(VON_MISES, loc=float(mu), spread=float(kappa))


def wrapped_normal(mu: float, sigma: float) -> PoseDistribution:
    return PoseDistribution(WRAPPED_NORMAL, loc=float(mu), spread=float(sigma))


def mixture(components: Sequence[PoseDistribution], weights: Sequence[float]) -> PoseDistribution:
    return PoseDistribution(
        MIXTURE, components=tuple(components), weights=tuple(float(w) for w in weights)
    )


def product_pose(*factors: PoseDistribution) -> PoseDistribution:
    return PoseDistribution(PRODUCT_DIST, components=tuple(factors))


def _tangent_to_leaf(leaf: GroupManifold, loc: float, offsets: np.ndarray) -> np.ndarray:
    """Place tangent offsets around loc and reduce them onto the leaf."""
    if leaf.kind == CYCLIC:
        return np.mod(np.rint((loc + offsets) * leaf.order / TWO_PI), leaf.order)
    return leaf_canonical(leaf, loc + offsets)


def _sample_leaf(dist: PoseDistribution, leaf: GroupManifold, rng: np.random.Generator, n: int) -> np.ndarray:
    if dist.kind == DIRAC:
        return _tangent_to_leaf(leaf, dist.loc, np.zeros(n))
    if dist.kind == UNIFORM:
        if leaf.kind == SO2:
            return rng.uniform(0.0, TWO_PI, size=n)
        if leaf.kind == CYCLIC:
            return rng.integers(0, leaf.order, size=n).astype(float)
        return rng.uniform(leaf.log_min, leaf.log_max, size=n)
    if dist.kind == VON_MISES:
        offsets = rng.vonmises(0.0, dist.spread, size=n)
        return _tangent_to_leaf(leaf, dist.loc, offsets)
    if dist.kind == WRAPPED_NORMAL:
        offsets = rng.normal(0.0, dist.spread, size=n)
        return _tangent_to_leaf(leaf, dist.loc, offsets)
    if dist.kind == MIXTURE:
        picks = rng.choice(len(dist.components), size=n, p=np.asarray(dist.weights))
        out = np.empty(n)
        for j, component in enumerate(dist.components):
            mask = picks == j
            out[mask] = _sample_leaf(component, leaf, rng, int(mask.sum()))
        return out
    raise ValueError(f"Cannot sample a {dist.kind} distribution on a single factor")


def sample_coords(dist: PoseDistribution, manifold: GroupManifold, rng: np.random.Generator, n: int) -> np.ndarray:
    """
    Draw n poses as an (n, dim) coordinate array.

    A non-product distribution on a product manifold drives the first
    factor; the remaining factors stay at the identity.
    """
    leaves = manifold.leaves
    if dist.kind == PRODUCT_DIST:
        if len(dist.components) != len(leaves):
            raise ValueError(
                f"Product distribution has {len(dist.components)} factors, manifold has {len(leaves)}"
            )
        factor_dists = list(dist.components)
    else:
        factor_dists = [dist] + [dirac(0.0)] * (len(leaves) - 1)
    out = np.empty((n, len(leaves)))
    for i, (leaf, factor) in enumerate(zip(leaves, factor_dists)):
        out[:, i] = _sample_leaf(factor, leaf, rng, n)
    return out


def sample(dist: PoseDistribution, manifold: GroupManifold, rng: np.random.Generator) -> GroupElement:
    """Draw one pose; deterministic for a seeded generator."""
    return manifold.from_array(sample_coords(dist, manifold, rng, 1)[0])
