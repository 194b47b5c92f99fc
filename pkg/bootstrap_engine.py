"""
Bootstrapped re-alignment loop.

Every step the canonicalizer predicts a pose for each specimen, the
specimens it is least sure about (or a random subset) have that pose
undone, and the rest of the dataset is left alone. The dataset's pose
distribution therefore evolves as a mixture, and its Frechet variance
is tracked step by step next to the closed-form predictions.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.stats import linregress

from frechet_stats import (
    MixtureDecomposition,
    WeightedPoseSample,
    frechet_mean,
    mixture_decomposition,
)
from group_core import GroupElement, GroupManifold
from synthetic_world import (
    NOISY,
    Canonicalizer,
    DatasetState,
    GroupGrid,
    canonicalize_batch,
    fit_template,
    identity_losses,
    poses_array,
)

logger = logging.getLogger(__name__)

TOP_LOSS = 'top_loss'
RANDOM = 'random'
SELECTIONS = (TOP_LOSS, RANDOM)

# Runs stop once the pose variance falls below this
SIGMA2_FLOOR = 1e-14

# Slack so that alpha * n landing on an integer does not round up
COUNT_EPS = 1e-9

STOP_COMPLETED = 'completed'
STOP_VARIANCE_FLOOR = 'variance_floor'


@dataclass(frozen=True)
class BootstrapConfig:
    """
    Inputs of the bootstrapping loop.

    alpha:      fraction of the dataset re-aligned per step
    interval_N: canonicalizer update passes between steps
    steps_T:    number of bootstrap steps
    selection:  top_loss (largest prior loss first) or random
    beta:       when set, noisy canonicalizer residual variance is held at beta * sigma_t^2
    """
    alpha: float = 0.01
    interval_N: int = 5
    steps_T: int = 0
    selection: str = TOP_LOSS
    seed: int = 0
    beta: Optional[float] = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.interval_N < 1:
            raise ValueError(f"interval_N must be >= 1, got {self.interval_N}")
        if self.steps_T < 0:
            raise ValueError(f"steps_T must be >= 0, got {self.steps_T}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection}")
        if self.beta is not None and not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def update_count(self, n: int) -> int:
        """ceil(alpha * n), at least one specimen and never more than n."""
        return min(n, max(1, math.ceil(self.alpha * n - COUNT_EPS)))


@dataclass(frozen=True)
class StepRecord:
    """Statistics of the dataset after one bootstrap step (step 0 is the initial state)."""
    step: int
    mu: GroupElement
    sigma2: float
    sigma2_updated: float = math.nan
    drift_kept: float = math.nan
    drift_updated: float = math.nan
    residual: float = math.nan
    mean_loss: float = math.nan
    n_updated: int = 0
    updated_ids: tuple = ()
    alpha_eff: float = math.nan
    sigma2_before: float = math.nan
    sigma2_kept: float = math.nan
    predicted: float = math.nan

    @property
    def drift_total(self) -> float:
        return self.drift_kept + self.drift_updated


@dataclass(eq=False)
class TrajectoryRecord:
    """Per-step statistics of a run plus the dataset snapshot after each step."""
    manifold: GroupManifold
    config: BootstrapConfig
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stopping_reason: str = STOP_COMPLETED
    stopped_at: Optional[int] = None
    canonicalizer: Optional[Canonicalizer] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_state(self) -> DatasetState:
        return self.snapshots[-1]

    def sigma2(self) -> np.ndarray:
        return np.array([r.sigma2 for r in self.records])


@dataclass(frozen=True)
class LambdaFit:
    lambda_hat: float
    r_squared: float
    points_used: int
    truncated: bool
    log_sigma2_0: float


def predict_variance(sigma2: float, sigma2_updated: float, alpha: float) -> float:
    """One step of the variance recurrence (1 - alpha) sigma^2 + alpha sigma~^2."""
    if sigma2 < 0 or sigma2_updated < 0:
        raise ValueError("Variances must be non-negative")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return (1.0 - alpha) * sigma2 + alpha * sigma2_updated


def contraction_rate(alpha: float, beta: float) -> float:
    """Per-step variance factor 1 - alpha (1 - beta) when sigma~^2 = beta sigma^2."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    return 1.0 - alpha * (1.0 - beta)


def estimate_lambda(
    traj: Union[TrajectoryRecord, Sequence[float]],
    window: Optional[tuple[int, int]] = None
) -> LambdaFit:
    """
    Fit log sigma_t^2 = log sigma_0^2 + t log lambda by least squares.

    Args:
        traj: Trajectory, or the sigma_t^2 sequence itself (index = step)
        window: Optional [start, stop) range of steps to fit

    Returns:
        LambdaFit. A window reaching a (numerically) zero variance is cut
        just before it and marked truncated.
    """
    sigma2 = traj.sigma2() if isinstance(traj, TrajectoryRecord) else np.asarray(traj, dtype=float)
    steps = np.arange(sigma2.size)
    if window is not None:
        start, stop = window
        steps, sigma2 = steps[start:stop], sigma2[start:stop]

    zeros = np.flatnonzero(~(sigma2 >= SIGMA2_FLOOR))
    truncated = zeros.size > 0
    if truncated:
        steps, sigma2 = steps[:zeros[0]], sigma2[:zeros[0]]
        logger.info(f"Variance hit zero; fit window truncated to {steps.size} steps")
    if steps.size < 3:
        raise ValueError(f"Need at least 3 steps with positive variance, got {steps.size}")

    log_sigma2 = np.log(sigma2)
    if np.ptp(log_sigma2) == 0.0:
        return LambdaFit(1.0, 1.0, int(steps.size), truncated, float(log_sigma2[0]))
    fit = linregress(steps, log_sigma2)
    return LambdaFit(
        lambda_hat=float(np.exp(fit.slope)),
        r_squared=float(fit.rvalue ** 2),
        points_used=int(steps.size),
        truncated=truncated,
        log_sigma2_0=float(fit.intercept),
    )


def _select(losses: np.ndarray, ids: np.ndarray, k: int, config: BootstrapConfig, step_t: int) -> np.ndarray:
    """Row indices of the k specimens to re-align, ascending."""
    if config.selection == TOP_LOSS:
        order = np.lexsort((ids, -losses))
        return np.sort(order[:k])
    rng = np.random.default_rng([config.seed, step_t])
    return np.sort(rng.choice(losses.size, size=k, replace=False))


def _loss_grid(canonicalizer: Canonicalizer, grid: Optional[GroupGrid]) -> GroupGrid:
    return grid if grid is not None else canonicalizer.grid()


def bootstrap_step(
    state: DatasetState,
    config: BootstrapConfig,
    canonicalizer: Canonicalizer,
    grid: Optional[GroupGrid] = None
) -> tuple[DatasetState, StepRecord]:
    """
    Re-align ceil(alpha |D|) specimens by their predicted poses.

    Selected specimens get rho(g_hat)^-1 composed into their correction;
    every other specimen object is carried over unchanged.
    """
    n = len(state)
    if n == 0:
        raise ValueError("Cannot bootstrap an empty dataset")
    manifold = state.manifold
    grid = _loss_grid(canonicalizer, grid)
    c = canonicalizer.at_step(state.step_t)
    specimens = list(state.specimens)

    before = frechet_mean(state.pose_sample())
    predictions = canonicalize_batch(c, specimens, grid, workers=config.workers)
    losses = identity_losses(c, specimens, grid, workers=config.workers)

    k = config.update_count(n)
    ids = np.array([s.id for s in specimens])
    selected = _select(losses, ids, k, config, state.step_t)
    chosen = set(selected.tolist())

    new_specimens = tuple(
        x.with_correction(manifold.from_array(predictions[i])) if i in chosen else x
        for i, x in enumerate(specimens)
    )
    new_state = DatasetState(manifold=manifold, specimens=new_specimens, step_t=state.step_t + 1)

    poses = poses_array(manifold, new_specimens)
    mask = np.zeros(n, dtype=bool)
    mask[selected] = True
    alpha_eff = k / n
    kept = WeightedPoseSample.from_coords(manifold, poses[~mask]) if k < n else None
    updated = WeightedPoseSample.from_coords(manifold, poses[mask])
    dec = mixture_decomposition(kept, updated, alpha_eff)

    record = StepRecord(
        step=new_state.step_t,
        mu=dec.mu_next,
        sigma2=dec.sigma2_next,
        sigma2_updated=dec.sigma2_updated,
        drift_kept=dec.drift_kept,
        drift_updated=dec.drift_updated,
        residual=dec.residual,
        mean_loss=float(np.mean(losses)),
        n_updated=k,
        updated_ids=tuple(int(ids[i]) for i in selected),
        alpha_eff=alpha_eff,
        sigma2_before=before.variance,
        sigma2_kept=dec.sigma2_kept,
        predicted=predict_variance(before.variance, dec.sigma2_updated, alpha_eff),
    )
    logger.debug(
        f"Step {record.step}: sigma2 {before.variance:.6g} -> {record.sigma2:.6g} "
        f"({k} updated, predicted {record.predicted:.6g})"
    )
    return new_state, record


def initial_record(state: DatasetState) -> StepRecord:
    summary = frechet_mean(state.pose_sample())
    return StepRecord(step=state.step_t, mu=summary.mean, sigma2=summary.variance)


class BootstrapRunner:
    """
    Runs the loop: interval_N canonicalizer passes, then one bootstrap step.

    Analytic canonicalizers have nothing to learn, so their passes are
    skipped. A template canonicalizer is refit by exponential moving
    average toward the canonicalized dataset on every pass.
    """

    def __init__(
        self,
        config: BootstrapConfig,
        canonicalizer: Canonicalizer,
        grid: Optional[GroupGrid] = None,
        on_step: Optional[Callable[[StepRecord], None]] = None
    ):
        """
        Initialize runner.

        Args:
            config: Loop parameters
            canonicalizer: Starting canonicalizer (updated copies are kept internally)
            grid: Search and loss grid; defaults to the canonicalizer's own
            on_step: Optional callback for each recorded step
        """
        if config.beta is not None and canonicalizer.variant != NOISY:
            raise ValueError("beta-controlled runs need a noisy canonicalizer")
        self.config = config
        self.canonicalizer = canonicalizer
        self.grid = _loss_grid(canonicalizer, grid)
        self.on_step = on_step

    def _train(self, state: DatasetState):
        self.canonicalizer = fit_template(
            self.canonicalizer, state.specimens, self.config.interval_N, self.grid, self.config.workers
        )

    def _controlled(self, sigma2: float) -> Canonicalizer:
        if self.config.beta is None:
            return self.canonicalizer
        total_weight = float(np.sum(self.canonicalizer.manifold.weights))
        return self.canonicalizer.with_noise_sigma(math.sqrt(self.config.beta * sigma2 / total_weight))

    def _emit(self, traj: TrajectoryRecord, record: StepRecord, state: DatasetState):
        traj.records.append(record)
        traj.snapshots.append(state)
        if self.on_step:
            self.on_step(record)

    def run(self, dataset: DatasetState) -> TrajectoryRecord:
        if len(dataset) == 0:
            raise ValueError("Cannot bootstrap an empty dataset")
        cfg = self.config
        traj = TrajectoryRecord(manifold=dataset.manifold, config=cfg)
        state = dataset
        record = initial_record(state)
        self._emit(traj, record, state)
        logger.info(
            f"Bootstrapping {len(dataset)} specimens on {dataset.manifold.name}: "
            f"alpha={cfg.alpha}, N={cfg.interval_N}, T={cfg.steps_T}, selection={cfg.selection}"
        )

        for _ in range(cfg.steps_T):
            if record.sigma2 < SIGMA2_FLOOR:
                traj.stopping_reason = STOP_VARIANCE_FLOOR
                traj.stopped_at = record.step
                logger.info(f"Pose variance below {SIGMA2_FLOOR:g} at step {record.step}; stopping")
                break
            self._train(state)
            state, record = bootstrap_step(state, cfg, self._controlled(record.sigma2), self.grid)
            self._emit(traj, record, state)

        traj.canonicalizer = self.canonicalizer
        logger.info(f"Run finished after {record.step} steps: sigma2 {traj.records[0].sigma2:.6g} -> {record.sigma2:.6g}")
        return traj


def run(
    config: BootstrapConfig,
    dataset: DatasetState,
    canonicalizer: Canonicalizer,
    grid: Optional[GroupGrid] = None,
    on_step: Optional[Callable[[StepRecord], None]] = None
) -> TrajectoryRecord:
    """Run the full loop; deterministic given config.seed and the canonicalizer's seed."""
    return BootstrapRunner(config, canonicalizer, grid, on_step).run(dataset)


# Verification helpers

@dataclass(frozen=True)
class MixtureStepReport:
    """Mixture-variance accounting of one step, with the tolerances it was judged by."""
    decomposition: MixtureDecomposition
    sigma2_before: float
    predicted: float
    n_updated: int
    residual_tolerance: float
    drift_tolerance: float

    @property
    def residual_ok(self) -> bool:
        return abs(self.decomposition.residual) <= self.residual_tolerance

    @property
    def drift_flagged(self) -> bool:
        return self.decomposition.drift_total > self.drift_tolerance

    def to_dict(self) -> dict:
        d = self.decomposition
        return {
            'alpha': d.alpha,
            'n_updated': self.n_updated,
            'sigma2_before': self.sigma2_before,
            'sigma2_next': d.sigma2_next,
            'kept_term': d.kept_term,
            'updated_term': d.updated_term,
            'drift_kept': d.drift_kept,
            'drift_updated': d.drift_updated,
            'residual': d.residual,
            'predicted': self.predicted,
            'residual_tolerance': self.residual_tolerance,
            'drift_tolerance': self.drift_tolerance,
            'residual_ok': self.residual_ok,
            'drift_flagged': self.drift_flagged,
        }


def _changed_rows(before: DatasetState, after: DatasetState) -> np.ndarray:
    old = before.manifold.coords_array([s.accumulated_correction for s in before.specimens])
    new = after.manifold.coords_array([s.accumulated_correction for s in after.specimens])
    return np.flatnonzero(np.any(old != new, axis=1))


def verify_lemma1(
    before: DatasetState,
    after: DatasetState,
    alpha: Optional[float] = None,
    updated_ids: Optional[Sequence[int]] = None,
    residual_tolerance: float = 5e-3,
    drift_tolerance: float = 5e-3
) -> MixtureStepReport:
    """
    Decompose the variance change between two consecutive snapshots.

    The updated subset is taken from updated_ids when given, else from the
    specimens whose corrections changed. The mixture weight is the updated
    share of the dataset; a nominal alpha that disagrees with it is logged.
    """
    if len(before) != len(after):
        raise ValueError("Snapshots must have the same cardinality")
    if updated_ids is not None:
        wanted = set(int(i) for i in updated_ids)
        rows = np.array([i for i, s in enumerate(after.specimens) if s.id in wanted], dtype=int)
    else:
        rows = _changed_rows(before, after)
    if rows.size == 0:
        raise ValueError("No specimen was updated between the snapshots")

    n = len(after)
    alpha_eff = rows.size / n
    if alpha is not None and abs(math.ceil(alpha * n - COUNT_EPS) - rows.size) > 0:
        logger.warning(f"Nominal alpha {alpha} disagrees with {rows.size}/{n} updated specimens")

    poses = after.poses_array()
    mask = np.zeros(n, dtype=bool)
    mask[rows] = True
    kept = WeightedPoseSample.from_coords(after.manifold, poses[~mask]) if rows.size < n else None
    updated = WeightedPoseSample.from_coords(after.manifold, poses[mask])
    dec = mixture_decomposition(kept, updated, alpha_eff)
    sigma2_before = frechet_mean(before.pose_sample()).variance

    return MixtureStepReport(
        decomposition=dec,
        sigma2_before=sigma2_before,
        predicted=predict_variance(sigma2_before, dec.sigma2_updated, alpha_eff),
        n_updated=int(rows.size),
        residual_tolerance=residual_tolerance,
        drift_tolerance=drift_tolerance,
    )


def prediction_gap(record: StepRecord) -> tuple[float, float]:
    """
    Error of the one-step variance prediction and the bound the step's own terms put on it.

    bound = drift terms + |residual| + (1 - alpha) |sigma2_kept - sigma2_before|
    where the last term is the change of the untouched subset's spread.
    """
    error = abs(record.sigma2 - record.predicted)
    bound = (
        record.drift_total
        + abs(record.residual)
        + (1.0 - record.alpha_eff) * abs(record.sigma2_kept - record.sigma2_before)
    )
    return error, bound

