"""
Self-seeding verification suites.

Each suite generates its own data from a fixed seed, runs the relevant
part of the library and returns named checks carrying the measured value
and the tolerance it was judged against.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from bootstrap_engine import (
    RANDOM,
    BootstrapConfig,
    bootstrap_step,
    contraction_rate,
    estimate_lambda,
    prediction_gap,
    run,
    verify_lemma1,
)
from group_core import (
    GroupManifold,
    PoseDistribution,
    compose,
    geodesic_distance,
    inverse,
    rotoscale,
    so2,
)
from synthetic_world import (
    Canonicalizer,
    DatasetSpec,
    DatasetState,
    canonicalize,
    classify_batch,
    evaluation_grid,
    fit_class_templates,
    generate_dataset,
    held_out_test_set,
    score,
    tilted_mean,
)

logger = logging.getLogger(__name__)

SUITES = ('defs', 'lemma1', 'lemma2', 'lemma3', 'theorem1')

EXACT_TOL = 1e-12
EQUIVARIANCE_TOL = 1e-9
ACCOUNTING_TOL = 1e-10
RESIDUAL_TOL = 5e-3
DRIFT_TOL = 5e-3
DRIFT_RATIO = 10.0
LAMBDA_TOL = 0.02
R2_MIN = 0.99

THEOREM_ALPHAS = (0.05, 0.1, 0.5)
THEOREM_BETAS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ''

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'passed': self.passed,
            'value': self.value,
            'tolerance': self.tolerance,
            'detail': self.detail,
        }


@dataclass
class SuiteReport:
    suite: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, value: float, tolerance: float, detail: str = ''):
        self.checks.append(Check(name, bool(passed), float(value), float(tolerance), detail))

    def to_dict(self) -> dict:
        return {
            'suite': self.suite,
            'passed': self.passed,
            'checks': [c.to_dict() for c in self.checks],
            'tables': self.tables,
        }


def pose_dataset(manifold: GroupManifold, pose: str, n: int, seed: int, classes: int = 1) -> DatasetState:
    spec = DatasetSpec(
        manifold=manifold,
        num_classes=classes,
        per_class=n // classes,
        pose_dist=PoseDistribution.parse(pose),
        shape_seed=seed,
        seed=seed,
    )
    return generate_dataset(spec)


# Suites

def suite_defs(seed: int) -> SuiteReport:
    """Oracle exactness, grid-invariant classification, equivariant template scoring."""
    report = SuiteReport('defs')
    rng = np.random.default_rng(seed)
    manifold = so2()

    data = pose_dataset(manifold, 'uniform', 1000, seed, classes=10)
    oracle = Canonicalizer.oracle(manifold)
    exact = 0
    for x in data.specimens:
        g = manifold.element(rng.uniform(0.0, 2 * np.pi))
        upright = x.at_pose(manifold.identity())
        if geodesic_distance(canonicalize(oracle, upright.transformed(g)), g) <= EXACT_TOL:
            exact += 1
    report.add('oracle_canonicalizer_exact', exact == len(data), exact, len(data),
               f"{exact}/{len(data)} poses recovered within {EXACT_TOL:g}")

    rs = rotoscale()
    spec = DatasetSpec(rs, 5, 20, PoseDistribution.parse('uniform|uniform'), shape_seed=seed, seed=seed)
    train = generate_dataset(spec)
    test = held_out_test_set(spec, per_class=10, seed=seed + 1)
    rs_oracle = Canonicalizer.oracle(rs)
    templates = fit_class_templates(rs_oracle, list(train.specimens))
    cells = evaluation_grid(rs, 17, (1.0, 1.125, 1.25))
    predictions = np.stack([
        classify_batch([s.at_pose(g) for s in test.specimens], rs_oracle, templates)
        for g in cells.elements()
    ])
    disagreeing = int(np.sum(np.any(predictions != predictions[0], axis=0)))
    report.add('classifier_grid_invariant', disagreeing == 0, disagreeing, 0,
               f"{len(cells)} cells, {len(test)} test specimens")

    template = Canonicalizer.template_from(data)
    worst = 0.0
    for _ in range(500):
        x = data.specimens[int(rng.integers(len(data)))]
        g = manifold.element(rng.uniform(0.0, 2 * np.pi))
        h = manifold.element(rng.uniform(0.0, 2 * np.pi))
        gap = abs(score(template, g, x.transformed(h)) - score(template, compose(inverse(h), g), x))
        worst = max(worst, gap)
    report.add('template_score_equivariant', worst <= EQUIVARIANCE_TOL, worst, EQUIVARIANCE_TOL,
               "max |s(g, h.x) - s(h^-1 g, x)| over 500 triples")
    return report


def suite_lemma1(seed: int) -> SuiteReport:
    """Mixture-variance accounting on the flat circle with all mass inside a half-circle."""
    report = SuiteReport('lemma1')
    manifold = so2()
    data = pose_dataset(manifold, 'wrapnorm:0:0.3', 10_000, seed)
    config = BootstrapConfig(alpha=0.5, steps_T=1, selection=RANDOM, seed=seed)
    noisy = Canonicalizer.noisy(manifold, kappa=100.0, seed=seed)
    after, record = bootstrap_step(data, config, noisy)

    accounting = verify_lemma1(data, after, updated_ids=record.updated_ids,
                               residual_tolerance=RESIDUAL_TOL, drift_tolerance=DRIFT_TOL)
    d = accounting.decomposition
    report.add('residual_vanishes_flat', accounting.residual_ok, abs(d.residual), RESIDUAL_TOL)
    gap = abs(d.terms_sum - d.sigma2_next)
    report.add('five_terms_sum_to_variance', gap <= ACCOUNTING_TOL, gap, ACCOUNTING_TOL)
    report.tables['decomposition'] = accounting.to_dict()
    return report


def suite_lemma2(seed: int) -> SuiteReport:
    """Unbiased updates keep the mean in place; a biased canonicalizer drags it."""
    report = SuiteReport('lemma2')
    manifold = so2()
    data = pose_dataset(manifold, 'wrapnorm:0:0.3', 10_000, seed)
    config = BootstrapConfig(alpha=0.5, steps_T=1, selection=RANDOM, seed=seed)

    unbiased = Canonicalizer.noisy(manifold, kappa=100.0, seed=seed)
    after, record = bootstrap_step(data, config, unbiased)
    clean = verify_lemma1(data, after, updated_ids=record.updated_ids, drift_tolerance=DRIFT_TOL)
    clean_drift = clean.decomposition.drift_total
    report.add('unbiased_drift_small', clean_drift < DRIFT_TOL, clean_drift, DRIFT_TOL)

    biased = Canonicalizer.noisy(manifold, kappa=100.0, bias=manifold.element(0.3), seed=seed)
    after, record = bootstrap_step(data, config, biased)
    dirty = verify_lemma1(data, after, updated_ids=record.updated_ids, drift_tolerance=DRIFT_TOL)
    ratio_floor = DRIFT_RATIO * max(clean_drift, 1e-300)
    report.add('biased_drift_flagged', dirty.drift_flagged and dirty.decomposition.drift_updated > ratio_floor,
               dirty.decomposition.drift_updated, ratio_floor,
               f"drift_updated must exceed {DRIFT_RATIO:g}x the unbiased drift")

    small = pose_dataset(manifold, 'wrapnorm:0:0.3', 2000, seed + 1)
    traj = run(BootstrapConfig(alpha=0.5, steps_T=50, selection=RANDOM, seed=seed), small, biased)
    target = tilted_mean(biased)
    start = geodesic_distance(traj.records[0].mu, target)
    end = geodesic_distance(traj.records[-1].mu, target)
    report.add('mean_moves_to_tilted_mean', end < start, end, start,
               "distance of the final mean to the tilted mean must fall below the initial one")
    report.tables['drift'] = {
        'unbiased': clean.to_dict(),
        'biased': dirty.to_dict(),
        'tilted_mean_distance': {'initial': start, 'final': end},
    }
    return report


def suite_lemma3(seed: int) -> SuiteReport:
    """One-step prediction error stays inside its own accounting; contraction follows the updated variance."""
    report = SuiteReport('lemma3')
    manifold = so2()
    data = pose_dataset(manifold, 'vonmises:0:2', 2000, seed)
    noisy = Canonicalizer.noisy(manifold, kappa=100.0, seed=seed)
    traj = run(BootstrapConfig(alpha=0.1, steps_T=100, selection=RANDOM, seed=seed), data, noisy)

    overruns, worst_error, checked, agreeing = 0, 0.0, 0, 0
    for r in traj.records[1:]:
        error, bound = prediction_gap(r)
        worst_error = max(worst_error, error)
        if error > bound + ACCOUNTING_TOL:
            overruns += 1
        # Only judge steps where the predicted change outweighs the unexplained part
        if r.alpha_eff * abs(r.sigma2_updated - r.sigma2_before) > abs(r.sigma2 - r.predicted):
            checked += 1
            if np.sign(r.sigma2 - r.sigma2_before) == np.sign(r.sigma2_updated - r.sigma2_before):
                agreeing += 1

    report.add('prediction_within_accounting', overruns == 0, overruns, 0,
               f"max |measured - predicted| = {worst_error:.3g}; slack {ACCOUNTING_TOL:g}")
    report.add('contraction_iff_updated_variance_smaller', agreeing == checked, agreeing, checked,
               f"{checked} of {len(traj) - 1} steps decisive")
    report.tables['steps'] = {'decisive': checked, 'agreeing': agreeing, 'max_error': worst_error}
    return report


def beta_controlled_run(alpha: float, beta: float, seed: int, n: int = 2000, steps: int = 60):
    manifold = so2()
    data = pose_dataset(manifold, 'wrapnorm:0:0.5', n, seed)
    noisy = Canonicalizer.noisy(manifold, seed=seed)
    config = BootstrapConfig(alpha=alpha, steps_T=steps, selection=RANDOM, seed=seed, beta=beta)
    return run(config, data, noisy)


def suite_theorem1(seed: int) -> SuiteReport:
    """Fitted contraction rates of beta-controlled runs against 1 - alpha (1 - beta)."""
    report = SuiteReport('theorem1')
    rows = []
    for i, alpha in enumerate(THEOREM_ALPHAS):
        for j, beta in enumerate(THEOREM_BETAS):
            expected = contraction_rate(alpha, beta)
            fit = estimate_lambda(beta_controlled_run(alpha, beta, seed + 3 * i + j))
            gap = abs(fit.lambda_hat - expected)
            report.add(f'lambda_alpha{alpha:g}_beta{beta:g}', gap <= LAMBDA_TOL and fit.r_squared >= R2_MIN,
                       fit.lambda_hat, LAMBDA_TOL,
                       f"expected {expected:.4f}, r^2 {fit.r_squared:.4f} (min {R2_MIN})")
            rows.append({
                'alpha': alpha,
                'beta': beta,
                'lambda': expected,
                'lambda_hat': fit.lambda_hat,
                'r_squared': fit.r_squared,
                'points': fit.points_used,
            })
    report.tables['rates'] = rows
    return report


SUITE_FUNCTIONS: dict[str, Callable[[int], SuiteReport]] = {
    'defs': suite_defs,
    'lemma1': suite_lemma1,
    'lemma2': suite_lemma2,
    'lemma3': suite_lemma3,
    'theorem1': suite_theorem1,
}


def run_suites(names: list[str], seed: int = 0, workers: int = 1) -> list[SuiteReport]:
    """Run the named suites (in parallel when workers > 1); reports come back in the order asked."""
    unknown = [name for name in names if name not in SUITE_FUNCTIONS]
    if unknown:
        raise ValueError(f"Unknown suite(s): {', '.join(unknown)}")

    def one(name: str) -> SuiteReport:
        logger.info(f"Running suite {name}")
        return SUITE_FUNCTIONS[name](seed)

    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, names))
    return [one(name) for name in names]
