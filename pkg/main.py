#!/usr/bin/env python3
"""
Bootstrap Align

A CLI for simulating bootstrapped pose re-alignment on synthetic 2-D
specimens and checking the variance-contraction theory behind it.

Usage:
    python main.py generate --classes 5 --per-class 20 --pose vonmises:0:2 --seed 7
    python main.py simulate --config run.cfg --dataset runs/dataset.json
    python main.py verify theorem1 lemma2
    python main.py robustness --config run.cfg
    python main.py sweep --config run.cfg --alphas 0.01,0.05,0.1 --intervals 1,5,10
    python main.py frechet poses.txt --manifold so2
    python main.py ledger runs --unfinished

Exit codes: 0 success, 1 config error, 2 I/O error, 3 verification failure.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from sqlalchemy.exc import SQLAlchemyError

from bootstrap_engine import (
    BootstrapRunner,
    StepRecord,
    TrajectoryRecord,
    contraction_rate,
    estimate_lambda,
)
from chart import ChartGenerator
from config import config
from dataset_io import (
    SchemaVersionError,
    dumps_json,
    parse_pose_list,
    read_dataset,
    read_templates,
    sha256_text,
    write_accuracy_csv,
    write_dataset,
    write_json,
    write_manifest,
    write_sweep_csv,
    write_templates,
    write_trajectory,
)
from frechet_stats import WeightedPoseSample, frechet_mean, frechet_mean_oracle
from group_core import GroupManifold, PoseDistribution, rotation_scale
from run_config import ConfigError, RunConfig, describe_schema, parse_override
from synthetic_world import (
    TEMPLATE,
    Canonicalizer,
    DatasetSpec,
    DatasetState,
    evaluation_grid,
    fit_class_templates,
    fit_template,
    generate_dataset,
    grid_accuracy,
    held_out_test_set,
)
from verification import SUITES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_VERIFY = 3

console = Console()
logger = logging.getLogger(__name__)


def parse_args(argv: Optional[list[str]] = None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description='Bootstrapped pose re-alignment simulator',
        epilog='Run config keys:\n' + describe_schema(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Master seed (overrides the config)')
    common.add_argument('--workers', type=int, default=None, help='Worker threads (default BOOTSTRAP_WORKERS)')
    common.add_argument('--out', type=Path, default=None, help='Existing output directory (default BOOTSTRAP_OUTPUT_DIR)')
    common.add_argument('--no-plot', action='store_true', help='Skip SVG output')

    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common], help='Generate a synthetic dataset')
    gen.add_argument('--config', type=Path, help='Run config to take the dataset keys from')
    gen.add_argument('--manifold', default='so2', help='Group (default so2)')
    gen.add_argument('--classes', type=int, help='Number of classes')
    gen.add_argument('--per-class', type=int, help='Specimens per class')
    gen.add_argument('--pose', help='Initial pose distribution, e.g. vonmises:0:2')
    gen.add_argument('--shape-seed', type=int, default=None, help='Seed for class shapes (default: --seed)')
    gen.add_argument('--name', default='dataset', help='Output file stem')
    gen.set_defaults(handler=cmd_generate)

    sim = sub.add_parser('simulate', parents=[common], help='Run the bootstrap loop')
    sim.add_argument('--config', type=Path, required=True, help='Run config file')
    sim.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a config key')
    sim.add_argument('--dataset', type=Path, help='Dataset file (default: generate from the config)')
    sim.add_argument('--ledger', default=None, help='SQLAlchemy URL of the run ledger')
    sim.add_argument('--label', default=None, help='Run label (default: config file stem)')
    sim.set_defaults(handler=cmd_simulate)

    ver = sub.add_parser('verify', parents=[common], help='Run verification suites')
    ver.add_argument('suites', nargs='*', default=[], help=f"Suites: {', '.join(SUITES)} (default: all)")
    ver.set_defaults(handler=cmd_verify)

    rob = sub.add_parser('robustness', parents=[common], help='Toy-classifier accuracy over the evaluation grid')
    rob.add_argument('--config', type=Path, required=True, help='Run config file')
    rob.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a config key')
    rob.add_argument('--dataset', type=Path, help='Training dataset (default: generate from the config)')
    rob.add_argument('--templates', type=Path, help='Saved templates.json to evaluate instead of training')
    rob.set_defaults(handler=cmd_robustness)

    swp = sub.add_parser('sweep', parents=[common], help='Held-out accuracy over an interval x alpha grid')
    swp.add_argument('--config', type=Path, required=True, help='Run config file')
    swp.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a config key')
    swp.add_argument('--dataset', type=Path, help='Training dataset (default: generate from the config)')
    swp.add_argument('--alphas', default='0.01,0.05,0.1', help='Comma-separated update fractions')
    swp.add_argument('--intervals', default='1,5,10', help='Comma-separated canonicalizer passes per step')
    swp.set_defaults(handler=cmd_sweep)

    fre = sub.add_parser('frechet', help='Frechet mean and variance of a pose list')
    fre.add_argument('poses', nargs='?', default='-', help="Pose file, one pose per line ('-' for stdin)")
    fre.add_argument('--manifold', default='so2', help='Group the poses live on')
    fre.add_argument('--oracle', action='store_true', help='Also run the brute-force grid search')
    fre.add_argument('--json', action='store_true', help='Print JSON instead of a table')
    fre.set_defaults(handler=cmd_frechet)

    ledger_url = argparse.ArgumentParser(add_help=False)
    ledger_url.add_argument('--ledger', default=None, help='SQLAlchemy URL of the run ledger (default BOOTSTRAP_LEDGER_URL)')
    led = sub.add_parser('ledger', help='Inspect the run ledger')
    led_sub = led.add_subparsers(dest='ledger_command', required=True)
    runs = led_sub.add_parser('runs', parents=[ledger_url], help='List recorded runs')
    runs.add_argument('--unfinished', action='store_true', help='Only runs that never ended')
    runs.set_defaults(handler=cmd_ledger_runs)
    show = led_sub.add_parser('show', parents=[ledger_url], help='Steps and plots of one run')
    show.add_argument('run_id', type=int, help='Run id')
    show.add_argument('--limit', type=int, default=None, help='Show at most this many steps')
    show.set_defaults(handler=cmd_ledger_show)

    return parser.parse_args(argv)


def setup_logging(level: str):
    logging.basicConfig(
        level=level,
        format='%(message)s',
        datefmt='[%X]',
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def print_header(title: str, subtitle: str):
    """Print command header."""
    console.print(Panel.fit(
        f"[bold blue]{title}[/bold blue]\n[dim]{subtitle}[/dim]",
        border_style="blue"
    ))


def output_dir(args) -> Path:
    """Resolve the output directory; it must already exist."""
    out = args.out or config.OUTPUT_DIR
    if not out.is_dir():
        raise FileNotFoundError(f"Output directory does not exist: {out}")
    return out


def worker_count(args) -> int:
    return args.workers if args.workers is not None else config.workers()


def load_run_config(args) -> RunConfig:
    overrides = dict(parse_override(text) for text in args.set)
    if args.seed is not None:
        overrides['seed'] = str(args.seed)
    if args.no_plot:
        overrides['plot'] = 'false'
    return RunConfig.from_file(args.config, overrides)


def load_or_generate(run_cfg: RunConfig, dataset_path: Optional[Path]) -> tuple[DatasetSpec, DatasetState]:
    if dataset_path is None:
        spec = run_cfg.dataset_spec()
        return spec, generate_dataset(spec)
    spec, state = read_dataset(dataset_path)
    if spec.manifold != run_cfg.manifold:
        raise ConfigError('manifold', f"config says {run_cfg.manifold.name}, dataset is on {spec.manifold.name}")
    return spec, state


# generate

def cmd_generate(args) -> int:
    """Write a dataset file plus its provenance manifest."""
    seed = args.seed if args.seed is not None else 0
    if args.config:
        overrides = {'seed': str(args.seed)} if args.seed is not None else {}
        spec = RunConfig.from_file(args.config, overrides).dataset_spec()
    else:
        missing = [flag for flag, value in (('--classes', args.classes), ('--per-class', args.per_class), ('--pose', args.pose)) if value is None]
        if missing:
            raise ConfigError(', '.join(missing), "required without --config")
        try:
            spec = DatasetSpec(
                manifold=GroupManifold.parse(args.manifold),
                num_classes=args.classes,
                per_class=args.per_class,
                pose_dist=PoseDistribution.parse(args.pose),
                shape_seed=args.shape_seed if args.shape_seed is not None else seed,
                seed=seed,
            )
        except ValueError as e:
            raise ConfigError('generate', str(e)) from None

    out = output_dir(args)
    state = generate_dataset(spec)
    data_path = out / f'{args.name}.json'
    digest = write_dataset(data_path, spec, state)
    write_manifest(
        out / f'{args.name}.manifest.json',
        command='generate',
        seed=spec.specimen_seed,
        outputs={data_path.name: digest},
        spec=spec.to_dict(),
        specimens=len(state),
    )
    console.print(f"[green]Wrote {len(state)} specimens to {data_path}[/green]")
    return EXIT_OK


# simulate

class LedgerRecorder:
    """Mirrors a run into the ledger; failures disable it instead of failing the run."""

    def __init__(self, url: str, label: str, run_cfg: RunConfig):
        from db import RunRepository, get_session, init_db

        init_db(url)
        self.session = get_session(url)
        self.repo = RunRepository(self.session, batch_size=config.LEDGER_BATCH_SIZE)
        self.run = self.repo.create_run(
            label=label,
            manifold=run_cfg.manifold.name,
            seed=run_cfg.seed,
            resolved_config=run_cfg.to_text(),
        )
        self.active = True
        logger.info(f"Recording run {self.run.id} in the ledger")

    def _disable(self, what: str, error: SQLAlchemyError):
        logger.warning(f"Ledger {what} failed, recording stops for this run: {error}")
        self.active = False
        try:
            self.session.rollback()
        except SQLAlchemyError:
            pass

    def on_step(self, record: StepRecord):
        if not self.active:
            return
        try:
            self.repo.add_step(
                self.run.id,
                step=record.step,
                mu=str(record.mu),
                sigma2=record.sigma2,
                sigma2_updated=record.sigma2_updated,
                drift_kept=record.drift_kept,
                drift_updated=record.drift_updated,
                residual=record.residual,
                mean_loss=record.mean_loss,
                n_updated=record.n_updated,
            )
        except SQLAlchemyError as e:
            self._disable(f"step {record.step}", e)

    def finish(self, traj: TrajectoryRecord, lambda_hat: Optional[float], plots: list[str]):
        if self.active:
            try:
                for path in plots:
                    self.repo.add_plot(self.run.id, path)
                self.repo.end_run(self.run.id, traj.stopping_reason, lambda_hat)
            except SQLAlchemyError as e:
                self._disable("finish", e)
        self.close()

    def close(self):
        from db import close_db

        self.session.close()
        close_db()


def open_ledger(url: str, label: str, run_cfg: RunConfig) -> Optional[LedgerRecorder]:
    if not url:
        return None
    try:
        return LedgerRecorder(url, label, run_cfg)
    except SQLAlchemyError as e:
        logger.warning(f"Ledger unavailable, continuing without it: {e}")
        return None


def fit_rate(traj: TrajectoryRecord):
    try:
        return estimate_lambda(traj)
    except ValueError as e:
        logger.info(f"No rate fit: {e}")
        return None


def print_trajectory_summary(traj: TrajectoryRecord, fit, lambda_theory: Optional[float]):
    table = Table(title="Trajectory", show_header=False)
    table.add_column("Property", style="bold")
    table.add_column("Value")
    table.add_row("Steps", str(len(traj) - 1))
    table.add_row("Initial variance", f"{traj.records[0].sigma2:.6g}")
    table.add_row("Final variance", f"{traj.records[-1].sigma2:.6g}")
    table.add_row("Final mean", str(traj.records[-1].mu))
    table.add_row("Stopping reason", traj.stopping_reason)
    if fit:
        table.add_row("Fitted rate", f"{fit.lambda_hat:.4f} (r^2 {fit.r_squared:.4f})")
    if lambda_theory is not None:
        table.add_row("Predicted rate", f"{lambda_theory:.4f}")
    console.print(table)


def cmd_simulate(args) -> int:
    """Run the loop and write trajectory CSV, resolved config, manifest and plot."""
    run_cfg = load_run_config(args)
    out = output_dir(args)
    workers = worker_count(args)
    label = args.label or args.config.stem
    print_header("Bootstrap simulation", f"{label} on {run_cfg.manifold.name}")

    _, dataset = load_or_generate(run_cfg, args.dataset)
    canonicalizer = run_cfg.build_canonicalizer(dataset)
    ledger = open_ledger(args.ledger or config.LEDGER_URL, label, run_cfg)

    runner = BootstrapRunner(
        run_cfg.bootstrap_config(workers),
        canonicalizer,
        on_step=ledger.on_step if ledger else None,
    )
    traj = runner.run(dataset)

    fit = fit_rate(traj)
    lambda_theory = None
    if run_cfg.beta is not None and run_cfg.alpha < 1.0:
        lambda_theory = contraction_rate(run_cfg.alpha, run_cfg.beta)

    config_text = run_cfg.to_text()
    (out / 'resolved_config.txt').write_text(config_text)
    outputs = {
        'resolved_config.txt': sha256_text(config_text),
        'trajectory.csv': write_trajectory(out / 'trajectory.csv', traj),
    }
    if traj.canonicalizer.variant == TEMPLATE:
        class_templates = fit_class_templates(traj.canonicalizer, list(traj.final_state.specimens), workers=workers)
        outputs['templates.json'] = write_templates(out / 'templates.json', traj.canonicalizer, class_templates)

    plots = []
    if run_cfg.plot:
        charts = ChartGenerator(out)
        steps = [r.step for r in traj.records]
        plots.append(charts.variance_chart(
            steps,
            traj.sigma2(),
            label=f'{label}: pose variance',
            predicted=[r.predicted for r in traj.records],
            lambda_theory=lambda_theory,
            lambda_hat=fit.lambda_hat if fit else None,
            r_squared=fit.r_squared if fit else None,
        ))

    write_manifest(
        out / 'manifest.json',
        command='simulate',
        seed=run_cfg.seed,
        outputs=outputs,
        config=run_cfg.to_dict(),
        stopping_reason=traj.stopping_reason,
        stopped_at=traj.stopped_at,
        lambda_hat=fit.lambda_hat if fit else None,
        r_squared=fit.r_squared if fit else None,
        lambda_predicted=lambda_theory,
    )

    if ledger:
        ledger.finish(traj, fit.lambda_hat if fit else None, plots)

    print_trajectory_summary(traj, fit, lambda_theory)
    console.print(f"[green]Outputs written to {out}[/green]")
    return EXIT_OK


# verify

def cmd_verify(args) -> int:
    """Run verification suites; exit 3 if any check fails."""
    suites = list(args.suites) or list(SUITES)
    seed = args.seed if args.seed is not None else 0
    out = output_dir(args)
    print_header("Verification", ', '.join(suites))

    reports = run_suites(suites, seed=seed, workers=worker_count(args))
    write_json(out / 'verify_report.json', {
        'seed': seed,
        'passed': all(r.passed for r in reports),
        'suites': [r.to_dict() for r in reports],
    })

    table = Table(title="Checks")
    table.add_column("Suite", style="bold")
    table.add_column("Check")
    table.add_column("Value", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Result")
    for report in reports:
        for check in report.checks:
            verdict = "[green]pass[/green]" if check.passed else "[red]FAIL[/red]"
            table.add_row(report.suite, check.name, f"{check.value:.6g}", f"{check.tolerance:.6g}", verdict)
    console.print(table)

    rates = next((r.tables['rates'] for r in reports if 'rates' in r.tables), None)
    if rates:
        rate_table = Table(title="Contraction rates")
        for column in ('alpha', 'beta', 'lambda', 'lambda_hat', 'r_squared'):
            rate_table.add_column(column, justify="right")
        for row in rates:
            rate_table.add_row(*(f"{row[c]:.4f}" for c in ('alpha', 'beta', 'lambda', 'lambda_hat', 'r_squared')))
        console.print(rate_table)

    failed = [f"{r.suite}.{c.name}" for r in reports for c in r.failures]
    if failed:
        console.print(f"[red]Failed: {', '.join(failed)}[/red]")
        return EXIT_VERIFY
    console.print("[bold green]All checks passed[/bold green]")
    return EXIT_OK


# robustness

def accuracy_table(grid, accuracy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrange per-cell accuracies as (rotations, scales)."""
    angles, scales = rotation_scale(grid.manifold, grid.coords)
    angle_axis, angle_idx = np.unique(np.round(angles, 12), return_inverse=True)
    scale_axis, scale_idx = np.unique(np.round(scales, 12), return_inverse=True)
    table = np.full((angle_axis.size, scale_axis.size), np.nan)
    table[angle_idx, scale_idx] = accuracy
    return angle_axis, scale_axis, table


def evaluation_setup(run_cfg: RunConfig, spec: DatasetSpec):
    """Evaluation cells and held-out test set shared by robustness and sweep."""
    scales = run_cfg.scales
    if run_cfg.manifold.scale_leaf() is None and tuple(scales) != (1.0,):
        logger.warning(f"{run_cfg.manifold.name} has no scale factor; evaluating at scale 1 only")
        scales = (1.0,)
    try:
        cells = evaluation_grid(run_cfg.manifold, run_cfg.rotation_order, scales)
    except ValueError as e:
        raise ConfigError('rotation_order', str(e)) from None
    return cells, held_out_test_set(spec, run_cfg.test_per_class, run_cfg.test_seed)


def off_identity_mean(accuracy: np.ndarray, cells) -> float:
    mask = np.ones(len(cells), dtype=bool)
    mask[cells.identity_index] = False
    return float(accuracy[mask].mean()) if mask.any() else math.nan


def load_saved_templates(path: Path, run_cfg: RunConfig, canonicalizer: Canonicalizer):
    """Restore a canonicalizer and its classifier from a templates file written by an earlier run."""
    saved = read_templates(path)
    if saved['manifold'] != run_cfg.manifold:
        raise ConfigError('templates', f"file is on {saved['manifold'].name}, config says {run_cfg.manifold.name}")
    if saved['variant'] != canonicalizer.variant:
        raise ConfigError('templates', f"file holds a {saved['variant']} canonicalizer, config builds {canonicalizer.variant}")
    if not saved['class_templates']:
        raise ConfigError('templates', f"{path} has no class templates")
    if canonicalizer.variant == TEMPLATE:
        canonicalizer = replace(
            canonicalizer,
            per_class=saved['per_class'],
            template=saved['template'],
            class_templates=saved['canonicalizer_templates'],
        )
    return canonicalizer, saved['class_templates']


def cmd_robustness(args) -> int:
    """Accuracy of the toy classifier over rotation x scale cells, against identity and CanPrior baselines."""
    run_cfg = load_run_config(args)
    out = output_dir(args)
    workers = worker_count(args)
    print_header("Robustness grid", f"{run_cfg.canonicalizer} canonicalizer on {run_cfg.manifold.name}")

    spec, train = load_or_generate(run_cfg, args.dataset)
    specimens = list(train.specimens)
    canonicalizer = run_cfg.build_canonicalizer(train)
    if args.templates:
        canonicalizer, templates = load_saved_templates(args.templates, run_cfg, canonicalizer)
    else:
        if canonicalizer.variant == TEMPLATE:
            traj = BootstrapRunner(run_cfg.bootstrap_config(workers), canonicalizer).run(train)
            canonicalizer, specimens = traj.canonicalizer, list(traj.final_state.specimens)
        templates = fit_class_templates(canonicalizer, specimens, workers=workers)

    cells, test = evaluation_setup(run_cfg, spec)
    accuracy = grid_accuracy(test, canonicalizer, templates, cells, workers=workers)

    baseline_c = Canonicalizer.identity_baseline(run_cfg.manifold)
    baseline_templates = fit_class_templates(baseline_c, list(train.specimens), workers=workers)
    baseline = grid_accuracy(test, baseline_c, baseline_templates, cells, workers=workers)

    # steps x interval template passes; the training specimens never move
    prior_c = fit_template(
        run_cfg.canprior_canonicalizer(train), train.specimens, run_cfg.steps * run_cfg.interval, workers=workers
    )
    prior_templates = fit_class_templates(prior_c, list(train.specimens), workers=workers)
    canprior = grid_accuracy(test, prior_c, prior_templates, cells, workers=workers)

    angles, scale_axis, acc_table = accuracy_table(cells, accuracy)
    _, _, base_table = accuracy_table(cells, baseline)
    _, _, prior_table = accuracy_table(cells, canprior)

    config_text = run_cfg.to_text()
    (out / 'resolved_config.txt').write_text(config_text)
    outputs = {
        'resolved_config.txt': sha256_text(config_text),
        'robustness.csv': write_accuracy_csv(
            out / 'robustness.csv', angles, scale_axis, acc_table, base_table, prior_table
        ),
        'templates.json': write_templates(out / 'templates.json', canonicalizer, templates),
    }
    if run_cfg.plot:
        ChartGenerator(out).polar_accuracy_charts(
            angles, scale_axis, acc_table, label=run_cfg.canonicalizer, baseline=base_table, canprior=prior_table
        )

    summary = {
        'mean_accuracy': float(accuracy.mean()),
        'off_identity_accuracy': off_identity_mean(accuracy, cells),
        'baseline_mean_accuracy': float(baseline.mean()),
        'baseline_off_identity_accuracy': off_identity_mean(baseline, cells),
        'canprior_mean_accuracy': float(canprior.mean()),
        'canprior_off_identity_accuracy': off_identity_mean(canprior, cells),
        'identity_cell_accuracy': float(accuracy[cells.identity_index]),
    }
    write_manifest(
        out / 'robustness.manifest.json',
        command='robustness',
        seed=run_cfg.seed,
        outputs=outputs,
        config=run_cfg.to_dict(),
        cells=len(cells),
        templates_from=str(args.templates) if args.templates else None,
        summary=summary,
    )

    table = Table(title="Accuracy", show_header=False)
    table.add_column("Property", style="bold")
    table.add_column("Value")
    for key, value in summary.items():
        table.add_row(key.replace('_', ' '), f"{value:.4f}")
    console.print(table)
    return EXIT_OK


# sweep

def parse_values(text: str, cast, name: str) -> tuple:
    try:
        values = tuple(cast(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise ConfigError(name, f"expected a comma-separated list, got '{text}'") from None
    if not values:
        raise ConfigError(name, "needs at least one value")
    return values


def cmd_sweep(args) -> int:
    """Bootstrap once per (interval, alpha) cell and score each result on the held-out grid."""
    run_cfg = load_run_config(args)
    out = output_dir(args)
    workers = worker_count(args)
    alphas = parse_values(args.alphas, float, 'alphas')
    intervals = parse_values(args.intervals, int, 'intervals')
    print_header("Interval x alpha sweep", f"{run_cfg.canonicalizer} canonicalizer on {run_cfg.manifold.name}")

    spec, train = load_or_generate(run_cfg, args.dataset)
    cells, test = evaluation_setup(run_cfg, spec)

    rows = []
    grid = np.full((len(intervals), len(alphas)), np.nan)
    for i, interval in enumerate(intervals):
        for j, alpha in enumerate(alphas):
            cell_cfg = run_cfg.with_overrides({'interval': str(interval), 'alpha': repr(alpha)})
            traj = BootstrapRunner(cell_cfg.bootstrap_config(workers), cell_cfg.build_canonicalizer(train)).run(train)
            templates = fit_class_templates(traj.canonicalizer, list(traj.final_state.specimens), workers=workers)
            accuracy = grid_accuracy(test, traj.canonicalizer, templates, cells, workers=workers)
            grid[i, j] = accuracy.mean()
            rows.append({
                'interval': interval,
                'alpha': alpha,
                'accuracy': float(accuracy.mean()),
                'off_identity_accuracy': off_identity_mean(accuracy, cells),
                'sigma2_initial': traj.records[0].sigma2,
                'sigma2_final': traj.records[-1].sigma2,
                'steps_run': len(traj) - 1,
            })
            logger.info(f"N={interval} alpha={alpha:g}: accuracy {grid[i, j]:.4f}")

    config_text = run_cfg.to_text()
    (out / 'resolved_config.txt').write_text(config_text)
    outputs = {
        'resolved_config.txt': sha256_text(config_text),
        'sweep.csv': write_sweep_csv(out / 'sweep.csv', rows),
    }
    if run_cfg.plot:
        ChartGenerator(out).sweep_heatmap(intervals, alphas, grid, label=run_cfg.canonicalizer)

    best = max(rows, key=lambda r: r['accuracy'])
    write_manifest(
        out / 'sweep.manifest.json',
        command='sweep',
        seed=run_cfg.seed,
        outputs=outputs,
        config=run_cfg.to_dict(),
        intervals=list(intervals),
        alphas=list(alphas),
        best={'interval': best['interval'], 'alpha': best['alpha'], 'accuracy': best['accuracy']},
    )

    table = Table(title="Mean grid accuracy")
    table.add_column("N \\ alpha", style="bold")
    for alpha in alphas:
        table.add_column(f"{alpha:g}", justify="right")
    for i, interval in enumerate(intervals):
        table.add_row(str(interval), *(f"{value:.4f}" for value in grid[i]))
    console.print(table)
    return EXIT_OK


# frechet

def cmd_frechet(args) -> int:
    """Frechet mean and variance of poses read from a file or stdin."""
    try:
        manifold = GroupManifold.parse(args.manifold)
    except ValueError as e:
        raise ConfigError('manifold', str(e)) from None
    text = sys.stdin.read() if args.poses == '-' else Path(args.poses).read_text()
    try:
        coords, weights = parse_pose_list(text, manifold)
    except ValueError as e:
        raise ConfigError('poses', str(e)) from None

    sample = WeightedPoseSample.from_coords(manifold, coords, weights)
    result = frechet_mean(sample)
    data = {
        'manifold': manifold.name,
        'n': len(sample),
        'mean': list(result.mean.coords),
        'variance': result.variance,
        'converged': result.converged,
        'iterations': result.iterations,
    }
    if args.oracle:
        oracle = frechet_mean_oracle(sample)
        data['oracle_mean'] = list(oracle.mean.coords)
        data['oracle_variance'] = oracle.variance

    if args.json:
        print(dumps_json(data), end='')
        return EXIT_OK

    table = Table(title=f"Frechet statistics on {manifold.name}", show_header=False)
    table.add_column("Property", style="bold")
    table.add_column("Value")
    table.add_row("Poses", str(len(sample)))
    table.add_row("Mean", str(result.mean))
    table.add_row("Variance", f"{result.variance:.10g}")
    table.add_row("Converged", f"{result.converged} ({result.iterations} iterations)")
    if args.oracle:
        table.add_row("Oracle mean", str(oracle.mean))
        table.add_row("Oracle variance", f"{oracle.variance:.10g}")
    console.print(table)
    return EXIT_OK


# ledger

def open_repository(url: Optional[str]):
    from db import RunRepository, get_session, init_db

    url = url or config.LEDGER_URL
    if not url:
        raise ConfigError('ledger', "no ledger URL (set BOOTSTRAP_LEDGER_URL or pass --ledger)")
    init_db(url)
    return RunRepository(get_session(url))


def _fmt_optional(value: Optional[float], spec: str = '.6g') -> str:
    return '-' if value is None else format(value, spec)


def cmd_ledger_runs(args) -> int:
    """List ledger runs, optionally only those that never ended."""
    from db import close_db

    try:
        repo = open_repository(args.ledger)
        runs = repo.get_unfinished_runs() if args.unfinished else repo.list_runs()
        table = Table(title="Unfinished runs" if args.unfinished else "Runs")
        for column in ("Id", "Label", "Manifold", "Seed", "Stopped", "Rate", "Started"):
            table.add_column(column)
        for run in runs:
            table.add_row(
                str(run.id),
                run.label,
                run.manifold,
                str(run.seed),
                run.stopping_reason or '-',
                _fmt_optional(run.lambda_hat, '.4f'),
                f"{run.started_at:%Y-%m-%d %H:%M}" if run.started_at else '-',
            )
        repo.session.close()
    except SQLAlchemyError as e:
        console.print(f"[red]Ledger error: {e}[/red]")
        return EXIT_IO
    finally:
        close_db()
    console.print(table)
    return EXIT_OK


def cmd_ledger_show(args) -> int:
    """Print one run's resolved config, step rows and plots."""
    from db import close_db

    try:
        repo = open_repository(args.ledger)
        run = repo.get_run(args.run_id)
        if run is None:
            raise ConfigError('run_id', f"no run {args.run_id} in the ledger")
        total = repo.get_step_count(run.id)
        steps = repo.get_run_steps(run.id, limit=args.limit)
        plots = [p.plot_path for p in repo.get_run_plots(run.id)]

        console.print(Panel(run.resolved_config.rstrip() or '(empty)', title=f"Run {run.id}: {run.label}"))
        table = Table(title=f"Steps ({len(steps)} of {total})")
        for column in ("Step", "Mean", "Variance", "Updated variance", "Residual", "Updated"):
            table.add_column(column, justify="right")
        for row in steps:
            table.add_row(
                str(row.step),
                row.mu,
                f"{row.sigma2:.6g}",
                _fmt_optional(row.sigma2_updated),
                _fmt_optional(row.residual),
                str(row.n_updated),
            )
        repo.session.close()
    except SQLAlchemyError as e:
        console.print(f"[red]Ledger error: {e}[/red]")
        return EXIT_IO
    finally:
        close_db()
    console.print(table)
    for path in plots:
        console.print(f"[dim]plot:[/dim] {path}")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point; returns the exit code."""
    args = parse_args(argv)

    problems = config.validate()
    if problems:
        console.print(f"[red]Invalid environment: {'; '.join(problems)}[/red]")
        return EXIT_CONFIG
    setup_logging(config.LOG_LEVEL)

    try:
        return args.handler(args)
    except ConfigError as e:
        console.print(f"[red]Config error: {e}[/red]")
        return EXIT_CONFIG
    except (SchemaVersionError, json.JSONDecodeError) as e:
        console.print(f"[red]Unreadable file: {e}[/red]")
        return EXIT_IO
    except OSError as e:
        console.print(f"[red]I/O error: {e}[/red]")
        return EXIT_IO
    except ValueError as e:
        console.print(f"[red]Invalid input: {e}[/red]")
        return EXIT_CONFIG
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
