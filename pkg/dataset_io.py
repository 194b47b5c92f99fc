"""
Versioned file formats: datasets, templates, trajectory and robustness CSVs, manifests.

Every file names its schema on the first line (CSV) or under "schema"
(JSON), and readers refuse versions they do not know. Writers are
deterministic: identical inputs give identical bytes.
"""
import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from bootstrap_engine import StepRecord, TrajectoryRecord
from group_core import GroupManifold
from synthetic_world import (
    TEMPLATE,
    Canonicalizer,
    DatasetSpec,
    DatasetState,
    Specimen,
)

DATASET_SCHEMA = 'dataset/1'
TEMPLATES_SCHEMA = 'templates/2'
TRAJECTORY_SCHEMA = 'trajectory/1'
ROBUSTNESS_SCHEMA = 'robustness/2'
SWEEP_SCHEMA = 'sweep/1'
MANIFEST_SCHEMA = 'manifest/1'


class SchemaVersionError(ValueError):
    """A file declares a schema this version cannot read."""


def _check_schema(found: Optional[str], expected: str, path: Path):
    if found != expected:
        raise SchemaVersionError(f"{path}: expected schema '{expected}', found '{found}'")


def _clean(value: Any) -> Any:
    """JSON-safe copy: NaN becomes null, numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dumps_json(data: Any) -> str:
    return json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + '\n'


def write_json(path: Path, data: Any) -> str:
    """Write deterministic JSON; returns the file's sha256."""
    text = dumps_json(data)
    Path(path).write_text(text)
    return sha256_text(text)


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# Datasets

def write_dataset(path: Path, spec: DatasetSpec, state: DatasetState) -> str:
    """Write a dataset with its generating spec; returns the sha256 of the file."""
    data = {
        'schema': DATASET_SCHEMA,
        'spec': spec.to_dict(),
        'step_t': state.step_t,
        'specimens': [
            {
                'id': s.id,
                'class': s.class_label,
                'shape': s.canonical_shape.tolist(),
                'true_pose': list(s.true_pose.coords),
                'correction': list(s.accumulated_correction.coords),
            }
            for s in state.specimens
        ],
    }
    return write_json(path, data)


def read_dataset(path: Path) -> tuple[DatasetSpec, DatasetState]:
    path = Path(path)
    data = read_json(path)
    _check_schema(data.get('schema'), DATASET_SCHEMA, path)
    spec = DatasetSpec.from_dict(data['spec'])
    manifold = spec.manifold
    specimens = tuple(
        Specimen(
            id=int(row['id']),
            class_label=int(row['class']),
            canonical_shape=np.asarray(row['shape'], dtype=float),
            true_pose=manifold.from_array(np.asarray(row['true_pose'], dtype=float)),
            accumulated_correction=manifold.from_array(np.asarray(row['correction'], dtype=float)),
        )
        for row in data['specimens']
    )
    return spec, DatasetState(manifold=manifold, specimens=specimens, step_t=int(data.get('step_t', 0)))


# Templates

def write_templates(path: Path, canonicalizer: Canonicalizer, class_templates: Optional[dict] = None) -> str:
    """
    Save the classifier's class templates together with the canonicalizer that
    defines their frame. Only a template canonicalizer has templates of its own.
    """
    learned = canonicalizer.variant == TEMPLATE
    data = {
        'schema': TEMPLATES_SCHEMA,
        'manifold': canonicalizer.manifold.name,
        'variant': canonicalizer.variant,
        'per_class': canonicalizer.per_class,
        'template': canonicalizer.template.tolist() if learned and canonicalizer.template is not None else None,
        'canonicalizer_templates': {
            str(label): t.tolist() for label, t in sorted(canonicalizer.class_templates.items())
        } if learned else {},
        'class_templates': {
            str(label): t.tolist() for label, t in sorted((class_templates or {}).items())
        },
    }
    return write_json(path, data)


def read_templates(path: Path) -> dict:
    """Load a templates file into arrays keyed as written."""
    path = Path(path)
    data = read_json(path)
    _check_schema(data.get('schema'), TEMPLATES_SCHEMA, path)
    return {
        'manifold': GroupManifold.parse(data['manifold']),
        'variant': data['variant'],
        'per_class': bool(data['per_class']),
        'template': None if data['template'] is None else np.asarray(data['template'], dtype=float),
        'canonicalizer_templates': {
            int(k): np.asarray(v, dtype=float) for k, v in data['canonicalizer_templates'].items()
        },
        'class_templates': {int(k): np.asarray(v, dtype=float) for k, v in data['class_templates'].items()},
    }


# Trajectories

BASE_COLUMNS = ('sigma2', 'sigma2_updated', 'drift_kept', 'drift_updated', 'residual', 'mean_loss', 'n_updated')
EXTRA_COLUMNS = ('sigma2_before', 'sigma2_kept', 'predicted')


def trajectory_columns(manifold: GroupManifold) -> list[str]:
    mu = [f'mu_{i}' for i in range(manifold.dim)]
    return ['step', *mu, *BASE_COLUMNS, *EXTRA_COLUMNS]


def _fmt(value: float) -> str:
    return repr(float(value))


def trajectory_csv(traj: TrajectoryRecord) -> str:
    """CSV text: a schema line, a manifold line, a header, then one row per step."""
    out = io.StringIO()
    out.write(f'# schema: {TRAJECTORY_SCHEMA}\n')
    out.write(f'# manifold: {traj.manifold.name}\n')
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(trajectory_columns(traj.manifold))
    for r in traj.records:
        writer.writerow([
            r.step,
            *(_fmt(c) for c in r.mu.coords),
            _fmt(r.sigma2),
            _fmt(r.sigma2_updated),
            _fmt(r.drift_kept),
            _fmt(r.drift_updated),
            _fmt(r.residual),
            _fmt(r.mean_loss),
            r.n_updated,
            _fmt(r.sigma2_before),
            _fmt(r.sigma2_kept),
            _fmt(r.predicted),
        ])
    return out.getvalue()


def write_trajectory(path: Path, traj: TrajectoryRecord) -> str:
    text = trajectory_csv(traj)
    Path(path).write_text(text)
    return sha256_text(text)


def _read_comment(line: str, key: str, path: Path) -> str:
    prefix = f'# {key}:'
    if not line.startswith(prefix):
        raise SchemaVersionError(f"{path}: expected '{prefix}' line, found '{line.strip()}'")
    return line[len(prefix):].strip()


def read_trajectory(path: Path) -> tuple[GroupManifold, list[StepRecord]]:
    """Parse a trajectory CSV back into step records (updated ids are not stored)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 3:
        raise SchemaVersionError(f"{path}: not a trajectory file")
    _check_schema(_read_comment(lines[0], 'schema', path), TRAJECTORY_SCHEMA, path)
    manifold = GroupManifold.parse(_read_comment(lines[1], 'manifold', path))

    reader = csv.DictReader(lines[2:])
    expected = trajectory_columns(manifold)
    if reader.fieldnames != expected:
        raise SchemaVersionError(f"{path}: columns {reader.fieldnames} do not match {expected}")

    records = []
    for row in reader:
        mu = manifold.from_array(np.array([float(row[f'mu_{i}']) for i in range(manifold.dim)]))
        records.append(StepRecord(
            step=int(row['step']),
            mu=mu,
            sigma2=float(row['sigma2']),
            sigma2_updated=float(row['sigma2_updated']),
            drift_kept=float(row['drift_kept']),
            drift_updated=float(row['drift_updated']),
            residual=float(row['residual']),
            mean_loss=float(row['mean_loss']),
            n_updated=int(row['n_updated']),
            sigma2_before=float(row['sigma2_before']),
            sigma2_kept=float(row['sigma2_kept']),
            predicted=float(row['predicted']),
        ))
    return manifold, records


# Robustness grids

def write_accuracy_csv(
    path: Path,
    angles: Sequence[float],
    scales: Sequence[float],
    accuracy: np.ndarray,
    baseline: Optional[np.ndarray] = None,
    canprior: Optional[np.ndarray] = None
) -> str:
    """
    One row per evaluation cell, rotation-major; accuracy arrays are (angles, scales).

    baseline is the uncanonicalized classifier, canprior the template
    canonicalizer fit once on the training data with no bootstrap updates.
    """
    out = io.StringIO()
    out.write(f'# schema: {ROBUSTNESS_SCHEMA}\n')
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['cell', 'rotation', 'scale', 'accuracy', 'baseline_accuracy', 'canprior_accuracy'])
    cell = 0
    for i, angle in enumerate(angles):
        for j, scale in enumerate(scales):
            base = math.nan if baseline is None else baseline[i, j]
            prior = math.nan if canprior is None else canprior[i, j]
            writer.writerow([cell, _fmt(angle), _fmt(scale), _fmt(accuracy[i, j]), _fmt(base), _fmt(prior)])
            cell += 1
    text = out.getvalue()
    Path(path).write_text(text)
    return sha256_text(text)


def read_accuracy_csv(path: Path) -> list[dict]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise SchemaVersionError(f"{path}: empty file")
    _check_schema(_read_comment(lines[0], 'schema', path), ROBUSTNESS_SCHEMA, path)
    return [
        {
            'cell': int(row['cell']),
            'rotation': float(row['rotation']),
            'scale': float(row['scale']),
            'accuracy': float(row['accuracy']),
            'baseline_accuracy': float(row['baseline_accuracy']),
            'canprior_accuracy': float(row['canprior_accuracy']),
        }
        for row in csv.DictReader(lines[1:])
    ]


# Hyperparameter sweeps

SWEEP_COLUMNS = ('interval', 'alpha', 'accuracy', 'off_identity_accuracy', 'sigma2_initial', 'sigma2_final', 'steps_run')


def write_sweep_csv(path: Path, rows: Sequence[dict]) -> str:
    """One row per (interval, alpha) cell, in the order given."""
    out = io.StringIO()
    out.write(f'# schema: {SWEEP_SCHEMA}\n')
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([
            row['interval'],
            _fmt(row['alpha']),
            *(_fmt(row[key]) for key in SWEEP_COLUMNS[2:6]),
            row['steps_run'],
        ])
    text = out.getvalue()
    Path(path).write_text(text)
    return sha256_text(text)


# Manifests and pose lists

def write_manifest(path: Path, command: str, seed: int, outputs: dict[str, str], **details) -> str:
    """Provenance record: command, seed, output digests and anything else worth echoing. No timestamps."""
    data = {
        'schema': MANIFEST_SCHEMA,
        'command': command,
        'seed': seed,
        'outputs': dict(sorted(outputs.items())),
        **details,
    }
    return write_json(path, data)


def parse_pose_list(text: str, manifold: GroupManifold) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Parse one pose per line: dim coordinates, optionally followed by a weight.

    Values may be separated by commas or whitespace; '#' starts a comment.
    Weights are all-or-nothing.
    """
    coords, weights = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].replace(',', ' ').strip()
        if not line:
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise ValueError(f"line {lineno}: not a list of numbers: '{line}'") from None
        if len(values) == manifold.dim:
            coords.append(values)
            weights.append(None)
        elif len(values) == manifold.dim + 1:
            coords.append(values[:-1])
            weights.append(values[-1])
        else:
            raise ValueError(f"line {lineno}: expected {manifold.dim} or {manifold.dim + 1} values, got {len(values)}")
    if not coords:
        raise ValueError("No poses given")
    given = [w is not None for w in weights]
    if any(given) and not all(given):
        raise ValueError("Either every pose has a weight or none does")
    canon = np.array([manifold.from_array(np.array(c)).coords for c in coords], dtype=float)
    return canon, (np.array(weights, dtype=float) if all(given) else None)
