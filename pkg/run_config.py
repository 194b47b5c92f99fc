"""
Run configuration: a flat, typed `key = value` file with command-line overrides.

    # comments and blank lines are ignored
    manifold = so2
    pose = vonmises:0:2
    classes = 5
    per_class = 20
    canonicalizer = template
    steps = 50

Required keys have no default. Every other key has one, and the resolved
config (defaults filled in) is written next to each run's outputs.
"""
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from bootstrap_engine import SELECTIONS, BootstrapConfig
from group_core import GroupElement, GroupManifold, PoseDistribution
from synthetic_world import (
    NOISE_VON_MISES,
    NOISE_WRAPPED_NORMAL,
    TEMPLATE,
    VARIANTS,
    Canonicalizer,
    DatasetSpec,
    DatasetState,
)

logger = logging.getLogger(__name__)

REQUIRED = object()


class ConfigError(ValueError):
    """A run config value is missing, unknown or malformed."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('true', 'yes', '1', 'on'):
        return True
    if lowered in ('false', 'no', '0', 'off'):
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def _parse_floats(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(part) for part in text.split(','))


def _parse_optional_float(text: str) -> Optional[float]:
    text = text.strip()
    return None if text.lower() in ('', 'none') else float(text)


def _choice(options: tuple) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got '{text}'")
        return value
    return parse


def _format_floats(values: tuple) -> str:
    return ','.join(repr(float(v)) for v in values)


# name -> (parser, formatter, default, help)
SCHEMA: dict[str, tuple] = {
    'manifold': (GroupManifold.parse, lambda m: m.name, REQUIRED, "group: so2, cN, scale:MIN:MAX, rotoscale, A*B@w1,w2"),
    'pose': (PoseDistribution.parse, lambda p: p.to_text(), REQUIRED, "initial pose distribution"),
    'classes': (int, str, REQUIRED, "number of classes"),
    'per_class': (int, str, REQUIRED, "specimens per class"),
    'canonicalizer': (_choice(VARIANTS), str, REQUIRED, "oracle | noisy | template | identity"),
    'steps': (int, str, REQUIRED, "bootstrap steps T"),
    'alpha': (float, repr, 0.01, "update fraction"),
    'interval': (int, str, 5, "canonicalizer passes between steps"),
    'rotation_order': (int, str, 17, "rotations in the evaluation grid"),
    'scales': (_parse_floats, _format_floats, (1.0, 1.125, 1.25), "scales in the evaluation grid"),
    'seed': (int, str, 0, "master seed for poses, noise and selection"),
    'shape_seed': (int, str, 0, "seed for the class shapes"),
    'selection': (_choice(SELECTIONS), str, SELECTIONS[0], "top_loss | random"),
    'beta': (_parse_optional_float, lambda b: 'none' if b is None else repr(b), None, "hold updated variance at beta * sigma^2"),
    'temperature': (float, repr, 1.0, "softmax temperature of the posterior"),
    'noise': (_choice((NOISE_VON_MISES, NOISE_WRAPPED_NORMAL)), str, NOISE_VON_MISES, "noisy canonicalizer noise family"),
    'kappa': (float, repr, 100.0, "von Mises noise concentration"),
    'noise_sigma': (float, repr, 0.1, "wrapped normal noise scale"),
    'bias': (_parse_floats, _format_floats, (), "noisy canonicalizer bias coordinates (empty: unbiased)"),
    'grid_resolution': (int, str, 64, "rotation cells of the search grid"),
    'scale_resolution': (int, str, 5, "scale cells of the search grid"),
    'refine': (_parse_bool, lambda b: 'true' if b else 'false', False, "refine template argmin off the grid"),
    'ema_rate': (float, repr, 0.1, "template moving-average rate"),
    'per_class_template': (_parse_bool, lambda b: 'true' if b else 'false', False, "one template per class"),
    'points': (int, str, 12, "points per shape"),
    'class_spread': (float, repr, 0.3, "class shape spread around the shared body plan"),
    'jitter': (float, repr, 0.02, "per-specimen shape jitter"),
    'test_per_class': (int, str, 20, "held-out specimens per class for robustness"),
    'test_seed': (int, str, 1, "seed of the held-out specimens"),
    'plot': (_parse_bool, lambda b: 'true' if b else 'false', True, "write SVG plots"),
}


@dataclass(frozen=True)
class RunConfig:
    """Typed run settings; see SCHEMA for meaning and defaults."""
    manifold: GroupManifold
    pose: PoseDistribution
    classes: int
    per_class: int
    canonicalizer: str
    steps: int
    alpha: float = 0.01
    interval: int = 5
    rotation_order: int = 17
    scales: tuple = (1.0, 1.125, 1.25)
    seed: int = 0
    shape_seed: int = 0
    selection: str = 'top_loss'
    beta: Optional[float] = None
    temperature: float = 1.0
    noise: str = NOISE_VON_MISES
    kappa: float = 100.0
    noise_sigma: float = 0.1
    bias: tuple = ()
    grid_resolution: int = 64
    scale_resolution: int = 5
    refine: bool = False
    ema_rate: float = 0.1
    per_class_template: bool = False
    points: int = 12
    class_spread: float = 0.3
    jitter: float = 0.02
    test_per_class: int = 20
    test_seed: int = 1
    plot: bool = True

    @classmethod
    def from_mapping(cls, raw: Mapping[str, str]) -> 'RunConfig':
        """Build from raw string values, checking every field."""
        values: dict[str, Any] = {}
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            parser = SCHEMA[key][0]
            try:
                values[key] = parser(text)
            except ValueError as e:
                raise ConfigError(key, str(e)) from None
        for key, (_, _, default, _) in SCHEMA.items():
            if key not in values:
                if default is REQUIRED:
                    raise ConfigError(key, "required key is missing")
                values[key] = default
        config = cls(**values)
        config.check()
        return config

    @classmethod
    def parse_text(cls, text: str, overrides: Optional[Mapping[str, str]] = None) -> 'RunConfig':
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"line {lineno}", f"expected 'key = value', got '{line}'")
            if key in raw:
                raise ConfigError(key, f"duplicate key on line {lineno}")
            raw[key] = value.strip()
        raw.update(overrides or {})
        return cls.from_mapping(raw)

    @classmethod
    def from_file(cls, path: Path, overrides: Optional[Mapping[str, str]] = None) -> 'RunConfig':
        return cls.parse_text(Path(path).read_text(), overrides)

    def check(self):
        """Cross-field validation; raises ConfigError naming the offending key."""
        if self.classes < 1:
            raise ConfigError('classes', "must be >= 1")
        if self.per_class < 1:
            raise ConfigError('per_class', "must be >= 1")
        if self.steps < 0:
            raise ConfigError('steps', "must be >= 0")
        if self.points < 3:
            raise ConfigError('points', "must be >= 3")
        if not self.scales:
            raise ConfigError('scales', "needs at least one scale")
        if any(s <= 0 for s in self.scales):
            raise ConfigError('scales', "scales must be positive")
        if self.bias and len(self.bias) != self.manifold.dim:
            raise ConfigError('bias', f"needs {self.manifold.dim} coordinates for {self.manifold.name}")
        if self.beta is not None and self.canonicalizer != 'noisy':
            raise ConfigError('beta', "beta-controlled runs need canonicalizer = noisy")
        try:
            self.bootstrap_config()
        except ValueError as e:
            raise ConfigError(_field_of(str(e)), str(e)) from None
        try:
            self.dataset_spec()
        except ValueError as e:
            raise ConfigError('per_class', str(e)) from None

    def with_overrides(self, overrides: Mapping[str, str]) -> 'RunConfig':
        return RunConfig.parse_text(self.to_text(), overrides)

    def to_dict(self) -> dict[str, str]:
        return {f.name: SCHEMA[f.name][1](getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return ''.join(f"{key} = {value}\n" for key, value in self.to_dict().items())

    # Builders for the algorithmic modules

    def bootstrap_config(self, workers: int = 1) -> BootstrapConfig:
        return BootstrapConfig(
            alpha=self.alpha,
            interval_N=self.interval,
            steps_T=self.steps,
            selection=self.selection,
            seed=self.seed,
            beta=self.beta,
            workers=workers,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            manifold=self.manifold,
            num_classes=self.classes,
            per_class=self.per_class,
            pose_dist=self.pose,
            shape_seed=self.shape_seed,
            seed=self.seed,
            points_per_shape=self.points,
            class_spread=self.class_spread,
            jitter=self.jitter,
        )

    def bias_element(self) -> Optional[GroupElement]:
        if not self.bias:
            return None
        return self.manifold.element(*self.bias)

    def _canonicalizer_settings(self) -> dict:
        return dict(
            temperature=self.temperature,
            seed=self.seed,
            grid_resolution=self.grid_resolution,
            scale_resolution=self.scale_resolution,
            refine=self.refine,
            ema_rate=self.ema_rate,
        )

    def build_canonicalizer(self, dataset: DatasetState) -> Canonicalizer:
        """Canonicalizer for this run; a template one is warm-started from the dataset."""
        common = self._canonicalizer_settings()
        try:
            if self.canonicalizer == TEMPLATE:
                return Canonicalizer.template_from(dataset, per_class=self.per_class_template, **common)
            return Canonicalizer(
                self.canonicalizer,
                dataset.manifold,
                noise_kind=self.noise,
                noise_kappa=self.kappa,
                noise_sigma=self.noise_sigma,
                bias=self.bias_element(),
                **common,
            )
        except ValueError as e:
            raise ConfigError('canonicalizer', str(e)) from None

    def canprior_canonicalizer(self, dataset: DatasetState) -> Canonicalizer:
        """Template canonicalizer fit once on the training data and never bootstrapped."""
        return Canonicalizer.template_from(
            dataset, per_class=self.per_class_template, **self._canonicalizer_settings()
        )


def _field_of(message: str) -> str:
    for name in ('alpha', 'interval_N', 'steps_T', 'selection', 'beta'):
        if message.startswith(name):
            return {'interval_N': 'interval', 'steps_T': 'steps'}.get(name, name)
    return 'config'


def parse_override(text: str) -> tuple[str, str]:
    """Parse a --set KEY=VALUE argument."""
    key, sep, value = text.partition('=')
    if not sep or not key.strip():
        raise ConfigError(text, "overrides look like KEY=VALUE")
    return key.strip(), value.strip()


def describe_schema() -> str:
    lines = []
    for key, (_, formatter, default, help_text) in SCHEMA.items():
        shown = 'required' if default is REQUIRED else f"default {formatter(default)}"
        lines.append(f"{key:<20} {help_text} ({shown})")
    return '\n'.join(lines)
