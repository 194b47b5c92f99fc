import pytest

from bootstrap_engine import RANDOM
from conftest import RUN_CONFIG_TEXT, make_dataset
from group_core import rotoscale, so2
from run_config import ConfigError, RunConfig, describe_schema, parse_override
from synthetic_world import NOISY, TEMPLATE


def base(**extra):
    raw = {
        'manifold': 'so2',
        'pose': 'vonmises:0:2',
        'classes': '2',
        'per_class': '10',
        'canonicalizer': 'oracle',
        'steps': '3',
    }
    raw.update(extra)
    return raw


class TestParsing:
    def test_defaults_filled(self):
        cfg = RunConfig.from_mapping(base())
        assert cfg.manifold == so2()
        assert cfg.alpha == 0.01
        assert cfg.interval == 5
        assert cfg.scales == (1.0, 1.125, 1.25)
        assert cfg.beta is None
        assert cfg.plot

    def test_parse_text_with_comments(self):
        cfg = RunConfig.parse_text(RUN_CONFIG_TEXT)
        assert cfg.alpha == 1.0
        assert cfg.steps == 1

    def test_overrides_win(self):
        cfg = RunConfig.parse_text(RUN_CONFIG_TEXT, {'alpha': '0.5', 'selection': 'random'})
        assert cfg.alpha == 0.5
        assert cfg.selection == RANDOM

    def test_from_file(self, run_config_file):
        assert RunConfig.from_file(run_config_file).per_class == 10

    def test_text_roundtrip(self):
        cfg = RunConfig.from_mapping(base(manifold='rotoscale', bias='0.3,0.0', canonicalizer='noisy', beta='0.5'))
        again = RunConfig.parse_text(cfg.to_text())
        assert again == cfg
        assert again.manifold == rotoscale()

    def test_with_overrides(self):
        cfg = RunConfig.from_mapping(base()).with_overrides({'steps': '7'})
        assert cfg.steps == 7


class TestErrors:
    def test_missing_required(self):
        raw = base()
        del raw['steps']
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping(raw)
        assert info.value.field == 'steps'

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping(base(speed='fast'))
        assert info.value.field == 'speed'

    @pytest.mark.parametrize('key,value', [
        ('alpha', 'lots'),
        ('alpha', '0'),
        ('alpha', '1.5'),
        ('manifold', 'so3'),
        ('canonicalizer', 'magic'),
        ('selection', 'worst'),
        ('refine', 'maybe'),
        ('classes', '0'),
        ('interval', '0'),
        ('scales', ''),
        ('bias', '0.1,0.2'),
    ])
    def test_bad_values_name_the_field(self, key, value):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping(base(**{key: value}))
        assert info.value.field == key
        assert str(info.value).startswith(f"{key}:")

    def test_beta_needs_noisy(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_mapping(base(beta='0.5'))
        assert info.value.field == 'beta'

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            RunConfig.parse_text(RUN_CONFIG_TEXT + 'alpha = 0.2\n')

    def test_line_without_equals(self):
        with pytest.raises(ConfigError):
            RunConfig.parse_text('manifold so2\n')

    def test_config_error_is_value_error(self):
        assert issubclass(ConfigError, ValueError)


class TestBuilders:
    def test_bootstrap_config(self):
        cfg = RunConfig.from_mapping(base(alpha='0.2', interval='3', selection='random', seed='9'))
        bc = cfg.bootstrap_config(workers=4)
        assert (bc.alpha, bc.interval_N, bc.steps_T, bc.selection, bc.seed, bc.workers) == (0.2, 3, 3, RANDOM, 9, 4)

    def test_dataset_spec(self):
        spec = RunConfig.from_mapping(base(seed='4', shape_seed='6')).dataset_spec()
        assert (spec.num_classes, spec.per_class, spec.seed, spec.shape_seed) == (2, 10, 4, 6)

    def test_noisy_canonicalizer(self):
        cfg = RunConfig.from_mapping(base(canonicalizer='noisy', kappa='50', bias='0.3'))
        _, data = make_dataset(so2())
        c = cfg.build_canonicalizer(data)
        assert c.variant == NOISY
        assert c.noise_kappa == 50.0
        assert c.bias == so2().element(0.3)

    def test_template_canonicalizer(self):
        cfg = RunConfig.from_mapping(base(canonicalizer='template', per_class_template='true', grid_resolution='16'))
        _, data = make_dataset(so2(), classes=3, per_class=4)
        c = cfg.build_canonicalizer(data)
        assert c.variant == TEMPLATE
        assert sorted(c.class_templates) == [0, 1, 2]
        assert len(c.grid()) == 16

    def test_canprior_ignores_configured_variant(self):
        cfg = RunConfig.from_mapping(base(canonicalizer='noisy', grid_resolution='8', ema_rate='0.5'))
        _, data = make_dataset(so2(), classes=2, per_class=4)
        c = cfg.canprior_canonicalizer(data)
        assert c.variant == TEMPLATE
        assert c.template is not None
        assert (c.grid_resolution, c.ema_rate) == (8, 0.5)


class TestHelpers:
    def test_parse_override(self):
        assert parse_override('alpha = 0.3') == ('alpha', '0.3')

    def test_parse_override_rejects(self):
        with pytest.raises(ConfigError):
            parse_override('alpha')

    def test_describe_schema_lists_every_key(self):
        text = describe_schema()
        for key in ('manifold', 'alpha', 'beta', 'plot'):
            assert key in text
        assert 'required' in text
