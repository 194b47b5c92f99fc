import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MANIFOLDS, elements
from group_core import (
    GroupElement,
    GroupManifold,
    ManifoldMismatchError,
    PoseDistribution,
    compose,
    cyclic,
    exp_map,
    geodesic_distance,
    inverse,
    log_map,
    log_scale,
    representation,
    rotoscale,
    sample,
    sample_coords,
    so2,
    tangent_norm,
)

# Manifolds with exact (unclamped) inverses
SYMMETRIC = ['so2', 'c17', 'scale', 'rotoscale']


def g_of(manifold, *coords):
    return manifold.element(*coords)


class TestCompose:
    def test_angles_add(self):
        m = so2()
        assert geodesic_distance(compose(g_of(m, math.pi / 2), g_of(m, math.pi / 2)), g_of(m, math.pi)) < 1e-15

    def test_cyclic_mod_arithmetic(self):
        c4 = cyclic(4)
        assert compose(g_of(c4, 3), g_of(c4, 2)) == g_of(c4, 1)

    def test_identity_law(self, roto):
        g = g_of(roto, math.pi / 4, math.log(1.25))
        assert compose(g, roto.identity()) == g

    def test_manifold_mismatch(self):
        with pytest.raises(ManifoldMismatchError):
            compose(so2().identity(), cyclic(4).identity())

    @pytest.mark.parametrize('name', SYMMETRIC)
    @given(data=st.data())
    @settings(max_examples=50)
    def test_abelian(self, name, data):
        m = MANIFOLDS[name]
        g, h = data.draw(elements(m)), data.draw(elements(m))
        assert geodesic_distance(compose(g, h), compose(h, g)) < 1e-12


class TestInverse:
    def test_rotation(self):
        m = so2()
        assert abs(inverse(g_of(m, 1.0)).coords[0] - (2 * math.pi - 1.0)) < 1e-15

    def test_log_scale(self):
        m = log_scale(0.8, 1.25)
        assert inverse(g_of(m, 0.1)).coords[0] == -0.1

    def test_cyclic(self):
        c17 = cyclic(17)
        assert inverse(g_of(c17, 5)) == g_of(c17, 12)

    @pytest.mark.parametrize('name', SYMMETRIC)
    @given(data=st.data())
    @settings(max_examples=50)
    def test_inverse_cancels(self, name, data):
        m = MANIFOLDS[name]
        g = data.draw(elements(m))
        assert geodesic_distance(compose(g, inverse(g)), m.identity()) < 1e-12


class TestDistance:
    def test_wraps_to_short_arc(self):
        m = so2()
        assert abs(geodesic_distance(m.identity(), g_of(m, 3 * math.pi / 2)) - math.pi / 2) < 1e-15

    def test_flat_scale(self):
        m = log_scale(0.8, 1.25)
        assert abs(geodesic_distance(m.identity(), g_of(m, math.log(1.25))) - 0.22314355131420976) < 1e-15

    @pytest.mark.parametrize('name', list(MANIFOLDS))
    @given(data=st.data())
    @settings(max_examples=100)
    def test_metric_axioms(self, name, data):
        m = MANIFOLDS[name]
        g, h, k = (data.draw(elements(m)) for _ in range(3))
        assert geodesic_distance(g, g) == 0.0
        assert geodesic_distance(g, h) >= 0.0
        assert abs(geodesic_distance(g, h) - geodesic_distance(h, g)) < 1e-15
        assert geodesic_distance(g, k) <= geodesic_distance(g, h) + geodesic_distance(h, k) + 1e-12
        assert geodesic_distance(g, h) <= m.diameter + 1e-12

    @pytest.mark.parametrize('name', ['so2', 'c17'])
    @given(data=st.data())
    @settings(max_examples=100)
    def test_bi_invariant(self, name, data):
        m = MANIFOLDS[name]
        g, h, a = (data.draw(elements(m)) for _ in range(3))
        base = geodesic_distance(g, h)
        assert abs(geodesic_distance(compose(a, g), compose(a, h)) - base) < 1e-12
        assert abs(geodesic_distance(compose(g, a), compose(h, a)) - base) < 1e-12

    def test_weighted_product(self):
        m = MANIFOLDS['weighted']
        g = g_of(m, math.pi / 2, math.log(2.0))
        expected = math.sqrt((math.pi / 2) ** 2 + 0.25 * math.log(2.0) ** 2)
        assert abs(geodesic_distance(m.identity(), g) - expected) < 1e-15


class TestLogExp:
    def test_positive_quarter_turn(self):
        m = so2()
        assert abs(log_map(m.identity(), g_of(m, math.pi / 2))[0] - math.pi / 2) < 1e-15

    def test_shorter_arc_negative(self):
        m = so2()
        assert abs(log_map(m.identity(), g_of(m, 7 * math.pi / 4))[0] + math.pi / 4) < 1e-12

    def test_cut_locus_resolves_positive(self):
        m = so2()
        assert log_map(m.identity(), g_of(m, math.pi))[0] == pytest.approx(math.pi)

    def test_full_wrap(self):
        m = so2()
        assert exp_map(g_of(m, math.pi), np.array([math.pi])) == m.identity()

    def test_scale_exp_clamps(self):
        m = log_scale(0.8, 1.25)
        assert exp_map(m.identity(), np.array([0.5])).coords[0] == pytest.approx(math.log(1.25))
        assert exp_map(m.identity(), np.array([0.1])).coords[0] == pytest.approx(0.1)

    def test_cyclic_exp_rounds_to_lattice(self):
        c4 = cyclic(4)
        assert exp_map(c4.identity(), np.array([1.4])) == g_of(c4, 1)

    def test_roundtrip_many_pairs(self, rng):
        m = so2()
        for _ in range(1000):
            g, h = g_of(m, rng.uniform(0, 2 * math.pi)), g_of(m, rng.uniform(0, 2 * math.pi))
            assert geodesic_distance(exp_map(g, log_map(g, h)), h) < 1e-10

    @pytest.mark.parametrize('name', list(MANIFOLDS))
    @given(data=st.data())
    @settings(max_examples=100)
    def test_log_norm_is_distance(self, name, data):
        m = MANIFOLDS[name]
        g, h = data.draw(elements(m)), data.draw(elements(m))
        assert abs(tangent_norm(m, log_map(g, h)) - geodesic_distance(g, h)) < 1e-12


class TestRepresentation:
    @pytest.mark.parametrize('name', SYMMETRIC)
    @given(data=st.data())
    @settings(max_examples=50)
    def test_homomorphism(self, name, data):
        m = MANIFOLDS[name]
        g, h = data.draw(elements(m)), data.draw(elements(m))
        gh = compose(g, h)
        if m.scale_leaf() is not None:
            # Clamped compositions are not homomorphic
            raw = g.coords[m.scale_leaf()] + h.coords[m.scale_leaf()]
            if not m.leaves[m.scale_leaf()].log_min <= raw <= m.leaves[m.scale_leaf()].log_max:
                return
        product_matrix = representation(g).matrix @ representation(h).matrix
        assert np.allclose(representation(gh).matrix, product_matrix, atol=1e-12)

    def test_identity_is_identity_matrix(self, roto):
        assert np.array_equal(representation(roto.identity()).matrix, np.eye(3))

    def test_apply_rotates_points(self):
        m = so2()
        points = np.array([[1.0, 0.0]])
        assert np.allclose(representation(g_of(m, math.pi / 2)).apply(points), [[0.0, 1.0]], atol=1e-15)


class TestManifoldText:
    @pytest.mark.parametrize('name', list(MANIFOLDS))
    def test_name_parses_back(self, name):
        m = MANIFOLDS[name]
        assert GroupManifold.parse(m.name) == m

    def test_rotoscale_alias(self):
        assert GroupManifold.parse('rotoscale') == rotoscale()

    @pytest.mark.parametrize('text', ['so3', 'c0', 'scale:2:3', 'so2*scale@1'])
    def test_rejects_bad_text(self, text):
        with pytest.raises(ValueError):
            GroupManifold.parse(text)

    def test_scale_out_of_bounds_element(self):
        with pytest.raises(ValueError):
            log_scale(0.8, 1.25).element(1.0)


class TestPoseDistribution:
    def test_uniform_has_no_direction(self):
        coords = sample_coords(PoseDistribution.parse('uniform'), so2(), np.random.default_rng(0), 100_000)
        resultant = abs(np.mean(np.exp(1j * coords[:, 0])))
        assert resultant < 0.02

    def test_von_mises_mean(self):
        coords = sample_coords(PoseDistribution.parse('vonmises:1.0:50'), so2(), np.random.default_rng(0), 100_000)
        assert abs(np.angle(np.mean(np.exp(1j * coords[:, 0]))) - 1.0) < 0.01

    def test_mixture_atoms(self):
        dist = PoseDistribution.parse(f'mixture:0.5*dirac:0+0.5*dirac:{math.pi!r}')
        coords = sample_coords(dist, so2(), np.random.default_rng(0), 10_000)
        assert abs(np.mean(coords[:, 0] < 1.0) - 0.5) < 0.02

    @pytest.mark.parametrize('text', ['vonmises:0:-1', 'wrapnorm:0:-0.1', 'mixture:0.3*uniform+0.3*uniform', 'cauchy:0:1'])
    def test_invalid_parameters(self, text):
        with pytest.raises(ValueError):
            PoseDistribution.parse(text)

    @pytest.mark.parametrize('text', ['uniform', 'dirac:0.5', 'vonmises:0.0:2.0', 'mixture:0.25*uniform+0.75*vonmises:1.0:4.0', 'uniform|wrapnorm:0.0:0.1'])
    def test_text_roundtrip(self, text):
        dist = PoseDistribution.parse(text)
        assert PoseDistribution.parse(dist.to_text()) == dist

    def test_seeded_sampling_is_deterministic(self):
        dist = PoseDistribution.parse('vonmises:0:2')
        a = sample(dist, rotoscale(), np.random.default_rng(3))
        b = sample(dist, rotoscale(), np.random.default_rng(3))
        assert a == b
        # Non-product distributions leave the scale factor at 1
        assert a.coords[1] == 0.0

    def test_product_factor_count_checked(self):
        with pytest.raises(ValueError):
            sample_coords(PoseDistribution.parse('uniform|uniform'), so2(), np.random.default_rng(0), 3)

    def test_cyclic_samples_are_indices(self):
        coords = sample_coords(PoseDistribution.parse('uniform'), cyclic(17), np.random.default_rng(0), 200)
        assert np.all(coords == np.rint(coords))
        assert coords.min() >= 0 and coords.max() <= 16

    def test_element_canonicalizes(self):
        g = GroupElement(so2(), (-math.pi / 2,))
        assert g.coords[0] == pytest.approx(3 * math.pi / 2)
