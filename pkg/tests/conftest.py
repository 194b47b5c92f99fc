"""Shared fixtures and hypothesis strategies."""
import math

import numpy as np
import pytest
from hypothesis import strategies as st

from group_core import GroupElement, PoseDistribution, cyclic, log_scale, product, rotoscale, so2
from synthetic_world import DatasetSpec, generate_dataset

MANIFOLDS = {
    'so2': so2(),
    'c17': cyclic(17),
    'scale': log_scale(0.8, 1.25),
    'rotoscale': rotoscale(0.8, 1.25),
    'weighted': product(so2(), log_scale(0.5, 2.0), weights=[1.0, 0.25]),
}


@st.composite
def elements(draw, manifold):
    """Random element of a manifold."""
    coords = []
    for leaf in manifold.leaves:
        if leaf.kind == 'SO2':
            coords.append(draw(st.floats(0.0, 2 * math.pi, exclude_max=True, allow_nan=False)))
        elif leaf.kind == 'Cn':
            coords.append(float(draw(st.integers(0, leaf.order - 1))))
        else:
            coords.append(draw(st.floats(leaf.log_min, leaf.log_max, allow_nan=False)))
    return GroupElement(manifold, tuple(coords))


@pytest.fixture
def circle():
    return so2()


@pytest.fixture
def roto():
    return rotoscale(0.8, 1.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_dataset(manifold, pose='uniform', classes=5, per_class=20, seed=7, shape_seed=None):
    spec = DatasetSpec(
        manifold=manifold,
        num_classes=classes,
        per_class=per_class,
        pose_dist=PoseDistribution.parse(pose),
        shape_seed=seed if shape_seed is None else shape_seed,
        seed=seed,
    )
    return spec, generate_dataset(spec)


@pytest.fixture
def small_dataset(circle):
    return make_dataset(circle, 'vonmises:0:2')[1]


RUN_CONFIG_TEXT = """\
# minimal oracle run
manifold = so2
pose = vonmises:0:2
classes = 2
per_class = 10
canonicalizer = oracle
steps = 1
alpha = 1.0
"""


@pytest.fixture
def run_config_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text(RUN_CONFIG_TEXT)
    return path
