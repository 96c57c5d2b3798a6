"""Shared fixtures for the numerical modules"""

import numpy as np
import pytest

from src.core.cluster import label_components
from src.core.env import ConductanceField, sample_field
from src.models import AxisLayers, BernoulliLaw, ConstantLaw, LayeredLaw


@pytest.fixture
def unit_field():
    """ω ≡ 1 on the 8 x 8 torus."""
    return sample_field(ConstantLaw(c=1.0), 2, 8, 1.0, 0)


@pytest.fixture
def unit_labeling(unit_field):
    return label_components(unit_field)


@pytest.fixture
def percolation_field():
    return sample_field(BernoulliLaw(p=0.7, value=1.0), 2, 16, 1.0, 11)


@pytest.fixture
def make_field():
    """Build a field directly from a weight array of shape (L, ..., L, d)."""

    def build(weights, cap=1.0):
        weights = np.asarray(weights, dtype=np.float64)
        dim = weights.shape[-1]
        return ConductanceField(dim, weights.shape[0], cap, weights)

    return build


@pytest.fixture
def parallel_layers():
    """Horizontal bonds 1 on even rows and 3 on odd rows, vertical bonds 2."""
    return LayeredLaw(
        axis_rules=[
            AxisLayers(along=1, values=[1.0, 3.0]),
            AxisLayers(along=0, values=[2.0]),
        ]
    )


@pytest.fixture
def series_layers():
    """Vertical bond {x, x+e2} is 1 if x2 is even else 3, horizontal bonds 1."""
    return LayeredLaw(
        axis_rules=[
            AxisLayers(along=0, values=[1.0]),
            AxisLayers(along=1, values=[1.0, 3.0]),
        ]
    )
