"""Tests for cluster labelling and the giant density."""

import numpy as np
import pytest

from src.core.base import ValidationError
from src.core.cluster import (
    DisjointSet,
    estimate_m,
    giant_bonds,
    label_components,
)
from src.core.env import sample_field
from src.models import BernoulliLaw, ConstantLaw


def test_disjoint_set():
    """Test that unions merge roots and track component sizes."""
    forest = DisjointSet(6)
    forest.union(0, 1)
    forest.union(2, 3)
    forest.union(1, 3)
    assert forest.find(0) == forest.find(2)
    assert forest.find(4) != forest.find(0)
    assert forest.size[forest.find(0)] == 4


def test_full_lattice_is_one_component(unit_field):
    """Test that ω ≡ 1 gives a single giant covering every site."""
    labeling = label_components(unit_field)
    assert labeling.n_components == 1
    assert labeling.m_hat == 1.0
    assert labeling.giant_mask.all()


def test_zero_field_has_no_components(make_field):
    """Test that an all-zero field has an empty giant."""
    labeling = label_components(make_field(np.zeros((4, 4, 2))))
    assert labeling.n_components == 0
    assert labeling.m_hat == 0.0
    assert labeling.is_empty
    assert not labeling.giant_mask.any()
    assert np.all(labeling.component_id == -1)


def test_giant_bonds_counts(make_field):
    """Test that the L=4 torus has 2 * 16 giant bonds."""
    full = make_field(np.ones((4, 4, 2)))
    assert len(giant_bonds(full, label_components(full))) == 32

    empty = make_field(np.zeros((4, 4, 2)))
    assert len(giant_bonds(empty, label_components(empty))) == 0


def test_single_open_bond(make_field):
    """Test that one open bond makes a two-site giant with one bond."""
    weights = np.zeros((4, 4, 2))
    weights[1, 2, 0] = 0.5
    field = make_field(weights)
    labeling = label_components(field)

    assert labeling.giant_size == 2
    assert labeling.m_hat == 2 / 16
    bonds = giant_bonds(field, labeling)
    assert len(bonds) == 1
    assert bonds.tail[0] == np.ravel_multi_index((1, 2), (4, 4))
    assert bonds.head[0] == np.ravel_multi_index((2, 2), (4, 4))
    assert bonds.rate[0] == 0.5


def test_giant_tie_break_prefers_smallest_site(make_field):
    """Test that equal-size components resolve to the lowest row-major site."""
    weights = np.zeros((4, 4, 2))
    weights[2, 2, 1] = 1.0
    weights[0, 1, 0] = 1.0
    labeling = label_components(make_field(weights))
    assert labeling.component_sizes == (2, 2)
    assert labeling.giant_id == 0
    assert labeling.giant_mask[0, 1] and labeling.giant_mask[1, 1]
    assert not labeling.giant_mask[2, 2]


def test_wraparound_bond_joins_sites(make_field):
    """Test that a bond across the periodic boundary joins its endpoints."""
    weights = np.zeros((4, 4, 2))
    weights[3, 0, 0] = 1.0
    labeling = label_components(make_field(weights))
    assert labeling.giant_mask[3, 0] and labeling.giant_mask[0, 0]


def test_labeling_does_not_depend_on_merge_order(percolation_field):
    """Test that shuffling the bond order leaves the labels unchanged."""
    plain = label_components(percolation_field)
    shuffled = label_components(percolation_field, shuffle_seed=3)
    assert np.array_equal(plain.component_id, shuffled.component_id)
    assert plain.giant_id == shuffled.giant_id


def test_giant_bonds_rejects_mismatched_labeling(unit_field, make_field):
    """Test that a labeling from another box is rejected."""
    other = label_components(make_field(np.ones((4, 4, 2))))
    with pytest.raises(ValidationError):
        giant_bonds(unit_field, other)


def test_estimate_m_constant_law():
    """Test m_hat = 1 with zero stderr under a constant law."""
    mean, stderr, samples = estimate_m(ConstantLaw(c=1.0), 2, 8, 1.0, 4, seed=1)
    assert mean == 1.0
    assert stderr == 0.0
    assert [s.giant_size for s in samples] == [64] * 4


def test_subcritical_percolation_has_no_giant():
    """Test that p=0.1 bond percolation gives m_hat < 0.05 at L=64."""
    field = sample_field(BernoulliLaw(p=0.1, value=1.0), 2, 64, 1.0, 8)
    assert label_components(field).m_hat < 0.05


def test_estimate_m_independent_of_workers():
    """Test that the m_hat estimate does not depend on the worker count."""
    law = BernoulliLaw(p=0.7, value=1.0)
    serial = estimate_m(law, 2, 16, 1.0, 6, seed=4, workers=1)
    threaded = estimate_m(law, 2, 16, 1.0, 6, seed=4, workers=3)
    assert serial[0] == threaded[0]
    assert [s.to_row() for s in serial[2]] == [s.to_row() for s in threaded[2]]


def test_estimate_m_rejects_zero_samples():
    """Test that a zero sample count is a validation error."""
    with pytest.raises(ValidationError):
        estimate_m(ConstantLaw(c=1.0), 2, 4, 1.0, 0, seed=0)
