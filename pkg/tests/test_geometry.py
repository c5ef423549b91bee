import numpy as np
import pytest

from modules.errors import GeometryError
from utils.geometry import (
    bond_angle,
    bond_length,
    dihedral_angle,
    random_geometry,
    random_rotation,
    set_bond_angle,
    set_bond_length,
    set_dihedral,
)

CHAIN = np.array([[1.0, 0.2, 0.0], [0.0, 0.0, 0.0], [0.0, 1.5, 0.1], [0.8, 2.0, 0.9]])


def test_random_rotation_is_orthogonal(rng):
    for improper in (False, True):
        q = random_rotation(rng, improper=improper)
        assert np.allclose(q @ q.T, np.eye(3))
        assert np.linalg.det(q) == pytest.approx(-1.0 if improper else 1.0)


def test_random_geometry_respects_separation(rng):
    positions = random_geometry(rng, 8, 2.0, 0.7)
    assert positions.shape == (8, 3)
    assert np.all(np.linalg.norm(positions, axis=1) <= 2.0)
    distances = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
    assert distances[np.triu_indices(8, 1)].min() >= 0.7


def test_random_geometry_gives_up(rng):
    with pytest.raises(GeometryError):
        random_geometry(rng, 50, 0.5, 0.7, max_tries=200)


def test_set_bond_length_moves_last_atom():
    moved = set_bond_length(CHAIN, (1, 2), 2.25)
    assert bond_length(moved, (1, 2)) == pytest.approx(2.25)
    assert np.array_equal(moved[[0, 1, 3]], CHAIN[[0, 1, 3]])


@pytest.mark.parametrize("value", [30.0, 90.0, 150.0])
def test_set_bond_angle(value):
    moved = set_bond_angle(CHAIN, (0, 1, 2), value)
    assert bond_angle(moved, (0, 1, 2)) == pytest.approx(value)
    assert bond_length(moved, (1, 2)) == pytest.approx(bond_length(CHAIN, (1, 2)))


@pytest.mark.parametrize("value", [10.0, 60.0, 179.0, 300.0])
def test_set_dihedral(value):
    moved = set_dihedral(CHAIN, (0, 1, 2, 3), value)
    assert dihedral_angle(moved, (0, 1, 2, 3)) == pytest.approx(value, abs=1e-9)
    assert bond_length(moved, (2, 3)) == pytest.approx(bond_length(CHAIN, (2, 3)))


def test_dihedral_is_periodic():
    assert np.array_equal(set_dihedral(CHAIN, (0, 1, 2, 3), 360.0), set_dihedral(CHAIN, (0, 1, 2, 3), 0.0))
