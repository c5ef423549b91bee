import numpy as np
from scipy.spatial.transform import Rotation

from modules.errors import GeometryError


def random_rotation(rng, improper=False):
    """
    Draw a uniformly random orthogonal matrix.
    Returns a 3x3 array with determinant -1 if improper, else +1.
    """
    matrix = Rotation.random(None, rng).as_matrix()
    return -matrix if improper else matrix


def random_geometry(rng, n_atoms, radius, min_distance=0.7, max_tries=10000):
    """
    Place atoms uniformly in a ball, rejecting pairs closer than min_distance.
    Returns an (n_atoms, 3) array.
    """
    positions = []
    for _ in range(max_tries):
        if len(positions) == n_atoms:
            break
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        candidate = radius * rng.uniform() ** (1.0 / 3.0) * direction
        if all(np.linalg.norm(candidate - p) >= min_distance for p in positions):
            positions.append(candidate)
    if len(positions) < n_atoms:
        raise GeometryError(f"Could not place {n_atoms} atoms in radius {radius} with separation {min_distance}")
    return np.array(positions)


def _unit(vector):
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise GeometryError("Zero-length vector in internal coordinate")
    return vector / norm


def _perpendicular(u):
    trial = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return _unit(trial - (trial @ u) * u)


def bond_length(positions, atoms):
    i, j = atoms
    return float(np.linalg.norm(positions[j] - positions[i]))


def bond_angle(positions, atoms):
    i, j, k = atoms
    u = _unit(positions[i] - positions[j])
    v = _unit(positions[k] - positions[j])
    return float(np.degrees(np.arccos(np.clip(u @ v, -1.0, 1.0))))


def dihedral_angle(positions, atoms):
    i, j, k, l = atoms
    axis = _unit(positions[k] - positions[j])
    reference = positions[i] - positions[j]
    x = _unit(reference - (reference @ axis) * axis)
    y = np.cross(axis, x)
    v = positions[l] - positions[k]
    return float(np.degrees(np.arctan2(v @ y, v @ x)) % 360.0)


def set_bond_length(positions, atoms, value):
    """Move the last atom along the bond so that |r_j - r_i| = value."""
    i, j = atoms
    positions = np.array(positions, dtype=np.float64)
    direction = _unit(positions[j] - positions[i])
    positions[j] = positions[i] + value * direction
    return positions


def set_bond_angle(positions, atoms, value):
    """Rotate the last atom about the vertex, in the plane of the angle, to ``value`` degrees."""
    i, j, k = atoms
    positions = np.array(positions, dtype=np.float64)
    u = _unit(positions[i] - positions[j])
    arm = positions[k] - positions[j]
    length = np.linalg.norm(arm)
    in_plane = arm - (arm @ u) * u
    w = _unit(in_plane) if np.linalg.norm(in_plane) > 1e-12 else _perpendicular(u)
    theta = np.radians(value)
    positions[k] = positions[j] + length * (np.cos(theta) * u + np.sin(theta) * w)
    return positions


def set_dihedral(positions, atoms, value):
    """Rotate the last atom about the central bond; the target is taken modulo 360 degrees."""
    i, j, k, l = atoms
    positions = np.array(positions, dtype=np.float64)
    axis = _unit(positions[k] - positions[j])
    reference = positions[i] - positions[j]
    in_plane = reference - (reference @ axis) * axis
    x = _unit(in_plane) if np.linalg.norm(in_plane) > 1e-12 else _perpendicular(axis)
    y = np.cross(axis, x)
    v = positions[l] - positions[k]
    parallel = (v @ axis) * axis
    radius = np.linalg.norm(v - parallel)
    phi = np.radians(np.mod(value, 360.0))
    positions[l] = positions[k] + parallel + radius * (np.cos(phi) * x + np.sin(phi) * y)
    return positions


SETTERS = {
    "bond": (2, set_bond_length),
    "angle": (3, set_bond_angle),
    "dihedral": (4, set_dihedral),
}
