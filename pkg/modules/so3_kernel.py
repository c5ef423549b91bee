"""
O(3) representation theory used by every other module.

Conventions
-----------
Components of an l-block are ordered m = -l..l. For m > 0 a harmonic is the
cosine part of (x + iy)^m times the associated Legendre polynomial, for m < 0
the sine part; there is no Condon-Shortley phase. Consequently

    Y_1(v) = sqrt(3) * (y, z, x)      and      D^1(Q) = P Q P^T

with P = L1_PERMUTATION. Harmonics are normalized so that every l-block has
squared norm 2l + 1 on the unit sphere.

Real Clebsch-Gordan coefficients are the complex (Condon-Shortley) ones,
evaluated exactly with sympy, pushed through the real <-> complex change of
basis. All tables are cached and read-only.
"""
import functools
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from sympy.physics.wigner import clebsch_gordan as _sympy_clebsch_gordan

from modules.errors import (
    ConfigurationError,
    CouplingError,
    GeometryError,
    NormalizationError,
    ShapeError,
)

logger = logging.getLogger(__name__)

COEFFICIENT_CUTOFF = 1e-14
L_MAX_DEFAULT = 3
L_MAX_LIMIT = 4

# rows: (m=-1, m=0, m=1) <- (y, z, x)
L1_PERMUTATION = np.array(
    [
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
    ]
)


@dataclass(frozen=True, order=True)
class Irrep:
    """O(3) irrep with parity (-1)^l."""

    l: int

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 0:
            raise ConfigurationError(f"Irrep order must be a non-negative integer, got {self.l!r}")
        object.__setattr__(self, "l", int(self.l))

    @property
    def parity(self):
        return 1 if self.l % 2 == 0 else -1

    @property
    def dim(self):
        return 2 * self.l + 1

    def __repr__(self):
        return f"{self.l}{'e' if self.parity == 1 else 'o'}"


def _as_irrep(value):
    if isinstance(value, Irrep):
        return value
    return Irrep(int(value))


def layout_dim(layout):
    """Total length of a flat array with the given (k, Irrep) layout."""
    return sum(k * _as_irrep(ir).dim for k, ir in layout)


@dataclass(frozen=True, eq=False)
class IrrepArray:
    """
    Concatenation of (channel count k, irrep L) blocks.

    ``values`` has shape (..., dim); block (k, L) occupies k * (2L + 1)
    consecutive entries laid out channel-major, components M = -L..L.
    """

    layout: tuple
    values: torch.Tensor

    def __post_init__(self):
        layout = tuple((int(k), _as_irrep(ir)) for k, ir in self.layout)
        object.__setattr__(self, "layout", layout)
        values = self.values
        if not isinstance(values, torch.Tensor):
            values = torch.as_tensor(np.asarray(values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.shape[-1] != layout_dim(layout):
            raise ShapeError(
                f"IrrepArray values have length {values.shape[-1]} but layout {self.describe()} "
                f"requires {layout_dim(layout)}"
            )

    @property
    def dim(self):
        return layout_dim(self.layout)

    @property
    def batch_shape(self):
        return tuple(self.values.shape[:-1])

    @property
    def irreps(self):
        return [ir for _, ir in self.layout]

    def describe(self):
        return " + ".join(f"{k}x{ir!r}" for k, ir in self.layout) or "empty"

    def slices(self):
        offset = 0
        result = []
        for k, ir in self.layout:
            result.append(slice(offset, offset + k * ir.dim))
            offset += k * ir.dim
        return result

    def blocks(self):
        """List of tensors of shape (..., k, 2L+1), one per layout entry."""
        batch = self.batch_shape
        return [
            self.values[..., sl].reshape(*batch, k, ir.dim)
            for (k, ir), sl in zip(self.layout, self.slices())
        ]

    @classmethod
    def from_blocks(cls, blocks):
        layout = []
        flat = []
        for block in blocks:
            k, d = block.shape[-2], block.shape[-1]
            if d % 2 != 1:
                raise ShapeError(f"Block component dimension {d} is not odd")
            layout.append((k, Irrep((d - 1) // 2)))
            flat.append(block.reshape(*block.shape[:-2], k * d))
        return cls(tuple(layout), torch.cat(flat, dim=-1))

    def channel_stack(self):
        """Stack blocks along a common channel axis: (..., k, sum(2L+1))."""
        counts = {k for k, _ in self.layout}
        if len(counts) != 1:
            raise ShapeError(f"channel_stack needs a uniform channel count, got {self.describe()}")
        return torch.cat(self.blocks(), dim=-1)

    @classmethod
    def from_channel_stack(cls, stacked, irreps):
        sizes = [_as_irrep(ir).dim for ir in irreps]
        if sum(sizes) != stacked.shape[-1]:
            raise ShapeError(f"Stacked length {stacked.shape[-1]} does not match irreps {irreps}")
        return cls.from_blocks(list(torch.split(stacked, sizes, dim=-1)))

    def take(self, index):
        """Gather along the first batch axis (e.g. sender atoms of edges)."""
        return IrrepArray(self.layout, self.values[index])

    def with_values(self, values):
        return IrrepArray(self.layout, values)

    def transform(self, rotation):
        """Apply the O(3) action of ``rotation`` to every block."""
        out = []
        for (k, ir), block in zip(self.layout, self.blocks()):
            matrix = torch.as_tensor(o3_action(ir.l, rotation), dtype=block.dtype, device=block.device)
            out.append(torch.einsum("mn,...kn->...km", matrix, block))
        return IrrepArray.from_blocks(out) if out else self


def _double_factorial(n):
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def _harmonic_blocks(l_max, xyz):
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    one = torch.ones_like(x)
    cos_m = [one]
    sin_m = [torch.zeros_like(x)]
    for _ in range(l_max):
        c, s = cos_m[-1], sin_m[-1]
        cos_m.append(x * c - y * s)
        sin_m.append(x * s + y * c)

    # associated Legendre polynomials divided by sin^m(theta), no phase
    legendre = {}
    for m in range(l_max + 1):
        legendre[(m, m)] = _double_factorial(2 * m - 1) * one
        if m + 1 <= l_max:
            legendre[(m + 1, m)] = (2 * m + 1) * z * legendre[(m, m)]
        for l in range(m + 2, l_max + 1):
            legendre[(l, m)] = (
                (2 * l - 1) * z * legendre[(l - 1, m)] - (l + m - 1) * legendre[(l - 2, m)]
            ) / (l - m)

    blocks = []
    for l in range(l_max + 1):
        components = []
        for m in range(-l, l + 1):
            am = abs(m)
            norm = math.sqrt((2 * l + 1) * math.factorial(l - am) / math.factorial(l + am))
            if m != 0:
                norm *= math.sqrt(2.0)
            angular = sin_m[am] if m < 0 else cos_m[am]
            components.append(norm * legendre[(l, am)] * angular)
        blocks.append(torch.stack(components, dim=-1))
    return blocks


def real_spherical_harmonics(l_max, unit_vectors, check=True):
    """
    Real spherical harmonics Y_0..Y_lmax of unit vectors.

    Returns an IrrepArray with one (1, l) block per l; ``values`` has shape
    (..., (l_max + 1)^2). Raises NormalizationError for non-unit input.
    """
    if l_max < 0:
        raise ConfigurationError(f"l_max must be non-negative, got {l_max}")
    if not isinstance(unit_vectors, torch.Tensor):
        unit_vectors = torch.as_tensor(np.asarray(unit_vectors, dtype=np.float64))
    if unit_vectors.shape[-1] != 3:
        raise ShapeError(f"Expected 3-vectors, got shape {tuple(unit_vectors.shape)}")
    if check and unit_vectors.numel():
        tolerance = max(1e-8, 100 * torch.finfo(unit_vectors.dtype).eps)
        deviation = (unit_vectors.detach().norm(dim=-1) - 1.0).abs().max().item()
        if deviation > tolerance:
            raise NormalizationError(f"Spherical harmonics need unit vectors (norm deviation {deviation:.3e})")
    blocks = _harmonic_blocks(l_max, unit_vectors)
    layout = tuple((1, Irrep(l)) for l in range(l_max + 1))
    return IrrepArray(layout, torch.cat(blocks, dim=-1))


def _harmonics_numpy(l, points):
    blocks = _harmonic_blocks(l, torch.as_tensor(points, dtype=torch.float64))
    return blocks[l].numpy()


@functools.lru_cache(maxsize=None)
def _fit_points(l):
    rng = np.random.default_rng(2021 + l)
    points = rng.normal(size=(6 * (2 * l + 1), 3))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    points.setflags(write=False)
    return points


def _check_orthogonal(rotation, tolerance=1e-10):
    q = np.asarray(rotation, dtype=np.float64)
    if q.shape != (3, 3):
        raise GeometryError(f"Rotation must be 3x3, got {q.shape}")
    deviation = np.abs(q @ q.T - np.eye(3)).max()
    if deviation > tolerance:
        raise GeometryError(f"Matrix is not orthogonal (|QQ^T - I| = {deviation:.3e})")
    return q


@dataclass(frozen=True, eq=False)
class WignerD:
    l: int
    matrix: np.ndarray


def o3_action(l, rotation):
    """
    Matrix D with Y_l(Q v) = D Y_l(v) for any orthogonal Q.

    The equivariance identity is the definition: D is the least-squares
    solution on a fixed well-conditioned set of sample directions.
    """
    q = _check_orthogonal(rotation)
    if l == 0:
        return np.ones((1, 1))
    if np.array_equal(q, np.eye(3)):
        return np.eye(2 * l + 1)
    if np.array_equal(q, -np.eye(3)):
        return (-1) ** l * np.eye(2 * l + 1)
    points = _fit_points(l)
    before = _harmonics_numpy(l, points)
    after = _harmonics_numpy(l, points @ q.T)
    transposed, *_ = np.linalg.lstsq(before, after, rcond=None)
    return transposed.T


def wigner_d(l, rotation):
    """Wigner D-matrix of a proper rotation in the real harmonic basis."""
    q = _check_orthogonal(rotation)
    det = np.linalg.det(q)
    if abs(det - 1.0) > 1e-10:
        raise GeometryError(f"Rotation must have determinant +1, got {det:.12f}")
    return WignerD(l=int(l), matrix=o3_action(int(l), q))


def _triangle(l1, l2, L):
    return abs(l1 - l2) <= L <= l1 + l2


@functools.lru_cache(maxsize=None)
def _complex_clebsch_gordan(l1, l2, L):
    table = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * L + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            M = m1 + m2
            if abs(M) <= L:
                table[m1 + l1, m2 + l2, M + L] = float(_sympy_clebsch_gordan(l1, l2, L, m1, m2, M))
    return table


@functools.lru_cache(maxsize=None)
def real_to_complex(l):
    """V with Y_complex = V @ Y_real (rows mu = -l..l, columns m = -l..l)."""
    v = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    v[l, l] = 1.0
    s = 1.0 / math.sqrt(2.0)
    for m in range(1, l + 1):
        sign = (-1) ** m
        v[l + m, l + m] = sign * s
        v[l + m, l - m] = 1j * sign * s
        v[l - m, l + m] = s
        v[l - m, l - m] = -1j * s
    v.setflags(write=False)
    return v


@functools.lru_cache(maxsize=None)
def _real_clebsch_gordan(l1, l2, L):
    complex_table = _complex_clebsch_gordan(l1, l2, L)
    v1, v2, vl = real_to_complex(l1), real_to_complex(l2), real_to_complex(L)
    real = np.einsum("ia,jb,kc,ijk->abc", v1, v2, vl.conj(), complex_table)
    # l1 + l2 + L odd couplings come out purely imaginary
    if np.abs(real.real).max() >= np.abs(real.imag).max():
        table = np.ascontiguousarray(real.real)
    else:
        table = np.ascontiguousarray(real.imag)
    table[np.abs(table) < COEFFICIENT_CUTOFF] = 0.0
    table.setflags(write=False)
    return table


def clebsch_gordan(l1, l2, L):
    """
    Real-basis Clebsch-Gordan tensor of shape (2l1+1, 2l2+1, 2L+1).

    Raises CouplingError when (l1, l2, L) violates the triangle inequality.
    """
    l1, l2, L = int(l1), int(l2), int(L)
    if min(l1, l2, L) < 0 or not _triangle(l1, l2, L):
        raise CouplingError(f"Invalid coupling request ({l1}, {l2}) -> {L}: triangle inequality violated")
    return _real_clebsch_gordan(l1, l2, L)


@dataclass(frozen=True, eq=False)
class CouplingPath:
    eta: int
    chain: tuple
    coefficients: np.ndarray


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """Generalized Clebsch-Gordan paths coupling (l_1..l_nu) to L_out."""

    nu: int
    ls: tuple
    L_out: int
    paths: tuple

    @property
    def l_max(self):
        return max(self.ls)

    def __len__(self):
        return len(self.paths)

    def entries(self):
        """Sparse view: (eta, ((l_i, m_i), ...), chain, M, value) per nonzero."""
        for path in self.paths:
            coefficients = path.coefficients
            for index in zip(*np.nonzero(coefficients)):
                inputs = tuple((l, int(m) - l) for l, m in zip(self.ls, index[:-1]))
                yield path.eta, inputs, path.chain, int(index[-1]) - self.L_out, float(coefficients[index])


def coupling_chains(ls, L_out):
    """All intermediate chains (L_2, ..., L_N) with L_N = L_out."""
    ls = tuple(int(l) for l in ls)
    remaining = [sum(ls[i:]) for i in range(len(ls) + 1)]

    def extend(position, current, chain):
        if position == len(ls):
            if current == L_out:
                yield chain
            return
        l = ls[position]
        for L in range(abs(current - l), current + l + 1):
            # L_out must stay reachable with the factors still to come
            if abs(L - L_out) <= remaining[position + 1]:
                yield from extend(position + 1, L, chain + (L,))

    yield from extend(1, ls[0], ())


@functools.lru_cache(maxsize=None)
def _generalized_coupling(nu, ls, L_out):
    paths = []
    for chain in coupling_chains(ls, L_out):
        table = np.eye(2 * ls[0] + 1)
        current = ls[0]
        for l, L in zip(ls[1:], chain):
            table = np.tensordot(table, clebsch_gordan(current, l, L), axes=([-1], [0]))
            current = L
        table = np.array(table)
        table[np.abs(table) < COEFFICIENT_CUTOFF] = 0.0
        table.setflags(write=False)
        paths.append(CouplingPath(eta=len(paths), chain=chain, coefficients=table))
    if not paths:
        logger.debug("No coupling chain for %s -> %d", ls, L_out)
    return CouplingTable(nu=nu, ls=ls, L_out=L_out, paths=tuple(paths))


def generalized_coupling(nu, input_l_list, L_out):
    """
    Enumerate the generalized coupling paths of ``nu`` inputs into ``L_out``.

    Each triangle-compatible chain of intermediate orders is one eta path;
    its coefficient tensor is the product of pairwise Clebsch-Gordan tensors.
    An empty table is a valid result.
    """
    ls = tuple(int(l) for l in input_l_list)
    L = _as_irrep(L_out).l
    if nu < 1:
        raise ConfigurationError(f"Correlation order must be >= 1, got {nu}")
    if len(ls) != nu:
        raise ConfigurationError(f"Expected {nu} input orders, got {len(ls)}")
    if any(l < 0 for l in ls):
        raise ConfigurationError(f"Input orders must be non-negative: {ls}")
    return _generalized_coupling(int(nu), ls, L)


def equivariant_linear(weights, x):
    """
    Block diagonal linear map: out[k', L, M] = sum_k W_L[k', k] x[k, L, M].

    ``weights`` maps L to a (k_out, k_in) tensor; k_in is the total channel
    count of all L-blocks of ``x``. Blocks of x with no weight are dropped.
    """
    groups = {}
    for (k, ir), block in zip(x.layout, x.blocks()):
        groups.setdefault(ir.l, []).append(block)
    out = []
    for l in sorted(int(key) for key in weights):
        weight = weights[l] if l in weights else weights[str(l)]
        if l not in groups:
            raise ShapeError(f"Weights given for L={l} but input has no such block ({x.describe()})")
        x_l = torch.cat(groups[l], dim=-2)
        if weight.dim() != 2 or weight.shape[1] != x_l.shape[-2]:
            raise ShapeError(
                f"Weight for L={l} has shape {tuple(weight.shape)}, input has {x_l.shape[-2]} channels"
            )
        out.append(torch.einsum("oi,...im->...om", weight, x_l))
    if not out:
        raise ShapeError("equivariant_linear called without weights")
    return IrrepArray.from_blocks(out)


class EquivariantLinear(torch.nn.Module):
    """Learnable block diagonal map between two layouts (one block per L)."""

    def __init__(self, layout_in, layout_out):
        super().__init__()
        channels_in = {}
        for k, ir in layout_in:
            l = _as_irrep(ir).l
            channels_in[l] = channels_in.get(l, 0) + int(k)
        self.weights = torch.nn.ParameterDict()
        for k, ir in layout_out:
            l = _as_irrep(ir).l
            if l in channels_in:
                # unit second moment at initialization
                self.weights[str(l)] = torch.nn.Parameter(
                    torch.randn(int(k), channels_in[l]) / math.sqrt(channels_in[l])
                )

    def weight_map(self):
        return {int(l): w for l, w in self.weights.items()}

    def forward(self, x):
        return equivariant_linear(self.weight_map(), x)


ACTIVATIONS = {
    "silu": F.silu,
    "tanh": torch.tanh,
    "identity": lambda t: t,
}


def get_activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown activation {name!r}; choose one of {sorted(ACTIVATIONS)}"
        ) from None


def gated_nonlinearity(x, scalar_activation):
    """
    Square-norm gated nonlinearity.

    L=0 blocks: f(x) pointwise. L>0 blocks: x_kL * f(|x_kL|^2) per channel.
    """
    activation = get_activation(scalar_activation)
    out = []
    for (k, ir), block in zip(x.layout, x.blocks()):
        if ir.l == 0:
            out.append(activation(block))
        else:
            out.append(block * activation(block.pow(2).sum(dim=-1, keepdim=True)))
    return IrrepArray.from_blocks(out)


def triangle_paths(l1_max, l2_max, L_max, parity=True):
    """(l1, l2, L) triples allowed by the triangle rule (and parity)."""
    result = []
    for l1, l2 in itertools.product(range(l1_max + 1), range(l2_max + 1)):
        for L in range(abs(l1 - l2), min(l1 + l2, L_max) + 1):
            if parity and (l1 + l2 + L) % 2:
                continue
            result.append((l1, l2, L))
    return result
