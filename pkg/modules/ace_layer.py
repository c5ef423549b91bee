"""
One Multi-ACE layer.

    edges -> one-particle basis phi -> density projection A -> products of A
          -> symmetrized B-basis -> message m -> update h'

Two coupling modes share the pipeline:

* ``feature``: MPNN presets. The coupled index of phi is a Clebsch-Gordan
  path (l1, l2, lam) contracting Y_l1 of the edge with the l2-block of the
  sender's features; channels k are never mixed by products.
* ``element``: linear ACE. phi_(n, l1, z) = R_n(r) Y_l1 [z_j == z] with the
  fixed Bessel radial and a single uncoupled channel; the layer output is
  the B-basis itself.
"""
import functools
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch

from modules.errors import ConfigurationError, DomainError, ShapeError
from modules.radial_basis import RadialBlock
from modules.so3_kernel import (
    COEFFICIENT_CUTOFF,
    L_MAX_LIMIT,
    EquivariantLinear,
    IrrepArray,
    clebsch_gordan,
    gated_nonlinearity,
    generalized_coupling,
    real_spherical_harmonics,
    triangle_paths,
)

logger = logging.getLogger(__name__)

SELF_CONNECTIONS = ("residual", "simplified", "none")
MESSAGE_NORMS = ("none", "sqrt-avg-neighbors", "avg-neighbors")
COUPLINGS = ("feature", "element")
NONLINEARITIES = {"none": None, "gated-silu": "silu", "gated-tanh": "tanh"}


@dataclass(frozen=True)
class LayerSpec:
    nu: int = 1
    l_max: int = 2
    L_max: int = 1
    n_channels: int = 16
    radial_variant: str = "element-dependent"
    self_connection: str = "residual"
    first_layer: bool = False
    message_norm_lambda: str = "avg-neighbors"
    coupling: str = "feature"
    nonlinearity: str = "none"
    L_in: int = 0
    max_degree: int = None

    def __post_init__(self):
        if self.nu < 1:
            raise ConfigurationError(f"Correlation order nu must be >= 1, got {self.nu}")
        if not 0 <= self.l_max <= L_MAX_LIMIT or not 0 <= self.L_max <= L_MAX_LIMIT:
            raise ConfigurationError(
                f"l_max={self.l_max} and L_max={self.L_max} must lie in [0, {L_MAX_LIMIT}]"
            )
        if self.L_max > self.l_max * self.nu:
            raise ConfigurationError(
                f"L_max={self.L_max} exceeds l_max * nu = {self.l_max * self.nu}; no coupling paths exist"
            )
        if self.self_connection not in SELF_CONNECTIONS:
            raise ConfigurationError(f"Unknown self-connection {self.self_connection!r}; choose one of {SELF_CONNECTIONS}")
        if self.message_norm_lambda not in MESSAGE_NORMS:
            raise ConfigurationError(f"Unknown message normalization {self.message_norm_lambda!r}; choose one of {MESSAGE_NORMS}")
        if self.coupling not in COUPLINGS:
            raise ConfigurationError(f"Unknown coupling {self.coupling!r}; choose one of {COUPLINGS}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigurationError(f"Unknown nonlinearity {self.nonlinearity!r}; choose one of {sorted(NONLINEARITIES)}")
        if self.coupling == "element" and self.radial_variant != "fixed-orthogonal":
            raise ConfigurationError("Element coupling uses the fixed-orthogonal Bessel radial")
        if self.coupling == "feature" and self.radial_variant == "fixed-orthogonal":
            raise ConfigurationError("Feature coupling needs a learnable radial (agnostic-mlp or element-dependent)")
        if self.n_channels < 1:
            raise ConfigurationError(f"n_channels must be >= 1, got {self.n_channels}")

    @property
    def gate(self):
        return NONLINEARITIES[self.nonlinearity]

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class EdgeFeatures:
    """Per-edge geometry shared by all layers of one forward pass."""

    n_atoms: int
    receivers: torch.Tensor
    senders: torch.Tensor
    lengths: torch.Tensor
    embedding: torch.Tensor
    harmonics: dict
    sender_attrs: torch.Tensor
    reference_lengths: np.ndarray = None

    @classmethod
    def build(cls, graph, positions, node_attrs, radial_embedding, l_max):
        receivers = torch.as_tensor(graph.receivers, dtype=torch.long)
        senders = torch.as_tensor(graph.senders, dtype=torch.long)
        vectors = graph.edge_vectors(positions)
        lengths = vectors.norm(dim=-1)
        embedding = radial_embedding(lengths)
        sh = real_spherical_harmonics(l_max, vectors / lengths.unsqueeze(-1), check=False)
        harmonics = {l: block[..., 0, :] for l, block in enumerate(sh.blocks())}
        return cls(
            n_atoms=graph.n_atoms,
            receivers=receivers,
            senders=senders,
            lengths=lengths,
            embedding=embedding,
            harmonics=harmonics,
            sender_attrs=node_attrs[senders],
            reference_lengths=graph.lengths,
        )


@dataclass(frozen=True, eq=False)
class LayerOutput:
    features: IrrepArray
    message: IrrepArray
    A: torch.Tensor
    B: dict


def _independent_columns(columns, tolerance=1e-10):
    keys = sorted(set().union(*columns))
    if not keys:
        return []
    matrix = np.array([[column.get(key, 0.0) for column in columns] for key in keys])
    norms = np.linalg.norm(matrix, axis=0)
    nonzero = np.flatnonzero(norms > COEFFICIENT_CUTOFF)
    if not len(nonzero):
        return []
    matrix = matrix[:, nonzero]
    _, r, pivots = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    rank = int(np.sum(diagonal > tolerance * diagonal[0]))
    return [columns[nonzero[i]] for i in sorted(pivots[:rank])]


class SymmetricCoupling:
    """
    Symmetrized generalized couplings of a product basis.

    For every correlation order, sorted tuple of A-channels and output L,
    the generalized Clebsch-Gordan paths are summed over all component
    orderings that map to the same sorted product (the product of A entries
    is symmetric) and reduced to a linearly independent subset. Each
    surviving column is one eta function of the B-basis.
    """

    def __init__(self, irreps, nu, L_outs, degrees=None, max_degree=None):
        self.irreps = tuple(irreps)
        self.nu = nu
        self.L_outs = tuple(L_outs)
        offsets = np.concatenate([[0], np.cumsum([2 * l + 1 for l in self.irreps])])
        self.dim = int(offsets[-1])

        positions = {order: {} for order in range(1, nu + 1)}
        columns_by_L = {L: [] for L in self.L_outs}
        for order in range(1, nu + 1):
            for channels in itertools.combinations_with_replacement(range(len(self.irreps)), order):
                if max_degree is not None and sum(degrees[c] for c in channels) > max_degree:
                    continue
                ls = tuple(self.irreps[c] for c in channels)
                for L in self.L_outs:
                    if (sum(ls) + L) % 2:
                        continue
                    table = generalized_coupling(order, ls, L)
                    if not len(table):
                        continue
                    candidates = []
                    for path in table.paths:
                        column = {}
                        coefficients = path.coefficients
                        for index in zip(*np.nonzero(coefficients)):
                            flat = tuple(sorted(int(offsets[c]) + int(m) for c, m in zip(channels, index[:-1])))
                            key = (flat, int(index[-1]))
                            column[key] = column.get(key, 0.0) + float(coefficients[index])
                        candidates.append({k: v for k, v in column.items() if abs(v) >= COEFFICIENT_CUTOFF})
                    for column in _independent_columns(candidates):
                        for flat, _ in column:
                            positions[order].setdefault(flat, len(positions[order]))
                        columns_by_L[L].append((order, column))

        self.tuples = {
            order: np.array(sorted(table, key=table.__getitem__), dtype=np.int64).reshape(-1, order)
            for order, table in positions.items()
        }
        base = {}
        running = 0
        for order in range(1, nu + 1):
            base[order] = running
            running += len(self.tuples[order])
        self.n_tuples = running

        self.tables = {}
        for L in self.L_outs:
            src, dst, coeff = [], [], []
            for eta, (order, column) in enumerate(columns_by_L[L]):
                for (flat, M), value in sorted(column.items()):
                    src.append(base[order] + positions[order][flat])
                    dst.append(eta * (2 * L + 1) + M)
                    coeff.append(value)
            self.tables[L] = (
                np.array(src, dtype=np.int64),
                np.array(dst, dtype=np.int64),
                np.array(coeff, dtype=np.float64),
                len(columns_by_L[L]),
            )
        logger.debug(
            "Symmetric coupling nu=%d over %d channels: eta counts %s, %d product tuples",
            nu, len(self.irreps), {L: t[3] for L, t in self.tables.items()}, self.n_tuples,
        )

    def eta_counts(self):
        return {L: table[3] for L, table in self.tables.items()}


@functools.lru_cache(maxsize=None)
def symmetric_coupling(irreps, nu, L_outs, degrees=None, max_degree=None):
    return SymmetricCoupling(irreps, nu, L_outs, degrees, max_degree)


def one_particle_basis(radial, harmonics, sender_features, paths, cg):
    """
    Feature-coupled one-particle basis, shape (E, K, sum over paths of 2*lam+1).

    phi[e, k, (l1 l2 lam), M] = R[e, k, p] sum_{m1 m2} C[m1, m2, M] Y_l1[e, m1] h_j[e, k, l2, m2]
    """
    blocks = []
    for p, ((l1, l2, _), coefficients) in enumerate(zip(paths, cg)):
        coupled = torch.einsum("em,ekn,mnM->ekM", harmonics[l1], sender_features[l2], coefficients)
        blocks.append(radial[:, :, p, None] * coupled)
    return torch.cat(blocks, dim=-1)


def element_one_particle_basis(embedding, harmonics, sender_attrs, l_max):
    """Discrete-element one-particle basis R_n Y_l1 [z_j == z], shape (E, 1, D_A)."""
    blocks = []
    for z in range(sender_attrs.shape[1]):
        for l1 in range(l_max + 1):
            block = sender_attrs[:, z, None, None] * embedding[:, :, None] * harmonics[l1][:, None, :]
            blocks.append(block.reshape(block.shape[0], -1))
    return torch.cat(blocks, dim=-1).unsqueeze(1)


def density_projection(phi, receivers, n_atoms, lam=1.0):
    """A_i = (1 / lam) sum over edges with receiver i of phi; sums follow edge order."""
    A = phi.new_zeros((n_atoms, *phi.shape[1:])).index_add(0, receivers, phi)
    return A / lam


def product_basis(A, nu, tuples=None):
    """
    Products of A entries within each uncoupled channel.

    Returns {order: (products (N, K, n_tuples), tuples (n_tuples, order))};
    without explicit ``tuples`` all sorted index tuples are used.
    """
    if isinstance(A, IrrepArray):
        A = A.channel_stack()
    result = {}
    for order in range(1, nu + 1):
        if tuples is not None:
            index = torch.as_tensor(tuples[order], dtype=torch.long).reshape(-1, order)
        else:
            combos = list(itertools.combinations_with_replacement(range(A.shape[-1]), order))
            index = torch.as_tensor(combos, dtype=torch.long).reshape(-1, order)
        product = A.index_select(-1, index[:, 0])
        for xi in range(1, order):
            product = product * A.index_select(-1, index[:, xi])
        result[order] = (product, index)
    return result


def symmetrize(products, tables, n_tuples):
    """B-basis per L, each of shape (N, K, n_eta, 2L+1)."""
    if not tables:
        raise ConfigurationError("No coupling tables supplied for symmetrization")
    flat = torch.cat([products[order][0] for order in sorted(products)], dim=-1)
    if flat.shape[-1] != n_tuples:
        raise ConfigurationError(
            f"Product basis has {flat.shape[-1]} tuples but the coupling tables expect {n_tuples}"
        )
    n_atoms, n_channels = flat.shape[0], flat.shape[1]
    basis = {}
    for L, (src, dst, coeff, n_eta) in sorted(tables.items()):
        values = flat.index_select(2, src) * coeff
        B = flat.new_zeros((n_atoms, n_channels, n_eta * (2 * L + 1))).index_add(2, dst, values)
        basis[L] = B.reshape(n_atoms, n_channels, n_eta, 2 * L + 1)
    return basis


def symmetrize_and_message(products, tables, n_tuples, weights):
    """m[i, k, L, M] = sum_eta w[L][k, eta] B[i, k, eta, L, M]."""
    basis = symmetrize(products, tables, n_tuples)
    blocks = []
    for L in sorted(int(key) for key in weights):
        if L not in basis:
            raise ConfigurationError(f"Message weights for L={L} but no coupling paths were built for it")
        weight = weights[L]
        if weight.shape != basis[L].shape[1:3]:
            raise ShapeError(f"Message weight for L={L} has shape {tuple(weight.shape)}, expected {tuple(basis[L].shape[1:3])}")
        blocks.append(torch.einsum("nkem,ke->nkm", basis[L], weight))
    return IrrepArray.from_blocks(blocks), basis


def self_connect(weights, node_attrs, x):
    """sum_{a, k~} W[L][k, k~, a] theta_a x[k~, L, M] for the blocks with weights."""
    out = {}
    for (_, ir), block in zip(x.layout, x.blocks()):
        if ir.l in weights:
            out[ir.l] = torch.einsum("kja,na,njm->nkm", weights[ir.l], node_attrs, block)
    return out


def update(message, previous, node_attrs, spec, linear, self_connection_weights):
    """Linear map of the message, self-connection variant, optional gate."""
    fresh = linear(message)
    if spec.self_connection == "none":
        out = fresh
    elif spec.self_connection == "residual":
        skip = self_connect(self_connection_weights, node_attrs, previous)
        blocks = [
            block + skip[ir.l] if ir.l in skip else block
            for (_, ir), block in zip(fresh.layout, fresh.blocks())
        ]
        out = IrrepArray.from_blocks(blocks)
    elif spec.self_connection == "simplified":
        replaced = self_connect(self_connection_weights, node_attrs, fresh)
        out = IrrepArray.from_blocks([replaced[ir.l] for _, ir in fresh.layout])
    else:
        raise ConfigurationError(f"Unknown self-connection {spec.self_connection!r}")
    if spec.gate is not None:
        out = gated_nonlinearity(out, spec.gate)
    return out


class ACELayer(torch.nn.Module):
    def __init__(self, spec, radial_cfg, n_elements, avg_neighbors=1.0):
        super().__init__()
        self.spec = spec
        self.radial_cfg = radial_cfg
        self.n_elements = n_elements
        self.register_buffer("avg_neighbors", torch.tensor(float(avg_neighbors)))
        L_outs = tuple(range(spec.L_max + 1))

        if spec.coupling == "element":
            self.n_channels = 1
            irreps, degrees = [], []
            for _ in range(n_elements):
                for l1 in range(spec.l_max + 1):
                    irreps += [l1] * radial_cfg.n_basis
                    degrees += [n + l1 for n in range(radial_cfg.n_basis)]
            coupling = symmetric_coupling(tuple(irreps), spec.nu, L_outs, tuple(degrees), spec.max_degree)
            self.paths = []
        else:
            self.n_channels = spec.n_channels
            if spec.first_layer:
                self.paths = [(l1, 0, l1) for l1 in range(spec.l_max + 1)]
            else:
                self.paths = triangle_paths(spec.l_max, spec.L_in, spec.l_max)
            for index, (l1, l2, lam) in enumerate(self.paths):
                self.register_buffer(f"cg_{index}", torch.as_tensor(np.array(clebsch_gordan(l1, l2, lam))))
            coupling = symmetric_coupling(tuple(p[2] for p in self.paths), spec.nu, L_outs)
            self.radial = RadialBlock(radial_cfg, self.n_channels, len(self.paths), n_elements)

        self.coupling_dim = coupling.dim
        self.n_tuples = coupling.n_tuples
        self.eta_counts = coupling.eta_counts()
        for order, tuples in coupling.tuples.items():
            self.register_buffer(f"tuples_{order}", torch.as_tensor(tuples))
        for L, (src, dst, coeff, _) in coupling.tables.items():
            self.register_buffer(f"coupling_src_{L}", torch.as_tensor(src))
            self.register_buffer(f"coupling_dst_{L}", torch.as_tensor(dst))
            self.register_buffer(f"coupling_coeff_{L}", torch.as_tensor(coeff))

        if spec.coupling == "feature":
            K = self.n_channels
            # an incoherent sum over n neighbors divided by lambda has scale sqrt(n) / lambda
            gain = self.message_lambda() / math.sqrt(max(float(avg_neighbors), 1.0))
            self.message_weights = torch.nn.ParameterDict(
                {
                    str(L): torch.nn.Parameter(gain * torch.randn(K, n_eta) / math.sqrt(max(n_eta, 1)))
                    for L, n_eta in self.eta_counts.items()
                }
            )
            layout = [(K, L) for L in L_outs]
            self.linear = EquivariantLinear(layout, layout)
            if spec.self_connection == "residual":
                sc_orders = [L for L in L_outs if L <= spec.L_in]
            elif spec.self_connection == "simplified":
                sc_orders = list(L_outs)
            else:
                sc_orders = []
            self.self_connection_weights = torch.nn.ParameterDict(
                {str(L): torch.nn.Parameter(torch.randn(K, K, n_elements) / math.sqrt(K)) for L in sc_orders}
            )
        logger.debug("Built %s layer with %d paths, eta counts %s", spec.coupling, len(self.paths), self.eta_counts)

    @property
    def layout_out(self):
        if self.spec.coupling == "element":
            return tuple((n, L) for L, n in sorted(self.eta_counts.items()))
        return tuple((self.n_channels, L) for L in range(self.spec.L_max + 1))

    def message_lambda(self):
        mode = self.spec.message_norm_lambda
        avg = float(self.avg_neighbors)
        if mode == "none" or avg <= 0:
            return 1.0
        return math.sqrt(avg) if mode == "sqrt-avg-neighbors" else avg

    def tuples(self):
        return {order: getattr(self, f"tuples_{order}") for order in range(1, self.spec.nu + 1)}

    def coupling_tables(self):
        return {
            L: (
                getattr(self, f"coupling_src_{L}"),
                getattr(self, f"coupling_dst_{L}"),
                getattr(self, f"coupling_coeff_{L}"),
                n_eta,
            )
            for L, n_eta in self.eta_counts.items()
        }

    def cg(self):
        return [getattr(self, f"cg_{index}") for index in range(len(self.paths))]

    def _check_edges(self, edges):
        if not edges.lengths.numel():
            return
        # float64 graph distances; the model dtype may round r_cut - eps up to r_cut
        if edges.reference_lengths is not None:
            lengths = np.asarray(edges.reference_lengths, dtype=np.float64)
        else:
            lengths = edges.lengths.detach().double().numpy()
        if lengths.min() <= self.radial_cfg.r_min or lengths.max() >= self.radial_cfg.r_cut:
            raise DomainError(
                f"Edge lengths must lie in ({self.radial_cfg.r_min}, {self.radial_cfg.r_cut}) A, "
                f"got [{lengths.min():.4g}, {lengths.max():.4g}]"
            )

    def one_particle(self, h, edges):
        self._check_edges(edges)
        if self.spec.coupling == "element":
            return element_one_particle_basis(edges.embedding, edges.harmonics, edges.sender_attrs, self.spec.l_max)
        sender_features = {ir.l: block[edges.senders] for (_, ir), block in zip(h.layout, h.blocks())}
        radial = self.radial(edges.embedding, edges.sender_attrs)
        return one_particle_basis(radial, edges.harmonics, sender_features, self.paths, self.cg())

    def forward(self, h, node_attrs, edges):
        phi = self.one_particle(h, edges)
        A = density_projection(phi, edges.receivers, edges.n_atoms, self.message_lambda())
        products = product_basis(A, self.spec.nu, self.tuples())
        if self.spec.coupling == "element":
            basis = symmetrize(products, self.coupling_tables(), self.n_tuples)
            features = IrrepArray.from_blocks([basis[L][:, 0] for L in sorted(basis)])
            return LayerOutput(features=features, message=features, A=A, B=basis)
        weights = {int(L): w for L, w in self.message_weights.items()}
        message, basis = symmetrize_and_message(products, self.coupling_tables(), self.n_tuples, weights)
        sc_weights = {int(L): w for L, w in self.self_connection_weights.items()}
        features = update(message, h, node_attrs, self.spec, self.linear, sc_weights)
        return LayerOutput(features=features, message=message, A=A, B=basis)

    @torch.no_grad()
    def corrupt_coupling(self, seed=0, scale=0.1):
        """Perturb coupling and Clebsch-Gordan buffers (negative control for equivariance checks)."""
        generator = torch.Generator().manual_seed(seed)
        for name, buffer in self.named_buffers():
            if name.startswith(("coupling_coeff_", "cg_")) and buffer.numel():
                noise = torch.randn(buffer.shape, generator=generator, dtype=torch.float64)
                buffer.add_(scale * noise.to(buffer.dtype))
        logger.warning("Coupling coefficients of layer were corrupted (seed %d)", seed)
