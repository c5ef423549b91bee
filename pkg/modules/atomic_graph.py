"""
Atomic configurations, cutoff neighbor graphs, element tables and dataset
statistics. Open boundary conditions only.
"""
import logging
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np
import torch

from data.elements import get_atomic_numbers
from modules.errors import ContactError, DataError, DataNormalizationError
from modules.radial_basis import R_MIN

logger = logging.getLogger(__name__)


@dataclass
class Configuration:
    """One molecular frame with optional energy (eV) and force (eV/A) labels."""

    positions: np.ndarray
    elements: tuple
    energy: float = None
    forces: np.ndarray = None
    e0: dict = None
    cell: object = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cell is not None:
            raise DataError("Periodic cells are not supported; only open boundary conditions")
        positions = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(positions).all():
            raise DataError("Positions contain non-finite values")
        self.positions = positions
        self.elements = tuple(str(e) for e in self.elements)
        if len(self.elements) != len(positions):
            raise DataError(f"{len(positions)} positions but {len(self.elements)} element symbols")
        if self.energy is not None:
            self.energy = float(self.energy)
        if self.forces is not None:
            forces = np.array(self.forces, dtype=np.float64)
            if forces.shape != positions.shape:
                raise DataError(f"Forces have shape {forces.shape}, expected {positions.shape}")
            self.forces = forces

    @property
    def n_atoms(self):
        return len(self.elements)

    def translated(self, shift):
        return replace(self, positions=self.positions + np.asarray(shift, dtype=np.float64))

    def rotated(self, rotation, center=None):
        """Apply an orthogonal map about ``center`` (origin by default); forces follow."""
        q = np.asarray(rotation, dtype=np.float64)
        origin = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
        positions = (self.positions - origin) @ q.T + origin
        forces = None if self.forces is None else self.forces @ q.T
        return replace(self, positions=positions, forces=forces)

    def permuted(self, order):
        order = np.asarray(order)
        return replace(
            self,
            positions=self.positions[order],
            elements=tuple(self.elements[i] for i in order),
            forces=None if self.forces is None else self.forces[order],
        )

    def element_counts(self):
        counts = {}
        for symbol in self.elements:
            counts[symbol] = counts.get(symbol, 0) + 1
        return counts


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """
    Directed cutoff graph. Edge e points from sender j to receiver i and
    carries r_ji = r_j - r_i.

    Edges are sorted by receiver, then by distance and displacement, so the
    per-atom order does not depend on atom labels.
    """

    n_atoms: int
    r_cut: float
    receivers: np.ndarray
    senders: np.ndarray
    vectors: np.ndarray

    @property
    def n_edges(self):
        return len(self.receivers)

    @property
    def lengths(self):
        return np.linalg.norm(self.vectors, axis=1)

    def neighbors(self, i):
        return self.senders[self.receivers == i].tolist()

    def neighbor_counts(self):
        return np.bincount(self.receivers, minlength=self.n_atoms)

    def edge_vectors(self, positions):
        """Recompute r_ji from a (possibly differentiable) position tensor."""
        receivers = torch.as_tensor(self.receivers, dtype=torch.long)
        senders = torch.as_tensor(self.senders, dtype=torch.long)
        return positions[senders] - positions[receivers]

    def relabeled(self, labels):
        """Same edges with atom k renamed to labels[k]."""
        labels = np.asarray(labels, dtype=np.int64)
        return replace(self, receivers=labels[self.receivers], senders=labels[self.senders])

    def to_networkx(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_atoms))
        for i, j, v in zip(self.receivers, self.senders, self.vectors):
            graph.add_edge(int(j), int(i), vector=v, length=float(np.linalg.norm(v)))
        return graph

    def fragments(self):
        """Connected components as sorted atom index lists."""
        undirected = self.to_networkx().to_undirected()
        return sorted(sorted(c) for c in nx.connected_components(undirected))


def canonical_order(cfg):
    """
    Atom order by atomic number, then x, y and z. Relabeling a configuration
    does not change the reordered configuration.
    """
    numbers = get_atomic_numbers()
    positions = cfg.positions
    atomic_numbers = np.array([numbers[symbol] for symbol in cfg.elements], dtype=np.int64)
    return np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0], atomic_numbers))


def build_neighbor_graph(cfg, r_cut, r_min=R_MIN):
    """Brute-force directed neighbor graph; raises ContactError below r_min."""
    if not r_cut > 0:
        raise DataError(f"r_cut must be positive, got {r_cut}")
    positions = cfg.positions
    n = len(positions)
    receivers, senders, vectors = [], [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            vector = positions[j] - positions[i]
            distance = np.sqrt(vector @ vector)
            if distance < r_min:
                raise ContactError(
                    f"Atoms {i} ({cfg.elements[i]}) and {j} ({cfg.elements[j]}) are {distance:.3e} A apart, "
                    f"below the minimum distance {r_min} A"
                )
            if distance < r_cut:
                receivers.append(i)
                senders.append(j)
                vectors.append(vector)

    receivers = np.asarray(receivers, dtype=np.int64)
    senders = np.asarray(senders, dtype=np.int64)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    if len(receivers):
        lengths = np.linalg.norm(vectors, axis=1)
        order = np.lexsort((vectors[:, 2], vectors[:, 1], vectors[:, 0], lengths, receivers))
        receivers, senders, vectors = receivers[order], senders[order], vectors[order]
    return NeighborGraph(n_atoms=n, r_cut=float(r_cut), receivers=receivers, senders=senders, vectors=vectors)


@dataclass(frozen=True)
class ElementTable:
    """Ordered element symbols plus optional isolated-atom energies."""

    symbols: tuple
    e0: dict = None
    e0_source: str = None

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            raise DataError(f"Element symbols must be unique: {symbols}")
        known = get_atomic_numbers()
        unknown = [s for s in symbols if s not in known]
        if unknown:
            raise DataError(f"Unknown element symbols: {unknown}")
        if self.e0 is not None:
            missing = [s for s in symbols if s not in self.e0]
            if missing:
                raise DataError(f"E0 table lacks entries for {missing}")

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self.symbols

    def index(self, symbol):
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise DataError(f"Element {symbol!r} is not in the element table {list(self.symbols)}") from None

    @classmethod
    def from_symbols(cls, symbols, e0=None, e0_source=None):
        numbers = get_atomic_numbers()
        unknown = sorted(set(symbols) - set(numbers))
        if unknown:
            raise DataError(f"Unknown element symbols: {unknown}")
        ordered = tuple(sorted(set(symbols), key=numbers.__getitem__))
        return cls(ordered, e0=e0, e0_source=e0_source)

    @classmethod
    def from_frames(cls, frames, extra=()):
        """Table of all elements in ``frames``; E0 taken from frame headers if they cover every element."""
        symbols = set(extra)
        header = {}
        for frame in frames:
            symbols.update(frame.elements)
            if frame.e0:
                header.update(frame.e0)
        table = cls.from_symbols(symbols)
        if header and all(s in header for s in table.symbols):
            table = table.with_e0({s: float(header[s]) for s in table.symbols}, "header")
        return table

    def with_e0(self, e0, source):
        return ElementTable(self.symbols, e0=dict(e0), e0_source=source)

    def e0_vector(self):
        if self.e0 is None:
            raise DataNormalizationError("No isolated-atom energies available for this element table")
        return np.array([self.e0[s] for s in self.symbols], dtype=np.float64)

    def indices(self, elements):
        return np.array([self.index(e) for e in elements], dtype=np.int64)

    def to_dict(self):
        return {"symbols": list(self.symbols), "e0": self.e0, "e0_source": self.e0_source}

    @classmethod
    def from_dict(cls, payload):
        return cls(tuple(payload["symbols"]), e0=payload.get("e0"), e0_source=payload.get("e0_source"))


def one_hot(element, table):
    vector = np.zeros(len(table))
    vector[table.index(element)] = 1.0
    return vector


def one_hot_matrix(elements, table):
    matrix = np.zeros((len(elements), len(table)))
    if len(elements):
        matrix[np.arange(len(elements)), table.indices(elements)] = 1.0
    return matrix


def element_count_matrix(frames, table):
    counts = np.zeros((len(frames), len(table)))
    for row, frame in enumerate(frames):
        for symbol, count in frame.element_counts().items():
            counts[row, table.index(symbol)] = count
    return counts


def estimate_e0(frames, table):
    """
    Least-squares regression of total energies on element counts.
    Returns a table flagged as "estimated".
    """
    labeled = [f for f in frames if f.energy is not None]
    if not labeled:
        raise DataNormalizationError("E0 estimation needs frames with energies")
    counts = element_count_matrix(labeled, table)
    rank = np.linalg.matrix_rank(counts)
    if rank < len(table):
        raise DataNormalizationError(
            f"E0 is not identifiable: element count matrix has rank {rank} for {len(table)} elements"
        )
    energies = np.array([f.energy for f in labeled])
    solution, *_ = np.linalg.lstsq(counts, energies, rcond=None)
    logger.info("Estimated E0 by least squares: %s", dict(zip(table.symbols, np.round(solution, 6))))
    return table.with_e0(dict(zip(table.symbols, solution.tolist())), "estimated")


def dataset_statistics(frames, r_cut):
    """
    Dataset statistics used for internal and data normalization.
    Returns a dictionary with avg_neighbors, mean_energy, energy_std,
    force_rms, per_element_counts, n_frames and n_atoms.
    """
    frames = list(frames)
    if not frames:
        raise DataError("Cannot compute statistics of an empty dataset")

    n_atoms = 0
    n_edges = 0
    per_element_counts = {}
    for frame in frames:
        graph = build_neighbor_graph(frame, r_cut)
        n_atoms += frame.n_atoms
        n_edges += graph.n_edges
        for symbol, count in frame.element_counts().items():
            per_element_counts[symbol] = per_element_counts.get(symbol, 0) + count

    energies = np.array([f.energy for f in frames if f.energy is not None])
    forces = [f.forces.ravel() for f in frames if f.forces is not None]
    force_components = np.concatenate(forces) if forces else np.zeros(0)

    return {
        "avg_neighbors": n_edges / n_atoms if n_atoms else 0.0,
        "mean_energy": float(energies.mean()) if len(energies) else None,
        "energy_std": float(energies.std()) if len(energies) else None,
        "force_rms": float(np.sqrt(np.mean(force_components**2))) if len(force_components) else None,
        "per_element_counts": per_element_counts,
        "n_frames": len(frames),
        "n_atoms": n_atoms,
    }
