"""
Full potentials assembled from ACE layers: presets, readouts, data
normalization and the body-ordered energy decomposition.

Site energy:

    E_i = shift_i + alpha * (sum_t readout_t(h_i^(t)) + F(h_i^(T)))

where readout_t is linear on the L=0 block and F is the optional final MLP.
"""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
import torch

from data.presets import get_model_presets
from modules.ace_layer import ACELayer, EdgeFeatures, LayerSpec
from modules.atomic_graph import (
    ElementTable,
    build_neighbor_graph,
    canonical_order,
    dataset_statistics,
    estimate_e0,
    one_hot_matrix,
)
from modules.errors import ConfigurationError, DataError, DataNormalizationError
from modules.radial_basis import RadialConfig, RadialEmbedding
from modules.so3_kernel import IrrepArray, get_activation

logger = logging.getLogger(__name__)

PRESETS = ("linear-ace", "nequip", "botnet", "botnet-linear", "custom")
READOUTS = ("per-layer-linear+final-mlp", "final-only", "per-layer-linear", "element-linear")
NORMALIZATIONS = ("ssh-forces-rms", "ssh-energy-std", "e0", "none")
PRECISIONS = {"float32": torch.float32, "float64": torch.float64, "f32": torch.float32, "f64": torch.float64}
ARCHIVE_FORMAT = "multiace-archive"
ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    preset: str
    layers: tuple
    radial: RadialConfig
    readout: str = "per-layer-linear+final-mlp"
    nonlinearity: str = "none"
    normalization: str = "e0"
    precision: str = "float64"
    mlp_width: int = 16
    mlp_activation: str = "silu"
    n_channels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.preset not in PRESETS:
            raise ConfigurationError(f"Unknown preset {self.preset!r}; choose one of {PRESETS}")
        if self.readout not in READOUTS:
            raise ConfigurationError(f"Unknown readout {self.readout!r}; choose one of {READOUTS}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"Unknown normalization {self.normalization!r}; choose one of {NORMALIZATIONS}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"Unknown precision {self.precision!r}")
        if not self.layers:
            raise ConfigurationError("A model needs at least one layer")
        get_activation(self.mlp_activation)

        element_layers = [layer.coupling == "element" for layer in self.layers]
        if any(element_layers) and (len(self.layers) != 1 or self.readout != "element-linear"):
            raise ConfigurationError("Element coupling is only supported as a single layer with the element-linear readout")
        if self.readout == "element-linear" and not all(element_layers):
            raise ConfigurationError("The element-linear readout needs an element-coupled layer")
        if self.preset in ("botnet", "botnet-linear"):
            if any(layer.nonlinearity != "none" for layer in self.layers):
                raise ConfigurationError("botnet presets keep every update linear")
        if self.preset == "linear-ace" and (self.T != 1 or self.layers[0].L_max != 0):
            raise ConfigurationError("linear-ace uses a single layer with invariant (L_max=0) output")
        for t, layer in enumerate(self.layers):
            if layer.first_layer != (t == 0):
                raise ConfigurationError(f"Layer {t}: only the first layer may be marked first_layer")
            if t > 0 and layer.L_in != self.layers[t - 1].L_max:
                raise ConfigurationError(f"Layer {t}: L_in={layer.L_in} does not match previous L_max")

    @property
    def T(self):
        return len(self.layers)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        payload = asdict(self)
        payload["radial"] = self.radial.to_dict()
        payload["layers"] = [layer.to_dict() for layer in self.layers]
        return payload

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        payload["radial"] = RadialConfig(**payload["radial"])
        payload["layers"] = tuple(LayerSpec(**layer) for layer in payload["layers"])
        return cls(**payload)


def build_model_spec(model=None, radial=None, precision="float64"):
    """
    Model spec from flat "model" and "radial" settings on top of a preset.

    ``model["preset"]`` selects the preset; every other non-None key overrides it.
    """
    model = dict(model or {})
    radial = dict(radial or {})
    preset = model.pop("preset", "botnet")
    presets = get_model_presets()
    if preset not in presets:
        raise ConfigurationError(f"Unknown preset {preset!r}; choose one of {sorted(presets)}")
    settings = dict(presets[preset]["model"])
    settings.update({k: v for k, v in model.items() if v is not None})
    radial_settings = dict(presets[preset]["radial"])
    radial_settings.update({k: v for k, v in radial.items() if v is not None})
    radial_cfg = RadialConfig(**radial_settings)

    T = int(settings["num_layers"])
    if T < 1:
        raise ConfigurationError(f"num_layers must be >= 1, got {T}")
    layers = []
    L_in = 0
    for t in range(T):
        self_connection = settings["self_connection"]
        if self_connection == "mixed":
            self_connection = "simplified" if t == 0 else "residual"
        layer = LayerSpec(
            nu=int(settings["correlation_order"]),
            l_max=int(settings["l_max"]),
            L_max=int(settings["L_max"]),
            n_channels=int(settings["n_channels"]),
            radial_variant=radial_cfg.variant,
            self_connection=self_connection,
            first_layer=t == 0,
            message_norm_lambda=settings["message_norm"],
            coupling=settings["coupling"],
            nonlinearity=settings["nonlinearity"],
            L_in=L_in,
            max_degree=settings.get("max_degree"),
        )
        layers.append(layer)
        L_in = layer.L_max
    return ModelSpec(
        preset=preset,
        layers=tuple(layers),
        radial=radial_cfg,
        readout=settings["readout"],
        nonlinearity=settings["nonlinearity"],
        normalization=settings["normalization"],
        precision={"f32": "float32", "f64": "float64"}.get(precision, precision),
        mlp_width=int(settings["mlp_width"]),
        mlp_activation=settings["mlp_activation"],
        n_channels=int(settings["n_channels"]),
    )


def receptive_field_check(spec):
    """Largest distance two atoms can be apart and still see each other: T * r_cut."""
    return spec.T * spec.radial.r_cut


@dataclass
class NormalizationState:
    """
    Affine map between model-internal and physical energies.

    E_i = shift_i + alpha * E_hat_i with shift_i = per-atom mean energy (SSH)
    or the isolated-atom energy of atom i (E0).
    """

    scheme: str = "none"
    alpha: float = 1.0
    shift: float = 0.0
    e0: dict = None

    def site_shift(self, elements):
        if self.scheme == "e0":
            if self.e0 is None:
                raise DataNormalizationError("E0 normalization without isolated-atom energies")
            missing = sorted(set(elements) - set(self.e0))
            if missing:
                raise DataError(f"No isolated-atom energy for elements {missing}")
            return np.array([self.e0[e] for e in elements], dtype=np.float64)
        if self.scheme.startswith("ssh"):
            return np.full(len(elements), self.shift, dtype=np.float64)
        return np.zeros(len(elements), dtype=np.float64)

    def transform(self, frame):
        energy = None
        if frame.energy is not None:
            energy = (frame.energy - self.site_shift(frame.elements).sum()) / self.alpha
        forces = None if frame.forces is None else frame.forces / self.alpha
        return replace(frame, energy=energy, forces=forces)

    def inverse_energy(self, energy_hat, elements):
        return self.site_shift(elements).sum() + self.alpha * energy_hat

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def apply_normalization(frames, scheme, table=None, r_cut=5.0):
    """
    Normalize energies and forces of ``frames``.

    Returns (transformed frames, NormalizationState). The E0 scheme takes the
    isolated-atom energies from ``table`` or estimates them by least squares.
    """
    frames = list(frames)
    if scheme not in NORMALIZATIONS:
        raise ConfigurationError(f"Unknown normalization {scheme!r}; choose one of {NORMALIZATIONS}")
    stats = dataset_statistics(frames, r_cut)
    force_rms = stats["force_rms"]

    if scheme == "none":
        state = NormalizationState()
    elif scheme.startswith("ssh"):
        labeled = [f for f in frames if f.energy is not None]
        if not labeled:
            raise DataNormalizationError("SSH normalization needs frames with energies")
        shift = sum(f.energy for f in labeled) / sum(f.n_atoms for f in labeled)
        alpha = force_rms if scheme == "ssh-forces-rms" else stats["energy_std"]
        if not alpha:
            raise DataNormalizationError(f"Scale for {scheme} is zero or unavailable")
        state = NormalizationState(scheme=scheme, alpha=float(alpha), shift=float(shift))
    else:
        table = table or ElementTable.from_frames(frames)
        if table.e0 is None:
            table = estimate_e0(frames, table)
        alpha = force_rms if force_rms else 1.0
        state = NormalizationState(scheme="e0", alpha=float(alpha), e0=dict(table.e0))
    logger.info("Normalization %s: alpha=%.6g shift=%.6g", state.scheme, state.alpha, state.shift)
    return [state.transform(f) for f in frames], state


@dataclass
class EnergyDecomposition:
    e0: torch.Tensor
    terms: list
    residual: torch.Tensor

    @property
    def total(self):
        value = self.e0 + self.residual
        for term in self.terms:
            value = value + term
        return value

    def as_dict(self):
        row = {"e0": float(self.e0)}
        for t, term in enumerate(self.terms, start=1):
            row[f"term_{t}"] = float(term)
        row["residual"] = float(self.residual)
        row["total"] = float(self.total)
        return row


@dataclass
class ForwardResult:
    energy: torch.Tensor
    site_energies: torch.Tensor
    decomposition: EnergyDecomposition
    features: list = field(default_factory=list)
    site_terms: list = field(default_factory=list)
    positions: torch.Tensor = None
    graph: object = None


class MultiAcePotential(torch.nn.Module):
    def __init__(self, spec, table, normalization=None, avg_neighbors=1.0):
        super().__init__()
        self.spec = spec
        self.table = table
        self.normalization = normalization or NormalizationState()
        n_elements = len(table)
        self.feature_mode = spec.layers[0].coupling == "feature"
        self.radial_embedding = RadialEmbedding(spec.radial)
        self.l_max_sh = max(layer.l_max for layer in spec.layers)

        if self.feature_mode:
            # one-hot input: unit second moment of the embedding at initialization
            self.embedding = torch.nn.Parameter(torch.randn(n_elements, spec.n_channels))
        self.layers = torch.nn.ModuleList(
            ACELayer(layer, spec.radial, n_elements, avg_neighbors) for layer in spec.layers
        )

        self.readouts = torch.nn.ModuleList()
        if spec.readout == "element-linear":
            n_eta = self.layers[0].eta_counts[0]
            self.element_weights = torch.nn.Parameter(torch.randn(n_elements, n_eta) / math.sqrt(max(n_eta, 1)))
        elif spec.readout in ("per-layer-linear+final-mlp", "per-layer-linear"):
            for layer in self.layers:
                self.readouts.append(torch.nn.Linear(layer.n_channels, 1, bias=False))
        if spec.readout in ("per-layer-linear+final-mlp", "final-only"):
            width = self.layers[-1].n_channels
            self.mlp = torch.nn.Sequential(
                torch.nn.Linear(width, spec.mlp_width, bias=False),
                Activation(spec.mlp_activation),
                torch.nn.Linear(spec.mlp_width, 1, bias=False),
            )
        self.set_avg_neighbors(avg_neighbors)
        self.to(spec.dtype)

    @property
    def dtype(self):
        return self.spec.dtype

    def set_avg_neighbors(self, value):
        for layer in self.layers:
            layer.avg_neighbors.fill_(float(value))

    @property
    def avg_neighbors(self):
        return float(self.layers[0].avg_neighbors)

    def node_attributes(self, elements):
        return torch.as_tensor(one_hot_matrix(elements, self.table), dtype=self.dtype)

    def embed(self, node_attrs):
        return IrrepArray(((self.spec.n_channels, 0),), node_attrs @ self.embedding)

    def layer_features(self, cfg, positions=None):
        """Node attributes, neighbor graph and the feature IrrepArray of every layer."""
        self._check_configuration(cfg)
        if positions is None:
            positions = torch.as_tensor(cfg.positions, dtype=self.dtype)
        graph = build_neighbor_graph(cfg, self.spec.radial.r_cut, self.spec.radial.r_min)
        attrs = self.node_attributes(cfg.elements)
        edges = EdgeFeatures.build(graph, positions, attrs, self.radial_embedding, self.l_max_sh)

        h = self.embed(attrs) if self.feature_mode else None
        features = []
        for layer in self.layers:
            h = layer(h, attrs, edges).features
            features.append(h)
        return attrs, graph, features

    def _check_configuration(self, cfg):
        if cfg.n_atoms == 0:
            raise DataError("Cannot evaluate an empty configuration")
        for symbol in cfg.elements:
            self.table.index(symbol)

    def _canonical(self, cfg, positions):
        """The configuration and positions in canonical atom order, plus that order."""
        self._check_configuration(cfg)
        if positions is None:
            positions = torch.as_tensor(cfg.positions, dtype=self.dtype)
        order = canonical_order(cfg)
        return cfg.permuted(order), positions[torch.as_tensor(order)], order

    def element_basis(self, cfg, positions=None):
        """
        Invariant B-basis summed per central element, flattened to
        (n_elements * n_eta,). The element-linear energy is linear in it.
        """
        if self.spec.readout != "element-linear":
            raise ConfigurationError("element_basis is only defined for the element-linear readout")
        cfg, positions, _ = self._canonical(cfg, positions)
        attrs, _, features = self.layer_features(cfg, positions)
        invariants = features[0].blocks()[0][..., 0]
        return (attrs.unsqueeze(-1) * invariants.unsqueeze(1)).sum(dim=0).reshape(-1)

    def forward_energy(self, cfg, positions=None):
        """
        Energy, site energies and decomposition of one configuration (eV).

        Atoms are evaluated in canonical order and per-atom outputs mapped
        back to the input labels, so relabeling reproduces every sum bitwise.
        """
        if positions is None:
            positions = torch.as_tensor(cfg.positions, dtype=self.dtype)
        canonical, canonical_positions, order = self._canonical(cfg, positions)
        inverse = torch.as_tensor(np.argsort(order))
        attrs, graph, features = self.layer_features(canonical, canonical_positions)

        terms = []
        residual = positions.new_zeros(cfg.n_atoms)
        if self.spec.readout == "element-linear":
            invariants = features[0].blocks()[0][..., 0]
            terms.append((attrs @ self.element_weights * invariants).sum(dim=-1))
        else:
            for readout, h_t in zip(self.readouts, features):
                terms.append(readout(h_t.blocks()[0][..., 0]).squeeze(-1))
            if hasattr(self, "mlp"):
                residual = self.mlp(features[-1].blocks()[0][..., 0]).squeeze(-1)

        internal = residual
        for term in terms:
            internal = internal + term
        alpha = self.normalization.alpha
        shift = torch.as_tensor(self.normalization.site_shift(canonical.elements), dtype=self.dtype)
        site_energies = shift + alpha * internal
        energy = torch.sort(site_energies).values.sum()
        site_terms = [alpha * term for term in terms]
        decomposition = EnergyDecomposition(
            e0=shift.sum(),
            terms=[term.sum() for term in site_terms],
            residual=alpha * residual.sum(),
        )
        return ForwardResult(
            energy=energy,
            site_energies=site_energies[inverse],
            decomposition=decomposition,
            features=[h.take(inverse) for h in features],
            site_terms=[term[inverse] for term in site_terms],
            positions=positions,
            graph=graph.relabeled(order),
        )

    def energy(self, cfg):
        with torch.no_grad():
            return float(self.forward_energy(cfg).energy)

    def body_order_claims(self):
        """
        Correlation order of every decomposition term, None where a
        nonlinearity makes it unbounded. The last entry is the residual.
        """
        claims = []
        total = 0
        bounded = True
        for layer in self.spec.layers:
            total += layer.nu
            bounded = bounded and layer.nonlinearity == "none"
            claims.append(total if bounded else None)
        if self.spec.readout == "final-only":
            claims = []
        residual = None if hasattr(self, "mlp") else 0
        return {"terms": claims, "residual": residual}

    def with_precision(self, precision):
        clone = copy.deepcopy(self)
        clone.spec = replace(self.spec, precision={"f32": "float32", "f64": "float64"}.get(precision, precision))
        return clone.to(clone.spec.dtype)

    def to_archive(self):
        return {
            "header": {"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION},
            "spec": self.spec.to_dict(),
            "elements": self.table.to_dict(),
            "normalization": self.normalization.to_dict(),
            "avg_neighbors": self.avg_neighbors,
            "state_dict": self.state_dict(),
        }

    @classmethod
    def from_archive(cls, payload):
        header = payload.get("header", {})
        if header.get("format") != ARCHIVE_FORMAT or header.get("version") != ARCHIVE_VERSION:
            raise DataError(f"Unsupported model archive header {header}")
        model = cls(
            ModelSpec.from_dict(payload["spec"]),
            ElementTable.from_dict(payload["elements"]),
            NormalizationState.from_dict(payload["normalization"]),
            payload["avg_neighbors"],
        )
        model.load_state_dict(payload["state_dict"])
        return model


class Activation(torch.nn.Module):
    def __init__(self, name):
        super().__init__()
        self.name = name
        self.fn = get_activation(name)

    def forward(self, x):
        return self.fn(x)


def build_model(spec, frames=None, table=None, normalization=None, seed=None):
    """
    Fresh model for ``spec``. With training frames, the element table,
    average neighbor count and normalization are taken from them.
    """
    if seed is not None:
        torch.manual_seed(seed)
    frames = list(frames or [])
    avg_neighbors = 1.0
    if frames:
        table = table or ElementTable.from_frames(frames)
        avg_neighbors = dataset_statistics(frames, spec.radial.r_cut)["avg_neighbors"]
        if normalization is None and any(f.energy is not None for f in frames):
            _, normalization = apply_normalization(frames, spec.normalization, table, spec.radial.r_cut)
    if table is None:
        raise DataError("An element table or training frames are required to build a model")
    return MultiAcePotential(spec, table, normalization, avg_neighbors)


def is_body_ordered(model):
    return model.spec.preset in ("botnet", "botnet-linear")


def decomposition_row(model, result):
    """One decomposition record; the total is the (sorted) model energy."""
    row = result.decomposition.as_dict()
    row["total"] = float(result.energy)
    if not is_body_ordered(model):
        row = {"e0": row["e0"], "residual": row["total"] - row["e0"], "total": row["total"]}
    return row


def decompose_scan(frames, model, shift_to_last=False):
    """
    Energy decomposition per configuration as a DataFrame.

    Columns e0, term_1..term_T, residual, total for the botnet presets; other
    presets only report e0, residual (everything above e0) and total.
    """
    if not is_body_ordered(model):
        logger.warning(
            "Preset %s has no body-ordered terms; decomposition limited to total and residual",
            model.spec.preset,
        )
    with torch.no_grad():
        rows = [decomposition_row(model, model.forward_energy(frame)) for frame in frames]
    table = pd.DataFrame(rows)
    if shift_to_last and len(table):
        table = table - table.iloc[-1]
    return table
