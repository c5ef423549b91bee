"""
Radial embeddings: Bessel basis with a polynomial cutoff envelope and the two
learnable radial maps built on top of it.
"""
import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from modules.errors import ConfigurationError, DataError, DomainError
from modules.so3_kernel import get_activation

logger = logging.getLogger(__name__)

R_MIN = 1e-3
RADIAL_VARIANTS = ("fixed-orthogonal", "agnostic-mlp", "element-dependent")

# (E, K, P) tensor: edge, uncoupled channel, coupling path
RadialOutput = torch.Tensor


@dataclass(frozen=True)
class RadialConfig:
    r_cut: float = 5.0
    n_basis: int = 8
    variant: str = "element-dependent"
    mlp_widths: tuple = (64, 64, 64)
    envelope_degree: int = 6
    r_min: float = R_MIN

    def __post_init__(self):
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if not self.r_cut > 0:
            raise ConfigurationError(f"r_cut must be positive, got {self.r_cut}")
        if int(self.n_basis) < 1:
            raise ConfigurationError(f"n_basis must be >= 1, got {self.n_basis}")
        if int(self.envelope_degree) < 2:
            raise ConfigurationError(f"envelope_degree must be >= 2, got {self.envelope_degree}")
        if self.variant not in RADIAL_VARIANTS:
            raise ConfigurationError(f"Unknown radial variant {self.variant!r}; choose one of {RADIAL_VARIANTS}")
        if any(w < 1 for w in self.mlp_widths):
            raise ConfigurationError(f"mlp_widths must be positive, got {self.mlp_widths}")
        if not 0 < self.r_min < self.r_cut:
            raise ConfigurationError(f"r_min must lie in (0, r_cut), got {self.r_min}")

    def to_dict(self):
        return {
            "r_cut": self.r_cut,
            "n_basis": self.n_basis,
            "variant": self.variant,
            "mlp_widths": list(self.mlp_widths),
            "envelope_degree": self.envelope_degree,
            "r_min": self.r_min,
        }


def _as_distances(r):
    if not isinstance(r, torch.Tensor):
        r = torch.as_tensor(np.asarray(r, dtype=np.float64))
    return r


def _check_domain(r, r_min):
    if r.numel() == 0:
        return
    smallest = r.detach().min().item()
    if not smallest > 0:
        raise DomainError(f"Radial basis needs positive distances, got {smallest}")
    # compare in the dtype of r: rounding keeps r >= r_min for admissible distances
    if smallest < torch.tensor(r_min, dtype=r.dtype).item():
        raise DomainError(f"Distance {smallest:.3e} A is below the minimum-distance guard {r_min} A")


def polynomial_envelope(r, r_cut, p=6):
    """
    1 at r = 0; value, first and second derivative vanish at r_cut.
    Identically zero for r >= r_cut.
    """
    r = _as_distances(r)
    d = r / r_cut
    envelope = (
        1.0
        - (p + 1.0) * (p + 2.0) / 2.0 * d.pow(p)
        + p * (p + 2.0) * d.pow(p + 1)
        - p * (p + 1.0) / 2.0 * d.pow(p + 2)
    )
    return torch.where(d < 1.0, envelope, torch.zeros_like(envelope))


def bessel_basis(r, cfg):
    """sqrt(2/r_cut) sin(n pi r / r_cut) / r for n = 1..n_basis, shape (..., n_basis)."""
    r = _as_distances(r)
    _check_domain(r, cfg.r_min)
    n = torch.arange(1, cfg.n_basis + 1, dtype=r.dtype, device=r.device)
    r = r.unsqueeze(-1)
    return math.sqrt(2.0 / cfg.r_cut) * torch.sin(n * math.pi * r / cfg.r_cut) / r


def bessel_embed(r, cfg):
    """Bessel basis times the polynomial envelope."""
    r = _as_distances(r)
    return bessel_basis(r, cfg) * polynomial_envelope(r, cfg.r_cut, cfg.envelope_degree).unsqueeze(-1)


@functools.lru_cache(maxsize=None)
def second_moment_constant(activation):
    """1 / sqrt(E[f(z)^2]) for z ~ N(0, 1), by Gauss-Hermite quadrature."""
    nodes, weights = hermegauss(96)
    values = get_activation(activation)(torch.as_tensor(nodes)).numpy()
    moment = float(np.sum(weights * values**2) / math.sqrt(2.0 * math.pi))
    return 1.0 / math.sqrt(moment)


def agnostic_radial(bessel, weights, n_outputs=None, activation="silu"):
    """
    Element agnostic radial MLP without biases.

    ``weights`` is the list of layer matrices [(n_basis, w1), (w1, w2), ...,
    (w_last, n_outputs)]; hidden layers use the second-moment normalized
    activation. No additive constants anywhere, so zero input gives zero
    output.
    """
    weights = list(weights)
    if not weights:
        raise ConfigurationError("Radial MLP needs at least one weight matrix")
    width = bessel.shape[-1]
    for index, weight in enumerate(weights):
        if weight.dim() != 2 or weight.shape[0] != width:
            raise ConfigurationError(
                f"Radial MLP layer {index} expects input width {width}, weight has shape {tuple(weight.shape)}"
            )
        width = weight.shape[1]
    if n_outputs is not None and width != n_outputs:
        raise ConfigurationError(f"Radial MLP produces {width} outputs, {n_outputs} paths requested")

    f = get_activation(activation)
    scale = second_moment_constant(activation)
    hidden = bessel
    for weight in weights[:-1]:
        hidden = scale * f(hidden @ weight)
    return hidden @ weights[-1]


def _contract(bessel, per_edge_weights):
    # per_edge_weights: (E, K, n_basis, P)
    return (bessel[:, None, :, None] * per_edge_weights).sum(dim=2)


def linear_radial(bessel, weight):
    """Element agnostic linear radial: sum_n W[k, n, p] R_n(r)."""
    return _contract(bessel, weight.expand(bessel.shape[0], *weight.shape))


def _check_one_hot(one_hot, n_elements):
    if one_hot.dim() != 2 or one_hot.shape[1] != n_elements:
        raise DataError(
            f"Neighbor attributes have shape {tuple(one_hot.shape)}, expected (E, {n_elements})"
        )
    if one_hot.numel() == 0:
        return
    is_binary = ((one_hot == 0) | (one_hot == 1)).all()
    if not is_binary or not (one_hot.sum(dim=1) == 1).all():
        raise DataError("Neighbor element encoding is not a valid one-hot over the element table")


def element_dependent_radial(bessel, neighbor_one_hot, weights):
    """
    Bilinear radial with a weight slice per neighbor element.

    ``weights`` has shape (n_elements, K, n_basis, P); the slice is selected by
    the neighbor's one-hot row.
    """
    _check_one_hot(neighbor_one_hot, weights.shape[0])
    if weights.shape[2] != bessel.shape[-1]:
        raise ConfigurationError(
            f"Radial weights expect {weights.shape[2]} basis functions, got {bessel.shape[-1]}"
        )
    index = neighbor_one_hot.argmax(dim=1)
    return _contract(bessel, weights[index])


@functools.lru_cache(maxsize=None)
def embedding_scale(r_cut, n_basis, envelope_degree):
    """
    1 / sqrt of the mean second moment of the enveloped Bessel functions for
    points uniform in the cutoff sphere:

        E[f_n^2] = 6 / r_cut^3 * int_0^1 sin^2(n pi d) u(d)^2 dd
    """
    nodes, weights = leggauss(256)
    d = 0.5 * (nodes + 1.0)
    envelope = polynomial_envelope(torch.as_tensor(d), 1.0, envelope_degree).numpy()
    n = np.arange(1, n_basis + 1)[:, None]
    integrals = np.sum(0.5 * weights * np.sin(n * math.pi * d) ** 2 * envelope**2, axis=1)
    moments = 6.0 * integrals / r_cut**3
    return 1.0 / math.sqrt(float(np.mean(moments)))


class RadialEmbedding(torch.nn.Module):
    """Enveloped Bessel embedding scaled to unit second moment inside the cutoff sphere."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.scale = embedding_scale(float(cfg.r_cut), int(cfg.n_basis), int(cfg.envelope_degree))

    def forward(self, r):
        return self.scale * bessel_embed(r, self.cfg)


class RadialBlock(torch.nn.Module):
    """Learnable radial R_{k,p}(r) of one layer for the feature-coupled presets."""

    def __init__(self, cfg, n_channels, n_paths, n_elements, activation="silu"):
        super().__init__()
        self.variant = cfg.variant
        self.n_channels = n_channels
        self.n_paths = n_paths
        self.activation = activation
        if cfg.variant == "agnostic-mlp":
            widths = (cfg.n_basis, *cfg.mlp_widths, n_channels * n_paths)
            self.mlp = torch.nn.ParameterList(
                torch.nn.Parameter(torch.randn(w_in, w_out) / math.sqrt(w_in))
                for w_in, w_out in zip(widths[:-1], widths[1:])
            )
        elif cfg.variant == "element-dependent":
            self.weight = torch.nn.Parameter(
                torch.randn(n_elements, n_channels, cfg.n_basis, n_paths) / math.sqrt(cfg.n_basis)
            )
        else:
            raise ConfigurationError(
                f"Radial variant {cfg.variant!r} has no learnable form; it is only valid with element coupling"
            )

    def forward(self, embedding, neighbor_one_hot):
        if self.variant == "agnostic-mlp":
            values = agnostic_radial(
                embedding, list(self.mlp), self.n_channels * self.n_paths, self.activation
            )
            return values.reshape(-1, self.n_channels, self.n_paths)
        return element_dependent_radial(embedding, neighbor_one_hot, self.weight)
