import pytest
import torch

from modules.ace_layer import (
    ACELayer,
    EdgeFeatures,
    LayerSpec,
    density_projection,
    product_basis,
    symmetric_coupling,
    symmetrize_and_message,
)
from modules.atomic_graph import Configuration, ElementTable, build_neighbor_graph, one_hot_matrix
from modules.errors import ConfigurationError, DomainError
from modules.radial_basis import RadialConfig, RadialEmbedding
from modules.so3_kernel import Irrep, IrrepArray
from utils.geometry import random_geometry, random_rotation

RADIAL = RadialConfig(r_cut=3.0, n_basis=4)
TABLE = ElementTable.from_symbols(("H", "O"))


def _first_layer(nu=2, self_connection="simplified", nonlinearity="none"):
    spec = LayerSpec(nu=nu, l_max=1, L_max=1, n_channels=3, first_layer=True,
                     self_connection=self_connection, nonlinearity=nonlinearity)
    return ACELayer(spec, RADIAL, len(TABLE), avg_neighbors=2.0).double()


def _inputs(cfg, l_max=1, r_cut=None):
    attrs = torch.as_tensor(one_hot_matrix(cfg.elements, TABLE))
    graph = build_neighbor_graph(cfg, r_cut or RADIAL.r_cut)
    edges = EdgeFeatures.build(graph, torch.as_tensor(cfg.positions), attrs, RadialEmbedding(RADIAL), l_max)
    generator = torch.Generator().manual_seed(7)
    per_element = torch.randn(len(TABLE), 3, generator=generator, dtype=torch.float64)
    return IrrepArray(((3, 0),), attrs @ per_element), attrs, edges


def test_layer_output_layout(water):
    layer = _first_layer()
    h, attrs, edges = _inputs(water)
    out = layer(h, attrs, edges)
    assert out.features.layout == ((3, Irrep(0)), (3, Irrep(1)))
    assert out.features.values.shape == (3, 12)
    assert out.A.shape == (3, 3, 4)
    assert layer.eta_counts == {0: 3, 1: 2}


def test_layer_is_equivariant(rng):
    layer = _first_layer()
    cfg = Configuration(positions=random_geometry(rng, 5, 1.4, 0.7), elements=("H", "O", "H", "O", "H"))
    h, attrs, edges = _inputs(cfg)
    with torch.no_grad():
        base = layer(h, attrs, edges).features
        for improper in (False, True):
            q = random_rotation(rng, improper=improper)
            _, _, rotated_edges = _inputs(cfg.rotated(q))
            rotated = layer(h, attrs, rotated_edges).features
            assert torch.allclose(rotated.values, base.transform(q).values, atol=1e-10)


def test_simplified_self_connection_zeroes_isolated_atom():
    layer = _first_layer()
    h, attrs, edges = _inputs(Configuration(positions=[[0.0, 0.0, 0.0]], elements=("O",)))
    out = layer(h, attrs, edges)
    assert torch.count_nonzero(out.features.values) == 0


def test_residual_self_connection_keeps_isolated_atom_state():
    layer = _first_layer(self_connection="residual")
    h, attrs, edges = _inputs(Configuration(positions=[[0.0, 0.0, 0.0]], elements=("O",)))
    out = layer(h, attrs, edges)
    assert torch.count_nonzero(out.features.blocks()[0]) > 0
    assert torch.count_nonzero(out.features.blocks()[1]) == 0


def test_edges_beyond_layer_cutoff_raise():
    layer = _first_layer()
    cfg = Configuration(positions=[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]], elements=("H", "O"))
    h, attrs, edges = _inputs(cfg, r_cut=10.0)
    with pytest.raises(DomainError):
        layer(h, attrs, edges)


def test_density_projection_sums_per_receiver():
    phi = torch.arange(6, dtype=torch.float64).reshape(3, 1, 2)
    A = density_projection(phi, torch.tensor([0, 0, 1]), n_atoms=3, lam=2.0)
    assert A[0, 0].tolist() == [1.0, 2.0]
    assert A[1, 0].tolist() == [2.0, 2.5]
    assert A[2, 0].tolist() == [0.0, 0.0]


def test_product_basis_enumerates_sorted_tuples():
    A = torch.tensor([[[2.0, 3.0, 5.0]]], dtype=torch.float64)
    products = product_basis(A, 2)
    assert products[1][0].shape == (1, 1, 3)
    values, index = products[2]
    assert values.shape == (1, 1, 6)
    position = index.tolist().index([0, 1])
    assert values[0, 0, position].item() == 6.0


def test_single_particle_message_is_the_density():
    coupling = symmetric_coupling((0, 1), 1, (0, 1))
    tables = {
        L: (torch.as_tensor(src), torch.as_tensor(dst), torch.as_tensor(coeff), n_eta)
        for L, (src, dst, coeff, n_eta) in coupling.tables.items()
    }
    A = torch.randn(4, 2, 4, dtype=torch.float64)
    products = product_basis(A, 1, coupling.tuples)
    weights = {L: torch.ones(2, 1, dtype=torch.float64) for L in (0, 1)}
    message, _ = symmetrize_and_message(products, tables, coupling.n_tuples, weights)
    assert torch.allclose(message.blocks()[0], A[..., 0:1])
    assert torch.allclose(message.blocks()[1], A[..., 1:4])


def test_message_lambda_modes():
    for mode, expected in (("none", 1.0), ("sqrt-avg-neighbors", 2.0), ("avg-neighbors", 4.0)):
        spec = LayerSpec(l_max=1, L_max=1, n_channels=2, first_layer=True, message_norm_lambda=mode)
        assert ACELayer(spec, RADIAL, 2, avg_neighbors=4.0).message_lambda() == expected


def test_corrupt_coupling_changes_coefficients():
    layer = _first_layer()
    before = {name: buffer.clone() for name, buffer in layer.named_buffers() if name.startswith("coupling_coeff_")}
    layer.corrupt_coupling(seed=3)
    after = dict(layer.named_buffers())
    assert any(not torch.equal(after[name], value) for name, value in before.items())


def test_degree_truncation_shrinks_element_basis():
    spec = LayerSpec(nu=2, l_max=1, L_max=0, coupling="element", radial_variant="fixed-orthogonal",
                     self_connection="none", message_norm_lambda="none", first_layer=True)
    radial = RadialConfig(r_cut=3.0, n_basis=2, variant="fixed-orthogonal")
    full = ACELayer(spec, radial, 1)
    truncated = ACELayer(LayerSpec(**{**spec.to_dict(), "max_degree": 1}), radial, 1)
    assert 0 < truncated.eta_counts[0] < full.eta_counts[0]


@pytest.mark.parametrize(
    "settings",
    [
        {"nu": 1, "l_max": 1, "L_max": 2},
        {"self_connection": "skip"},
        {"coupling": "element"},
        {"radial_variant": "fixed-orthogonal"},
        {"nonlinearity": "relu"},
    ],
)
def test_layer_spec_validation(settings):
    with pytest.raises(ConfigurationError):
        LayerSpec(**settings)

