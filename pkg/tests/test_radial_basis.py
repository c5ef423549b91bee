import numpy as np
import pytest
import torch

from modules.errors import ConfigurationError, DataError, DomainError
from modules.radial_basis import (
    RadialBlock,
    RadialConfig,
    RadialEmbedding,
    agnostic_radial,
    bessel_basis,
    bessel_embed,
    element_dependent_radial,
    linear_radial,
    polynomial_envelope,
    second_moment_constant,
)


def test_envelope_boundary_values():
    r = torch.tensor([0.0, 3.0, 3.5], dtype=torch.float64)
    values = polynomial_envelope(r, 3.0, p=6)
    assert values.tolist() == [1.0, 0.0, 0.0]


def test_envelope_is_twice_differentiable_at_cutoff():
    r = torch.tensor([3.0 - 1e-5], dtype=torch.float64, requires_grad=True)
    value = polynomial_envelope(r, 3.0)
    (first,) = torch.autograd.grad(value.sum(), r, create_graph=True)
    (second,) = torch.autograd.grad(first.sum(), r)
    assert abs(value.item()) < 1e-12
    assert abs(first.item()) < 1e-7
    assert abs(second.item()) < 1e-2


def test_bessel_basis_closed_form():
    cfg = RadialConfig(r_cut=4.0, n_basis=3, variant="fixed-orthogonal")
    r = torch.tensor([1.3], dtype=torch.float64)
    n = np.arange(1, 4)
    expected = np.sqrt(2.0 / 4.0) * np.sin(n * np.pi * 1.3 / 4.0) / 1.3
    assert np.allclose(bessel_basis(r, cfg).numpy()[0], expected, atol=1e-15)


def test_bessel_basis_rejects_contact_distances():
    cfg = RadialConfig(r_cut=4.0, n_basis=3)
    with pytest.raises(DomainError):
        bessel_basis(torch.tensor([0.0], dtype=torch.float64), cfg)
    with pytest.raises(DomainError):
        bessel_basis(torch.tensor([1e-5], dtype=torch.float64), cfg)


def test_embedding_vanishes_beyond_cutoff():
    cfg = RadialConfig(r_cut=3.0, n_basis=5)
    values = bessel_embed(torch.tensor([3.0, 4.2], dtype=torch.float64), cfg)
    assert torch.count_nonzero(values) == 0


def test_embedding_has_unit_second_moment_in_cutoff_sphere(rng):
    cfg = RadialConfig(r_cut=5.0, n_basis=8)
    r = cfg.r_cut * rng.uniform(size=200000) ** (1.0 / 3.0)
    r = np.clip(r, 1e-2, None)
    values = RadialEmbedding(cfg)(torch.as_tensor(r))
    assert abs(values.pow(2).mean().item() - 1.0) < 0.05


def test_agnostic_radial_has_no_bias():
    weights = [torch.randn(4, 8, dtype=torch.float64), torch.randn(8, 6, dtype=torch.float64)]
    out = agnostic_radial(torch.zeros(3, 4, dtype=torch.float64), weights, n_outputs=6)
    assert out.shape == (3, 6)
    assert torch.count_nonzero(out) == 0


def test_agnostic_radial_width_mismatch():
    weights = [torch.randn(4, 8, dtype=torch.float64), torch.randn(7, 6, dtype=torch.float64)]
    with pytest.raises(ConfigurationError):
        agnostic_radial(torch.ones(3, 4, dtype=torch.float64), weights)


def test_element_dependent_radial_with_shared_slices_is_linear_radial():
    bessel = torch.randn(5, 4, dtype=torch.float64)
    weight = torch.randn(3, 4, 2, dtype=torch.float64)
    shared = weight.expand(2, *weight.shape).clone()
    one_hot = torch.tensor([[1, 0], [0, 1], [1, 0], [0, 1], [0, 1]], dtype=torch.float64)
    assert torch.allclose(element_dependent_radial(bessel, one_hot, shared), linear_radial(bessel, weight))


def test_element_dependent_radial_selects_neighbor_slice():
    bessel = torch.randn(2, 4, dtype=torch.float64)
    weights = torch.randn(2, 3, 4, 1, dtype=torch.float64)
    one_hot = torch.tensor([[0, 1], [1, 0]], dtype=torch.float64)
    out = element_dependent_radial(bessel, one_hot, weights)
    assert torch.allclose(out[0, :, 0], weights[1, :, :, 0] @ bessel[0])
    assert torch.allclose(out[1, :, 0], weights[0, :, :, 0] @ bessel[1])


def test_element_dependent_radial_rejects_bad_encoding():
    with pytest.raises(DataError):
        element_dependent_radial(
            torch.randn(1, 4, dtype=torch.float64),
            torch.tensor([[0.5, 0.5]], dtype=torch.float64),
            torch.randn(2, 3, 4, 1, dtype=torch.float64),
        )


def test_second_moment_constant_of_identity_is_one():
    assert second_moment_constant("identity") == pytest.approx(1.0, abs=1e-12)


def test_radial_config_validation():
    with pytest.raises(ConfigurationError):
        RadialConfig(variant="gaussian")
    with pytest.raises(ConfigurationError):
        RadialConfig(r_cut=1.0, r_min=2.0)
    with pytest.raises(ConfigurationError):
        RadialConfig(n_basis=0)


def test_fixed_radial_has_no_learnable_block():
    with pytest.raises(ConfigurationError):
        RadialBlock(RadialConfig(variant="fixed-orthogonal"), n_channels=2, n_paths=1, n_elements=1)
