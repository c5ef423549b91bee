import numpy as np
import pytest
import torch

from data.elements import get_isolated_atom_energies
from modules.atomic_graph import Configuration, ElementTable
from modules.model import NormalizationState, build_model_spec
from modules.property_harness import fresh_model

E0 = {symbol: get_isolated_atom_energies()[symbol] for symbol in ("H", "C", "O")}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def water():
    return Configuration(
        positions=[[0.0, 0.0, 0.0], [0.9572, 0.0, 0.0], [-0.2400, 0.9266, 0.0]],
        elements=("O", "H", "H"),
    )


@pytest.fixture
def methanol_like():
    return Configuration(
        positions=[
            [0.0, 0.0, 0.0],
            [1.43, 0.0, 0.0],
            [1.80, 0.92, 0.0],
            [-0.36, -1.03, 0.05],
        ],
        elements=("C", "O", "H", "H"),
    )


@pytest.fixture
def table():
    return ElementTable.from_symbols(("H", "C", "O"), e0=dict(E0), e0_source="config")


@pytest.fixture
def botnet_spec():
    return build_model_spec(
        {"preset": "botnet-linear", "n_channels": 4, "l_max": 1, "L_max": 1},
        {"r_cut": 3.0, "n_basis": 4},
    )


@pytest.fixture
def botnet_mlp_spec():
    return build_model_spec(
        {"preset": "botnet", "num_layers": 2, "n_channels": 4, "l_max": 1, "L_max": 1, "mlp_width": 8},
        {"r_cut": 3.0, "n_basis": 4},
    )


@pytest.fixture
def nequip_spec():
    return build_model_spec(
        {"preset": "nequip", "num_layers": 2, "n_channels": 4, "l_max": 1, "L_max": 1},
        {"r_cut": 3.0, "n_basis": 4, "mlp_widths": [8]},
    )


@pytest.fixture
def linear_spec():
    return build_model_spec(
        {"preset": "linear-ace", "correlation_order": 2, "l_max": 1, "max_degree": 3},
        {"r_cut": 3.0, "n_basis": 3},
    )


@pytest.fixture
def botnet_model(botnet_spec):
    return fresh_model(botnet_spec, seed=0)


@pytest.fixture
def e0_state():
    return NormalizationState(scheme="e0", alpha=1.0, e0=dict(E0))
