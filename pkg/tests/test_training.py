import json

import numpy as np
import pytest
import torch

from modules.atomic_graph import Configuration, ElementTable
from modules.diffengine import Prediction, forces
from modules.errors import ConfigurationError, DataError, DivergenceError, SolverError
from modules.model import build_model, build_model_spec
from modules.property_harness import fresh_model
from modules.training import (
    LossSpec,
    OptimizerConfig,
    ablate,
    evaluate_frames,
    fit_linear_ace,
    loss,
    optimizer_config_from_dict,
    train,
)
from utils.geometry import random_geometry


@pytest.fixture
def pair_spec():
    return build_model_spec(
        {"preset": "linear-ace", "correlation_order": 1, "l_max": 0},
        {"r_cut": 3.0, "n_basis": 3},
    )


def _generated_frames(target, rng, n_frames, n_atoms=4):
    frames = []
    for _ in range(n_frames):
        cfg = Configuration(
            positions=random_geometry(rng, n_atoms, 1.4, 0.8),
            elements=tuple(str(e) for e in rng.choice(target.table.symbols, size=n_atoms)),
        )
        frames.append(Configuration(positions=cfg.positions, elements=cfg.elements,
                                    energy=target.energy(cfg), forces=forces(cfg, target)))
    return frames


def test_loss_spec_validation():
    with pytest.raises(ConfigurationError):
        LossSpec(energy_weight=0.0, force_weight=0.0)
    with pytest.raises(ConfigurationError):
        LossSpec(reduction="median")


def test_loss_value():
    frame = Configuration(positions=[[0, 0, 0], [1, 0, 0]], elements=("H", "H"), energy=1.0, forces=np.zeros((2, 3)))
    prediction = Prediction(energy=torch.tensor(3.0, dtype=torch.float64),
                            forces=torch.full((2, 3), 0.5, dtype=torch.float64))
    spec = LossSpec(energy_weight=1.0, force_weight=10.0)
    assert loss([frame], [prediction], spec).item() == pytest.approx(1.0 + 10.0 * 0.25)
    assert loss([frame], [prediction], spec, scale=2.0).item() == pytest.approx(0.25 + 10.0 * 0.0625)
    summed = LossSpec(energy_weight=1.0, force_weight=1.0, reduction="sum", per_atom_energy=False)
    assert loss([frame], [prediction], summed).item() == pytest.approx(4.0 + 6 * 0.25)


def test_loss_needs_labels():
    frame = Configuration(positions=[[0, 0, 0]], elements=("H",))
    prediction = Prediction(energy=torch.tensor(0.0, dtype=torch.float64), forces=torch.zeros(1, 3))
    with pytest.raises(DataError):
        loss([frame], [prediction], LossSpec())


def test_linear_ace_recovers_generating_model(pair_spec, rng):
    target = fresh_model(pair_spec, seed=11)
    frames = _generated_frames(target, rng, 12)
    model, info = fit_linear_ace(frames, fresh_model(pair_spec, seed=12), LossSpec(), ridge=0.0)
    assert info["rank"] == info["n_observed"]
    assert info["residual_rms"] < 1e-9
    for frame in frames:
        assert model.energy(frame) == pytest.approx(frame.energy, abs=1e-8)
    observed = model.element_weights != 0
    assert torch.allclose(model.element_weights[observed], target.element_weights[observed], rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("nu", [1, 2, 3])
def test_linear_ace_recovery_up_to_three_body_products(nu, rng):
    spec = build_model_spec(
        {"preset": "linear-ace", "correlation_order": nu, "l_max": 1, "max_degree": 4},
        {"r_cut": 3.0, "n_basis": 2},
    )
    target = fresh_model(spec, elements=("H",), seed=40 + nu)
    frames = _generated_frames(target, rng, 30)
    model, info = fit_linear_ace(frames, fresh_model(spec, elements=("H",), seed=50), LossSpec(), ridge=1e-12)
    _, summary = evaluate_frames(frames, model)
    assert info["n_observed"] > 0
    assert summary["energy_rmse"] < 1e-8
    assert summary["force_rmse"] < 1e-7


def test_ridge_is_invariant_to_duplicated_data(pair_spec, rng):
    target = fresh_model(pair_spec, seed=3)
    frames = _generated_frames(target, rng, 5)
    once, _ = fit_linear_ace(frames, fresh_model(pair_spec), ridge=1e-3)
    twice, _ = fit_linear_ace(frames + frames, fresh_model(pair_spec), ridge=1e-3)
    assert torch.allclose(once.element_weights, twice.element_weights, atol=1e-10)


def test_rank_deficient_fit_without_ridge(pair_spec):
    frame = Configuration(positions=[[0, 0, 0], [1.1, 0, 0]], elements=("H", "H"), energy=-27.0,
                          forces=np.zeros((2, 3)))
    with pytest.raises(SolverError):
        fit_linear_ace([frame], fresh_model(pair_spec), ridge=0.0)


def test_unobserved_basis_functions_stay_zero(pair_spec):
    frames = [
        Configuration(positions=[[0, 0, 0], [r, 0, 0]], elements=("H", "H"), energy=0.1 * r, forces=np.zeros((2, 3)))
        for r in (0.9, 1.2, 1.7, 2.3)
    ]
    model, _ = fit_linear_ace(frames, fresh_model(pair_spec), ridge=1e-8)
    oxygen = model.table.index("O")
    assert torch.count_nonzero(model.element_weights[oxygen]) == 0


def test_fit_linear_ace_needs_element_readout(botnet_model, water):
    with pytest.raises(ConfigurationError):
        fit_linear_ace([water], botnet_model)


def test_training_reduces_loss(botnet_spec, rng, tmp_path):
    target = fresh_model(botnet_spec, seed=21)
    frames = _generated_frames(target, rng, 3)
    student = fresh_model(botnet_spec, seed=22)
    config = OptimizerConfig(lr=1e-2, epochs=25, seed=0)
    model, log = train(frames, student, LossSpec(), config, log_path=tmp_path / "log.jsonl")
    assert list(log.columns) == ["epoch", "loss", "energy_rmse", "force_rmse", "lr", "wall_time", "rss_mb"]
    assert log["loss"].iloc[-1] < log["loss"].iloc[0]
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 25
    assert json.loads(lines[-1])["epoch"] == 24


def test_training_with_batches_and_ema(botnet_spec, rng):
    target = fresh_model(botnet_spec, seed=1)
    frames = _generated_frames(target, rng, 4)
    config = OptimizerConfig(lr=5e-3, epochs=2, batch_size=2, ema_decay=0.9)
    _, log = train(frames, fresh_model(botnet_spec, seed=2), LossSpec(), config)
    assert len(log) == 2
    assert np.isfinite(log["loss"]).all()


def test_zero_learning_rate_keeps_parameters(botnet_spec, rng):
    target = fresh_model(botnet_spec, seed=5)
    frames = _generated_frames(target, rng, 3)
    model = fresh_model(botnet_spec, seed=6)
    before = {name: value.clone() for name, value in model.state_dict().items()}
    train(frames, model, LossSpec(), OptimizerConfig(lr=0.0, epochs=3))
    for name, value in model.state_dict().items():
        assert torch.equal(value, before[name]), name


def test_training_is_deterministic_under_seed(botnet_spec, rng):
    target = fresh_model(botnet_spec, seed=7)
    frames = _generated_frames(target, rng, 4)
    config = OptimizerConfig(lr=5e-3, epochs=4, batch_size=2, seed=3)
    logs = []
    for _ in range(2):
        model, log = train(frames, fresh_model(botnet_spec, seed=8), LossSpec(), config)
        logs.append(log[["epoch", "loss", "energy_rmse", "force_rmse", "lr"]])
    assert logs[0].equals(logs[1])


def test_divergence_is_reported(botnet_spec, rng):
    target = fresh_model(botnet_spec, seed=1)
    frames = _generated_frames(target, rng, 2)
    with pytest.raises(DivergenceError):
        train(frames, fresh_model(botnet_spec, seed=2), LossSpec(), OptimizerConfig(lr=1e100, epochs=5))


def test_evaluate_frames_of_generating_model(botnet_spec, rng):
    target = fresh_model(botnet_spec, seed=8)
    frames = _generated_frames(target, rng, 3)
    table, summary = evaluate_frames(frames, target)
    assert len(table) == 3
    assert summary["n_frames"] == 3
    assert summary["energy_rmse"] < 1e-12
    assert summary["force_rmse"] < 1e-12


def test_ablation_of_correlation_order(rng):
    spec = build_model_spec(
        {"preset": "linear-ace", "correlation_order": 2, "l_max": 1, "max_degree": 4},
        {"r_cut": 3.0, "n_basis": 2},
    )
    target = fresh_model(spec, elements=("H",), seed=60)
    frames = _generated_frames(target, rng, 30)
    base = {"model": {"l_max": 1, "max_degree": 4, "normalization": "none"}, "radial": {"r_cut": 3.0, "n_basis": 2}}
    table = ablate("correlation_order", frames[:26], frames[26:], base=base, ridge=1e-12)
    assert list(table["variant"]) == ["1", "2", "3"]
    assert (table["status"] == "ok").all()
    assert table["n_parameters"].is_monotonic_increasing
    assert table["test_force_rmse"].notna().all()
    by_variant = table.set_index("variant")
    for variant in ("2", "3"):
        assert by_variant.loc[variant, "train_energy_rmse"] < 1e-7
        assert by_variant.loc[variant, "train_force_rmse"] < 1e-6
    assert by_variant.loc["1", "train_force_rmse"] > 100 * by_variant.loc["2", "train_force_rmse"]


def test_ablation_keeps_failed_variants(rng, table):
    frames = [
        Configuration(positions=random_geometry(rng, 3, 1.4, 0.8), elements=("O", "H", "H"),
                      energy=0.0, forces=np.zeros((3, 3)))
        for _ in range(3)
    ]
    base = {
        "model": {"num_layers": 1, "n_channels": 4, "l_max": 1, "L_max": 1},
        "radial": {"r_cut": 3.0, "n_basis": 4, "mlp_widths": [8]},
    }
    result = ablate("normalization", frames, base=base, config=OptimizerConfig(lr=1e-3, epochs=1), table=table)
    status = dict(zip(result["variant"], result["status"]))
    assert status["e0"] == "ok"
    assert status["none"] == "ok"
    assert status["ssh-forces-rms"].startswith("error:")
    assert status["ssh-energy-std"].startswith("error:")
    assert result.loc[result["status"] != "ok", "n_parameters"].isna().all()
    assert result["wall_time"].notna().all()
    assert result["test_energy_rmse"].isna().all()


def test_unknown_ablation_study(water):
    with pytest.raises(ConfigurationError):
        ablate("dropout", [water])


def test_optimizer_config_from_dict_ignores_solver_settings():
    config = optimizer_config_from_dict({"lr": 1e-3, "epochs": 5, "ridge": 1e-8}, seed=4)
    assert config == OptimizerConfig(lr=1e-3, epochs=5, seed=4)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(ema_decay=1.5)


@pytest.mark.slow
def test_botnet_fits_generating_model(botnet_spec):
    rng = np.random.default_rng(0)
    target = fresh_model(botnet_spec, seed=31)
    frames = _generated_frames(target, rng, 8, n_atoms=5)
    config = OptimizerConfig(lr=1e-2, epochs=300, plateau_patience=10, seed=0)
    _, log = train(frames, fresh_model(botnet_spec, seed=32), LossSpec(), config)
    assert log["loss"].iloc[-1] < 0.1 * log["loss"].iloc[0]


def _morse_angle_energy(positions):
    """O-H and H-H Morse pairs plus a harmonic H-O-H angle (eV, A)."""
    def morse(r, depth, width, r0):
        return depth * (1.0 - torch.exp(-width * (r - r0))) ** 2

    oh1 = positions[1] - positions[0]
    oh2 = positions[2] - positions[0]
    r1, r2 = oh1.norm(), oh2.norm()
    r_hh = (positions[2] - positions[1]).norm()
    theta = torch.acos(torch.dot(oh1, oh2) / (r1 * r2))
    return (
        morse(r1, 1.0, 2.0, 0.96)
        + morse(r2, 1.0, 2.0, 0.96)
        + morse(r_hh, 0.1, 1.5, 1.55)
        + 0.5 * 0.5 * (theta - np.deg2rad(104.5)) ** 2
    )


def _morse_angle_frames(rng, n_frames):
    frames = []
    for _ in range(n_frames):
        r1, r2 = 0.96 + 0.06 * rng.uniform(-1.0, 1.0, size=2)
        theta = np.deg2rad(104.5 + 8.0 * rng.uniform(-1.0, 1.0))
        positions = np.array([[0.0, 0.0, 0.0], [r1, 0.0, 0.0], [r2 * np.cos(theta), r2 * np.sin(theta), 0.0]])
        tensor = torch.tensor(positions, dtype=torch.float64, requires_grad=True)
        energy = _morse_angle_energy(tensor)
        (grad,) = torch.autograd.grad(energy, tensor)
        frames.append(Configuration(positions=positions, elements=("O", "H", "H"),
                                    energy=energy.item(), forces=-grad.numpy()))
    return frames


@pytest.mark.slow
def test_botnet_learns_morse_and_angle_forces():
    rng = np.random.default_rng(0)
    frames = _morse_angle_frames(rng, 200)
    spec = build_model_spec(
        {"preset": "botnet", "num_layers": 2, "n_channels": 16, "l_max": 2, "L_max": 1, "mlp_width": 16},
        {"r_cut": 4.0, "n_basis": 8},
    )
    table = ElementTable.from_symbols(("H", "O"), e0={"H": 0.0, "O": 0.0}, e0_source="config")
    model = build_model(spec, frames, table, seed=0)
    config = OptimizerConfig(lr=1e-2, epochs=2000, plateau_patience=50, min_lr=1e-5, seed=0, log_every=100)
    model, log = train(frames, model, LossSpec(energy_weight=1.0, force_weight=100.0), config)
    _, summary = evaluate_frames(frames, model)
    assert summary["force_rmse"] < 5e-3
