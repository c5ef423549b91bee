import numpy as np
import pandas as pd
import pytest
import yaml

from modules.atomic_graph import Configuration
from modules.cli_io import (
    ScanSpec,
    cli_check,
    cli_decompose,
    cli_dimer,
    cli_scan,
    format_extxyz,
    load_model,
    load_run_config,
    parse_e0_table,
    parse_extxyz,
    parse_extxyz_text,
    save_model,
    write_extxyz,
    write_table,
)
from modules.errors import ConfigurationError, DataError, ParseError
from modules.property_harness import fresh_model
from modules.training import LossSpec, fit_linear_ace

TWO_ATOMS = """2
energy=-27.5 e0="H:-13.6,O:-2041.0" Properties=species:S:1:pos:R:3:forces:R:3 config_type=dimer
H 0.0 0.0 0.0 0.1 0.0 0.0
O 0.0 0.0 0.97 -0.1 0.0 0.0
"""


def test_parse_two_atom_frame():
    (frame,) = parse_extxyz_text(TWO_ATOMS)
    assert frame.elements == ("H", "O")
    assert frame.energy == -27.5
    assert frame.e0 == {"H": -13.6, "O": -2041.0}
    assert frame.info == {"config_type": "dimer"}
    assert np.array_equal(frame.forces[:, 0], [0.1, -0.1])
    assert parse_extxyz_text(format_extxyz([frame]))[0].positions.tolist() == frame.positions.tolist()


def test_plain_xyz_without_properties():
    (frame,) = parse_extxyz_text("1\nenergy=-13.6\nH 0 0 0\n")
    assert frame.forces is None
    assert frame.energy == -13.6


@pytest.mark.parametrize(
    "comment",
    [
        'Lattice="10 0 0 0 10 0 0 0 10" Properties=species:S:1:pos:R:3',
        'pbc="T T T" Properties=species:S:1:pos:R:3',
    ],
)
def test_periodic_frames_are_rejected(comment):
    with pytest.raises(ParseError) as excinfo:
        parse_extxyz_text(f"1\n{comment}\nH 0 0 0\n")
    assert excinfo.value.line == 2


def test_open_boundary_pbc_flag_is_accepted():
    (frame,) = parse_extxyz_text('1\npbc="F F F"\nH 0 0 0\n')
    assert frame.n_atoms == 1


@pytest.mark.parametrize(
    "text, line",
    [
        ("two\n\nH 0 0 0\n", 1),
        ("1\n\nH 0 0 0\n2\n\nH 0 0 0\n", 4),
        ("2\nProperties=species:S:1:pos:R:3:forces:R:3\nH 0 0 0 1 1 1\nH 1 0 0\n", 4),
        ("1\n\nH 0 zero 0\n", 3),
        ("1\nenergy=abc\nH 0 0 0\n", 2),
    ],
)
def test_parse_errors_report_line_numbers(text, line):
    with pytest.raises(ParseError) as excinfo:
        parse_extxyz_text(text, path="frames.xyz")
    assert excinfo.value.line == line
    assert "frames.xyz" in str(excinfo.value)


def test_forces_on_some_atoms_only():
    text = "2\n\nH 0 0 0 1 1 1\nH 1 0 0\n"
    with pytest.raises(ParseError):
        parse_extxyz_text(text)


def test_written_frames_read_back_exactly(tmp_path, rng):
    frames = []
    for _ in range(100):
        n_atoms = int(rng.integers(1, 6))
        frames.append(
            Configuration(
                positions=rng.normal(scale=3.0, size=(n_atoms, 3)),
                elements=tuple(str(e) for e in rng.choice(["H", "C", "O"], size=n_atoms)),
                energy=float(rng.normal(scale=100.0)),
                forces=rng.normal(size=(n_atoms, 3)),
            )
        )
    path = write_extxyz(frames, tmp_path / "frames.xyz")
    restored = parse_extxyz(path)
    assert len(restored) == 100
    for before, after in zip(frames, restored):
        assert after.elements == before.elements
        assert after.energy == before.energy
        assert np.array_equal(after.positions, before.positions)
        assert np.array_equal(after.forces, before.forces)


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        parse_extxyz(tmp_path / "missing.xyz")


def test_e0_table_format():
    assert parse_e0_table("H:-13.6, O:-2041") == {"H": -13.6, "O": -2041.0}
    with pytest.raises(ValueError):
        parse_e0_table("H=-13.6")


def test_run_config_defaults_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"data": {"train_file": "train.xyz"}, "model": {"preset": "botnet-linear"}}))
    config = load_run_config(path, overrides={"optimizer": {"lr": 5e-3, "epochs": None}, "run": {"seed": 7}})
    assert config.optimizer["lr"] == 5e-3
    assert config.optimizer["epochs"] == 200
    assert config.seed == 7
    assert config.data_path("train_file") == tmp_path / "train.xyz"
    assert config.model_spec().preset == "botnet-linear"
    assert config.loss_spec() == LossSpec()


@pytest.mark.parametrize(
    "document",
    [
        {"model": {"preset": "botnet", "layers": 3}},
        {"extras": {"a": 1}},
        {"radial": {"r_cut": -1.0}},
        {"model": {"preset": "mace"}},
        {"loss": {"energy_weight": 0, "force_weight": 0}},
    ],
)
def test_invalid_run_configs(tmp_path, document):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(document))
    with pytest.raises(ConfigurationError):
        load_run_config(path)


def test_run_config_e0_table(tmp_path, water):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"data": {"e0": "H:-13.6,O:-2041.0"}}))
    config = load_run_config(path)
    table = config.element_table([water])
    assert table.e0 == {"H": -13.6, "O": -2041.0}


def test_model_archive_round_trip(tmp_path, botnet_model, methanol_like):
    path = save_model(botnet_model, tmp_path / "models" / "model.pt")
    restored = load_model(path)
    assert restored.energy(methanol_like) == botnet_model.energy(methanol_like)


def test_load_model_rejects_other_files(tmp_path):
    path = tmp_path / "model.pt"
    path.write_text("not an archive")
    with pytest.raises(DataError):
        load_model(path)


@pytest.mark.parametrize(
    "kind, atoms",
    [("torsion", (0, 1, 2, 3)), ("bond", (0, 1, 2)), ("angle", (0, 0, 1))],
)
def test_scan_spec_validation(kind, atoms):
    with pytest.raises(ConfigurationError):
        ScanSpec(kind, atoms, 0.0, 1.0)


def test_scan_keeps_going_past_contacts(botnet_model, water):
    table = cli_scan(botnet_model, ScanSpec("bond", (0, 1), 0.0, 1.0, 5), water)
    assert list(table.columns)[:2] == ["coordinate", "energy"]
    assert table["status"].iloc[0].startswith("error")
    assert np.isnan(table["energy"].iloc[0])
    assert (table["status"].iloc[1:] == "ok").all()


def test_dihedral_scan_is_periodic(botnet_model, methanol_like):
    table = cli_scan(botnet_model, ScanSpec("dihedral", (2, 1, 0, 3), 0.0, 360.0, 5), methanol_like)
    assert table["energy"].iloc[0] == table["energy"].iloc[-1]


def test_dimer_interaction_vanishes_beyond_cutoff(botnet_model):
    table = cli_dimer(botnet_model, ("H", "O"), start=0.5, stop=6.0, num=56)
    assert list(table.columns)[:3] == ["distance", "energy", "interaction"]
    far = table[table["distance"] > 3.0 + 1e-9]
    assert len(far) > 0
    assert (far["interaction"] == 0.0).all()
    assert table["interaction"].iloc[0] != 0.0


def test_dimer_needs_two_elements(botnet_model):
    with pytest.raises(ConfigurationError):
        cli_dimer(botnet_model, ("H",))


def test_unseen_pair_has_no_interaction_after_linear_fit(linear_spec, rng):
    frames = []
    for _ in range(6):
        positions = rng.uniform(-1.0, 1.0, size=(3, 3)) + np.array([[0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [0.0, 1.2, 0.0]])
        frames.append(Configuration(positions=positions, elements=("O", "H", "C"), energy=float(rng.normal()),
                                    forces=rng.normal(size=(3, 3))))
    model, _ = fit_linear_ace(frames, fresh_model(linear_spec), ridge=1e-6)
    table = cli_dimer(model, ("O", "O"), start=0.8, stop=3.5, num=10)
    assert np.allclose(table["interaction"], 0.0, atol=1e-12)


def test_decompose_matches_model(botnet_model, water, methanol_like):
    table = cli_decompose(botnet_model, [water, methanol_like])
    assert table["total"].tolist() == [botnet_model.energy(water), botnet_model.energy(methanol_like)]


def test_check_passes_and_catches_corruption(botnet_spec):
    reports, passed = cli_check(botnet_spec, seed=1, suites=("equivariance", "permutation"))
    assert passed
    assert [report.suite for report in reports] == ["equivariance", "permutation"]

    reports, passed = cli_check(botnet_spec, seed=1, suites=("equivariance",), corrupt=True)
    assert not passed
    assert not reports[0].result("features").ok


def test_check_of_single_precision_model(botnet_model):
    reports, _ = cli_check(botnet_model, precision="f32", suites=("permutation",))
    assert reports[0].precision == "float64"


def test_write_table(tmp_path):
    table = pd.DataFrame({"distance": [1.0, 2.0], "energy": [0.1 + 0.2, -1.0 / 3.0]})
    path = write_table(table, tmp_path / "out" / "scan.csv")
    restored = pd.read_csv(path)
    assert restored["energy"].tolist() == table["energy"].tolist()
