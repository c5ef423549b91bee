import numpy as np
import pandas as pd
import yaml

from app import main
from modules.atomic_graph import Configuration
from modules.cli_io import write_extxyz
from modules.property_harness import check_permutation
from utils.report_generator import create_scan_figure, render_check_report

E0 = {"H": -13.6, "O": -2041.0}


def _write_run(tmp_path, rng):
    frames = []
    for _ in range(8):
        elements = tuple(str(e) for e in rng.choice(["H", "O"], size=3))
        positions = np.array([[0.0, 0.0, 0.0], [1.1, 0.0, 0.0], [0.0, 1.3, 0.0]]) + 0.2 * rng.normal(size=(3, 3))
        energy = sum(E0[e] for e in elements) + float(rng.normal(scale=0.1))
        frames.append(Configuration(positions=positions, elements=elements, energy=energy,
                                    forces=rng.normal(scale=0.1, size=(3, 3))))
    write_extxyz(frames, tmp_path / "train.xyz")
    config = {
        "data": {"train_file": "train.xyz", "e0": "H:-13.6,O:-2041.0"},
        "model": {"preset": "linear-ace", "correlation_order": 2, "l_max": 1},
        "radial": {"r_cut": 3.0, "n_basis": 3},
        "optimizer": {"ridge": 1e-6},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


def test_fit_then_dimer(tmp_path, rng):
    path = _write_run(tmp_path, rng)
    output = tmp_path / "results"
    assert main(["fit-linear", "--config", str(path), "--output", str(output)]) == 0
    assert (output / "model.pt").exists()
    summary = pd.read_csv(output / "fit_summary.csv")
    assert summary["rank"].iloc[0] > 0

    assert main(["dimer", "--config", str(path), "--output", str(output), "--elements", "O", "H",
                 "--num", "20", "--plot"]) == 0
    table = pd.read_csv(output / "dimer_O-H.csv")
    assert len(table) == 20
    assert (output / "dimer_O-H.html").exists()


def test_check_of_fresh_model(tmp_path, rng):
    path = _write_run(tmp_path, rng)
    output = tmp_path / "results"
    code = main(["check", "--config", str(path), "--output", str(output), "--suites", "permutation", "extensivity"])
    assert code == 0
    report = (output / "check_report.md").read_text()
    assert "overall: **PASS**" in report
    assert set(pd.read_csv(output / "check_report.csv")["suite"]) == {"permutation", "extensivity"}


def test_ablate_writes_one_row_per_variant(tmp_path, rng):
    path = _write_run(tmp_path, rng)
    output = tmp_path / "results"
    assert main(["ablate", "--config", str(path), "--output", str(output), "--study", "correlation_order"]) == 0
    table = pd.read_csv(output / "ablation_correlation_order.csv")
    assert list(table["variant"]) == [1, 2, 3]
    assert (table["status"] == "ok").all()
    assert (table["preset"] == "linear-ace").all()
    assert table["n_parameters"].is_monotonic_increasing


def test_configuration_errors_exit_with_status_2(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"model": {"preset": "mace"}}))
    assert main(["check", "--config", str(path), "--output", str(tmp_path)]) == 2


def test_report_rendering(botnet_model):
    report = check_permutation(botnet_model, n_cases=1)
    markdown = render_check_report([report], seed=3, model_spec=botnet_model.spec)
    assert "## permutation (pass)" in markdown
    assert "seed 3" in markdown
    assert "botnet-linear" in markdown


def test_scan_figure_skips_status_column():
    table = pd.DataFrame({"coordinate": [1.0, 2.0], "energy": [0.5, 0.1], "status": ["ok", "ok"]})
    fig = create_scan_figure(table)
    assert [trace.name for trace in fig.data] == ["energy"]
