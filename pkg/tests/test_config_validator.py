from utils.config_validator import validate_run_config


def test_empty_config_is_valid_with_warning():
    results = validate_run_config({})
    assert results["status"]
    assert any("train_file" in w for w in results["warnings"])


def test_unknown_sections_and_keys():
    results = validate_run_config({"trainer": {}, "model": {"depth": 3}})
    assert not results["status"]
    assert "Unknown section: trainer" in results["errors"]
    assert "Unknown key in section model: depth" in results["errors"]


def test_nested_values_are_rejected():
    results = validate_run_config({"model": {"preset": {"name": "botnet"}}})
    assert not results["status"]


def test_value_checks():
    results = validate_run_config({
        "model": {"preset": "mace", "l_max": 6},
        "radial": {"r_cut": 0, "mlp_widths": [64, "wide"]},
        "run": {"precision": "f16"},
    })
    assert not results["status"]
    assert len(results["errors"]) == 3


def test_cross_field_checks():
    results = validate_run_config({
        "model": {"preset": "linear-ace", "l_max": 6},
        "radial": {"variant": "agnostic-mlp", "r_cut": 2.0, "r_min": 2.5},
    })
    messages = " ".join(results["errors"])
    assert "l_max=6" in messages
    assert "r_min" in messages
    assert "fixed-orthogonal" in messages


def test_recommendations():
    results = validate_run_config({
        "data": {"train_file": "train.xyz"},
        "model": {"preset": "custom", "nonlinearity": "gated-silu", "l_max": 4},
        "run": {"precision": "f32"},
    })
    assert results["status"]
    assert len(results["warnings"]) == 1
    assert len(results["recommendations"]) == 2
