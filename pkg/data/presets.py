def get_model_presets():
    """
    Get the model presets of the design space.
    Returns a dictionary mapping preset name to its model and radial settings.
    """
    model_presets = {
        "botnet": {
            "model": {
                "num_layers": 5,
                "correlation_order": 1,
                "l_max": 3,
                "L_max": 2,
                "n_channels": 32,
                "coupling": "feature",
                "self_connection": "mixed",
                "message_norm": "avg-neighbors",
                "nonlinearity": "none",
                "readout": "per-layer-linear+final-mlp",
                "mlp_width": 16,
                "mlp_activation": "silu",
                "normalization": "e0",
                "max_degree": None,
            },
            "radial": {"variant": "element-dependent"},
        },
        "botnet-linear": {
            "model": {
                "num_layers": 2,
                "correlation_order": 1,
                "l_max": 2,
                "L_max": 1,
                "n_channels": 16,
                "coupling": "feature",
                "self_connection": "mixed",
                "message_norm": "avg-neighbors",
                "nonlinearity": "none",
                "readout": "per-layer-linear",
                "mlp_width": 16,
                "mlp_activation": "silu",
                "normalization": "e0",
                "max_degree": None,
            },
            "radial": {"variant": "element-dependent"},
        },
        "nequip": {
            "model": {
                "num_layers": 5,
                "correlation_order": 1,
                "l_max": 3,
                "L_max": 2,
                "n_channels": 64,
                "coupling": "feature",
                "self_connection": "residual",
                "message_norm": "sqrt-avg-neighbors",
                "nonlinearity": "gated-silu",
                "readout": "final-only",
                "mlp_width": 16,
                "mlp_activation": "silu",
                "normalization": "ssh-forces-rms",
                "max_degree": None,
            },
            "radial": {"variant": "agnostic-mlp"},
        },
        "linear-ace": {
            "model": {
                "num_layers": 1,
                "correlation_order": 3,
                "l_max": 2,
                "L_max": 0,
                "n_channels": 1,
                "coupling": "element",
                "self_connection": "none",
                "message_norm": "none",
                "nonlinearity": "none",
                "readout": "element-linear",
                "mlp_width": 16,
                "mlp_activation": "silu",
                "normalization": "e0",
                "max_degree": 6,
            },
            "radial": {"variant": "fixed-orthogonal", "n_basis": 6},
        },
    }
    # "custom" starts from the botnet settings and is expected to be overridden
    model_presets["custom"] = {
        "model": dict(model_presets["botnet"]["model"]),
        "radial": dict(model_presets["botnet"]["radial"]),
    }
    return model_presets


def get_run_defaults():
    """
    Get the default run configuration.
    Returns a dictionary of sections, each a flat dictionary of settings.
    """
    run_defaults = {
        "data": {
            "train_file": None,
            "valid_file": None,
            "test_file": None,
            "e0": None,
        },
        "model": {
            "preset": "botnet",
            "num_layers": None,
            "correlation_order": None,
            "l_max": None,
            "L_max": None,
            "n_channels": None,
            "coupling": None,
            "self_connection": None,
            "message_norm": None,
            "nonlinearity": None,
            "readout": None,
            "mlp_width": None,
            "mlp_activation": None,
            "normalization": None,
            "max_degree": None,
        },
        "radial": {
            "r_cut": 5.0,
            "n_basis": 8,
            "variant": None,
            "mlp_widths": [64, 64, 64],
            "envelope_degree": 6,
            "r_min": 1e-3,
        },
        "loss": {
            "energy_weight": 1.0,
            "force_weight": 10.0,
            "reduction": "mean",
            "per_atom_energy": True,
        },
        "optimizer": {
            "lr": 1e-2,
            "epochs": 200,
            "batch_size": 0,
            "ema_decay": None,
            "plateau_factor": 0.8,
            "plateau_patience": 20,
            "min_lr": 1e-5,
            "ridge": 1e-8,
        },
        "run": {
            "seed": 0,
            "precision": "f64",
            "output": "results",
            "model_file": "model.pt",
            "log_every": 1,
        },
    }
    return run_defaults


def get_ablation_studies():
    """
    Get the ablation studies over the design space.
    Returns a dictionary mapping study name to its base preset and variants;
    each variant holds "model" and "radial" overrides on top of the preset.
    """
    ablation_studies = {
        "radial": {
            "preset": "nequip",
            "variants": {
                "agnostic-mlp": {"radial": {"variant": "agnostic-mlp"}},
                "element-dependent": {"radial": {"variant": "element-dependent"}},
            },
        },
        "nonlinearity": {
            "preset": "custom",
            "variants": {
                "none": {"model": {"nonlinearity": "none"}},
                "gated-silu": {"model": {"nonlinearity": "gated-silu"}},
            },
        },
        "self_connection": {
            "preset": "nequip",
            "variants": {
                "residual": {"model": {"self_connection": "residual"}},
                "mixed": {"model": {"self_connection": "mixed"}},
                "none": {"model": {"self_connection": "none"}},
            },
        },
        "normalization": {
            "preset": "nequip",
            "variants": {
                "ssh-forces-rms": {"model": {"normalization": "ssh-forces-rms"}},
                "ssh-energy-std": {"model": {"normalization": "ssh-energy-std"}},
                "e0": {"model": {"normalization": "e0"}},
                "none": {"model": {"normalization": "none"}},
            },
        },
        "message_norm": {
            "preset": "botnet",
            "variants": {
                "avg-neighbors": {"model": {"message_norm": "avg-neighbors"}},
                "sqrt-avg-neighbors": {"model": {"message_norm": "sqrt-avg-neighbors"}},
                "none": {"model": {"message_norm": "none"}},
            },
        },
        "num_layers": {
            "preset": "botnet",
            "variants": {
                "1": {"model": {"num_layers": 1}},
                "2": {"model": {"num_layers": 2}},
                "3": {"model": {"num_layers": 3}},
            },
        },
        "readout_activation": {
            "preset": "botnet",
            "variants": {
                "silu": {"model": {"mlp_activation": "silu"}},
                "tanh": {"model": {"mlp_activation": "tanh"}},
            },
        },
        "correlation_order": {
            "preset": "linear-ace",
            "variants": {
                "1": {"model": {"correlation_order": 1}},
                "2": {"model": {"correlation_order": 2}},
                "3": {"model": {"correlation_order": 3}},
            },
        },
    }
    return ablation_studies
