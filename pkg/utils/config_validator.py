from data.presets import get_model_presets, get_run_defaults
from modules.ace_layer import MESSAGE_NORMS, NONLINEARITIES, SELF_CONNECTIONS
from modules.model import NORMALIZATIONS, READOUTS
from modules.radial_basis import RADIAL_VARIANTS
from modules.so3_kernel import ACTIVATIONS, L_MAX_DEFAULT, L_MAX_LIMIT

CHOICES = {
    ("model", "preset"): tuple(get_model_presets()),
    ("model", "coupling"): ("feature", "element"),
    ("model", "self_connection"): SELF_CONNECTIONS + ("mixed",),
    ("model", "message_norm"): MESSAGE_NORMS,
    ("model", "nonlinearity"): tuple(NONLINEARITIES),
    ("model", "readout"): READOUTS,
    ("model", "mlp_activation"): tuple(ACTIVATIONS),
    ("model", "normalization"): NORMALIZATIONS,
    ("radial", "variant"): RADIAL_VARIANTS,
    ("loss", "reduction"): ("mean", "sum"),
    ("run", "precision"): ("f32", "f64"),
}

POSITIVE = {
    ("radial", "r_cut"),
    ("radial", "r_min"),
    ("radial", "n_basis"),
    ("model", "num_layers"),
    ("model", "correlation_order"),
    ("model", "n_channels"),
    ("model", "mlp_width"),
}

NON_NEGATIVE = {
    ("model", "l_max"),
    ("model", "L_max"),
    ("model", "max_degree"),
    ("loss", "energy_weight"),
    ("loss", "force_weight"),
    ("optimizer", "lr"),
    ("optimizer", "epochs"),
    ("optimizer", "batch_size"),
    ("optimizer", "ridge"),
    ("run", "seed"),
}


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_run_config(config):
    """
    Validate a raw run configuration (the parsed YAML document).
    Returns a dictionary with validation results.
    """
    results = {
        "status": True,
        "errors": [],
        "warnings": [],
        "recommendations": []
    }

    if not isinstance(config, dict):
        results["status"] = False
        results["errors"].append("Run configuration must be a mapping of sections")
        return results

    defaults = get_run_defaults()

    # Strict parsing: unknown sections and keys are errors
    for section, values in config.items():
        if section not in defaults:
            results["status"] = False
            results["errors"].append(f"Unknown section: {section}")
            continue
        if values is None:
            continue
        if not isinstance(values, dict):
            results["status"] = False
            results["errors"].append(f"Section {section} must be a flat mapping of key=value pairs")
            continue
        for key, value in values.items():
            if key not in defaults[section]:
                results["status"] = False
                results["errors"].append(f"Unknown key in section {section}: {key}")
                continue
            if isinstance(value, dict):
                results["status"] = False
                results["errors"].append(f"{section}.{key}: nested mappings are not allowed")
                continue
            if value is None:
                continue
            choices = CHOICES.get((section, key))
            if choices is not None and value not in choices:
                results["status"] = False
                results["errors"].append(f"{section}.{key}: {value!r} is not one of {list(choices)}")
            if (section, key) in POSITIVE and (not _is_number(value) or value <= 0):
                results["status"] = False
                results["errors"].append(f"{section}.{key} must be a positive number, got {value!r}")
            if (section, key) in NON_NEGATIVE and (not _is_number(value) or value < 0):
                results["status"] = False
                results["errors"].append(f"{section}.{key} must be a non-negative number, got {value!r}")

    if not results["status"]:
        return results

    model = config.get("model") or {}
    radial = config.get("radial") or {}
    loss = config.get("loss") or {}
    data = config.get("data") or {}
    run = config.get("run") or {}

    for key in ("l_max", "L_max"):
        value = model.get(key)
        if value is not None and value > L_MAX_LIMIT:
            results["status"] = False
            results["errors"].append(f"model.{key}={value} exceeds the supported maximum {L_MAX_LIMIT}")
        elif value is not None and value > L_MAX_DEFAULT:
            results["warnings"].append(f"model.{key}={value} is above the default cap {L_MAX_DEFAULT}; coupling tables grow quickly")

    if loss.get("energy_weight") == 0 and loss.get("force_weight") == 0:
        results["status"] = False
        results["errors"].append("loss.energy_weight and loss.force_weight cannot both be zero")

    r_cut = radial.get("r_cut", defaults["radial"]["r_cut"])
    r_min = radial.get("r_min", defaults["radial"]["r_min"])
    if r_min is not None and r_cut is not None and r_min >= r_cut:
        results["status"] = False
        results["errors"].append(f"radial.r_min ({r_min}) must be smaller than radial.r_cut ({r_cut})")

    widths = radial.get("mlp_widths")
    if widths is not None and (not isinstance(widths, list) or not all(isinstance(w, int) and w > 0 for w in widths)):
        results["status"] = False
        results["errors"].append("radial.mlp_widths must be a list of positive integers")

    if model.get("preset") == "linear-ace" and radial.get("variant") not in (None, "fixed-orthogonal"):
        results["status"] = False
        results["errors"].append("The linear-ace preset requires radial.variant = fixed-orthogonal")

    if model.get("preset") in ("botnet", "botnet-linear") and model.get("nonlinearity") not in (None, "none"):
        results["status"] = False
        results["errors"].append("botnet presets keep all updates linear (model.nonlinearity = none)")

    if not data.get("train_file"):
        results["warnings"].append("data.train_file is not set; only commands that take frames directly will work")

    if run.get("precision") == "f32":
        results["recommendations"].append("Use f64 for training; f32 energies are visibly rough along scans")

    if model.get("nonlinearity") in ("gated-silu", "gated-tanh"):
        results["recommendations"].append("Gated nonlinearities remove the body-order guarantee of the energy terms")

    return results
