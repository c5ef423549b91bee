def get_check_tolerances():
    """
    Get the tolerances of the property checks (float64 unless noted).
    Returns a dictionary of check categories, each a dictionary of settings.
    """
    check_tolerances = {
        "equivariance": {
            "energy": 1e-9,
            "features": 1e-10,
            "forces": 1e-9,
            "n_trials": 10,
            "n_rotations": 2,
            "n_atoms": 5,
        },
        "permutation": {
            "energy": 0.0,
            "features": 0.0,
            "n_cases": 50,
            "n_atoms": 6,
        },
        "extensivity": {
            "energy": 1e-10,
            "n_atoms": 3,
        },
        "gradients": {
            "fd_step": 1e-4,
            "relative_error": 1e-6,
            "force_sum": 1e-10,
            "torque_sum": 1e-8,
            "n_molecules": 10,
            "n_atoms": 4,
        },
        "body_order": {
            "relative": 1e-6,
            "neighbor_radius_fraction": 0.4,
            "displacement": 0.2,
            "max_neighbors": 6,
        },
        "normalization": {
            "embedding_band": (0.5, 2.0),
            "harmonics": 1e-12,
            "layer_band": (0.2, 5.0),
            "lambda_ratio_relative": 0.2,
            "lambda_neighbors": 20,
            "n_samples": 500,
        },
        "smoothness": {
            "roughness_float64": 1e-6,
            "n_points": 1000,
        },
        "geometry": {
            "ball_fraction": 0.8,
            "min_distance": 0.7,
        },
    }
    return check_tolerances
