"""
Losses, the least-squares solver for linear ACE, the gradient-based
training loop for the message passing presets and the ablation runner.
"""
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import psutil
import scipy.linalg
import torch
from torch.optim.lr_scheduler import ReduceLROnPlateau
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn

from data.presets import get_ablation_studies
from modules.diffengine import basis_jacobian, predict
from modules.errors import ConfigurationError, DataError, DataNormalizationError, DivergenceError, SolverError
from modules.model import build_model, build_model_spec

logger = logging.getLogger(__name__)

REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class LossSpec:
    energy_weight: float = 1.0
    force_weight: float = 10.0
    reduction: str = "mean"
    per_atom_energy: bool = True

    def __post_init__(self):
        if self.energy_weight < 0 or self.force_weight < 0:
            raise ConfigurationError("Loss weights must be non-negative")
        if self.energy_weight == 0 and self.force_weight == 0:
            raise ConfigurationError("Energy and force weights cannot both be zero")
        if self.reduction not in REDUCTIONS:
            raise ConfigurationError(f"Unknown reduction {self.reduction!r}; choose one of {REDUCTIONS}")

    def evaluate(self, frames, predictions, scale=1.0):
        return loss(frames, predictions, self, scale)


def loss(frames, predictions, loss_spec, scale=1.0):
    """
    energy_weight * E-error term + force_weight * F-error term.

    Errors are divided by ``scale`` (the normalization alpha) so the loss is
    measured in model-internal units.
    """
    if len(frames) != len(predictions):
        raise DataError(f"{len(frames)} frames but {len(predictions)} predictions")
    energy_errors = []
    force_errors = []
    for index, (frame, prediction) in enumerate(zip(frames, predictions)):
        if loss_spec.energy_weight > 0:
            if frame.energy is None:
                raise DataError(f"Frame {index} has no energy label")
            error = (prediction.energy - frame.energy) / scale
            if loss_spec.per_atom_energy:
                error = error / frame.n_atoms
            energy_errors.append(error.reshape(1))
        if loss_spec.force_weight > 0:
            if frame.forces is None:
                raise DataError(f"Frame {index} has no force labels")
            if prediction.forces is None:
                raise DataError(f"Prediction {index} has no forces")
            reference = torch.as_tensor(frame.forces, dtype=prediction.forces.dtype)
            force_errors.append(((prediction.forces - reference) / scale).reshape(-1))

    reduce = torch.mean if loss_spec.reduction == "mean" else torch.sum
    total = 0.0
    if energy_errors:
        total = total + loss_spec.energy_weight * reduce(torch.cat(energy_errors) ** 2)
    if force_errors:
        total = total + loss_spec.force_weight * reduce(torch.cat(force_errors) ** 2)
    if not isinstance(total, torch.Tensor):
        total = torch.tensor(0.0, dtype=torch.float64)
    return total


def fit_linear_ace(frames, model, loss_spec=None, ridge=1e-8):
    """
    Solve for the element-linear readout by regularized least squares over
    energies and forces jointly.

    Design columns that are zero on every frame (basis functions never
    observed) are dropped and their coefficients fixed to exactly zero. The
    ridge is applied per frame, so consistently duplicated data gives the same
    solution. Returns (model, info dictionary).
    """
    loss_spec = loss_spec or LossSpec()
    if model.spec.readout != "element-linear":
        raise ConfigurationError(f"fit_linear_ace needs the linear-ace preset, got {model.spec.preset}")
    frames = list(frames)
    if not frames:
        raise DataError("Cannot fit on an empty dataset")
    state = model.normalization
    energy_scale = np.sqrt(loss_spec.energy_weight)
    force_scale = np.sqrt(loss_spec.force_weight)

    rows, targets = [], []
    for index, frame in enumerate(frames):
        transformed = state.transform(frame)
        positions = torch.as_tensor(frame.positions, dtype=model.dtype)
        values, jacobian = basis_jacobian(lambda r, f=frame: model.element_basis(f, r), positions)
        values = values.detach().cpu().numpy()
        if loss_spec.energy_weight > 0:
            if transformed.energy is None:
                raise DataError(f"Frame {index} has no energy label")
            weight = energy_scale / (frame.n_atoms if loss_spec.per_atom_energy else 1.0)
            rows.append(weight * values[None, :])
            targets.append(np.array([weight * transformed.energy]))
        if loss_spec.force_weight > 0:
            if transformed.forces is None:
                raise DataError(f"Frame {index} has no force labels")
            force_rows = -jacobian.detach().cpu().numpy().reshape(values.shape[0], -1).T
            rows.append(force_scale * force_rows)
            targets.append(force_scale * transformed.forces.reshape(-1))

    design = np.vstack(rows)
    target = np.concatenate(targets)
    observed = np.flatnonzero(np.abs(design).max(axis=0) > 0)
    reduced = design[:, observed]
    logger.info(
        "Linear ACE design matrix %s, %d of %d columns observed",
        design.shape, len(observed), design.shape[1],
    )

    if ridge > 0:
        penalty = np.sqrt(ridge * len(frames)) * np.eye(len(observed))
        augmented = np.vstack([reduced, penalty])
        augmented_target = np.concatenate([target, np.zeros(len(observed))])
        solution, _, rank, _ = scipy.linalg.lstsq(augmented, augmented_target)
    else:
        solution, _, rank, _ = scipy.linalg.lstsq(reduced, target)
        if rank < len(observed):
            raise SolverError(
                f"Design matrix is rank deficient ({rank} < {len(observed)} columns); use a positive ridge"
            )

    coefficients = np.zeros(design.shape[1])
    coefficients[observed] = solution
    with torch.no_grad():
        model.element_weights.copy_(
            torch.as_tensor(coefficients, dtype=model.dtype).reshape(model.element_weights.shape)
        )
    residual = reduced @ solution - target
    info = {
        "n_rows": design.shape[0],
        "n_columns": design.shape[1],
        "n_observed": len(observed),
        "rank": int(rank),
        "ridge": ridge,
        "residual_rms": float(np.sqrt(np.mean(residual**2))) if len(residual) else 0.0,
    }
    return model, info


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 0
    ema_decay: float = None
    plateau_factor: float = 0.8
    plateau_patience: int = 20
    min_lr: float = 1e-5
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"Learning rate must be non-negative, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 0:
            raise ConfigurationError("epochs and batch_size must be non-negative")
        if self.ema_decay is not None and not 0 < self.ema_decay < 1:
            raise ConfigurationError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")


def _rss_mb():
    return psutil.Process().memory_info().rss / 2**20


def train(frames, model, loss_spec=None, config=None, log_path=None):
    """
    Adam with on-plateau learning rate decay and optional weight EMA.

    Returns (model, training log DataFrame). One record per epoch is logged
    and, with ``log_path``, appended as a JSON line.
    """
    loss_spec = loss_spec or LossSpec()
    config = config or OptimizerConfig()
    frames = list(frames)
    if not frames:
        raise DataError("Cannot train on an empty dataset")
    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    scheduler = ReduceLROnPlateau(
        optimizer, factor=config.plateau_factor, patience=config.plateau_patience, min_lr=config.min_lr
    )
    ema = None
    if config.ema_decay is not None:
        ema = AveragedModel(model, multi_avg_fn=get_ema_multi_avg_fn(config.ema_decay))

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")

    with_forces = loss_spec.force_weight > 0
    batch_size = config.batch_size or len(frames)
    records = []
    start = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            if config.batch_size:
                order = torch.randperm(len(frames), generator=generator).tolist()
            else:
                order = list(range(len(frames)))
            epoch_loss = 0.0
            energy_sq, energy_count, force_sq, force_count = 0.0, 0, 0.0, 0
            for start_index in range(0, len(frames), batch_size):
                batch = [frames[i] for i in order[start_index:start_index + batch_size]]
                optimizer.zero_grad()
                predictions = predict(model, batch, with_forces=True, create_graph=with_forces)
                value = loss_spec.evaluate(batch, predictions, scale=model.normalization.alpha)
                if not torch.isfinite(value):
                    raise DivergenceError(
                        f"Loss became {value.item()} at epoch {epoch}, batch starting at {start_index} "
                        f"(lr={optimizer.param_groups[0]['lr']:.3g}, last epoch loss "
                        f"{records[-1]['loss'] if records else 'n/a'})"
                    )
                value.backward()
                optimizer.step()
                if ema is not None:
                    ema.update_parameters(model)
                epoch_loss += value.item() * len(batch)

                for frame, prediction in zip(batch, predictions):
                    if frame.energy is not None:
                        energy_sq += (prediction.energy.item() - frame.energy) ** 2
                        energy_count += 1
                    if frame.forces is not None:
                        diff = prediction.forces.detach().cpu().numpy() - frame.forces
                        force_sq += float(np.sum(diff**2))
                        force_count += diff.size

            epoch_loss /= len(frames)
            scheduler.step(epoch_loss)
            record = {
                "epoch": epoch,
                "loss": epoch_loss,
                "energy_rmse": float(np.sqrt(energy_sq / energy_count)) if energy_count else None,
                "force_rmse": float(np.sqrt(force_sq / force_count)) if force_count else None,
                "lr": optimizer.param_groups[0]["lr"],
                "wall_time": time.perf_counter() - start,
                "rss_mb": _rss_mb(),
            }
            records.append(record)
            if config.log_every and epoch % config.log_every == 0:
                logger.info(
                    "epoch %d loss %.6g E-RMSE %s F-RMSE %s",
                    epoch, epoch_loss, record["energy_rmse"], record["force_rmse"],
                )
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file is not None:
            log_file.close()

    if ema is not None:
        model.load_state_dict(ema.module.state_dict())
    return model, pd.DataFrame(records)


def evaluate_frames(frames, model):
    """
    Per-frame errors and summary metrics.
    Returns (DataFrame with one row per frame, dictionary of RMSE/MAE values).
    """
    rows = []
    force_diffs = []
    predictions = predict(model, frames, with_forces=True)
    for index, (frame, prediction) in enumerate(zip(frames, predictions)):
        predicted_forces = prediction.forces.detach().cpu().numpy()
        row = {
            "frame": index,
            "n_atoms": frame.n_atoms,
            "energy_ref": frame.energy,
            "energy_pred": float(prediction.energy),
            "energy_error": None if frame.energy is None else float(prediction.energy) - frame.energy,
        }
        if frame.forces is not None:
            diff = predicted_forces - frame.forces
            force_diffs.append(diff.reshape(-1))
            row["force_rmse"] = float(np.sqrt(np.mean(diff**2)))
        rows.append(row)

    table = pd.DataFrame(rows)
    summary = {"n_frames": len(frames)}
    labeled = table.dropna(subset=["energy_error"]) if len(table) else table
    if len(labeled):
        errors = labeled["energy_error"].to_numpy(dtype=float)
        per_atom = errors / labeled["n_atoms"].to_numpy(dtype=float)
        summary["energy_rmse"] = float(np.sqrt(np.mean(errors**2)))
        summary["energy_mae"] = float(np.mean(np.abs(errors)))
        summary["energy_rmse_per_atom"] = float(np.sqrt(np.mean(per_atom**2)))
    if force_diffs:
        diffs = np.concatenate(force_diffs)
        summary["force_rmse"] = float(np.sqrt(np.mean(diffs**2)))
        summary["force_mae"] = float(np.mean(np.abs(diffs)))
    return table, summary


def optimizer_config_from_dict(settings, seed=0):
    known = set(OptimizerConfig.__dataclass_fields__)
    values = {k: v for k, v in settings.items() if k in known}
    values["seed"] = seed
    return OptimizerConfig(**values)


def _ablation_settings(study, variant, base):
    model = {k: v for k, v in (base.get("model") or {}).items() if k != "preset"}
    model.update(variant.get("model", {}))
    model["preset"] = study["preset"]
    radial = dict(base.get("radial") or {})
    radial.update(variant.get("radial", {}))
    return model, radial


def ablate(study_name, frames, test_frames=None, base=None, loss_spec=None, config=None,
           ridge=1e-8, precision="float64", table=None):
    """
    Build, fit and evaluate every variant of one ablation study.

    ``base`` holds "model" and "radial" settings applied on top of the study's
    preset and below each variant's overrides. The element-linear readout is
    solved by least squares, every other preset is trained with ``config``.
    A variant that fails with a recoverable error stays in the table with
    the message in ``status``.
    Returns a DataFrame with one row per variant.
    """
    studies = get_ablation_studies()
    if study_name not in studies:
        raise ConfigurationError(f"Unknown ablation study {study_name!r}; choose one of {sorted(studies)}")
    study = studies[study_name]
    loss_spec = loss_spec or LossSpec()
    config = config or OptimizerConfig()
    frames = list(frames)
    test_frames = list(test_frames or [])

    rows = []
    for name, variant in study["variants"].items():
        model_settings, radial_settings = _ablation_settings(study, variant, base or {})
        row = {"study": study_name, "variant": name, "preset": study["preset"]}
        start = time.perf_counter()
        try:
            spec = build_model_spec(model_settings, radial_settings, precision)
            model = build_model(spec, frames, table, seed=config.seed)
            if spec.readout == "element-linear":
                model, _ = fit_linear_ace(frames, model, loss_spec, ridge=ridge)
            else:
                model, _ = train(frames, model, loss_spec, config)
            row["n_parameters"] = sum(p.numel() for p in model.parameters() if p.requires_grad)
            for prefix, subset in (("train", frames), ("test", test_frames)):
                if not subset:
                    continue
                _, summary = evaluate_frames(subset, model)
                row[f"{prefix}_energy_rmse"] = summary.get("energy_rmse")
                row[f"{prefix}_force_rmse"] = summary.get("force_rmse")
            row["status"] = "ok"
        except (DivergenceError, SolverError, DataNormalizationError) as exc:
            logger.warning("Ablation %s/%s failed: %s", study_name, name, exc)
            row["status"] = f"error: {exc}"
        row["wall_time"] = time.perf_counter() - start
        rows.append(row)
        logger.info("Ablation %s/%s: %s", study_name, name, row["status"])

    columns = [
        "study", "variant", "preset", "n_parameters", "train_energy_rmse", "train_force_rmse",
        "test_energy_rmse", "test_force_rmse", "wall_time", "status",
    ]
    return pd.DataFrame(rows).reindex(columns=columns)
