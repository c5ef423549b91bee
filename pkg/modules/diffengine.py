"""
Reverse-mode differentiation of model energies on top of torch autograd:
forces, parameter gradients (with the force-loss double backward) and
Jacobians of basis values with respect to positions.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch

logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    energy: torch.Tensor
    forces: torch.Tensor = None

    @property
    def n_atoms(self):
        return None if self.forces is None else self.forces.shape[0]


@dataclass
class Tape:
    """
    A recorded forward evaluation. The torch graph behind ``energy`` holds
    every primitive and its saved intermediates.
    """

    model: object
    cfg: object
    positions: torch.Tensor
    energy: torch.Tensor
    site_energies: torch.Tensor

    def operations(self):
        """Names of the recorded backward nodes in reverse topological order."""
        seen = set()
        order = []
        stack = [self.energy.grad_fn]
        while stack:
            node = stack.pop()
            if node is None or node in seen:
                continue
            seen.add(node)
            order.append(type(node).__name__)
            stack.extend(parent for parent, _ in node.next_functions)
        return order

    def replay(self):
        """Re-run the forward pass; True when it reproduces the recording bitwise."""
        with torch.no_grad():
            again = self.model.forward_energy(self.cfg, self.positions.detach().clone())
        return bool(torch.equal(again.energy, self.energy.detach())) and bool(
            torch.equal(again.site_energies, self.site_energies.detach())
        )

    def gradient(self, create_graph=False):
        if not self.energy.requires_grad:
            return torch.zeros_like(self.positions)
        (grad,) = torch.autograd.grad(
            self.energy, self.positions, create_graph=create_graph, retain_graph=True, allow_unused=True
        )
        # no edges: the energy does not depend on positions
        return torch.zeros_like(self.positions) if grad is None else grad


def record(model, cfg):
    positions = torch.as_tensor(cfg.positions, dtype=model.dtype).clone().requires_grad_(True)
    result = model.forward_energy(cfg, positions)
    return Tape(model=model, cfg=cfg, positions=positions, energy=result.energy, site_energies=result.site_energies)


def energy_and_forces(model, cfg, create_graph=False):
    """Energy tensor and F = -dE/dr as an (N, 3) tensor."""
    tape = record(model, cfg)
    return tape.energy, -tape.gradient(create_graph=create_graph)


def forces(cfg, model):
    """Forces in eV/A as a numpy array."""
    _, value = energy_and_forces(model, cfg)
    return value.detach().cpu().numpy().astype(np.float64)


def predict(model, frames, with_forces=True, create_graph=False):
    predictions = []
    for frame in frames:
        if with_forces:
            energy, frame_forces = energy_and_forces(model, frame, create_graph=create_graph)
            predictions.append(Prediction(energy=energy, forces=frame_forces))
        else:
            predictions.append(Prediction(energy=model.forward_energy(frame).energy))
    return predictions


def parameter_gradients(frames, loss_spec, model):
    """
    Loss value and exact gradient per named parameter. The force term is
    differentiated through the force computation (double backward).
    """
    with_forces = loss_spec.force_weight > 0
    predictions = predict(model, frames, with_forces=with_forces, create_graph=with_forces)
    value = loss_spec.evaluate(frames, predictions, scale=model.normalization.alpha)
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(value, [p for _, p in named], allow_unused=True)
    gradients = {
        name: torch.zeros_like(p) if grad is None else grad
        for (name, p), grad in zip(named, grads)
    }
    return value.detach(), gradients


def basis_jacobian(fn, positions):
    """
    Values y = fn(positions) of shape (D,) and the Jacobian dy/dr of shape
    (D, N, 3).

    Uses the double-backward trick: g(u) = J^T u is built once with a dummy
    cotangent u, then each column of J is the gradient of one component of
    g with respect to u. Costs 3N backward passes instead of D.
    """
    positions = positions.detach().clone().requires_grad_(True)
    values = fn(positions)
    jacobian = values.new_zeros((values.shape[0], positions.numel()))
    if not values.requires_grad or values.shape[0] == 0:
        return values.detach(), jacobian.reshape(values.shape[0], *positions.shape)
    cotangent = torch.zeros_like(values, requires_grad=True)
    (vjp,) = torch.autograd.grad(values, positions, grad_outputs=cotangent, create_graph=True, allow_unused=True)
    if vjp is not None and vjp.requires_grad:
        flat = vjp.reshape(-1)
        for component in range(flat.shape[0]):
            (column,) = torch.autograd.grad(flat[component], cotangent, retain_graph=True, allow_unused=True)
            if column is not None:
                jacobian[:, component] = column
    return values.detach(), jacobian.reshape(values.shape[0], *positions.shape)
