"""
Dataset files, run configurations, model archives and the operations
behind the command line (scan, dimer, decompose, check).

Extended XYZ, per frame:

    <n_atoms>
    energy=<eV> e0="H:-13.6,O:-2041.0" Properties=species:S:1:pos:R:3:forces:R:3 [key=value ...]
    <symbol> <x> <y> <z> [<fx> <fy> <fz>]     (n_atoms rows, A and eV/A)

Periodic frames (Lattice, or pbc other than "F F F") are rejected.
"""
import copy
import logging
import pickle
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import yaml

from data.presets import get_run_defaults
from modules.atomic_graph import Configuration, ElementTable
from modules.errors import ConfigurationError, DataError, DomainError, ParseError
from modules.model import MultiAcePotential, build_model_spec, decompose_scan, decomposition_row
from modules.property_harness import fresh_model, run_suites
from modules.training import LossSpec, optimizer_config_from_dict
from utils.config_validator import validate_run_config
from utils.geometry import SETTERS

logger = logging.getLogger(__name__)

_PAIR = re.compile(r'(\S+?)=("[^"]*"|\'[^\']*\'|\S+)')
_PROPERTY_COLUMNS = {"species": 1, "pos": 3, "forces": 3, "force": 3}


def parse_e0_table(text):
    """Parse "H:-13.6,O:-2041.0" into {"H": -13.6, "O": -2041.0}."""
    table = {}
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        symbol, sep, value = item.partition(":")
        if not sep:
            raise ValueError(f"E0 entry {item!r} is not of the form symbol:energy")
        table[symbol.strip()] = float(value)
    return table


def format_e0_table(table):
    return ",".join(f"{symbol}:{value:.17g}" for symbol, value in table.items())


def _unquote(value):
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def _parse_properties(value, line, path):
    fields = value.split(":")
    if len(fields) % 3:
        raise ParseError(f"Malformed Properties entry {value!r}", line=line, path=path)
    columns = []
    for name, _, count in zip(fields[::3], fields[1::3], fields[2::3]):
        name = name.lower()
        if name not in _PROPERTY_COLUMNS or int(count) != _PROPERTY_COLUMNS[name]:
            raise ParseError(f"Unsupported per-atom property {name}:{count}", line=line, path=path)
        columns.append("forces" if name == "force" else name)
    if columns[:2] != ["species", "pos"]:
        raise ParseError("Properties must start with species:S:1:pos:R:3", line=line, path=path)
    return columns


def _parse_comment(text, line, path):
    header = {"energy": None, "e0": None, "columns": None, "info": {}}
    for key, raw in _PAIR.findall(text):
        value = _unquote(raw)
        lowered = key.lower()
        if lowered == "lattice":
            raise ParseError("Periodic frames (Lattice) are not supported; open boundaries only", line=line, path=path)
        if lowered == "pbc":
            if any(flag.upper() not in ("F", "FALSE", "0") for flag in value.split()):
                raise ParseError(f"Periodic frames (pbc={value!r}) are not supported", line=line, path=path)
            continue
        if lowered == "energy":
            try:
                header["energy"] = float(value)
            except ValueError:
                raise ParseError(f"Energy {value!r} is not a number", line=line, path=path) from None
        elif lowered == "e0":
            try:
                header["e0"] = parse_e0_table(value)
            except ValueError as exc:
                raise ParseError(str(exc), line=line, path=path) from None
        elif lowered == "properties":
            header["columns"] = _parse_properties(value, line, path)
        else:
            try:
                header["info"][key] = float(value)
            except ValueError:
                header["info"][key] = value
    return header


def _parse_row(text, columns, line, path):
    tokens = text.split()
    expected = 4 if columns is None else sum(_PROPERTY_COLUMNS[c] for c in columns)
    if columns is None and len(tokens) == 7:
        expected = 7
    if len(tokens) != expected:
        raise ParseError(f"Expected {expected} columns in atom row, got {len(tokens)}", line=line, path=path)
    try:
        numbers = [float(token) for token in tokens[1:]]
    except ValueError:
        raise ParseError(f"Non-numeric value in atom row {text.strip()!r}", line=line, path=path) from None
    return tokens[0], numbers[:3], numbers[3:6] if len(numbers) == 6 else None


def parse_extxyz_text(text, path=None):
    """Frames of an extended XYZ document; errors carry the 1-based line number."""
    lines = text.splitlines()
    frames = []
    index = 0
    while index < len(lines):
        if not lines[index].strip():
            index += 1
            continue
        count_line = index + 1
        try:
            n_atoms = int(lines[index].strip())
        except ValueError:
            raise ParseError(f"Expected an atom count, got {lines[index].strip()!r}", line=count_line, path=path) from None
        if n_atoms < 0:
            raise ParseError(f"Negative atom count {n_atoms}", line=count_line, path=path)
        if index + 1 >= len(lines):
            raise ParseError("Missing comment line", line=count_line + 1, path=path)
        header = _parse_comment(lines[index + 1], count_line + 1, path)
        rows = lines[index + 2:index + 2 + n_atoms]
        if len(rows) < n_atoms or any(not row.strip() for row in rows):
            found = sum(1 for row in rows if row.strip())
            raise ParseError(f"Declared {n_atoms} atoms but found {found} rows", line=count_line, path=path)

        elements, positions, forces = [], [], []
        for offset, row in enumerate(rows):
            symbol, position, force = _parse_row(row, header["columns"], count_line + 2 + offset, path)
            elements.append(symbol)
            positions.append(position)
            forces.append(force)
        has_forces = [f is not None for f in forces]
        if any(has_forces) and not all(has_forces):
            raise ParseError("Force columns present for only some atoms", line=count_line, path=path)
        try:
            frames.append(
                Configuration(
                    positions=np.array(positions, dtype=np.float64).reshape(-1, 3),
                    elements=tuple(elements),
                    energy=header["energy"],
                    forces=np.array(forces, dtype=np.float64) if all(has_forces) and n_atoms else None,
                    e0=header["e0"],
                    info=header["info"],
                )
            )
        except DataError as exc:
            raise ParseError(str(exc), line=count_line, path=path) from None
        index += 2 + n_atoms
    return frames


def parse_extxyz(path):
    """Frames of an extended XYZ file (energies in eV, positions in A, forces in eV/A)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"Cannot read {path}: {exc}") from exc
    frames = parse_extxyz_text(text, path=str(path))
    logger.info("Read %d frames from %s", len(frames), path)
    return frames


def format_extxyz(frames):
    out = []
    for frame in frames:
        has_forces = frame.forces is not None
        properties = "species:S:1:pos:R:3" + (":forces:R:3" if has_forces else "")
        comment = []
        if frame.energy is not None:
            comment.append(f"energy={frame.energy:.17g}")
        if frame.e0:
            comment.append(f'e0="{format_e0_table(frame.e0)}"')
        comment.append(f"Properties={properties}")
        for key, value in frame.info.items():
            text = f"{value:.17g}" if isinstance(value, float) else str(value)
            comment.append(f'{key}="{text}"' if " " in text else f"{key}={text}")
        out.append(str(frame.n_atoms))
        out.append(" ".join(comment))
        for i, symbol in enumerate(frame.elements):
            values = list(frame.positions[i]) + (list(frame.forces[i]) if has_forces else [])
            out.append(" ".join([symbol] + [f"{v:.17g}" for v in values]))
    return "\n".join(out) + "\n"


def write_extxyz(frames, path):
    """Write frames with 17 significant digits, so reading back is exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_extxyz(frames), encoding="utf-8")
    return path


@dataclass
class RunConfig:
    """A validated run configuration with every default filled in."""

    data: dict
    model: dict
    radial: dict
    loss: dict
    optimizer: dict
    run: dict
    path: Path = None
    raw: dict = field(default_factory=dict)

    def model_spec(self):
        return build_model_spec(self.model, self.radial, self.run["precision"])

    def loss_spec(self):
        return LossSpec(**self.loss)

    def optimizer_config(self):
        return optimizer_config_from_dict(self.optimizer, self.run["seed"])

    @property
    def output_dir(self):
        return Path(self.run["output"])

    @property
    def seed(self):
        return int(self.run["seed"])

    def data_path(self, key):
        value = self.data.get(key)
        if not value:
            raise ConfigurationError(f"data.{key} is not set in the run configuration")
        value = Path(value)
        if not value.is_absolute() and self.path is not None:
            value = self.path.parent / value
        return value

    def e0_table(self):
        value = self.data.get("e0")
        if value is None:
            return None
        try:
            return parse_e0_table(value)
        except ValueError as exc:
            raise ConfigurationError(f"data.e0: {exc}") from None

    def load_frames(self, key="train_file"):
        return parse_extxyz(self.data_path(key))

    def element_table(self, frames):
        table = ElementTable.from_frames(frames)
        e0 = self.e0_table()
        if e0 is not None:
            table = ElementTable.from_symbols(set(table.symbols) | set(e0))
            table = table.with_e0({s: e0[s] for s in table.symbols if s in e0}, "config")
        return table


def _merge(base, overrides):
    merged = {section: dict(values or {}) for section, values in (base or {}).items()}
    for section, values in (overrides or {}).items():
        merged.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return merged


def load_run_config(path=None, overrides=None):
    """
    Read, validate and complete a YAML run configuration.

    ``overrides`` maps sections to key/value pairs (command line flags) and
    is applied before validation. Raises ConfigurationError listing every
    problem found.
    """
    raw = {}
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigurationError(f"Cannot read run configuration {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"Run configuration {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("Run configuration must be a mapping of sections")
    raw = _merge(raw, overrides)

    results = validate_run_config(raw)
    for warning in results["warnings"]:
        logger.warning("Configuration: %s", warning)
    for recommendation in results["recommendations"]:
        logger.info("Configuration: %s", recommendation)
    if not results["status"]:
        raise ConfigurationError("Invalid run configuration:\n  - " + "\n  - ".join(results["errors"]))

    sections = _merge(get_run_defaults(), raw)
    return RunConfig(**sections, path=path, raw=raw)


def save_model(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.to_archive(), path)
    logger.info("Saved model archive to %s", path)
    return path


def load_model(path):
    """Model from an archive written by save_model."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise DataError(f"Cannot read model archive {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataError(f"{path} is not a model archive")
    return MultiAcePotential.from_archive(payload)


@dataclass(frozen=True)
class ScanSpec:
    """Rigid scan of one internal coordinate; the last listed atom moves."""

    kind: str
    atoms: tuple
    start: float
    stop: float
    num: int = 101

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(int(a) for a in self.atoms))
        if self.kind not in SETTERS:
            raise ConfigurationError(f"Unknown scan kind {self.kind!r}; choose one of {sorted(SETTERS)}")
        arity = SETTERS[self.kind][0]
        if len(self.atoms) != arity:
            raise ConfigurationError(f"A {self.kind} scan needs {arity} atom indices, got {len(self.atoms)}")
        if len(set(self.atoms)) != arity:
            raise ConfigurationError(f"Scan atom indices must be distinct: {self.atoms}")
        if self.num < 1:
            raise ConfigurationError(f"A scan needs at least one point, got num={self.num}")

    def grid(self):
        return np.linspace(self.start, self.stop, self.num)

    def configurations(self, cfg):
        """(coordinate value, configuration) per grid point."""
        if max(self.atoms) >= cfg.n_atoms:
            raise ConfigurationError(f"Scan atoms {self.atoms} out of range for {cfg.n_atoms} atoms")
        setter = SETTERS[self.kind][1]
        base = Configuration(positions=cfg.positions, elements=cfg.elements)
        for value in self.grid():
            positions = setter(base.positions, self.atoms, float(value))
            yield float(value), Configuration(positions=positions, elements=cfg.elements)


def cli_scan(model, scan_spec, cfg):
    """
    Energy and decomposition along a scan, one row per grid point.

    Points where two atoms come closer than r_min are kept with a NaN
    energy and an error status; the scan continues.
    """
    rows = []
    with torch.no_grad():
        for value, point in scan_spec.configurations(cfg):
            row = {"coordinate": value}
            try:
                result = model.forward_energy(point)
            except DomainError as exc:
                logger.warning("Scan point %s=%.6g skipped: %s", scan_spec.kind, value, exc)
                row.update({"energy": np.nan, "status": f"error: {exc}"})
            else:
                row["energy"] = float(result.energy)
                row.update(decomposition_row(model, result))
                row["status"] = "ok"
            rows.append(row)
    table = pd.DataFrame(rows)
    status = table.pop("status")
    table["status"] = status
    return table


def dimer(elements, distance=1.0):
    return Configuration(positions=[[0.0, 0.0, 0.0], [distance, 0.0, 0.0]], elements=tuple(elements))


def cli_dimer(model, elements, start=0.5, stop=None, num=200):
    """
    Dissociation curve of a two-atom molecule. ``interaction`` is the energy
    relative to the two isolated atoms as predicted by the same model.
    """
    if len(elements) != 2:
        raise ConfigurationError(f"A dimer needs exactly two elements, got {elements}")
    stop = 2.0 * model.spec.radial.r_cut if stop is None else stop
    table = cli_scan(model, ScanSpec("bond", (0, 1), start, stop, num), dimer(elements))
    isolated = sum(
        model.energy(Configuration(positions=[[0.0, 0.0, 0.0]], elements=(symbol,))) for symbol in elements
    )
    table.insert(2, "interaction", table["energy"] - isolated)
    return table.rename(columns={"coordinate": "distance"})


def cli_decompose(model, frames, shift_to_last=False):
    return decompose_scan(frames, model, shift_to_last=shift_to_last)


def cli_check(target, seed=0, precision="float64", suites=None, elements=("H", "C", "O"), corrupt=False):
    """
    Run the property suites on a model, or on a freshly initialized model
    for a ModelSpec. Returns (list of SuiteReport, overall pass flag).
    """
    precision = {"f32": "float32", "f64": "float64"}.get(precision, precision)
    if isinstance(target, MultiAcePotential):
        model = target.with_precision(precision) if precision != target.spec.precision else target
    else:
        spec = target
        model = fresh_model(spec, elements, seed=seed)
        if precision != spec.precision:
            model = model.with_precision(precision)
    if corrupt:
        model = copy.deepcopy(model)
        for layer in model.layers:
            layer.corrupt_coupling(seed=seed)
    reports = run_suites(model, seed=seed, suites=suites)
    passed = all(report.passed for report in reports)
    logger.info("Property checks %s", "passed" if passed else "FAILED")
    return reports, passed


def write_table(table, path):
    """Delimited text: header line, comma separated, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")
    return path
