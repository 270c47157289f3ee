"""Pack and scenario configuration files (YAML).

Every physical quantity uses a unit-suffixed key (``q_ah``, ``r1_ohm``,
``dt_s``).  Relative file paths inside a scenario resolve against the
scenario file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cell import CellParams, cell_from_config
from .cycle import DriveCycle, load_drive_cycle, synth_udds_like
from .errors import ConfigError
from .ocv import ocv_from_config
from .pack import PackModel, assemble, pack_x

OUTPUT_ENV = "PARALLEL_SOC_OUTPUT_DIR"


def read_yaml(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


@dataclass(frozen=True)
class PackConfig:
    cells: tuple[CellParams, ...]
    z0: tuple[float, ...]

    def model(self) -> PackModel:
        return assemble(self.cells)


def pack_from_config(block: dict) -> PackConfig:
    """``{ocv: {...}, cells: [{r1_ohm, r2_ohm, c_farad, q_ah, z0}, ...]}``."""
    if not isinstance(block, dict) or "cells" not in block:
        raise ConfigError("pack config needs a 'cells' list")
    cells_raw = block["cells"]
    if not isinstance(cells_raw, list) or len(cells_raw) < 2:
        raise ConfigError("pack config needs at least two cells")
    shared = ocv_from_config(block.get("ocv"))
    cells, z0 = [], []
    for k, raw in enumerate(cells_raw, start=1):
        try:
            p, z = cell_from_config(raw, shared)
        except ConfigError as exc:
            raise ConfigError(f"cell {k}: {exc}") from None
        cells.append(p)
        z0.append(z)
    return PackConfig(tuple(cells), tuple(z0))


def load_pack(path: str | Path) -> PackConfig:
    return pack_from_config(read_yaml(path))


def parse_vector(text: str | None, length: int | None = None, name: str = "vector") -> np.ndarray | None:
    """Comma-separated floats, e.g. ``"-30,-30,-20,2,4,-20"``."""
    if text is None:
        return None
    try:
        vec = np.array([float(v) for v in str(text).replace(";", ",").split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if length is not None and vec.size != length:
        raise ConfigError(f"{name}: expected {length} values, got {vec.size}")
    return vec


@dataclass(frozen=True)
class ObserverSpec:
    gain: tuple[float, ...]
    xhat0: tuple[float, ...]
    z_ref: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    pack: PackConfig
    cycle: DriveCycle
    x0: tuple[float, ...]
    horizon_s: float
    dt_s: float = 0.1
    observer: ObserverSpec | None = None
    seed: int = 0
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.pack.cells)


def _vec(block: dict, key: str, length: int, where: str) -> tuple[float, ...] | None:
    if key not in block:
        return None
    val = block[key]
    if not isinstance(val, (list, tuple)) or len(val) != length:
        raise ConfigError(f"{where}.{key} must be a list of {length} numbers")
    try:
        return tuple(float(v) for v in val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} contains a non-numeric entry") from None


def scenario_from_dict(data: dict, base: Path | None = None) -> Scenario:
    base = base or Path.cwd()
    if "name" not in data:
        raise ConfigError("scenario needs a 'name'")
    if "pack" in data:
        pack = pack_from_config(data["pack"])
    elif "pack_file" in data:
        pack = load_pack(base / data["pack_file"])
    else:
        raise ConfigError("scenario needs 'pack' or 'pack_file'")
    n = len(pack.cells)

    cyc = data.get("cycle")
    if not isinstance(cyc, dict):
        raise ConfigError("scenario needs a 'cycle' block (csv or synthetic)")
    seed = int(data.get("seed", 0))
    if "csv" in cyc:
        cycle = load_drive_cycle(base / cyc["csv"], cyc.get("interpolation", "zoh"))
    elif "synthetic" in cyc:
        syn = cyc["synthetic"]
        try:
            cycle = synth_udds_like(
                float(syn["amplitude_a"]), float(syn["duration_s"]), int(syn.get("seed", seed))
            )
        except KeyError as exc:
            raise ConfigError(f"cycle.synthetic missing {exc}") from None
    else:
        raise ConfigError("cycle block needs 'csv' or 'synthetic'")

    plant = data.get("plant") or {}
    vc0 = _vec(plant, "vc0_v", n, "plant") or (0.0,) * n
    z0 = _vec(plant, "z0", n, "plant") or pack.z0
    x0 = tuple(pack_x(z0, vc0).tolist())

    horizon = float(data.get("horizon_s", cycle.t_end))
    dt = float(data.get("dt_s", 0.1))
    if dt <= 0 or horizon <= 0:
        raise ConfigError("dt_s and horizon_s must be > 0")

    observer = None
    obs = data.get("observer") or {}
    if obs.get("enabled", bool(obs)):
        gain = _vec(obs, "gain", 3 * n, "observer")
        if gain is None:
            raise ConfigError("observer.gain is required when the observer is enabled")
        xhat0 = _vec(obs, "xhat0", 2 * n, "observer")
        if xhat0 is None:
            offset = _vec(obs, "soc_offset", n, "observer") or (0.0,) * n
            vc_hat = _vec(obs, "vc0_v", n, "observer") or (0.0,) * n
            xhat0 = tuple(pack_x(np.add(z0, offset), vc_hat).tolist())
        observer = ObserverSpec(gain, xhat0, _vec(obs, "z_ref", n, "observer"))
    return Scenario(str(data["name"]), pack, cycle, x0, horizon, dt, observer, seed, data)


def bundled_scenarios() -> list[str]:
    root = resources.files("parallel_soc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a YAML path, or by name from the bundled set."""
    path = Path(ref)
    if path.is_file():
        return scenario_from_dict(read_yaml(path), path.parent)
    name = str(ref)
    root = resources.files("parallel_soc") / "scenarios"
    res = root / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(
            f"no scenario file {ref!r} and no bundled scenario of that name "
            f"(bundled: {', '.join(bundled_scenarios())})"
        )
    with resources.as_file(res) as p:
        return scenario_from_dict(read_yaml(p), p.parent)


def default_output_dir(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "out")) / name


