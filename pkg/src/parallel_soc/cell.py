"""Single-cell equivalent circuit: OCV source, series resistor, one RC pair.

Sign convention: positive current charges the cell (dz/dt = +I/Q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .ocv import OcvCurve, default_ocv, ocv_from_config

AH_TO_AS = 3600.0


@dataclass(frozen=True)
class CellParams:
    """ECM constants. ``q`` is stored in ampere-seconds."""

    r1: float
    r2: float
    c: float
    q: float
    ocv: OcvCurve = field(default_factory=default_ocv, compare=False)

    def __post_init__(self):
        for name in ("r1", "r2", "c", "q"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(f"cell parameter {name} must be finite and > 0, got {val!r}")
            object.__setattr__(self, name, float(val))

    @classmethod
    def from_ah(cls, r1: float, r2: float, c: float, q_ah: float, ocv: OcvCurve | None = None):
        return cls(r1, r2, c, q_ah * AH_TO_AS, ocv if ocv is not None else default_ocv())

    @property
    def q_ah(self) -> float:
        return self.q / AH_TO_AS

    @property
    def tau(self) -> float:
        """RC time constant r2*c in seconds."""
        return self.r2 * self.c


@dataclass(frozen=True)
class CellState:
    z: float
    v_c: float = 0.0


def cell_matrices(p: CellParams) -> tuple[np.ndarray, np.ndarray, float]:
    """Return (a_bar, b_bar, d_bar) of dx/dt = a_bar x + b_bar I, y = h(x) + d_bar I."""
    a_bar = np.array([[0.0, 0.0], [0.0, -1.0 / (p.r2 * p.c)]])
    b_bar = np.array([[1.0 / p.q], [1.0 / p.c]])
    return a_bar, b_bar, p.r1


def cell_output(s: CellState, i_k: float, p: CellParams) -> float:
    """Terminal voltage OCV(z) + v_c + r1 * I."""
    return p.ocv(s.z) + s.v_c + p.r1 * i_k


def cell_from_config(block: dict, ocv: OcvCurve | None = None) -> tuple[CellParams, float]:
    """Parse ``{r1_ohm, r2_ohm, c_farad, q_ah, z0}`` (plus optional ``ocv``).

    Returns the parameters and the initial SOC (``z0`` defaults to 0.5).
    """
    if not isinstance(block, dict):
        raise ConfigError("cell block must be a mapping")
    missing = [k for k in ("r1_ohm", "r2_ohm", "c_farad", "q_ah") if k not in block]
    if missing:
        raise ConfigError(f"cell block missing key(s): {', '.join(missing)}")
    unknown = set(block) - {"r1_ohm", "r2_ohm", "c_farad", "q_ah", "z0", "ocv"}
    if unknown:
        raise ConfigError(f"cell block has unknown key(s): {', '.join(sorted(unknown))}")
    curve = ocv_from_config(block["ocv"]) if "ocv" in block else (ocv or default_ocv())
    try:
        params = CellParams.from_ah(
            float(block["r1_ohm"]),
            float(block["r2_ohm"]),
            float(block["c_farad"]),
            float(block["q_ah"]),
            curve,
        )
        z0 = float(block.get("z0", 0.5))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cell block has a non-numeric value: {exc}") from exc
    return params, z0
