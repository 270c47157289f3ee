"""State estimation for lithium-ion cells connected in parallel.

Cells are modelled as one-RC equivalent circuits; the pack is a descriptor
(differential-algebraic) system whose algebraic states are the branch
currents.  The observer estimates every cell's SOC, RC voltage and current
from the terminal voltage and total current alone.
"""

from .cell import CellParams, CellState, cell_matrices, cell_output
from .cycle import DriveCycle, load_drive_cycle, synth_udds_like, write_drive_cycle
from .ocv import OcvCurve, PolyOcv, TableOcv, default_ocv, flat_ocv
from .pack import (
    PackModel,
    PackState,
    assemble,
    pack_x,
    phi,
    reduced_output,
    reduced_rhs,
    solve_algebraic,
    theta,
)
from .sim import Trajectory, load_trajectory, simulate, write_trajectory

__version__ = "0.1.0"

__all__ = [
    "CellParams",
    "CellState",
    "DriveCycle",
    "OcvCurve",
    "PackModel",
    "PackState",
    "PolyOcv",
    "TableOcv",
    "Trajectory",
    "assemble",
    "cell_matrices",
    "cell_output",
    "default_ocv",
    "flat_ocv",
    "load_drive_cycle",
    "load_trajectory",
    "pack_x",
    "phi",
    "reduced_output",
    "reduced_rhs",
    "simulate",
    "solve_algebraic",
    "synth_udds_like",
    "theta",
    "write_drive_cycle",
    "write_trajectory",
]
