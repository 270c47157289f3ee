"""Ground-truth plant simulation over a drive cycle (fixed-step RK4)."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cycle import DriveCycle
from .errors import ConfigError, NonFinite
from .pack import PackModel, PackState, cell_voltages, reduced_rhs, solve_algebraic

log = logging.getLogger(__name__)

DEFAULT_DT = 0.1


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_grid(t0: float, t_end: float, dt: float) -> np.ndarray:
    """Sample times t0, t0+dt, ... ending exactly at t_end (last step may be short)."""
    if dt <= 0 or not math.isfinite(dt):
        raise ValueError("dt must be finite and > 0")
    if t_end < t0:
        raise ValueError("t_end must be >= t0")
    steps = max(int(math.ceil((t_end - t0) / dt - 1e-9)), 0)
    t = t0 + dt * np.arange(steps + 1)
    t[-1] = t_end
    return t


@dataclass(frozen=True)
class SocEvent:
    t: float
    cell: int
    z: float
    kind: str  # "exit" or "return"


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    x: np.ndarray  # (samples, 2n)
    u: np.ndarray  # (samples, n)
    i_total: np.ndarray
    terminal_voltage: np.ndarray
    events: tuple[SocEvent, ...] = field(default=())
    stopped: bool = False

    @property
    def n(self) -> int:
        return self.u.shape[1]

    @property
    def z(self) -> np.ndarray:
        return self.x[:, 0::2]

    @property
    def vc(self) -> np.ndarray:
        return self.x[:, 1::2]

    @property
    def states(self) -> list[PackState]:
        return [PackState(x, u, float(t)) for t, x, u in zip(self.times, self.x, self.u)]

    def __len__(self) -> int:
        return self.times.size


def simulate(
    model: PackModel,
    x0,
    cycle: DriveCycle,
    dt: float = DEFAULT_DT,
    t_end: float | None = None,
    t0: float = 0.0,
    hard_stop: bool = False,
) -> Trajectory:
    """Integrate the reduced ODE and record states, branch currents and voltage.

    With a zero-order-hold cycle the current is held at its value at the start
    of each step; with linear interpolation every RK4 stage sees I(t).
    """
    x = np.array(x0, dtype=float)
    if x.shape != (2 * model.n,) or not np.all(np.isfinite(x)):
        raise ConfigError(f"x0 must be a finite vector of length {2 * model.n}")
    if t_end is None:
        t_end = cycle.t_end
    cycle.require(t0, t_end)
    grid = step_grid(t0, t_end, dt)
    samples = grid.size
    xs = np.empty((samples, 2 * model.n))
    us = np.empty((samples, model.n))
    its = np.empty(samples)
    vs = np.empty(samples)
    events: list[SocEvent] = []
    outside = np.zeros(model.n, dtype=bool)
    zoh = cycle.interpolation == "zoh"
    stopped = False

    last = samples - 1
    for k, t in enumerate(grid):
        i_now = cycle.current(t)
        u = solve_algebraic(model, x, i_now)
        xs[k], us[k], its[k] = x, u, i_now
        vs[k] = cell_voltages(model, x, u)[0]

        z = x[0::2]
        now_out = (z < 0.0) | (z > 1.0)
        for cell in np.flatnonzero(now_out != outside):
            kind = "exit" if now_out[cell] else "return"
            events.append(SocEvent(float(t), int(cell), float(z[cell]), kind))
            if kind == "exit":
                log.warning("cell %d SOC left [0, 1] at t=%.3f s (z=%.4f)", cell + 1, t, z[cell])
        outside = now_out
        if hard_stop and now_out.any():
            last, stopped = k, True
            break
        if k == samples - 1:
            break

        h = grid[k + 1] - t
        if zoh:
            x = rk4_step(lambda _t, xx: reduced_rhs(model, xx, i_now), t, x, h)
        else:
            x = rk4_step(lambda tt, xx: reduced_rhs(model, xx, cycle.current(tt)), t, x, h)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"plant state became non-finite at t={grid[k + 1]:g} s")

    sl = slice(0, last + 1)
    return Trajectory(grid[sl].copy(), xs[sl], us[sl], its[sl], vs[sl], tuple(events), stopped)


def trajectory_header(n: int) -> list[str]:
    return (
        ["t_s"]
        + [f"z_{k}" for k in range(1, n + 1)]
        + [f"vc_{k}" for k in range(1, n + 1)]
        + [f"i_{k}" for k in range(1, n + 1)]
        + ["v_terminal"]
    )


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    """``t_s,z_1..z_n,vc_1..vc_n,i_1..i_n,v_terminal`` at full precision."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(traj.n))
        for k in range(len(traj)):
            row = [traj.times[k], *traj.z[k], *traj.vc[k], *traj.u[k], traj.terminal_voltage[k]]
            w.writerow([repr(float(v)) for v in row])


def load_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty file")
        n = sum(1 for h in header if h.startswith("z_"))
        expected = trajectory_header(n)
        missing = [c for c in expected if c not in header]
        if n < 1 or missing:
            raise ConfigError(f"{path}:1: missing column(s) {', '.join(missing) or 'z_1'}")
        if header != expected:
            raise ConfigError(f"{path}:1: unexpected column order {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ConfigError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value") from None
    data = np.array(rows, dtype=float).reshape(-1, len(expected))
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ConfigError(f"{path}: timestamps are not strictly increasing")
    x = np.empty((data.shape[0], 2 * n))
    x[:, 0::2] = data[:, 1 : 1 + n]
    x[:, 1::2] = data[:, 1 + n : 1 + 2 * n]
    u = data[:, 1 + 2 * n : 1 + 3 * n]
    return Trajectory(data[:, 0], x, u, u.sum(axis=1), data[:, -1])
