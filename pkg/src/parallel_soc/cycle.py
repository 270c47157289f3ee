"""Total-current drive cycles: container, CSV IO and a synthetic urban profile."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CycleGap

CYCLE_HEADER = ("t_s", "i_a")
_TIME_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class DriveCycle:
    """Sampled total current I(t); positive current charges the pack."""

    t: np.ndarray
    i: np.ndarray
    interpolation: str = "zoh"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        i = np.asarray(self.i, dtype=float)
        if t.ndim != 1 or t.shape != i.shape or t.size == 0:
            raise ConfigError("drive cycle needs equal-length, non-empty time and current arrays")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(i))):
            raise ConfigError("drive cycle contains non-finite values")
        if np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise ConfigError(f"drive cycle timestamps must be strictly increasing (sample {k})")
        if self.interpolation not in ("zoh", "linear"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        t.setflags(write=False)
        i.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "i", i)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        """Last covered instant; a ZOH cycle holds its final sample for one more period."""
        if self.interpolation == "zoh" and self.t.size > 1:
            return float(self.t[-1] + (self.t[-1] - self.t[-2]))
        return float(self.t[-1])

    def covers(self, t0: float, t1: float) -> bool:
        return t0 >= self.t_start - _TIME_EPS and t1 <= self.t_end + _TIME_EPS

    def require(self, t0: float, t1: float) -> None:
        if not self.covers(t0, t1):
            raise CycleGap(
                f"cycle covers [{self.t_start:g}, {self.t_end:g}] s, requested [{t0:g}, {t1:g}] s"
            )

    def current(self, t: float) -> float:
        if self.interpolation == "linear":
            return float(np.interp(t, self.t, self.i))
        k = int(np.searchsorted(self.t, t + _TIME_EPS, side="right")) - 1
        return float(self.i[max(k, 0)])


def synth_udds_like(amplitude: float, duration: float, seed: int = 0, dt: float = 1.0) -> DriveCycle:
    """Reproducible stop-and-go current profile sampled every ``dt`` seconds.

    Micro-trips of idle, acceleration, cruise and regenerative braking are
    strung together, lightly smoothed, balanced so that charge and discharge
    throughput match, and scaled so that ``max |I| == amplitude``.
    The profile starts with an idle period (I = 0).
    """
    if amplitude <= 0:
        raise ValueError("amplitude must be > 0")
    if duration <= 0:
        raise ValueError("duration must be > 0")
    rng = np.random.default_rng(seed)
    n = int(math.floor(duration / dt)) + 1
    out: list[float] = []
    # the opening idle never fills more than a quarter of a short profile
    out.extend([0.0] * min(int(rng.integers(5, 20)), max(1, n // 4)))
    while len(out) < n:
        peak = rng.uniform(0.5, 1.0)
        accel = int(rng.integers(4, 15))
        out.extend((-peak * np.linspace(0.2, 1.0, accel)).tolist())
        cruise = int(rng.integers(10, 60))
        level = -peak * rng.uniform(0.2, 0.6)
        out.extend((level + 0.08 * rng.standard_normal(cruise)).tolist())
        brake = int(rng.integers(4, 12))
        out.extend((rng.uniform(0.3, 0.8) * np.sin(np.linspace(0, np.pi, brake))).tolist())
        out.extend([0.0] * int(rng.integers(3, 30)))
    raw = np.asarray(out[:n])
    kernel = np.ones(3) / 3.0
    smooth = np.convolve(raw, kernel, mode="same")
    smooth[raw == 0.0] = 0.0  # keep idle stops exact
    pos, neg = smooth[smooth > 0].sum(), -smooth[smooth < 0].sum()
    if pos > 0 and neg > 0:
        smooth[smooth > 0] *= neg / pos
    peak = np.max(np.abs(smooth))
    if peak > 0:
        smooth *= amplitude / peak
    t = np.arange(n) * dt
    return DriveCycle(t, np.clip(smooth, -amplitude, amplitude))


def constant_cycle(current: float, duration: float, dt: float = 1.0) -> DriveCycle:
    n = int(math.ceil(duration / dt)) + 1
    return DriveCycle(np.arange(n) * dt, np.full(n, float(current)))


def _header_check(header: list[str] | None, expected: tuple[str, ...], path) -> None:
    if header is None:
        raise ConfigError(f"{path}: empty file, expected header {','.join(expected)}")
    header = [h.strip() for h in header]
    missing = [c for c in expected if c not in header]
    if missing:
        raise ConfigError(f"{path}:1: missing column(s) {', '.join(missing)} in header")
    if tuple(header) != expected:
        raise ConfigError(f"{path}:1: header must be exactly {','.join(expected)}, got {','.join(header)}")


def load_drive_cycle(path: str | Path, interpolation: str = "zoh") -> DriveCycle:
    """Read a ``t_s,i_a`` CSV with strict header and monotonicity checks."""
    path = Path(path)
    ts: list[float] = []
    cur: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _header_check(next(reader, None), CYCLE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                t, i = float(row[0]), float(row[1])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(i)):
                raise ConfigError(f"{path}:{lineno}: non-finite value")
            if ts and t <= ts[-1]:
                raise ConfigError(f"{path}:{lineno}: timestamp {t!r} is not after {ts[-1]!r}")
            ts.append(t)
            cur.append(i)
    if not ts:
        raise ConfigError(f"{path}: no samples")
    return DriveCycle(np.array(ts), np.array(cur), interpolation)


def write_drive_cycle(cycle: DriveCycle, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CYCLE_HEADER)
        for t, i in zip(cycle.t, cycle.i):
            w.writerow((repr(float(t)), repr(float(i))))
