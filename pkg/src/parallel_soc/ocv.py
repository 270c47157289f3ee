"""Open-circuit-voltage curves as functions of state of charge.

Two representations are supported: a polynomial in ``z`` and a lookup
table with spline interpolation.  Both expose ``derivative(z, order)`` so the
observability tools can ask for higher OCV derivatives; a table curve only
answers up to the smoothness of its interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline, PchipInterpolator, make_interp_spline

from .errors import ConfigError, DerivativeUnavailable

# Fitted to a generic NMC/graphite discharge curve; strictly increasing on
# [0, 1] (minimum slope ~0.46 V near z = 0.27), spans 3.00 V to 4.20 V.
DEFAULT_COEFFS = (
    3.0011,
    7.9858,
    -48.8354,
    168.6795,
    -338.083,
    397.9739,
    -253.8152,
    67.2947,
)

MONOTONE_SAMPLES = 1001

# highest derivative order each table interpolant answers
_TABLE_ORDERS = {"linear": 0, "pchip": 1, "cubic": 3}


class OcvCurve:
    """Common interface; subclasses implement ``_eval``."""

    max_order: int | None = None  # None means unlimited

    def __call__(self, z):
        return self.derivative(z, 0)

    def derivative(self, z, order: int = 1):
        if order < 0:
            raise ValueError("derivative order must be >= 0")
        if self.max_order is not None and order > self.max_order:
            raise DerivativeUnavailable(
                f"{type(self).__name__} provides derivatives up to order "
                f"{self.max_order}, requested {order}"
            )
        if isinstance(z, float):
            return self._scalar(z, order)
        out = self._eval(np.asarray(z, dtype=float), order)
        return float(out) if np.ndim(out) == 0 else out

    def _scalar(self, z: float, order: int) -> float:
        return float(self._eval(np.asarray(z), order))

    def _eval(self, z: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def supports(self, order: int) -> bool:
        return self.max_order is None or order <= self.max_order

    def check_monotone(self, samples: int = MONOTONE_SAMPLES) -> None:
        zs = np.linspace(0.0, 1.0, samples)
        v = self.derivative(zs, 0)
        if not np.all(np.diff(v) > 0):
            raise ConfigError("OCV curve is not strictly increasing on [0, 1]")
        if self.supports(1) and not np.all(self.derivative(zs, 1) > 0):
            raise ConfigError("OCV curve has non-positive slope on [0, 1]")

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class PolyOcv(OcvCurve):
    """OCV(z) = sum_i coeffs[i] * z**i."""

    coeffs: tuple[float, ...]
    monotone: bool = True
    _derivs: list = field(init=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise ConfigError("polynomial OCV needs a non-empty list of finite coefficients")
        object.__setattr__(self, "coeffs", tuple(float(x) for x in c))
        object.__setattr__(self, "_derivs", [c])
        if self.monotone:
            self.check_monotone()

    def _coeffs(self, order: int) -> np.ndarray:
        while len(self._derivs) <= order:
            self._derivs.append(P.polyder(self._derivs[-1]))
        return self._derivs[order]

    def _eval(self, z, order):
        return P.polyval(z, self._coeffs(order))

    def _scalar(self, z, order):
        acc = 0.0
        for c in self._coeffs(order).tolist()[::-1]:
            acc = acc * z + c
        return acc

    def to_config(self) -> dict:
        return {"kind": "poly", "coeffs": list(self.coeffs)}


@dataclass(frozen=True, eq=False)
class TableOcv(OcvCurve):
    """Lookup-table OCV with ``linear``, ``pchip`` or ``cubic`` interpolation."""

    z: tuple[float, ...]
    v: tuple[float, ...]
    interp: str = "pchip"
    monotone: bool = True
    _spline: object = field(init=False, repr=False)
    _deriv_cache: dict = field(init=False, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if z.ndim != 1 or z.shape != v.shape or z.size < 2:
            raise ConfigError("table OCV needs equal-length z and v arrays with >= 2 points")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(v))):
            raise ConfigError("table OCV contains non-finite values")
        if not np.all(np.diff(z) > 0):
            raise ConfigError("table OCV z grid must be strictly increasing")
        if self.interp not in _TABLE_ORDERS:
            raise ConfigError(f"unknown OCV interpolation {self.interp!r}")
        if self.interp == "linear":
            spline = make_interp_spline(z, v, k=1)
        elif self.interp == "pchip":
            spline = PchipInterpolator(z, v, extrapolate=True)
        else:
            spline = CubicSpline(z, v, bc_type="not-a-knot", extrapolate=True)
        object.__setattr__(self, "z", tuple(z.tolist()))
        object.__setattr__(self, "v", tuple(v.tolist()))
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_deriv_cache", {0: spline})
        if self.monotone:
            self.check_monotone()

    @property
    def max_order(self) -> int:  # type: ignore[override]
        return _TABLE_ORDERS[self.interp]

    def _eval(self, z, order):
        if order not in self._deriv_cache:
            self._deriv_cache[order] = self._spline.derivative(order)
        return self._deriv_cache[order](z)

    def to_config(self) -> dict:
        return {"kind": "table", "z": list(self.z), "v": list(self.v), "interp": self.interp}


def default_ocv() -> PolyOcv:
    return PolyOcv(DEFAULT_COEFFS)


def flat_ocv(value: float = 3.7) -> PolyOcv:
    """Constant OCV; useful for demonstrating loss of observability."""
    return PolyOcv((value,), monotone=False)


def ocv_from_config(block: dict | None) -> OcvCurve:
    """Build a curve from ``{kind: poly, coeffs: [...]}`` or ``{kind: table, z, v, interp}``."""
    if block is None:
        return default_ocv()
    if not isinstance(block, dict):
        raise ConfigError("ocv block must be a mapping")
    kind = block.get("kind")
    monotone = bool(block.get("monotone", True))
    if kind == "poly":
        if "coeffs" not in block:
            raise ConfigError("ocv block of kind 'poly' is missing 'coeffs'")
        return PolyOcv(tuple(block["coeffs"]), monotone=monotone)
    if kind == "table":
        for key in ("z", "v"):
            if key not in block:
                raise ConfigError(f"ocv block of kind 'table' is missing {key!r}")
        return TableOcv(
            tuple(block["z"]), tuple(block["v"]), block.get("interp", "pchip"), monotone=monotone
        )
    raise ConfigError(f"unknown ocv kind {kind!r} (expected 'poly' or 'table')")
