"""Descriptor model of n cells wired in parallel.

State layout: ``w = [x, u]`` with ``x = [z_1, vc_1, ..., z_n, vc_n]`` (differential)
and ``u = [I_1, ..., I_n]`` (algebraic branch currents).  The model is

    E dw/dt = A w + theta(w),    y = H w + phi(w)

where the first ``n - 1`` algebraic rows equate the terminal voltage of cell 1
with that of cell ``j`` and the last row is Kirchhoff's current law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .cell import CellParams, cell_matrices
from .errors import ConfigError, ImpulseUnobservable, SingularA22, VoltageMismatch

KCL_TOL = 1e-9
KVL_TOL = 1e-9
SINGULAR_RTOL = 1e-12
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class PackModel:
    cells: tuple[CellParams, ...]
    e_mat: np.ndarray
    a_mat: np.ndarray
    h_mat: np.ndarray
    kvl_tol: float = KVL_TOL
    _lu: tuple = field(init=False, repr=False)
    _blocks: dict = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n
        for arr in (self.e_mat, self.a_mat, self.h_mat):
            arr.setflags(write=False)
        a, h = self.a_mat, self.h_mat
        blocks = {
            "A11": a[: 2 * n, : 2 * n],
            "A12": a[: 2 * n, 2 * n :],
            "A21": a[2 * n :, : 2 * n],
            "A22": a[2 * n :, 2 * n :],
            "Hx": h[:, : 2 * n],
            "Hu": h[:, 2 * n :],
        }
        theta_i = np.zeros(n)
        theta_i[-1] = -1.0
        blocks["theta_i"] = theta_i
        lu = lu_factor(blocks["A22"])
        object.__setattr__(self, "_lu", lu)
        # input field of the reduced ODE; constant because theta_i is
        blocks["g"] = -blocks["A12"] @ lu_solve(lu, theta_i)
        for v in blocks.values():
            v.setflags(write=False)
        object.__setattr__(self, "_blocks", blocks)

    @property
    def n(self) -> int:
        return len(self.cells)

    # block views
    @property
    def A11(self) -> np.ndarray:
        return self._blocks["A11"]

    @property
    def A12(self) -> np.ndarray:
        return self._blocks["A12"]

    @property
    def A21(self) -> np.ndarray:
        return self._blocks["A21"]

    @property
    def A22(self) -> np.ndarray:
        return self._blocks["A22"]

    @property
    def Hx(self) -> np.ndarray:
        return self._blocks["Hx"]

    @property
    def Hu(self) -> np.ndarray:
        return self._blocks["Hu"]

    @property
    def theta_i(self) -> np.ndarray:
        """Coefficient of the total current in the algebraic rows, [0, ..., 0, -1]."""
        return self._blocks["theta_i"]

    @property
    def r1(self) -> np.ndarray:
        return np.array([c.r1 for c in self.cells])

    @property
    def q(self) -> np.ndarray:
        return np.array([c.q for c in self.cells])

    @property
    def a22_det(self) -> float:
        return exact_det(self.A22)

    @property
    def a22_cond(self) -> float:
        return float(np.linalg.cond(self.A22))

    def a22_solve(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, rhs, check_finite=False)

    def soc(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[0::2]

    def vc(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[1::2]


@dataclass(frozen=True)
class PackState:
    x: np.ndarray
    u: np.ndarray
    t: float = 0.0


def pack_x(z: Sequence[float], vc: Sequence[float] | None = None) -> np.ndarray:
    """Interleave SOCs and RC voltages into the differential state vector."""
    z = np.asarray(z, dtype=float)
    vc = np.zeros_like(z) if vc is None else np.asarray(vc, dtype=float)
    if z.shape != vc.shape:
        raise ValueError("z and vc must have the same length")
    x = np.empty(2 * z.size)
    x[0::2] = z
    x[1::2] = vc
    return x


def numerical_rank(m: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.atleast_2d(m), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def exact_det(m: np.ndarray) -> float:
    """Determinant of a float matrix evaluated in exact rational arithmetic, then rounded."""
    rows = [[Fraction(float(v)) for v in row] for row in np.asarray(m)]
    size = len(rows)
    det = Fraction(1)
    for col in range(size):
        pivot = next((r for r in range(col, size) if rows[r][col] != 0), None)
        if pivot is None:
            return 0.0
        if pivot != col:
            rows[col], rows[pivot] = rows[pivot], rows[col]
            det = -det
        det *= rows[col][col]
        for r in range(col + 1, size):
            factor = rows[r][col] / rows[col][col]
            if factor:
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return float(det)


def assemble(cells: Sequence[CellParams]) -> PackModel:
    """Build E, A and H for ``len(cells)`` cells in parallel."""
    cells = tuple(cells)
    n = len(cells)
    if n < 2:
        raise ConfigError(f"a parallel pack needs at least 2 cells, got {n}")
    m = 3 * n
    e_mat = np.zeros((m, m))
    e_mat[: 2 * n, : 2 * n] = np.eye(2 * n)
    a_mat = np.zeros((m, m))
    h_mat = np.zeros((n, m))
    for k, p in enumerate(cells):
        a_bar, b_bar, d_bar = cell_matrices(p)
        a_mat[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = a_bar
        a_mat[2 * k : 2 * k + 2, 2 * n + k] = b_bar[:, 0]
        h_mat[k, 2 * k + 1] = 1.0
        h_mat[k, 2 * n + k] = d_bar
    # voltage balance rows: cell 1 against cell j
    for j in range(1, n):
        row = 2 * n + j - 1
        a_mat[row, 1] = 1.0
        a_mat[row, 2 * j + 1] = -1.0
        a_mat[row, 2 * n] = cells[0].r1
        a_mat[row, 2 * n + j] = -cells[j].r1
    a_mat[m - 1, 2 * n :] = 1.0

    a22 = a_mat[2 * n :, 2 * n :]
    det = np.linalg.det(a22)
    # relative to the Hadamard bound, so uniformly small resistances are not flagged
    hadamard = float(np.prod(np.linalg.norm(a22, axis=1)))
    if not np.isfinite(det) or abs(det) <= SINGULAR_RTOL * hadamard:
        raise SingularA22(f"A22 is singular (det = {det:g})")
    if numerical_rank(np.vstack([a22, h_mat[:, 2 * n :]])) < n:
        raise ImpulseUnobservable("rank([A22; Hu]) < n")
    return PackModel(cells, e_mat, a_mat, h_mat)


def theta_ocv(model: PackModel, x: np.ndarray) -> np.ndarray:
    """OCV(z_1) - OCV(z_j) for j = 2..n, with a trailing zero (n entries)."""
    ocv = phi(model, x)
    out = np.zeros(model.n)
    out[:-1] = ocv[0] - ocv[1:]
    return out


def theta(model: PackModel, x: np.ndarray, i_total: float) -> np.ndarray:
    n = model.n
    out = np.zeros(3 * n)
    out[2 * n :] = theta_ocv(model, x) + model.theta_i * i_total
    return out


def phi(model: PackModel, x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=float)[0::2].tolist()
    return np.array([c.ocv(zk) for c, zk in zip(model.cells, z)])


def solve_algebraic(model: PackModel, x: np.ndarray, i_total: float) -> np.ndarray:
    """Branch currents consistent with Kirchhoff's laws at differential state ``x``."""
    x = np.asarray(x, dtype=float)
    rhs = model.A21 @ x + model.theta_i * i_total + theta_ocv(model, x)
    return -model.a22_solve(rhs)


def reduced_fg(model: PackModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drift ``f(x)`` and input field ``g`` of dx/dt = f(x) + g I."""
    x = np.asarray(x, dtype=float)
    f = model.A11 @ x - model.A12 @ model.a22_solve(model.A21 @ x + theta_ocv(model, x))
    return f, model._blocks["g"]


def reduced_rhs(model: PackModel, x: np.ndarray, i_total: float) -> np.ndarray:
    f, g = reduced_fg(model, x)
    return f + g * i_total


def cell_voltages(model: PackModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-cell terminal voltages, i.e. H w + phi(w)."""
    w = np.concatenate([np.asarray(x, dtype=float), np.asarray(u, dtype=float)])
    return model.h_mat @ w + phi(model, x)


def reduced_output(model: PackModel, x: np.ndarray, i_total: float) -> float:
    """Common terminal voltage; raises ``VoltageMismatch`` if the cells disagree."""
    u = solve_algebraic(model, x, i_total)
    v = cell_voltages(model, x, u)
    spread = float(v.max() - v.min())
    if spread > model.kvl_tol:
        raise VoltageMismatch(f"cell voltages disagree by {spread:.3e} V")
    return float(v[0])


def residuals(model: PackModel, x: np.ndarray, u: np.ndarray, i_total: float) -> tuple[float, float]:
    """(|sum I_k - I|, max pairwise voltage spread)."""
    v = cell_voltages(model, x, u)
    return abs(float(np.sum(u)) - i_total), float(v.max() - v.min())


def dump_matrices(model: PackModel) -> str:
    """Row-major plain-text dump of E, A and H at full precision."""
    lines = []
    for name, mat in (("E", model.e_mat), ("A", model.a_mat), ("H", model.h_mat)):
        lines.append(f"# {name} {mat.shape[0]}x{mat.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in mat)
    return "\n".join(lines) + "\n"
