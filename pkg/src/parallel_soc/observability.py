"""Observability tests for the parallel-cell model.

Two routes are provided:

* complete observability of the descriptor system linearised at a point,
  checked with rank conditions on ``[E; C]`` and on ``[sE - F; C]`` at the
  finite generalised eigenvalues of the pencil ``(E, F)``;
* local observability of the reduced nonlinear ODE from the rank of stacked
  Lie-derivative gradients of the measured voltage.

Ranks use a relative SVD threshold, so they are invariant to row scaling.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import sympy as sp

from .errors import DerivativeUnavailable, EigSolverFailure, OrderTooHigh, UnsupportedN
from .pack import RANK_RTOL, PackModel, reduced_fg, reduced_output, solve_algebraic

MAX_LIE_ORDER = 4
PATHOLOGY_ORDER = 4


class Verdict(enum.Enum):
    OBSERVABLE = "Observable"
    UNOBSERVABLE = "Unobservable"
    INDETERMINATE = "Indeterminate"


def _rank(m: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, np.ndarray]:
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > rtol * sv[0])), sv


def _require_order(model: PackModel, order: int) -> None:
    for k, c in enumerate(model.cells, start=1):
        if not c.ocv.supports(order):
            raise DerivativeUnavailable(
                f"cell {k}: OCV curve cannot supply derivative order {order} "
                f"(max {c.ocv.max_order})"
            )


# --- linearised descriptor system --------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    f_mat: np.ndarray
    c_mat: np.ndarray
    e_mat: np.ndarray
    linearization_point: np.ndarray


def linearize(model: PackModel, wbar: Sequence[float]) -> LinearizedSystem:
    """F = A + dtheta/dw and C = H + dphi/dw at ``wbar`` (analytic OCV slopes)."""
    n = model.n
    wbar = np.asarray(wbar, dtype=float)
    if wbar.shape != (3 * n,):
        raise ValueError(f"wbar must have length {3 * n}")
    _require_order(model, 1)
    s = np.array([c.ocv.derivative(float(z), 1) for c, z in zip(model.cells, wbar[0 : 2 * n : 2])])
    f_mat = np.array(model.a_mat)
    c_mat = np.array(model.h_mat)
    for j in range(1, n):
        f_mat[2 * n + j - 1, 0] += s[0]
        f_mat[2 * n + j - 1, 2 * j] -= s[j]
    for k in range(n):
        c_mat[k, 2 * k] += s[k]
    return LinearizedSystem(f_mat, c_mat, np.array(model.e_mat), wbar)


def consistent_point(model: PackModel, x: Sequence[float], i_total: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, solve_algebraic(model, x, i_total)])


@dataclass(frozen=True)
class CObservability:
    c1: bool
    c2: bool
    c1_rank: int
    c2_results: tuple[tuple[complex, int], ...]
    eigenvalues: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.c1
        yield self.c2
        yield self


def finite_generalized_eigenvalues(e_mat: np.ndarray, f_mat: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    try:
        alpha, beta = scipy.linalg.eig(f_mat, e_mat, right=False, homogeneous_eigvals=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigSolverFailure(str(exc)) from exc
    scale = max(np.linalg.norm(f_mat), np.linalg.norm(e_mat))
    finite = np.abs(beta) > rtol * np.maximum(np.abs(alpha), scale)
    return alpha[finite] / beta[finite]


def check_c_observability(lin: LinearizedSystem, rtol: float = RANK_RTOL) -> CObservability:
    """Rank tests C.1 (fast subsystem) and C.2 (slow subsystem).

    C.2 quantifies over all complex s, but ``[sE - F; C]`` can only lose rank
    where ``sE - F`` does, i.e. at the finite generalised eigenvalues.
    """
    m = lin.f_mat.shape[0]
    c1_rank, _ = _rank(np.vstack([lin.e_mat, lin.c_mat]), rtol)
    eigs = finite_generalized_eigenvalues(lin.e_mat, lin.f_mat)
    results = []
    for s in eigs:
        r, _ = _rank(np.vstack([s * lin.e_mat - lin.f_mat, lin.c_mat.astype(complex)]), rtol)
        results.append((complex(s), r))
    c2 = all(r == m for _, r in results)
    return CObservability(c1_rank == m, c2, c1_rank, tuple(results), eigs)


# --- Lie-derivative observability --------------------------------------------


def lie_words(max_order: int) -> list[tuple[str, ...]]:
    """Words over {f, g} ordered by length: (), f, g, ff, gg, fg, gf, ..."""
    words: list[tuple[str, ...]] = [()]
    for s in range(1, max_order + 1):
        level = [w for w in itertools.product("fg", repeat=s)]
        pure = [("f",) * s, ("g",) * s]
        words.extend(pure + [w for w in level if w not in pure])
    return words


class _SymbolicLie:
    """Exact Lie-derivative gradients with OCV derivatives left as placeholders."""

    def __init__(self, model: PackModel, max_order: int):
        n = model.n
        self.n = n
        self.max_order = max_order
        self.words = lie_words(max_order)
        z = sp.symbols(f"z1:{n + 1}", real=True)
        v = sp.symbols(f"v1:{n + 1}", real=True)
        xs = [s for pair in zip(z, v) for s in pair]
        ocv_fns = [sp.Function(f"ocv{k + 1}") for k in range(n)]
        ocv = [ocv_fns[k](z[k]) for k in range(n)]
        th = [ocv[0] - ocv[j] for j in range(1, n)] + [sp.Integer(0)]

        a22_inv = np.linalg.inv(model.A22)
        abar = model.A11 - model.A12 @ a22_inv @ model.A21
        mmat = model.A12 @ a22_inv
        g_vec = model._blocks["g"]
        h_row = model.h_mat[0]
        hx, hu = h_row[: 2 * n], h_row[2 * n :]
        h_lin = hx - hu @ a22_inv @ model.A21
        h_th = hu @ a22_inv

        def num(v):
            return sp.Float(float(v), 17)

        f = [
            sum(num(abar[i, j]) * xs[j] for j in range(2 * n))
            - sum(num(mmat[i, j]) * th[j] for j in range(n))
            for i in range(2 * n)
        ]
        g = [num(val) for val in g_vec]
        h = sum(num(h_lin[j]) * xs[j] for j in range(2 * n)) - sum(
            num(h_th[j]) * th[j] for j in range(n)
        ) + ocv[0]

        fields = {"f": f, "g": g}
        cache: dict[tuple[str, ...], sp.Expr] = {(): h}
        rows = []
        for word in self.words:
            if word not in cache:
                prev = cache[word[:-1]]
                vec = fields[word[-1]]
                cache[word] = sp.expand(sum(sp.diff(prev, xs[i]) * vec[i] for i in range(2 * n)))
            rows.append([sp.diff(cache[word], xi) for xi in xs])

        # OCV derivatives up to max_order + 1 become plain symbols
        dsyms = [[sp.Symbol(f"d{k + 1}_{l}") for l in range(max_order + 2)] for k in range(n)]
        repl = {}
        for k in range(n):
            repl[ocv[k]] = dsyms[k][0]
            for l in range(1, max_order + 2):
                repl[sp.Derivative(ocv[k], (z[k], l))] = dsyms[k][l]
        # xreplace matches outermost nodes first, so derivatives win over ocv(z)
        mat = sp.Matrix(rows).xreplace(repl)
        leftovers = mat.atoms(sp.Derivative, sp.core.function.AppliedUndef)
        if leftovers:
            raise RuntimeError(f"unsubstituted OCV terms: {leftovers}")
        flat_d = [s for row in dsyms for s in row]
        self._fn = sp.lambdify([xs, flat_d], mat, modules="numpy")

    def __call__(self, model: PackModel, x0: np.ndarray) -> np.ndarray:
        d = []
        for k, c in enumerate(model.cells):
            zk = float(x0[2 * k])
            d.extend(c.ocv.derivative(zk, l) for l in range(self.max_order + 2))
        return np.array(self._fn(list(map(float, x0)), d), dtype=float)


@functools.lru_cache(maxsize=32)
def _symbolic_lie(model: PackModel, max_order: int) -> _SymbolicLie:
    return _SymbolicLie(model, max_order)


def _fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    grad = np.empty(x.size)
    for i in range(x.size):
        step = np.zeros(x.size)
        step[i] = eps[i]
        grad[i] = (fun(x + step) - fun(x - step)) / (2 * eps[i])
    return grad


def _fd_lie_matrix(model: PackModel, x0: np.ndarray, max_order: int, eps: float) -> np.ndarray:
    n = model.n
    # per-coordinate steps: SOC and RC voltage live on different scales
    steps = np.tile([eps, eps], n)
    g_vec = model._blocks["g"]

    def h(x):
        return reduced_output(model, x, 0.0)

    def field_of(name):
        if name == "f":
            return lambda x: reduced_fg(model, x)[0]
        return lambda x: g_vec

    @functools.lru_cache(maxsize=None)
    def lie(word: tuple[str, ...]):
        if not word:
            return h
        inner = lie(word[:-1])
        vec = field_of(word[-1])
        return lambda x: float(_fd_gradient(inner, x, steps) @ vec(x))

    return np.array([_fd_gradient(lie(w), x0, steps) for w in lie_words(max_order)])


def lie_observability_matrix(
    model: PackModel,
    x0: Sequence[float],
    max_order: int = 2,
    method: str = "symbolic",
    fd_step: float = 1e-3,
) -> np.ndarray:
    """Stack d L_w h(x0) over all words ``w`` in {f, g} of length <= ``max_order``.

    ``h`` is the measured terminal voltage of the reduced model (current term
    removed).  ``method="symbolic"`` differentiates exactly and plugs in the
    OCV derivatives; ``method="fd"`` nests central differences.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if max_order > MAX_LIE_ORDER:
        raise OrderTooHigh(f"max_order {max_order} exceeds the supported {MAX_LIE_ORDER}")
    _require_order(model, max_order + 1)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * model.n,):
        raise ValueError(f"x0 must have length {2 * model.n}")
    if method == "symbolic":
        return _symbolic_lie(model, max_order)(model, x0)
    if method == "fd":
        return _fd_lie_matrix(model, x0, max_order, fd_step)
    raise ValueError(f"unknown method {method!r}")


def lie_rank(model: PackModel, x0, max_order: int = 2, method: str = "symbolic") -> tuple[int, np.ndarray]:
    return _rank(lie_observability_matrix(model, x0, max_order, method))


# --- two-cell pathologies ----------------------------------------------------


def check_pathologies(
    model: PackModel,
    x0: Sequence[float],
    rtol: float = 1e-9,
    zero_tol: float = 1e-12,
    max_derivative: int = PATHOLOGY_ORDER,
) -> list[int]:
    """Which of the three two-cell degeneracy conditions hold at ``x0``.

    1. equal RC time constants, equal r1*q and equal r1*c;
    2. equal OCV value and slope at the two SOCs;
    3. some OCV derivative of order 1..``max_derivative`` vanishes at a cell's SOC
       (the infinite family is only checked up to that order).
    """
    if model.n != 2:
        raise UnsupportedN("pathology conditions are stated for two cells; use the rank test")
    c1, c2 = model.cells
    z1, z2 = float(x0[0]), float(x0[2])

    def close(a, b):
        return abs(a - b) <= rtol * max(abs(a), abs(b))

    hits = []
    if close(c1.tau, c2.tau) and close(c1.r1 * c1.q, c2.r1 * c2.q) and close(c1.r1 * c1.c, c2.r1 * c2.c):
        hits.append(1)
    if close(c1.ocv(z1), c2.ocv(z2)) and abs(c1.ocv.derivative(z1, 1) - c2.ocv.derivative(z2, 1)) <= max(
        rtol * max(abs(c1.ocv.derivative(z1, 1)), abs(c2.ocv.derivative(z2, 1))), zero_tol
    ):
        hits.append(2)
    for cell, z in ((c1, z1), (c2, z2)):
        top = max_derivative if cell.ocv.max_order is None else min(max_derivative, cell.ocv.max_order)
        if any(abs(cell.ocv.derivative(z, l)) <= zero_tol for l in range(1, top + 1)):
            hits.append(3)
            break
    return hits


# --- combined report ---------------------------------------------------------


@dataclass(frozen=True)
class ObservabilityReport:
    c1_rank: int | None
    c2_results: tuple[tuple[complex, int], ...]
    lie_rank: int | None
    lie_singular_values: np.ndarray
    verdict: Verdict
    triggered_conditions: tuple[int, ...]
    linear_verdict: Verdict | None = None
    lie_verdict: Verdict | None = None
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "c1_rank": self.c1_rank,
            "c2_results": [
                {"s_real": s.real, "s_imag": s.imag, "rank": r} for s, r in self.c2_results
            ],
            "lie_rank": self.lie_rank,
            "lie_singular_values": [float(v) for v in self.lie_singular_values],
            "linear_verdict": self.linear_verdict.value if self.linear_verdict else None,
            "lie_verdict": self.lie_verdict.value if self.lie_verdict else None,
            "verdict": self.verdict.value,
            "triggered_conditions": list(self.triggered_conditions),
            "notes": list(self.notes),
        }


def analyze(model: PackModel, x0: Sequence[float], test: str = "both", max_order: int = 2) -> ObservabilityReport:
    """Run the linearised and/or Lie-derivative test at ``x0``.

    With ``test="both"`` the verdict is Observable if either test certifies
    observability (the linearised test is only sufficient).
    """
    if test not in ("both", "linear", "lie"):
        raise ValueError("test must be 'both', 'linear' or 'lie'")
    n = model.n
    x0 = np.asarray(x0, dtype=float)
    notes: list[str] = []
    lin_v = lie_v = None
    c1_rank = None
    c2_results: tuple = ()
    lrank = None
    sv = np.array([])

    if test in ("both", "linear"):
        try:
            res = check_c_observability(linearize(model, consistent_point(model, x0)))
            c1_rank, c2_results = res.c1_rank, res.c2_results
            lin_v = Verdict.OBSERVABLE if (res.c1 and res.c2) else Verdict.UNOBSERVABLE
        except EigSolverFailure as exc:
            notes.append(f"generalised eigenvalue solver failed: {exc}")
            lin_v = Verdict.INDETERMINATE
    if test in ("both", "lie"):
        try:
            lrank, sv = lie_rank(model, x0, max_order)
            lie_v = Verdict.OBSERVABLE if lrank == 2 * n else Verdict.UNOBSERVABLE
        except DerivativeUnavailable as exc:
            notes.append(str(exc))
            lie_v = Verdict.INDETERMINATE

    triggered: list[int] = []
    if n == 2:
        triggered = check_pathologies(model, x0)
        notes.append(f"condition 3 checked for OCV derivative orders 1..{PATHOLOGY_ORDER} only")
    else:
        notes.append("pathology conditions apply to two cells; numerical rank only")

    verdicts = [v for v in (lin_v, lie_v) if v is not None]
    if Verdict.OBSERVABLE in verdicts:
        verdict = Verdict.OBSERVABLE
    elif Verdict.INDETERMINATE in verdicts:
        verdict = Verdict.INDETERMINATE
    else:
        verdict = Verdict.UNOBSERVABLE
    return ObservabilityReport(c1_rank, c2_results, lrank, sv, verdict, tuple(triggered), lin_v, lie_v, tuple(notes))
