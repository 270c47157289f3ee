"""Descriptor observer with linear output-error injection.

The observer copies the plant model and injects ``K (y - y_hat)`` into all
3n rows, so the algebraic rows solve ``G22 u_hat = ...`` with
``G22 = A22 - K_u h_u``.  Only one voltage is measured: the terminal voltage,
realised as output row 1 (cell 1's voltage, equal to every other cell's by
Kirchhoff's voltage law).

Gain validity follows the Lipschitz-observer argument: impulse observability,
a stable reduced error matrix, and a frequency-domain margin that must exceed
the Lipschitz constant of the remaining nonlinearity.  Because the SOC rows of
``A`` have no linear output coupling, the validity checks split the OCV map
into its tangent at a reference SOC (kept in the linear part) and the
remainder (treated as the Lipschitz nonlinearity).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, NonFinite, SingularG22
from .pack import PackModel, numerical_rank, phi, theta_ocv
from .sim import Trajectory, rk4_step

DEFAULT_SOC_BOX = (0.05, 0.95)
DEFAULT_VC_BOX = (-0.2, 0.2)
G22_RTOL = 1e-12
# RK4 stability interval on the negative real axis
RK4_REAL_LIMIT = 2.785

# gain used for the two-cell simulation study
STUDY_GAIN = (-30.0, -30.0, -20.0, 2.0, 4.0, -20.0)


@dataclass(frozen=True, eq=False)
class ObserverGain:
    k_vec: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k_vec, dtype=float).ravel()
        if k.size % 3 or not np.all(np.isfinite(k)):
            raise ConfigError("observer gain must be a finite vector of length 3n")
        k.setflags(write=False)
        object.__setattr__(self, "k_vec", k)

    @property
    def n(self) -> int:
        return self.k_vec.size // 3

    @property
    def k_x(self) -> np.ndarray:
        return self.k_vec[: 2 * self.n]

    @property
    def k_u(self) -> np.ndarray:
        return self.k_vec[2 * self.n :]

    def scaled(self, factor: float) -> "ObserverGain":
        return ObserverGain(self.k_vec * factor)

    def check(self, model: PackModel) -> None:
        if self.n != model.n:
            raise ConfigError(f"gain has length {self.k_vec.size}, pack needs {3 * model.n}")


def measured_row(model: PackModel) -> np.ndarray:
    """Linear part of the measured voltage as a 3n row (row 1 of H)."""
    return model.h_mat[0]


def phi_meas(model: PackModel, x: np.ndarray) -> float:
    return model.cells[0].ocv(x[0])


def _theta_u(model: PackModel, x: np.ndarray, i_total: float) -> np.ndarray:
    return theta_ocv(model, x) + model.theta_i * i_total


def ocv_tangent(model: PackModel, z_ref: Sequence[float] | None) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of theta and of the measured phi with respect to w at SOC ``z_ref``.

    ``z_ref=None`` gives zeros, i.e. the untouched A/H split.
    """
    n = model.n
    d_theta = np.zeros((3 * n, 3 * n))
    d_phi = np.zeros(3 * n)
    if z_ref is None:
        return d_theta, d_phi
    z_ref = np.asarray(z_ref, dtype=float)
    s = np.array([c.ocv.derivative(zk, 1) for c, zk in zip(model.cells, z_ref)])
    for j in range(1, n):
        d_theta[2 * n + j - 1, 0] = s[0]
        d_theta[2 * n + j - 1, 2 * j] = -s[j]
    d_phi[0] = s[0]
    return d_theta, d_phi


@dataclass(frozen=True, eq=False)
class ErrorMatrices:
    G: np.ndarray
    G11: np.ndarray
    G12: np.ndarray
    G21: np.ndarray
    G22: np.ndarray
    g_tilde: np.ndarray
    eigs: np.ndarray
    z_ref: tuple[float, ...] | None


def build_error_matrices(
    model: PackModel, gain: ObserverGain, z_ref: Sequence[float] | None = None
) -> ErrorMatrices:
    """G = A - K H_meas, its 2n/n partition and the reduced matrix G~.

    With ``z_ref`` the OCV tangent at that SOC is added to A and H_meas first.
    """
    gain.check(model)
    n = model.n
    d_theta, d_phi = ocv_tangent(model, z_ref)
    a_lin = model.a_mat + d_theta
    h_lin = measured_row(model) + d_phi
    G = a_lin - np.outer(gain.k_vec, h_lin)
    G11, G12 = G[: 2 * n, : 2 * n], G[: 2 * n, 2 * n :]
    G21, G22 = G[2 * n :, : 2 * n], G[2 * n :, 2 * n :]
    det = np.linalg.det(G22)
    if not np.isfinite(det) or abs(det) <= G22_RTOL * max(np.linalg.norm(G22), 1.0) ** n:
        raise SingularG22(f"G22 = A22 - K_u H_u is singular (det = {det:g})")
    g_tilde = G11 - G12 @ np.linalg.solve(G22, G21)
    eigs = np.linalg.eigvals(g_tilde)
    ref = None if z_ref is None else tuple(float(v) for v in z_ref)
    return ErrorMatrices(G, G11, G12, G21, G22, g_tilde, eigs, ref)


@dataclass(frozen=True)
class SocBox:
    soc: tuple[float, float] = DEFAULT_SOC_BOX
    vc: tuple[float, float] = DEFAULT_VC_BOX

    def __post_init__(self):
        lo, hi = self.soc
        if not (0.0 <= lo < hi <= 1.0):
            raise ConfigError("SOC box must satisfy 0 <= lo < hi <= 1")
        if not self.vc[0] < self.vc[1]:
            raise ConfigError("v_c box must satisfy lo < hi")

    @property
    def center(self) -> float:
        return 0.5 * (self.soc[0] + self.soc[1])

    def sample(self, n_cells: int, n_samples: int, seed: int) -> np.ndarray:
        # row-major draws: the first m rows do not depend on n_samples
        raw = np.random.default_rng(seed).uniform(size=(n_samples, 2 * n_cells))
        lo = np.tile([self.soc[0], self.vc[0]], n_cells)
        hi = np.tile([self.soc[1], self.vc[1]], n_cells)
        return lo + raw * (hi - lo)


class _LipschitzMap:
    """The aggregated nonlinearity of the error dynamics and its Jacobian in x."""

    def __init__(self, model: PackModel, gain: ObserverGain, z_ref):
        self.model = model
        em = build_error_matrices(model, gain, z_ref)
        n = model.n
        self.M = em.G12 @ np.linalg.inv(em.G22)
        self.phi_coef = self.M @ gain.k_u - gain.k_x
        d_theta, d_phi = ocv_tangent(model, z_ref)
        self.t_theta = d_theta[2 * n :, : 2 * n]
        self.t_phi = d_phi[: 2 * n]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        th = theta_ocv(self.model, x) - self.t_theta @ x
        ph = phi_meas(self.model, x) - self.t_phi @ x
        return -self.M @ th + self.phi_coef * ph

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        model = self.model
        n = model.n
        s = np.array([c.ocv.derivative(zk, 1) for c, zk in zip(model.cells, x[0::2])])
        d_th = np.zeros((n, 2 * n))
        for j in range(1, n):
            d_th[j - 1, 0] = s[0]
            d_th[j - 1, 2 * j] = -s[j]
        d_ph = np.zeros(2 * n)
        d_ph[0] = s[0]
        return -self.M @ (d_th - self.t_theta) + np.outer(self.phi_coef, d_ph - self.t_phi)


def estimate_lipschitz(
    model: PackModel,
    gain: ObserverGain,
    region: SocBox | None = None,
    n_samples: int = 2000,
    seed: int = 0,
    z_ref: Sequence[float] | None = None,
) -> float:
    """Sampled Lipschitz constant of the error-dynamics nonlinearity over ``region``.

    Takes the larger of the secant estimate over consecutive sample pairs and
    the largest Jacobian spectral norm at the samples.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    region = region or SocBox()
    fmap = _LipschitzMap(model, gain, z_ref)
    pts = region.sample(model.n, n_samples, seed)
    vals = np.array([fmap(p) for p in pts])
    dx = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    df = np.linalg.norm(np.diff(vals, axis=0), axis=1)
    secant = float(np.max(df / dx))
    grad = max(float(np.linalg.norm(fmap.jacobian(p), 2)) for p in pts)
    return max(secant, grad)


def default_omega_grid(points: int = 2000, lo: float = 1e-4, hi: float = 1e4) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(hi), points)])


def spectral_profile(
    model: PackModel,
    gain: ObserverGain,
    omega_grid: np.ndarray | None = None,
    z_ref: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(omega, sigma_min(G - jwI), min_i |lambda_i(G) - jw|) over the grid."""
    omega = default_omega_grid() if omega_grid is None else np.asarray(omega_grid, dtype=float)
    if omega.size == 0 or np.any(omega < 0):
        raise ValueError("omega grid must be non-empty and non-negative")
    G = build_error_matrices(model, gain, z_ref).G
    eye = np.eye(G.shape[0])
    stack = G[None, :, :] - 1j * omega[:, None, None] * eye[None, :, :]
    sigma = np.linalg.svd(stack, compute_uv=False)[:, -1]
    lam = np.linalg.eigvals(G)
    eig_dist = np.min(np.abs(lam[None, :] - 1j * omega[:, None]), axis=1)
    return omega, sigma, eig_dist


def check_spectral_condition(
    model: PackModel,
    gain: ObserverGain,
    gamma: float,
    omega_grid: np.ndarray | None = None,
    z_ref: Sequence[float] | None = None,
) -> float:
    """min over the grid of sigma_min(G - jwI) minus ``gamma``; positive means satisfied."""
    _, sigma, _ = spectral_profile(model, gain, omega_grid, z_ref)
    return float(sigma.min() - gamma)


@dataclass(frozen=True)
class GainValidityReport:
    impulse_obs: bool
    g_tilde_eigs: np.ndarray
    g_tilde_stable: bool
    gamma_hat: float
    spectral_margin: float
    eig_margin: float
    omega_at_min: float
    g22_cond: float
    z_ref: tuple[float, ...] | None
    unshifted_eigs: np.ndarray

    @property
    def max_stable_dt(self) -> float:
        """Largest RK4 step that keeps the fastest error mode stable (real-axis bound)."""
        fastest = float(np.max(np.abs(self.g_tilde_eigs)))
        return RK4_REAL_LIMIT / fastest if fastest > 0 else math.inf

    @property
    def verdict(self) -> bool:
        return self.impulse_obs and self.g_tilde_stable and self.spectral_margin > 0

    def as_dict(self) -> dict:
        def cplx(v):
            return [[float(e.real), float(e.imag)] for e in v]

        return {
            "impulse_observable": self.impulse_obs,
            "g_tilde_eigs": cplx(self.g_tilde_eigs),
            "g_tilde_stable": self.g_tilde_stable,
            "gamma_hat": self.gamma_hat,
            "spectral_margin_sigma_min": self.spectral_margin,
            "spectral_margin_eigenvalue": self.eig_margin,
            "omega_at_min": self.omega_at_min,
            "g22_condition": self.g22_cond,
            "linearization_soc": list(self.z_ref) if self.z_ref is not None else None,
            "unshifted_g_tilde_eigs": cplx(self.unshifted_eigs),
            "max_stable_dt_s": self.max_stable_dt if math.isfinite(self.max_stable_dt) else None,
            "verdict": self.verdict,
        }


def validate_gain(
    model: PackModel,
    gain: ObserverGain,
    z_ref: Sequence[float] | None = None,
    region: SocBox | None = None,
    n_samples: int = 2000,
    seed: int = 0,
    omega_grid: np.ndarray | None = None,
) -> GainValidityReport:
    """Evaluate the convergence conditions for ``gain``.

    The OCV tangent is taken at ``z_ref`` (default: centre of the SOC box).
    """
    gain.check(model)
    region = region or SocBox()
    if z_ref is None:
        z_ref = [region.center] * model.n
    n = model.n
    impulse = numerical_rank(np.vstack([model.A22, model.Hu])) == n
    em = build_error_matrices(model, gain, z_ref)
    raw = build_error_matrices(model, gain, None)
    gamma = estimate_lipschitz(model, gain, region, n_samples, seed, z_ref)
    omega, sigma, eig_dist = spectral_profile(model, gain, omega_grid, z_ref)
    k = int(np.argmin(sigma))
    return GainValidityReport(
        impulse_obs=impulse,
        g_tilde_eigs=em.eigs,
        g_tilde_stable=bool(np.all(em.eigs.real < 0)),
        gamma_hat=gamma,
        spectral_margin=float(sigma[k] - gamma),
        eig_margin=float(eig_dist.min() - gamma),
        omega_at_min=float(omega[k]),
        g22_cond=float(np.linalg.cond(em.G22)),
        z_ref=em.z_ref,
        unshifted_eigs=raw.eigs,
    )


def sweep_gain_scale(model: PackModel, gain: ObserverGain, scales: Iterable[float], **kwargs) -> list[dict]:
    """Validity report for scalar multiples of ``gain``."""
    rows = []
    for s in scales:
        try:
            rep = validate_gain(model, gain.scaled(s), **kwargs)
            rows.append({"scale": float(s), **rep.as_dict()})
        except SingularG22 as exc:
            rows.append({"scale": float(s), "verdict": False, "error": str(exc)})
    return rows


# --- estimation -------------------------------------------------------------


def _g22(model: PackModel, gain: ObserverGain) -> np.ndarray:
    return model.A22 - np.outer(gain.k_u, measured_row(model)[2 * model.n :])


def observer_algebraic(model: PackModel, gain: ObserverGain, xhat: np.ndarray, y_meas: float, i_total: float):
    """(u_hat, y_hat) from the algebraic observer rows at ``xhat``."""
    n = model.n
    h = measured_row(model)
    h_x, h_u = h[: 2 * n], h[2 * n :]
    g22 = _g22(model, gain)
    rhs = -model.A21 @ xhat - _theta_u(model, xhat, i_total) - gain.k_u * (
        y_meas - h_x @ xhat - phi_meas(model, xhat)
    )
    try:
        uhat = np.linalg.solve(g22, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularG22(str(exc)) from exc
    yhat = float(h_x @ xhat + h_u @ uhat + phi_meas(model, xhat))
    return uhat, yhat


def observer_step(
    model: PackModel,
    gain: ObserverGain,
    xhat: np.ndarray,
    y_meas: float,
    i_total: float,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Advance the estimate by ``dt``; returns (xhat_next, u_hat, y_hat) with u_hat, y_hat at the start.

    The innovation y - y_hat is computed at the start of the step and held
    (together with the current) over the RK4 stages.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    xhat = np.asarray(xhat, dtype=float)
    uhat, yhat = observer_algebraic(model, gain, xhat, y_meas, i_total)
    nu = y_meas - yhat
    inj_u = gain.k_u * nu
    inj_x = gain.k_x * nu
    base = model.theta_i * i_total + inj_u

    def rhs(_t, x):
        u = -model.a22_solve(model.A21 @ x + theta_ocv(model, x) + base)
        return model.A11 @ x + model.A12 @ u + inj_x

    nxt = rk4_step(rhs, 0.0, xhat, dt)
    if not np.all(np.isfinite(nxt)):
        raise NonFinite("observer state became non-finite")
    return nxt, uhat, yhat


@dataclass(frozen=True, eq=False)
class EstimateTrajectory:
    times: np.ndarray
    xhat: np.ndarray
    uhat: np.ndarray
    yhat: np.ndarray
    innovation: np.ndarray
    gaps: tuple[tuple[float, float], ...] = field(default=())

    @property
    def n(self) -> int:
        return self.uhat.shape[1]

    @property
    def zhat(self) -> np.ndarray:
        return self.xhat[:, 0::2]

    @property
    def vchat(self) -> np.ndarray:
        return self.xhat[:, 1::2]

    def __len__(self) -> int:
        return self.times.size


def measurements_from_trajectory(traj: Trajectory):
    """Measurement stream (t, terminal voltage, total current) of a simulated plant."""
    return zip(traj.times.tolist(), traj.terminal_voltage.tolist(), traj.i_total.tolist())


def run_observer(
    model: PackModel,
    gain: ObserverGain,
    xhat0,
    measurements: Iterable[tuple[float, float, float]],
    dt_nominal: float | None = None,
    gap_factor: float = 1.5,
) -> EstimateTrajectory:
    """Replay an ordered measurement stream through the observer.

    An interval longer than ``gap_factor * dt_nominal`` (default nominal step:
    the first interval) is bridged by nominal-size steps that hold the last
    measurement, and recorded in ``gaps``.
    """
    gain.check(model)
    x = np.array(xhat0, dtype=float)
    if x.shape != (2 * model.n,):
        raise ConfigError(f"xhat0 must have length {2 * model.n}")
    ts, xs, us, ys, nus = [], [], [], [], []
    gaps: list[tuple[float, float]] = []
    prev = None
    for t, y, i in measurements:
        t, y, i = float(t), float(y), float(i)
        if prev is not None:
            tp, yp, ip = prev
            h = t - tp
            if h <= 0:
                raise ConfigError(f"measurement timestamps must increase ({t!r} after {tp!r})")
            if dt_nominal is None:
                dt_nominal = h
            if h > gap_factor * dt_nominal:
                gaps.append((tp, t))
                sub = int(math.ceil(h / dt_nominal - 1e-9))
                for _ in range(sub):
                    x, _, _ = observer_step(model, gain, x, yp, ip, h / sub)
            else:
                x, _, _ = observer_step(model, gain, x, yp, ip, h)
        uhat, yhat = observer_algebraic(model, gain, x, y, i)
        ts.append(t)
        xs.append(x.copy())
        us.append(uhat)
        ys.append(yhat)
        nus.append(y - yhat)
        prev = (t, y, i)
    if not ts:
        raise ConfigError("empty measurement stream")
    return EstimateTrajectory(
        np.array(ts), np.array(xs), np.array(us), np.array(ys), np.array(nus), tuple(gaps)
    )


def estimate_header(n: int) -> list[str]:
    return (
        ["t_s"]
        + [f"z_hat_{k}" for k in range(1, n + 1)]
        + [f"vc_hat_{k}" for k in range(1, n + 1)]
        + [f"i_hat_{k}" for k in range(1, n + 1)]
        + ["y_hat", "innovation"]
    )


def write_estimates(est: EstimateTrajectory, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(estimate_header(est.n))
        for k in range(len(est)):
            row = [est.times[k], *est.zhat[k], *est.vchat[k], *est.uhat[k], est.yhat[k], est.innovation[k]]
            w.writerow([repr(float(v)) for v in row])


def convergence_time(times: np.ndarray, z_true: np.ndarray, z_hat: np.ndarray, threshold: float = 0.01) -> float:
    """First time after which max_k |z_hat_k - z_k| stays below ``threshold``; inf if never."""
    err = np.max(np.abs(np.asarray(z_hat) - np.asarray(z_true)), axis=1)
    bad = np.flatnonzero(err >= threshold)
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == len(times) - 1:
        return math.inf
    return float(times[bad[-1] + 1])
