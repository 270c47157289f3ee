"""Scenario runner: simulate, optionally estimate, write CSVs and reports."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import Scenario, default_output_dir, load_scenario
from .cycle import write_drive_cycle
from .errors import NumericalError
from .observability import Verdict, analyze
from .observer import (
    ObserverGain,
    convergence_time,
    measurements_from_trajectory,
    run_observer,
    validate_gain,
    write_estimates,
)
from .pack import cell_voltages
from .sim import Trajectory, simulate, write_trajectory

log = logging.getLogger(__name__)

SOC_THRESHOLD = 0.01


def write_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _finite(v: float) -> float | None:
    return v if math.isfinite(v) else None


def plant_summary(traj: Trajectory, model) -> dict:
    """Statistics recomputable from the trajectory CSV alone."""
    kcl = np.abs(traj.u.sum(axis=1) - traj.i_total)
    v = np.array([cell_voltages(model, x, u) for x, u in zip(traj.x, traj.u)])
    loaded = np.abs(traj.i_total) > 1e-9
    same_sign = np.sign(traj.u[loaded, 0]) == np.sign(traj.u[loaded, 1:]).T
    return {
        "samples": len(traj),
        "final_soc": traj.z[-1].tolist(),
        "initial_currents_a": traj.u[0].tolist(),
        "initial_total_current_a": float(traj.i_total[0]),
        "mean_abs_current_a": np.mean(np.abs(traj.u), axis=0).tolist(),
        "sign_agreement": float(np.mean(same_sign)) if loaded.any() else None,
        "max_kcl_residual_a": float(kcl.max()),
        "max_kvl_spread_v": float(np.max(v.max(axis=1) - v.min(axis=1))),
        "soc_events": [e.__dict__ for e in traj.events],
    }


def run_scenario(sc: Scenario, out_dir: str | Path | None = None) -> dict:
    """Run one scenario and write its artefacts into ``out_dir``.

    Files: ``cycle.csv``, ``trajectory.csv``, ``summary.json`` and, with the
    observer enabled, ``observability.json``, ``validity.json``, ``estimates.csv``.
    """
    out = Path(out_dir) if out_dir is not None else default_output_dir(sc.name)
    out.mkdir(parents=True, exist_ok=True)
    model = sc.pack.model()
    warnings: list[str] = []
    summary: dict = {"scenario": sc.name, "n": sc.n, "dt_s": sc.dt_s, "horizon_s": sc.horizon_s}

    if sc.observer is not None:
        report = analyze(model, sc.x0)
        write_json(report.as_dict(), out / "observability.json")
        if report.verdict is not Verdict.OBSERVABLE:
            msg = f"pack is {report.verdict.value} at the initial state; estimates may not converge"
            log.warning(msg)
            warnings.append(msg)

    write_drive_cycle(sc.cycle, out / "cycle.csv")
    traj = simulate(model, sc.x0, sc.cycle, sc.dt_s, sc.horizon_s)
    write_trajectory(traj, out / "trajectory.csv")
    summary["plant"] = plant_summary(traj, model)

    if sc.observer is not None:
        gain = ObserverGain(sc.observer.gain)
        validity = validate_gain(model, gain, z_ref=sc.observer.z_ref)
        write_json(validity.as_dict(), out / "validity.json")
        if not validity.verdict:
            warnings.append("gain does not satisfy every sufficient convergence condition")
        if sc.dt_s > validity.max_stable_dt:
            raise NumericalError(
                f"dt_s = {sc.dt_s} exceeds the observer's RK4 stability limit "
                f"{validity.max_stable_dt:.4f} s for this gain"
            )
        est = run_observer(model, gain, sc.observer.xhat0, measurements_from_trajectory(traj))
        write_estimates(est, out / "estimates.csv")
        z_err = np.abs(est.zhat - traj.z)
        summary["observer"] = {
            "final_soc_error": z_err[-1].tolist(),
            "final_current_error_a": np.abs(est.uhat[-1] - traj.u[-1]).tolist(),
            "convergence_time_s": _finite(convergence_time(traj.times, traj.z, est.zhat, SOC_THRESHOLD)),
            "threshold": SOC_THRESHOLD,
            "gain_verdict": validity.verdict,
        }
    summary["warnings"] = warnings
    write_json(summary, out / "summary.json")
    return summary


def _run_ref(args: tuple[str, str | None]) -> dict:
    ref, out_dir = args
    return run_scenario(load_scenario(ref), out_dir)


def run_batch(refs: list[str], out_root: str | Path | None = None, jobs: int = 1) -> list[dict]:
    """Run scenarios in a worker pool; each writes into its own sub-directory."""
    tasks = []
    for ref in refs:
        name = load_scenario(ref).name
        out = None if out_root is None else str(Path(out_root) / name)
        tasks.append((ref, out))
    if jobs <= 1:
        return [_run_ref(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_ref, tasks))
