"""Command line entry point: ``parallel-soc <subcommand>``.

Exit codes: 0 success, 2 configuration/IO error, 3 numerical failure,
4 observability or gain-validity warning under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import bundled_scenarios, load_pack, load_scenario, parse_vector
from .cycle import load_drive_cycle, synth_udds_like
from .errors import ConfigError, CycleGap, NumericalError
from .observability import Verdict, analyze
from .observer import (
    ObserverGain,
    convergence_time,
    measurements_from_trajectory,
    run_observer,
    sweep_gain_scale,
    validate_gain,
    write_estimates,
)
from .pack import dump_matrices, pack_x
from .scenarios import run_batch, run_scenario
from .sim import simulate, write_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STRICT = 0, 2, 3, 4

log = logging.getLogger("parallel_soc")


class StrictFailure(Exception):
    pass


def _emit(data: dict, out: str | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _cycle(args, horizon_hint: float | None = None):
    if args.cycle:
        return load_drive_cycle(args.cycle, args.interpolation)
    duration = args.t_end or horizon_hint or 1400.0
    return synth_udds_like(args.amplitude, duration, args.seed)


def _x0(args, pack) -> np.ndarray:
    x = parse_vector(getattr(args, "x0", None), 2 * len(pack.cells), "--x0")
    return pack_x(pack.z0) if x is None else x


def cmd_simulate(args) -> int:
    pack = load_pack(args.pack)
    cycle = _cycle(args)
    traj = simulate(pack.model(), _x0(args, pack), cycle, args.dt, args.t_end)
    write_trajectory(traj, args.out)
    print(f"wrote {len(traj)} samples to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    pack = load_pack(args.pack)
    model = pack.model()
    n = model.n
    gain = ObserverGain(parse_vector(args.gain, 3 * n, "--gain"))
    x0 = _x0(args, pack)
    xhat0 = parse_vector(args.xhat0, 2 * n, "--xhat0")
    if xhat0 is None:
        raise ConfigError("--xhat0 is required")
    report = validate_gain(model, gain)
    obs = analyze(model, x0)
    sidecar = Path(args.out).with_suffix(".validity.json")
    sidecar.write_text(
        json.dumps({"gain": report.as_dict(), "observability": obs.as_dict()}, indent=2, sort_keys=True) + "\n"
    )
    if args.strict and (not report.verdict or obs.verdict is not Verdict.OBSERVABLE):
        raise StrictFailure(f"gain verdict {report.verdict}, observability {obs.verdict.value}")

    traj = None
    if args.measurements:
        meas = _load_measurements(args.measurements)
    else:
        traj = simulate(model, x0, _cycle(args), args.dt, args.t_end)
        meas = list(measurements_from_trajectory(traj))
    est = run_observer(model, gain, xhat0, meas)
    write_estimates(est, args.out)
    msg = f"wrote {len(est)} estimates to {args.out} (validity report: {sidecar})"
    if traj is not None:
        tc = convergence_time(traj.times, traj.z, est.zhat)
        msg += f"; SOC convergence time {tc:g} s"
    print(msg)
    return EXIT_OK


def _load_measurements(path: str) -> list[tuple[float, float, float]]:
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        expected = ["t_s", "i_a", "v_v"]
        missing = [c for c in expected if c not in header]
        if missing:
            raise ConfigError(f"{path}:1: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in expected]
        for lineno, row in enumerate(reader, start=2):
            try:
                t, i, v = (float(row[k]) for k in idx)
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{lineno}: malformed row") from None
            rows.append((t, v, i))
    return rows


def cmd_analyze(args) -> int:
    pack = load_pack(args.pack)
    model = pack.model()
    rep = analyze(model, _x0(args, pack), test=args.test, max_order=args.max_order)
    data = rep.as_dict()
    data["a22_condition"] = model.a22_cond
    if args.dump_matrices:
        Path(args.dump_matrices).write_text(dump_matrices(model))
    _emit(data, args.out)
    if args.strict and rep.verdict is not Verdict.OBSERVABLE:
        raise StrictFailure(f"observability verdict: {rep.verdict.value}")
    return EXIT_OK


def cmd_validate_gain(args) -> int:
    pack = load_pack(args.pack)
    model = pack.model()
    n = model.n
    gain = ObserverGain(parse_vector(args.gain, 3 * n, "--gain"))
    z_ref = parse_vector(args.z_ref, n, "--z-ref")
    rep = validate_gain(model, gain, z_ref=z_ref, n_samples=args.samples, seed=args.seed)
    data = rep.as_dict()
    if args.sweep:
        data["sweep"] = sweep_gain_scale(
            model, gain, parse_vector(args.sweep), z_ref=z_ref, n_samples=args.samples, seed=args.seed
        )
    _emit(data, args.out)
    if args.strict and not rep.verdict:
        raise StrictFailure("gain does not satisfy the convergence conditions")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    if args.strict and sc.observer is not None:
        rep = analyze(sc.pack.model(), sc.x0)
        if rep.verdict is not Verdict.OBSERVABLE:
            raise StrictFailure(f"scenario {sc.name}: pack is {rep.verdict.value}")
    summary = run_scenario(sc, args.out_dir)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.strict and summary["warnings"]:
        raise StrictFailure("; ".join(summary["warnings"]))
    return EXIT_OK


def cmd_batch(args) -> int:
    refs = args.scenarios or bundled_scenarios()
    results = run_batch(refs, args.out_dir, args.jobs)
    for s in results:
        line = f"{s['scenario']}: "
        if "observer" in s:
            line += f"convergence {s['observer']['convergence_time_s']} s"
        else:
            line += f"final SOC {s['plant']['final_soc']}"
        if s["warnings"]:
            line += f" [warnings: {len(s['warnings'])}]"
        print(line)
    if args.strict and any(s["warnings"] for s in results):
        raise StrictFailure("one or more scenarios raised warnings")
    return EXIT_OK


def _add_pack(p):
    p.add_argument("--pack", required=True, help="pack YAML (cells with r1_ohm, r2_ohm, c_farad, q_ah, z0)")


def _add_cycle(p):
    p.add_argument("--cycle", help="drive-cycle CSV with header t_s,i_a (default: synthetic)")
    p.add_argument("--interpolation", choices=["zoh", "linear"], default="zoh")
    p.add_argument("--amplitude", type=float, default=20.0, help="synthetic cycle peak current [A]")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--dt", type=float, default=0.1, help="integration step [s]")
    p.add_argument("--t-end", type=float, help="horizon [s] (default: end of cycle)")


# vector options whose values may start with a minus sign
_VECTOR_FLAGS = ("--gain", "--xhat0", "--x0", "--z-ref", "--sweep")


def _attach_vector_values(argv: list[str]) -> list[str]:
    """Rewrite ``--gain -30,...`` as ``--gain=-30,...`` so argparse keeps the value."""
    out: list[str] = []
    it = iter(argv)
    for arg in it:
        if arg in _VECTOR_FLAGS:
            value = next(it, None)
            out.append(arg if value is None else f"{arg}={value}")
        else:
            out.append(arg)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parallel-soc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the plant over a drive cycle")
    _add_pack(p)
    _add_cycle(p)
    p.add_argument("--x0", help="initial state z1,vc1,...,zn,vcn (default: pack z0, vc=0)")
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run the observer on simulated or recorded measurements")
    _add_pack(p)
    _add_cycle(p)
    p.add_argument("--gain", required=True, help="observer gain, 3n comma-separated values")
    p.add_argument("--xhat0", help="observer initial state, 2n values")
    p.add_argument("--x0", help="plant initial state when simulating measurements")
    p.add_argument("--measurements", help="CSV t_s,i_a,v_v of recorded data (skips plant simulation)")
    p.add_argument("--out", required=True, help="estimate CSV")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze", help="observability report at a state")
    _add_pack(p)
    p.add_argument("--x0", help="state z1,vc1,...,zn,vcn (default: pack z0, vc=0)")
    p.add_argument("--test", choices=["both", "linear", "lie"], default="both")
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--dump-matrices", help="write E, A, H as plain text")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate-gain", help="check the convergence conditions for a gain")
    _add_pack(p)
    p.add_argument("--gain", required=True)
    p.add_argument("--z-ref", help="SOC linearisation point, n values (default: centre of the SOC box)")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", help="comma-separated gain scale factors to report")
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_validate_gain)

    p = sub.add_parser("run", help="run one scenario (YAML path or bundled name)")
    p.add_argument("scenario")
    p.add_argument("--out-dir")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run several scenarios in parallel (default: all bundled)")
    p.add_argument("scenarios", nargs="*")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_vector_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StrictFailure as exc:
        print(f"strict: {exc}", file=sys.stderr)
        return EXIT_STRICT
    except (ConfigError, CycleGap, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
