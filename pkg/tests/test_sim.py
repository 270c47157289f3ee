from __future__ import annotations

import numpy as np
import pytest

from conftest import table1_cells
from parallel_soc.cell import CellParams
from parallel_soc.cycle import DriveCycle, constant_cycle, load_drive_cycle, synth_udds_like, write_drive_cycle
from parallel_soc.errors import ConfigError, CycleGap, NonFinite
from parallel_soc.pack import assemble, pack_x, residuals
from parallel_soc.sim import load_trajectory, rk4_step, simulate, step_grid, write_trajectory


@pytest.fixture(scope="module")
def udds_traj():
    m = assemble(table1_cells())
    return m, simulate(m, pack_x([0.5, 0.5]), synth_udds_like(20.0, 400.0, seed=4), 0.1)


# --- drive cycles ---------------------------------------------------------------


def test_synth_is_deterministic_and_bounded():
    a = synth_udds_like(20.0, 1400.0, seed=5)
    b = synth_udds_like(20.0, 1400.0, seed=5)
    assert np.array_equal(a.i, b.i) and np.array_equal(a.t, b.t)
    assert np.max(np.abs(a.i)) <= 20.0
    assert np.max(np.abs(a.i)) == pytest.approx(20.0)
    assert a.t_end >= 1400.0


def test_synth_seed_changes_profile():
    assert not np.array_equal(synth_udds_like(20.0, 600.0, seed=1).i, synth_udds_like(20.0, 600.0, seed=2).i)


def test_synth_shape():
    cyc = synth_udds_like(10.0, 1400.0, seed=0)
    assert cyc.i[0] == 0.0
    assert np.any(cyc.i > 0) and np.any(cyc.i < 0)
    assert abs(np.mean(cyc.i)) < 0.05 * 10.0
    assert np.mean(cyc.i == 0.0) > 0.05  # idle stops


def test_synth_rejects_bad_amplitude():
    with pytest.raises(ValueError):
        synth_udds_like(0.0, 100.0)


def test_zoh_and_linear_lookup():
    zoh = DriveCycle([0.0, 1.0, 2.0], [0.0, 10.0, -4.0])
    lin = DriveCycle([0.0, 1.0, 2.0], [0.0, 10.0, -4.0], "linear")
    assert zoh.current(0.5) == 0.0 and zoh.current(1.0) == 10.0 and zoh.current(2.5) == -4.0
    assert lin.current(0.5) == 5.0 and lin.current(1.5) == 3.0
    assert zoh.t_end == 3.0 and lin.t_end == 2.0


def test_cycle_validation():
    with pytest.raises(ConfigError, match="increasing"):
        DriveCycle([0.0, 2.0, 1.0], [0, 0, 0])
    with pytest.raises(ConfigError, match="non-finite"):
        DriveCycle([0.0, 1.0], [0.0, np.nan])
    with pytest.raises(ConfigError):
        DriveCycle([0.0, 1.0], [0.0, 1.0], "cubic")


def test_cycle_csv_round_trip(tmp_path):
    cyc = synth_udds_like(17.3, 300.0, seed=8)
    path = tmp_path / "c.csv"
    write_drive_cycle(cyc, path)
    back = load_drive_cycle(path)
    assert np.array_equal(back.t, cyc.t) and np.array_equal(back.i, cyc.i)


@pytest.mark.parametrize(
    "text, match",
    [
        ("t_s\n0\n", "missing column.*i_a"),
        ("time,i_a\n0,1\n", "missing column.*t_s"),
        ("i_a,t_s\n0,1\n", "exactly"),
        ("t_s,i_a\n0,1\n1,2\n1,3\n", ":4: timestamp"),
        ("t_s,i_a\n0,1\n1,abc\n", ":3: non-numeric"),
        ("t_s,i_a\n0,1,2\n", ":2: expected 2 fields"),
        ("", "empty file"),
        ("t_s,i_a\n", "no samples"),
    ],
)
def test_cycle_csv_errors(tmp_path, text, match):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_drive_cycle(path)


# --- integration ------------------------------------------------------------------


def test_step_grid_ends_exactly():
    g = step_grid(0.0, 1.05, 0.1)
    assert g[0] == 0.0 and g[-1] == 1.05 and g.size == 12
    assert step_grid(0.0, 1400.0, 0.1).size == 14001


def test_rk4_exact_for_cubic_in_time():
    # x' = 3 t^2 integrates exactly with a fourth-order rule
    x = rk4_step(lambda t, x: np.array([3 * t * t]), 1.0, np.array([1.0]), 0.5)
    assert x[0] == pytest.approx(1.0 + 1.5**3 - 1.0, abs=1e-14)


def test_constant_current_coulomb_counting():
    c = CellParams.from_ah(0.002, 0.003, 1500, 2.5)
    m = assemble([c, c])
    current, horizon = 6.0, 500.0
    traj = simulate(m, pack_x([0.3, 0.3]), constant_cycle(current, horizon), 0.1, horizon)
    np.testing.assert_allclose(traj.z[-1] - 0.3, current * horizon / (2 * c.q), atol=1e-8)


def test_open_loop_charge_raises_soc(model):
    traj = simulate(model, pack_x([0.5, 0.5]), constant_cycle(10.0, 100.0), 0.1)
    assert np.all(traj.z[-1] > 0.5)


def test_stored_states_are_consistent(udds_traj):
    m, traj = udds_traj
    for x, u, i in zip(traj.x[::50], traj.u[::50], traj.i_total[::50]):
        kcl, kvl = residuals(m, x, u, i)
        assert kcl <= 1e-9 and kvl <= 1e-9


def test_charge_bookkeeping(udds_traj):
    m, traj = udds_traj
    # ZOH cycle: the current is constant over each step, so the integral is a plain sum
    charge = np.cumsum(np.concatenate([[0.0], traj.i_total[:-1] * np.diff(traj.times)]))
    stored = (traj.z - traj.z[0]) @ m.q
    np.testing.assert_allclose(stored, charge, atol=1e-6)


def test_lower_resistance_cell_carries_more(udds_traj):
    _, traj = udds_traj
    loaded = np.abs(traj.i_total) > 1.0
    share = np.abs(traj.u[loaded])
    assert np.mean(share[:, 1] > share[:, 0]) > 0.8
    assert np.mean(np.sign(traj.u[loaded, 0]) == np.sign(traj.u[loaded, 1])) > 0.95


def test_halving_dt_converges_fourth_order(model):
    cyc = constant_cycle(-8.0, 60.0)
    x0 = pack_x([0.7, 0.4], [0.03, -0.02])
    finals = [simulate(model, x0, cyc, dt, 60.0).x[-1] for dt in (0.8, 0.4, 0.2)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert ratio > 2**3.7


def test_cycle_gap_raised(model):
    with pytest.raises(CycleGap):
        simulate(model, pack_x([0.5, 0.5]), constant_cycle(1.0, 10.0), 0.1, t_end=50.0)


def test_soc_guard_warns_and_continues(model, caplog):
    traj = simulate(model, pack_x([0.99, 0.99]), constant_cycle(5.0, 60.0), 0.1)
    assert any(e.kind == "exit" for e in traj.events)
    assert traj.z.max() > 1.0 and not traj.stopped
    assert "left [0, 1]" in caplog.text


def test_soc_guard_hard_stop(model):
    traj = simulate(model, pack_x([0.99, 0.99]), constant_cycle(5.0, 60.0), 0.1, hard_stop=True)
    assert traj.stopped and traj.times[-1] < 60.0
    assert traj.z[-1].max() > 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_non_finite():
    c = CellParams(1e-9, 1e-9, 1e-9, 1e-9)
    m = assemble([c, CellParams(2e-9, 1e-9, 1e-9, 1e-9)])
    with pytest.raises(NonFinite):
        simulate(m, pack_x([0.5, 0.4]), constant_cycle(1.0, 10.0), 1.0)


def test_bad_x0_rejected(model):
    with pytest.raises(ConfigError):
        simulate(model, [0.5, 0.0, 0.5], constant_cycle(1.0, 10.0))


def test_trajectory_csv_round_trip(tmp_path, udds_traj):
    _, traj = udds_traj
    path = tmp_path / "traj.csv"
    write_trajectory(traj, path)
    back = load_trajectory(path)
    for name in ("times", "x", "u", "terminal_voltage"):
        assert np.array_equal(getattr(back, name), getattr(traj, name))
    np.testing.assert_allclose(back.i_total, traj.i_total, atol=1e-12)
    assert path.read_text().splitlines()[0] == "t_s,z_1,z_2,vc_1,vc_2,i_1,i_2,v_terminal"


def test_trajectory_csv_errors(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("t_s,z_1,z_2,vc_1,vc_2,i_1,i_2\n0,0,0,0,0,0,0\n")
    with pytest.raises(ConfigError, match="v_terminal"):
        load_trajectory(path)
    path.write_text("t_s,z_1,vc_1,i_1,v_terminal\n1,0,0,0,0\n0,0,0,0,0\n")
    with pytest.raises(ConfigError, match="increasing"):
        load_trajectory(path)
