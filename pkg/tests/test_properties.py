from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from parallel_soc.cell import CellParams
from parallel_soc.cycle import load_drive_cycle, synth_udds_like, write_drive_cycle
from parallel_soc.ocv import PolyOcv, default_ocv
from parallel_soc.pack import (
    assemble,
    cell_voltages,
    pack_x,
    reduced_fg,
    reduced_output,
    reduced_rhs,
    residuals,
    solve_algebraic,
)
from parallel_soc.observability import _rank, lie_observability_matrix

resistance = st.floats(5e-4, 1e-2)
capacitance = st.floats(200.0, 5000.0)
capacity = st.floats(1.0, 5.0)
soc = st.floats(0.0, 1.0)
polarization = st.floats(-0.1, 0.1)
current = st.floats(-100.0, 100.0)


@st.composite
def packs(draw, min_n=2, max_n=5):
    n = draw(st.integers(min_n, max_n))
    cells = [
        CellParams.from_ah(draw(resistance), draw(resistance), draw(capacitance), draw(capacity))
        for _ in range(n)
    ]
    x = pack_x([draw(soc) for _ in range(n)], [draw(polarization) for _ in range(n)])
    return assemble(cells), x


@settings(max_examples=200, deadline=None)
@given(packs(), current)
def test_kirchhoff_holds(pack, i_total):
    model, x = pack
    u = solve_algebraic(model, x, i_total)
    kcl, kvl = residuals(model, x, u, i_total)
    assert kcl <= 1e-9 * max(1.0, abs(i_total))
    assert kvl <= 1e-9
    v = cell_voltages(model, x, u)
    assert reduced_output(model, x, i_total) == v[0]


@settings(max_examples=200, deadline=None)
@given(packs(), current)
def test_reduction_matches_descriptor_rows(pack, i_total):
    model, x = pack
    u = solve_algebraic(model, x, i_total)
    expected = model.A11 @ x + model.A12 @ u
    np.testing.assert_allclose(reduced_rhs(model, x, i_total), expected, rtol=1e-10, atol=1e-12)
    f, g = reduced_fg(model, x)
    np.testing.assert_allclose(f + i_total * g, expected, rtol=1e-10, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(resistance, resistance, current)
def test_two_cell_split_at_equal_voltages(r1a, r1b, i_total):
    # equal SOC and polarization: the current divides inversely to r1
    cells = [CellParams.from_ah(r1a, 0.003, 1500.0, 2.0), CellParams.from_ah(r1b, 0.004, 1800.0, 2.5)]
    model = assemble(cells)
    u = solve_algebraic(model, pack_x([0.5, 0.5], [0.02, 0.02]), i_total)
    np.testing.assert_allclose(u, [i_total * r1b / (r1a + r1b), i_total * r1a / (r1a + r1b)], atol=1e-9)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_default_ocv_is_monotone(a, b):
    ocv = default_ocv()
    if a < b:
        assert ocv(a) < ocv(b)
    assert ocv.derivative(a) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-3.0, 3.0))
def test_lie_rank_is_row_scale_invariant(za, zb, log_scale):
    model = assemble([CellParams.from_ah(0.0025, 0.004, 1500.0, 2.3), CellParams.from_ah(0.0015, 0.0035, 2000.0, 2.0)])
    mat = lie_observability_matrix(model, pack_x([za, zb]), max_order=2, method="fd")
    assert _rank(mat)[0] == _rank(mat * 10.0**log_scale)[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 50.0), st.floats(10.0, 600.0), st.integers(0, 2**16))
def test_synth_cycle_bounded(amplitude, duration, seed):
    cyc = synth_udds_like(amplitude, duration, seed=seed)
    assert np.max(np.abs(cyc.i)) <= amplitude * (1 + 1e-12)
    assert cyc.t_end >= duration
    assert np.all(np.diff(cyc.t) > 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-200.0, 200.0, allow_subnormal=False)))
def test_cycle_csv_round_trip(tmp_path_factory, currents):
    from parallel_soc.cycle import DriveCycle

    cyc = DriveCycle(np.arange(currents.size, dtype=float) * 0.5, currents)
    path = tmp_path_factory.mktemp("cyc") / "c.csv"
    write_drive_cycle(cyc, path)
    back = load_drive_cycle(path)
    assert np.array_equal(back.t, cyc.t) and np.array_equal(back.i, cyc.i)


@given(st.lists(st.floats(0.1, 2.0), min_size=1, max_size=4))
def test_increasing_polynomials_pass_monotone_check(slopes):
    # positive coefficients beyond the constant give a strictly increasing curve on [0, 1]
    PolyOcv((3.0, *slopes)).check_monotone()
