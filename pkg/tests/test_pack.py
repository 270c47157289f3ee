from __future__ import annotations

import itertools

import numpy as np
import pytest

from parallel_soc.cell import CellParams
from parallel_soc.errors import ConfigError, VoltageMismatch
from parallel_soc.ocv import PolyOcv
from parallel_soc.pack import (
    assemble,
    cell_voltages,
    dump_matrices,
    exact_det,
    numerical_rank,
    pack_x,
    phi,
    reduced_fg,
    reduced_output,
    reduced_rhs,
    residuals,
    solve_algebraic,
    theta,
)


def _cells(r1s, ocv=None):
    extra = {} if ocv is None else {"ocv": ocv}
    return [CellParams(r, 0.003 + 0.001 * k, 1500.0 + 100 * k, 7000.0 + 500 * k, **extra) for k, r in enumerate(r1s)]


def _cofactor_det(m):
    m = np.asarray(m, dtype=float)
    if m.shape == (1, 1):
        return m[0, 0]
    return sum((-1) ** j * m[0, j] * _cofactor_det(np.delete(m[1:], j, axis=1)) for j in range(m.shape[0]))


def test_table1_blocks(model):
    assert np.array_equal(model.A22, [[0.0025, -0.0015], [1.0, 1.0]])
    assert model.a22_det == 0.004
    assert np.array_equal(model.A21, [[0, 1, 0, -1], [0, 0, 0, 0]])
    assert np.array_equal(model.theta_i, [0.0, -1.0])
    assert np.isfinite(model.a22_cond) and model.a22_cond > 1


def test_unit_r1_pair():
    m = assemble(_cells([1.0, 1.0]))
    assert np.array_equal(m.A22, [[1, -1], [1, 1]])
    assert m.a22_det == 2.0


def test_three_cells_match_cofactor_expansion():
    a, b, c = 0.0021, 0.0017, 0.0033
    m = assemble(_cells([a, b, c]))
    assert np.array_equal(m.A22, [[a, -b, 0], [a, 0, -c], [1, 1, 1]])
    assert m.a22_det == pytest.approx(_cofactor_det(m.A22), rel=1e-12)
    assert m.a22_det == pytest.approx(a * b + a * c + b * c, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_structure_entrywise(n):
    m = assemble(_cells([0.001 * (k + 1) for k in range(n)]))
    assert numerical_rank(m.e_mat) == 2 * n
    e = np.zeros((3 * n, 3 * n))
    e[: 2 * n, : 2 * n] = np.eye(2 * n)
    assert np.array_equal(m.e_mat, e)
    for k, p in enumerate(m.cells):
        blk = slice(2 * k, 2 * k + 2)
        assert m.A11[blk, blk][1, 1] == -1 / (p.r2 * p.c)
        assert m.A12[2 * k, k] == 1 / p.q and m.A12[2 * k + 1, k] == 1 / p.c
        assert m.Hu[k, k] == p.r1 and m.Hx[k, 2 * k + 1] == 1.0
    # off-diagonal blocks of A11 / A12 vanish
    mask11 = np.kron(np.eye(n), np.ones((2, 2)))
    assert np.all(m.A11[mask11 == 0] == 0)
    mask12 = np.kron(np.eye(n), np.ones((2, 1)))
    assert np.all(m.A12[mask12 == 0] == 0)
    for j in range(1, n):
        row = m.A22[j - 1]
        assert row[0] == m.cells[0].r1 and row[j] == -m.cells[j].r1
        assert np.count_nonzero(row) == 2
        assert m.A21[j - 1, 1] == 1 and m.A21[j - 1, 2 * j + 1] == -1
    assert np.all(m.A22[-1] == 1) and np.all(m.A21[-1] == 0)


def test_duplicate_r1_allowed():
    m = assemble(_cells([0.002, 0.002, 0.002]))
    assert m.a22_det == pytest.approx(3 * 0.002**2)


def test_single_cell_rejected():
    with pytest.raises(ConfigError):
        assemble(_cells([0.002]))


def test_exact_det_matches_rational_value():
    assert exact_det(np.array([[0.0025, -0.0015], [1.0, 1.0]])) == 0.004
    assert exact_det(np.zeros((3, 3))) == 0.0


def test_theta_examples():
    ocv = PolyOcv((3.0, 2.0))  # OCV(z) = 3 + 2 z
    m = assemble(_cells([0.002, 0.003], ocv))
    x = pack_x([0.4, 0.35])  # OCVs 3.8 and 3.7
    np.testing.assert_allclose(theta(m, x, 5.0), [0, 0, 0, 0, 0.1, -5.0], atol=1e-14)
    assert np.array_equal(theta(m, pack_x([0.3, 0.3]), 0.0), np.zeros(6))


def test_theta_partial_equality():
    m = assemble(_cells([0.001, 0.002, 0.003]))
    x = pack_x([0.4, 0.4, 0.7])
    th = theta(m, x, 0.0)
    assert th[6] == 0.0
    assert th[7] == pytest.approx(m.cells[0].ocv(0.4) - m.cells[0].ocv(0.7))


def test_phi_examples(model, ocv):
    assert np.allclose(phi(model, pack_x([0.6, 0.6])), ocv(0.6))
    p = phi(model, pack_x([0.4, 0.5]))
    assert np.array_equal(p, [ocv(0.4), ocv(0.5)])
    assert np.all((3.0 < p) & (p < 4.2)) and p[0] < p[1]


def test_identical_cells_split_evenly():
    c = CellParams(0.002, 0.003, 1500, 8000)
    m = assemble([c, c, c])
    u = solve_algebraic(m, pack_x([0.5] * 3, [0.01] * 3), 9.0)
    np.testing.assert_allclose(u, [3.0, 3.0, 3.0], rtol=1e-14)


def test_rest_exchange_closed_form(model, ocv):
    x = pack_x([0.55, 0.45])
    delta = ocv(0.55) - ocv(0.45)
    u = solve_algebraic(model, x, 0.0)
    expected = -delta / (0.0025 + 0.0015)
    assert u[0] == pytest.approx(expected, rel=1e-12)
    assert u[1] == pytest.approx(-expected, rel=1e-12)
    assert u[0] < 0


def test_at_rest_soc_is_frozen(model, ocv):
    # choose v_c so both cells sit at the same voltage, then nothing flows
    z = [0.3, 0.7]
    vc = [0.0, ocv(0.3) - ocv(0.7)]
    x = pack_x(z, vc)
    assert np.allclose(solve_algebraic(model, x, 0.0), 0.0, atol=1e-10)
    d = reduced_rhs(model, x, 0.0)
    assert np.allclose(d[0::2], 0.0, atol=1e-14)


def test_identical_cells_coulomb_rate():
    c = CellParams(0.002, 0.003, 1500, 100.0)
    m = assemble([c, c])
    d = reduced_rhs(m, pack_x([0.5, 0.5]), 2 * c.q)
    np.testing.assert_allclose(d[0::2], [1.0, 1.0], rtol=1e-12)


def test_reduced_rhs_equals_descriptor_rows(model, rng):
    for _ in range(200):
        x = pack_x(rng.uniform(0, 1, 2), rng.uniform(-0.1, 0.1, 2))
        current = rng.uniform(-30, 30)
        u = solve_algebraic(model, x, current)
        lhs = model.A11 @ x + model.A12 @ u
        np.testing.assert_allclose(reduced_rhs(model, x, current), lhs, rtol=1e-12, atol=1e-18)


def test_reduced_fg_split(model, rng):
    x = pack_x(rng.uniform(0, 1, 2), rng.uniform(-0.1, 0.1, 2))
    f, g = reduced_fg(model, x)
    np.testing.assert_allclose(reduced_rhs(model, x, 3.0), f + 3.0 * g, rtol=1e-13)
    # the input field is the open-circuit split of a unit current
    np.testing.assert_allclose(g, model.A12 @ [0.375, 0.625], rtol=1e-12)


def test_kirchhoff_residuals(model, rng):
    for _ in range(200):
        x = pack_x(rng.uniform(0, 1, 2), rng.uniform(-0.1, 0.1, 2))
        current = rng.uniform(-100, 100)
        kcl, kvl = residuals(model, x, solve_algebraic(model, x, current), current)
        assert kcl <= 1e-9 * max(1.0, abs(current))
        assert kvl <= 1e-9


def test_reduced_output_is_common_voltage(model):
    x = pack_x([0.4, 0.6], [0.01, -0.02])
    u = solve_algebraic(model, x, 4.0)
    v = cell_voltages(model, x, u)
    assert reduced_output(model, x, 4.0) == v[0]
    assert abs(v[0] - v[1]) < 1e-9


def test_identical_cells_at_rest_read_ocv(identical_model, ocv):
    assert reduced_output(identical_model, pack_x([0.42, 0.42]), 0.0) == pytest.approx(ocv(0.42), abs=1e-12)


def test_terminal_voltage_jump_is_parallel_resistance(model):
    x = pack_x([0.4, 0.6], [0.01, -0.02])
    step = 10.0
    jump = reduced_output(model, x, step) - reduced_output(model, x, 0.0)
    r1, r2 = 0.0025, 0.0015
    assert jump == pytest.approx(step * r1 * r2 / (r1 + r2), rel=1e-9)


def test_voltage_mismatch_detected(model):
    broken = type(model)(model.cells, model.e_mat.copy(), model.a_mat.copy(), model.h_mat.copy() * 1.1)
    with pytest.raises(VoltageMismatch):
        reduced_output(broken, pack_x([0.2, 0.8]), 5.0)


def test_dump_matrices_round_trip(model):
    text = dump_matrices(model)
    blocks, name, rows = {}, None, []
    for line in text.splitlines():
        if line.startswith("#"):
            if name:
                blocks[name] = np.array(rows)
            name, rows = line.split()[1], []
        else:
            rows.append([float(v) for v in line.split()])
    blocks[name] = np.array(rows)
    assert np.array_equal(blocks["E"], model.e_mat)
    assert np.array_equal(blocks["A"], model.a_mat)
    assert np.array_equal(blocks["H"], model.h_mat)


def test_model_arrays_are_read_only(model):
    with pytest.raises(ValueError):
        model.a_mat[0, 0] = 1.0
    with pytest.raises(ValueError):
        model.A22[0, 0] = 1.0


def test_pack_x_interleaves():
    assert np.array_equal(pack_x([1, 2], [3, 4]), [1, 3, 2, 4])
    with pytest.raises(ValueError):
        pack_x([1, 2], [3])


def test_permutation_of_later_cells_permutes_currents(rng):
    cells = _cells([0.0011, 0.0023, 0.0031, 0.0042])
    base = assemble(cells)
    x = pack_x(rng.uniform(0.2, 0.8, 4), rng.uniform(-0.05, 0.05, 4))
    u = solve_algebraic(base, x, 7.0)
    for perm in itertools.permutations(range(4)):
        m = assemble([cells[k] for k in perm])
        xp = np.concatenate([x[2 * k : 2 * k + 2] for k in perm])
        np.testing.assert_allclose(solve_algebraic(m, xp, 7.0), u[list(perm)], rtol=1e-9, atol=1e-9)

