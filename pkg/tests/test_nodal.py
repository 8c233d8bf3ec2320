import numpy as np
import pytest

from bulkrram.nodal import (
    NodalSolution,
    SingularNetwork,
    driven,
    grounded_through,
    open_end,
    read_margin,
    solve_network,
    write_voltage_drop,
)


class TestSolver:
    def test_single_cell_divider(self):
        # 1 MOhm cell with one line segment on each side, 1 V to ground
        g = np.array([[1e-6]])
        sol = solve_network(g, np.array([1.0]), grounded_through(0.0), 1e3)
        v_cell = sol.wl_v[0, 0] - sol.bl_v[0, 0]
        assert v_cell == pytest.approx(1e6 / (1e6 + 2e3), rel=1e-12)

    def test_zero_line_r_matches_divider(self):
        rng = np.random.default_rng(1)
        g = rng.uniform(1e-6, 2.44e-6, size=(8, 4))
        v = rng.uniform(0.0, 0.2, size=8)
        sol = solve_network(g, v, open_end(), 0.0)
        expected = (g * v[:, None]).sum(axis=0) / g.sum(axis=0)
        assert sol.bl_end_v == pytest.approx(expected, rel=1e-12)

    def test_small_line_r_approaches_divider(self):
        rng = np.random.default_rng(2)
        g = rng.uniform(1e-6, 2.44e-6, size=(6, 5))
        v = rng.uniform(0.0, 0.2, size=6)
        ideal = solve_network(g, v, open_end(), 0.0).bl_end_v
        err = [np.abs(solve_network(g, v, open_end(), lr).bl_end_v / ideal - 1).max()
               for lr in (100.0, 1.0)]
        assert err[1] < err[0]
        assert err[1] < 1e-4

    def test_solve_residual_small(self):
        rng = np.random.default_rng(3)
        g = rng.uniform(1e-6, 2.5e-6, size=(16, 16))
        v = rng.uniform(0, 0.2, 16)
        sol = solve_network(g, v, open_end(), 2.0)
        assert sol.residual < 1e-10

    def test_kcl_conservation(self):
        rng = np.random.default_rng(4)
        g = rng.uniform(1e-6, 2.5e-6, size=(12, 9))
        v = rng.uniform(0, 1.0, 12)
        terms = [grounded_through(5e3)] * 4 + [driven(0.3)] * 3 + [open_end()] * 2
        sol = solve_network(g, v, terms, 2.0)
        assert sol.kcl_imbalance() < 1e-12

    def test_all_drives_equal_gives_flat_network(self):
        g = np.full((4, 4), 2e-6)
        sol = solve_network(g, np.full(4, 0.7), open_end(), 5.0)
        assert sol.bl_v == pytest.approx(np.full((4, 4), 0.7), rel=1e-9)
        assert np.abs(sol.cell_current).max() < 1e-15

    def test_reciprocity(self):
        # symmetric conductance matrix: the voltage at row 1's entry node
        # due to a drive on row 0 equals the voltage at row 0's entry
        # node due to the same drive on row 1
        rng = np.random.default_rng(8)
        g = rng.uniform(1e-6, 2.5e-6, size=(3, 3))
        a = solve_network(g, np.array([0.1, 0.0, 0.0]), open_end(), 3.0)
        b = solve_network(g, np.array([0.0, 0.1, 0.0]), open_end(), 3.0)
        assert a.wl_v[1, 0] == pytest.approx(b.wl_v[0, 0], rel=1e-9)

    def test_floating_column_is_singular(self):
        g = np.array([[1e-6, 0.0], [1e-6, 0.0]])
        with pytest.raises(SingularNetwork):
            solve_network(g, np.array([0.1, 0.0]), open_end(), 2.0)

    def test_floating_column_singular_ideal(self):
        g = np.array([[1e-6, 0.0], [1e-6, 0.0]])
        with pytest.raises(SingularNetwork):
            solve_network(g, np.array([0.1, 0.0]), open_end(), 0.0)

    def test_driven_termination_pins_bl(self):
        g = np.array([[1e-6]])
        sol = solve_network(g, np.array([1.0]), driven(0.25), 0.0)
        assert sol.bl_v[0, 0] == 0.25

    def test_input_validation(self):
        g = np.full((2, 2), 1e-6)
        with pytest.raises(ValueError):
            solve_network(g, np.zeros(3), open_end(), 0.0)
        with pytest.raises(ValueError):
            solve_network(g, np.zeros(2), open_end(), -1.0)
        with pytest.raises(ValueError):
            solve_network(-g, np.zeros(2), open_end(), 0.0)


class TestReadMargin:
    def test_margin_shrinks_with_array_size(self):
        m = [read_margin(n, 410e3, 1e6, 2.0) for n in (2, 8, 16, 64)]
        assert all(a > b for a, b in zip(m, m[1:]))

    def test_higher_r_off_helps(self):
        for n in (8, 16, 32):
            lo = read_margin(n, 410e3, 1e6, 2.0)
            hi = read_margin(n, 4.1e6, 10e6, 2.0)
            assert hi >= lo

    def test_ideal_margin_matches_divider(self):
        n, r_on, r_off, vp = 4, 410e3, 1e6, 0.1
        g_on, g_off = 1 / r_on, 1 / r_off
        rest = (n - 1) * g_on
        expected = vp * (g_on / (g_on + rest) - g_off / (g_off + rest))
        assert read_margin(n, r_on, r_off, 0.0, v_pulse=vp) == pytest.approx(
            expected, rel=1e-12)

    def test_rejects_small_array(self):
        with pytest.raises(ValueError):
            read_margin(1, 410e3, 1e6, 0.0)


class TestWriteDrop:
    def test_ideal_wires_full_voltage(self):
        assert write_voltage_drop(8, 410e3, 0.0) == pytest.approx(1.0, rel=1e-12)

    def test_fraction_grows_with_r_on(self):
        f = [write_voltage_drop(16, r, 2.0) for r in (10e3, 100e3, 410e3, 1e6)]
        assert all(a < b for a, b in zip(f, f[1:]))

    def test_fraction_shrinks_with_array_size(self):
        f = [write_voltage_drop(n, 410e3, 2.0) for n in (4, 16, 64)]
        assert all(a > b for a, b in zip(f, f[1:]))
