import io

import numpy as np
import pytest

from bulkrram.ivfit import (
    DegenerateFit,
    InsufficientData,
    IVTrace,
    NonPositiveCurrent,
    fit_direct,
    fit_fn,
    fit_sclc,
    read_iv_csv,
    synth_direct,
    synth_fn,
    synth_sclc,
    trap_density,
    write_iv_csv,
)


def loggrid(lo, hi, n):
    return np.logspace(np.log10(lo), np.log10(hi), n)


class TestTrace:
    def test_requires_increasing_v(self):
        with pytest.raises(ValueError):
            IVTrace(np.array([0.1, 0.1, 0.2]), np.zeros(3))

    def test_requires_finite(self):
        with pytest.raises(ValueError):
            IVTrace(np.array([0.1, 0.2]), np.array([1.0, np.inf]))

    def test_positive_branch(self):
        t = IVTrace(np.array([-1.0, -0.5, 0.5, 1.0]), np.array([-2.0, -1, 1, 2.0]))
        assert np.all(t.positive_branch().v > 0)


class TestDirect:
    def test_round_trip(self):
        t = synth_direct(2e-6, np.linspace(0.005, 0.06, 12))
        fit = fit_direct(t)
        assert fit.coeff_a == pytest.approx(2e-6, rel=1e-12)
        assert fit.rms_residual < 1e-12

    def test_zero_current(self):
        t = IVTrace(np.linspace(0.01, 0.05, 5), np.zeros(5))
        assert fit_direct(t).coeff_a == 0.0

    def test_insufficient_data(self):
        t = synth_direct(1e-6, np.array([0.01, 0.02, 0.5, 0.6]))
        with pytest.raises(InsufficientData):
            fit_direct(t, v_max=0.03)

    def test_window_respected(self):
        # points above v_max must not influence the fit
        v = np.r_[np.linspace(0.01, 0.06, 6), [0.5, 1.0]]
        i = np.r_[3e-6 * v[:6], [1.0, 2.0]]
        assert fit_direct(IVTrace(v, i)).coeff_a == pytest.approx(3e-6, rel=1e-12)


class TestFowlerNordheim:
    def test_round_trip(self):
        t = synth_fn(1e-5, 2.0, np.linspace(0.5, 1.5, 20))
        fit = fit_fn(t)
        assert fit.coeff_a == pytest.approx(1e-5, rel=1e-6)
        assert fit.coeff_b == pytest.approx(2.0, rel=1e-6)

    def test_pure_quadratic_gives_zero_exponent(self):
        t = synth_fn(4e-6, 0.0, np.linspace(0.5, 2.0, 15))
        fit = fit_fn(t)
        assert fit.coeff_b == pytest.approx(0.0, abs=1e-12)
        assert fit.coeff_a == pytest.approx(4e-6, rel=1e-9)

    def test_zero_current_sample_rejected(self):
        v = np.linspace(0.5, 1.0, 6)
        i = 1e-6 * v ** 2
        i[3] = 0.0
        with pytest.raises(NonPositiveCurrent):
            fit_fn(IVTrace(v, i))

    def test_insufficient_data(self):
        t = synth_fn(1e-5, 2.0, np.array([0.6, 0.7]))
        with pytest.raises(InsufficientData):
            fit_fn(t)

    def test_current_scaling_moves_only_prefactor(self):
        v = np.linspace(0.5, 1.5, 20)
        t1 = synth_fn(1e-5, 2.0, v)
        t2 = IVTrace(v, t1.i * 37.0)
        f1, f2 = fit_fn(t1), fit_fn(t2)
        assert f2.coeff_b == pytest.approx(f1.coeff_b, rel=1e-9)
        assert f2.coeff_a == pytest.approx(37.0 * f1.coeff_a, rel=1e-9)


class TestSclc:
    GRID = loggrid(0.01, 2.0, 120)

    def test_noiseless_exact_breakpoints(self):
        grid = np.unique(np.r_[self.GRID, 0.1, 0.6])
        t = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), grid)
        fit = fit_sclc(t)
        assert fit.breakpoints[0] == pytest.approx(0.1, abs=0.0)
        assert fit.breakpoints[1] == pytest.approx(0.6, abs=0.0)
        assert fit.slopes == pytest.approx((1.0, 2.0, 5.0), rel=1e-9)
        assert fit.alpha == fit.slopes[2]

    def test_noisy_recovery_within_5_percent(self):
        t = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), self.GRID,
                       sigma=0.01, seed=11)
        fit = fit_sclc(t)
        assert fit.v_tfl == pytest.approx(0.6, rel=0.05)
        assert fit.slopes[0] == pytest.approx(1.0, abs=0.15)
        assert fit.slopes[1] == pytest.approx(2.0, abs=0.15)
        assert fit.slopes[2] == pytest.approx(5.0, abs=0.15)

    def test_ohmic_is_degenerate(self):
        t = synth_direct(1e-6, self.GRID)
        with pytest.raises(DegenerateFit):
            fit_sclc(t)

    def test_insufficient_data(self):
        t = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), loggrid(0.01, 2.0, 10))
        with pytest.raises(InsufficientData):
            fit_sclc(t)

    def test_grid_refinement_consistency(self):
        coarse = np.unique(np.r_[loggrid(0.01, 2.0, 60), 0.1, 0.6])
        fine = np.unique(np.r_[loggrid(0.01, 2.0, 120), 0.1, 0.6])
        fc = fit_sclc(synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), coarse))
        ff = fit_sclc(synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), fine))
        # one coarse-grid step around each coarse estimate
        step = coarse[1] / coarse[0]
        for a, b in zip(fc.breakpoints, ff.breakpoints):
            assert b / a < step and a / b < step

    def test_current_scaling_leaves_geometry(self):
        t = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), self.GRID, sigma=0.01, seed=3)
        f1 = fit_sclc(t)
        f2 = fit_sclc(IVTrace(t.v, 1e3 * t.i))
        assert f1.breakpoints == f2.breakpoints
        assert f1.slopes == pytest.approx(f2.slopes, rel=1e-9)


class TestTrapDensity:
    def test_zero_voltage(self):
        assert trap_density(0.0, 40e-9, 40).n_t == 0.0

    def test_reference_value(self):
        out = trap_density(0.5, 40e-9, 40.0)
        assert out.n_t == pytest.approx(1.38e24, rel=0.005)

    def test_round_trip(self):
        from bulkrram.ivfit import EPS_VACUUM, Q_ELEMENTARY
        n_t = 3.7e23
        v_tfl = Q_ELEMENTARY * n_t * (40e-9) ** 2 / (2 * EPS_VACUUM * 40.0)
        assert trap_density(v_tfl, 40e-9, 40.0).n_t == pytest.approx(n_t, rel=1e-12)

    def test_scaling_laws(self):
        base = trap_density(0.5, 40e-9, 40.0).n_t
        assert trap_density(1.0, 40e-9, 40.0).n_t == pytest.approx(2 * base, rel=1e-12)
        assert trap_density(0.5, 40e-9, 80.0).n_t == pytest.approx(2 * base, rel=1e-12)
        assert trap_density(0.5, 80e-9, 40.0).n_t == pytest.approx(base / 4, rel=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            trap_density(0.5, 0.0, 40.0)
        with pytest.raises(ValueError):
            trap_density(0.5, 40e-9, -1.0)


class TestSynthesisAndCsv:
    def test_seeded_noise_reproducible(self):
        a = synth_fn(1e-5, 2.0, np.linspace(0.5, 1.5, 30), sigma=0.05, seed=9)
        b = synth_fn(1e-5, 2.0, np.linspace(0.5, 1.5, 30), sigma=0.05, seed=9)
        assert np.array_equal(a.i, b.i)
        c = synth_fn(1e-5, 2.0, np.linspace(0.5, 1.5, 30), sigma=0.05, seed=10)
        assert not np.array_equal(a.i, c.i)

    def test_csv_round_trip(self):
        t = synth_sclc(1e-5, (1, 2, 5), (0.1, 0.6), loggrid(0.02, 1.5, 25))
        buf = io.StringIO()
        write_iv_csv(t, buf)
        text = buf.getvalue()
        assert text.splitlines()[0] == "v_V,i_A"
        back = read_iv_csv(io.StringIO(text))
        assert np.array_equal(back.v, t.v)
        assert np.array_equal(back.i, t.i)

    def test_csv_comments_skipped(self):
        text = "# measured sweep\nv_V,i_A\n0.1,1e-6\n# mid comment\n0.2,2e-6\n"
        t = read_iv_csv(io.StringIO(text))
        assert len(t) == 2

    def test_csv_bad_header(self):
        with pytest.raises(ValueError):
            read_iv_csv(io.StringIO("volt,amp\n0.1,1e-6\n"))

    def test_csv_empty(self):
        with pytest.raises(ValueError):
            read_iv_csv(io.StringIO(""))
