"""Noise sampling laws, driver tables, and the first-level lift."""

import numpy as np
import pytest

from sewpde.lift import build_lift
from sewpde.noise import (
    DriverPath,
    NoiseError,
    NoiseParams,
    _fgn_circulant,
    sample_driver,
    sample_noise,
)
from sewpde.spectral import SpectralParams, eigenvalues


class TestParams:
    def test_fbm_needs_young_hurst(self):
        with pytest.raises(NoiseError):
            NoiseParams("fbm", 4, hurst=0.4)
        with pytest.raises(NoiseError):
            NoiseParams("fbm", 4, hurst=None)

    def test_nu_range(self):
        with pytest.raises(NoiseError):
            NoiseParams("brownian", 4, nu=1.0)

    def test_white_noise_flagged(self):
        with pytest.warns(UserWarning):
            NoiseParams("brownian", 4, nu=0.0)

    def test_unknown_kind(self):
        with pytest.raises(NoiseError):
            NoiseParams("levy", 4)


class TestSampling:
    def test_deterministic_in_seed(self):
        p = NoiseParams("brownian", 4, seed=123, fine_level=8)
        a = sample_noise(p)
        b = sample_noise(p)
        assert np.array_equal(a.dbeta, b.dbeta)
        c = sample_noise(p, replica=1)
        assert not np.array_equal(a.dbeta, c.dbeta)

    def test_real_field_mirroring(self):
        p = NoiseParams("brownian", 5, seed=7, fine_level=7)
        path = sample_noise(p)
        assert np.allclose(path.dbeta, np.conj(path.dbeta[::-1]))
        assert np.max(np.abs(path.dbeta[p.nmodes].imag)) == 0.0

    def test_brownian_variance(self):
        # increments over cells are iid; Var(beta_t)/t estimated from ~1e4 draws
        p = NoiseParams("brownian", 3, seed=11, fine_level=10)
        draws = []
        for rep in range(10):
            path = sample_noise(p, replica=rep)
            draws.append(np.abs(path.dbeta[p.nmodes + 1]) ** 2)
        ratio = np.mean(np.concatenate(draws)) / (p.horizon / 2**10)
        assert 0.94 <= ratio <= 1.06

    def test_fbm_increment_scaling(self):
        H = 0.8
        p = NoiseParams("fbm", 2, hurst=H, seed=3, fine_level=6)
        acc = {k: [] for k in (1, 2, 4, 8)}
        for rep in range(120):
            path = sample_noise(p, replica=rep)
            beta = np.concatenate([[0], np.cumsum(path.dbeta[p.nmodes].real)])
            for gap in acc:
                d = beta[gap::gap] - beta[:-gap:gap]
                acc[gap].append(np.mean(d**2))
        for gap, vals in acc.items():
            tau = gap * p.horizon / 2**6
            ratio = np.mean(vals) / tau ** (2 * H)
            assert 0.9 <= ratio <= 1.1

    def test_circulant_route_matches_law(self):
        # the above-cap sampler must produce the same autocovariance
        H = 0.75
        rng = np.random.default_rng(5)
        n = 256
        lags = [0, 1, 4]
        acc = {k: 0.0 for k in lags}
        reps = 400
        for _ in range(reps):
            x = _fgn_circulant(H, n, rng)
            for k in lags:
                acc[k] += np.mean(x[: n - k] * x[k:])
        from sewpde.noise import _fgn_autocov

        for k in lags:
            expect = _fgn_autocov(H, np.array([k]))[0]
            assert acc[k] / reps == pytest.approx(expect, abs=0.05)

    def test_q_scaling(self):
        p = NoiseParams("brownian", 4, nu=0.6, seed=2, fine_level=6)
        path = sample_noise(p)
        lam = eigenvalues(p.spectral)
        assert np.allclose(path.q_scaling, lam ** (-0.3))
        assert np.allclose(path.field_increments(), path.q_scaling[:, None] * path.dbeta)


class TestDriver:
    def test_aggregate_exact(self):
        p = NoiseParams("brownian", 4, seed=9, fine_level=9)
        drv = sample_driver(p)
        agg = drv.aggregate(6)
        assert agg.ncells == 64
        assert np.allclose(agg.cells[:, 0], drv.cells[:, :8].sum(axis=1))
        with pytest.raises(NoiseError):
            drv.aggregate(12)

    def test_deterministic_time_driver(self):
        sp = SpectralParams(3, 2.0)
        drv = DriverPath.deterministic_time(sp, 5)
        assert np.allclose(drv.cells.sum(axis=1)[sp.nmodes], 2.0)
        assert np.max(np.abs(np.delete(drv.cells, sp.nmodes, axis=0))) == 0.0

    def test_smooth_driver_cells(self):
        sp = SpectralParams(2, 1.0)
        c = np.array([0, 1j, 2.0, -1j, 0])
        drv = DriverPath.from_smooth(sp, 6, lambda t: np.cos(t) * c)
        total = drv.cells.sum(axis=1)
        assert np.allclose(total, (np.cos(1.0) - 1.0) * c)


class TestX1:
    def test_deterministic_closed_form(self):
        sp = SpectralParams(4, 1.0)
        lam = eigenvalues(sp)
        drv = DriverPath.deterministic_time(sp, 10)
        lift = build_lift(drv, keep_level=5, n_orders=1)
        g = lift.grid
        for t, s in [(32, 0), (20, 4), (7, 3)]:
            tau = g.time(t) - g.time(s)
            mat = lift.value(1, t, s)
            assert np.max(np.abs(np.diag(mat) - tau * np.exp(-lam * tau))) < 1e-13
            off = mat - np.diag(np.diag(mat))
            assert np.max(np.abs(off)) == 0.0

    def test_band_support_exact(self):
        p = NoiseParams("brownian", 3, seed=21, fine_level=8)
        lift = build_lift(sample_driver(p), keep_level=4, n_orders=1)
        mat = lift.value(1, 16, 0)
        n = p.nmodes
        for i in range(2 * n + 1):
            for j in range(2 * n + 1):
                if abs(i - j) > n:
                    assert mat[i, j] == 0.0

    def test_tilde_closed_exactly_and_under_refinement(self):
        p = NoiseParams("brownian", 4, seed=31, fine_level=10)
        drv_fine = sample_driver(p)
        lift = build_lift(drv_fine.aggregate(8), keep_level=5, n_orders=1)
        assert lift.chen_residual(1) < 1e-14
        # direct fine recompute: the same path at two fine levels
        lift_hi = build_lift(drv_fine, keep_level=5, n_orders=1)
        diffs = [
            np.max(np.abs(lift.value(1, t, s) - lift_hi.value(1, t, s)))
            for t, s in lift.grid.pair_family()
        ]
        # refining the Wiener-sum integrand moves values but only at the
        # fine-grid error scale
        assert max(diffs) < 0.1 * np.max([np.abs(lift_hi.value(1, 32, 0)).max(), 1e-12])

    def test_matrix_elements_gaussian(self):
        # kurtosis of a fixed matrix element across replicas stays near 3
        p = NoiseParams("brownian", 3, seed=5, fine_level=6)
        vals = []
        for rep in range(1000):
            drv = sample_driver(p, replica=rep)
            lift = build_lift(drv, keep_level=0, n_orders=1)
            vals.append(lift.value(1, 1, 0)[4, 3].real)
        v = np.array(vals)
        z = (v - v.mean()) / v.std()
        kurt = np.mean(z**4)
        assert abs(kurt - 3.0) <= 0.3
