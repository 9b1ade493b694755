import math
from dataclasses import replace

import numpy as np
import pytest

from wavemark.errors import BandError, ValidationError
from wavemark.wavelet import (
    C_DELTA,
    DEFAULT_BANDS,
    OMEGA0,
    PSI0,
    STATE_DOWN,
    STATE_NONE,
    STATE_UP,
    WaveletConfig,
    WaveletEngine,
    band_reconstruct,
    decompose,
    grid_series,
    morlet_transform,
    oscillation_state,
    period_grid,
    significance_mask,
    write_periodogram,
)


class TestGrid:
    def test_linear_interpolation(self):
        g = grid_series(np.array([0.0, 2.0]), np.array([0.0, 2.0]))
        assert np.allclose(g.values, [0.0, 1.0, 2.0])
        assert g.valid.all()

    def test_long_gap_masked(self):
        t = np.array([0.0, 10.0, 210.0, 215.0])
        g = grid_series(t, np.array([1.0, 1.0, 1.0, 1.0]), max_gap=120.0)
        taus = g.taus
        interior = (taus > 10.0) & (taus < 210.0)
        assert not g.valid[interior].any()
        assert np.all(g.values[interior] == 0.0)
        exact = np.isin(taus, t)
        assert g.valid[exact].all()

    def test_daily_series_identity(self):
        y = np.sin(np.arange(50.0))
        g = grid_series(np.arange(50.0), y)
        assert np.array_equal(g.values, y)

    def test_too_short(self):
        with pytest.raises(ValidationError):
            grid_series(np.array([1.0]), np.array([2.0]))


class TestTransform:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(0)
        t = np.arange(48.0)
        y = rng.standard_normal(48)
        g = grid_series(t, y)
        periods = period_grid(2, 47, 1 / 8)
        d = morlet_transform(g, periods, 1 / 8)
        ref = np.zeros((periods.size, t.size), dtype=complex)
        for i, p in enumerate(periods):
            for j, tau in enumerate(g.taus):
                eta = (t - tau) / p
                ref[i, j] = np.sum(y / math.sqrt(p) * PSI0 * np.exp(-0.5 * eta**2) * np.exp(-1j * OMEGA0 * eta))
        assert np.abs(ref - d.coeffs).max() < 1e-12

    def test_zero_input(self):
        g = grid_series(np.arange(40.0), np.zeros(40))
        d = morlet_transform(g, period_grid(2, 39, 0.25), 0.25)
        assert np.all(d.coeffs == 0) and np.all(d.power == 0)

    def test_sinusoid_period_localization(self):
        t = np.arange(365.0)
        g = grid_series(t, np.cos(2 * np.pi * t / 20.0))
        periods = period_grid(2, 364, 1 / 32)
        d = morlet_transform(g, periods, 1 / 32)
        peak = periods[np.argmax(d.power.mean(axis=1))]
        assert 15.0 <= peak <= 30.0

    def test_linearity(self):
        rng = np.random.default_rng(4)
        t = np.arange(120.0)
        x, y = rng.standard_normal(120), rng.standard_normal(120)
        periods = period_grid(2, 119, 1 / 8)
        dx = morlet_transform(grid_series(t, x), periods, 1 / 8)
        dy = morlet_transform(grid_series(t, y), periods, 1 / 8)
        dz = morlet_transform(grid_series(t, 2.0 * x - 0.3 * y), periods, 1 / 8)
        assert np.abs(dz.coeffs - (2.0 * dx.coeffs - 0.3 * dy.coeffs)).max() < 1e-10

    def test_power_definition_and_period_bounds(self):
        rng = np.random.default_rng(4)
        g = grid_series(np.arange(60.0), rng.standard_normal(60))
        periods = period_grid(2, 59, 0.25)
        d = morlet_transform(g, periods, 0.25)
        assert np.allclose(d.power, periods[:, None] * np.abs(d.coeffs) ** 2)
        with pytest.raises(BandError):
            morlet_transform(g, np.array([1.0]), 0.25)
        with pytest.raises(BandError):
            morlet_transform(g, np.array([100.0]), 0.25)


class TestSignificance:
    def test_white_noise_calibration(self):
        # the significance null assumes the mean-removed pipeline; single
        # realizations swing (cells are correlated), so average replicates
        rates = []
        for rep in range(10):
            rng = np.random.default_rng(40 + rep)
            t = np.arange(400.0)
            g = grid_series(t, 0.3 * rng.standard_normal(400), demean=True)
            periods = period_grid(2, 365, 1 / 12)
            d = morlet_transform(g, periods, 1 / 12)
            theta = significance_mask(d, g, alpha=0.05, nsim=200, seed=rep)
            rates.append(theta[~d.coi].mean())
        assert abs(np.mean(rates) - 0.05) < 0.02

    def test_strong_sinusoid_flagged_in_band(self):
        rng = np.random.default_rng(5)
        t = np.arange(500.0)
        y = np.cos(2 * np.pi * t / 20.0) + 0.1 * rng.standard_normal(500)
        g = grid_series(t, y)
        periods = period_grid(2, 365, 1 / 16)
        d = morlet_transform(g, periods, 1 / 16)
        theta = significance_mask(d, g, 0.05, 200, 1)
        band = (periods >= 15) & (periods <= 30.5)
        interior = slice(170, 330)
        assert theta[band, interior].any(axis=0).all()

    def test_alpha_one_flags_everything_unmasked(self):
        rng = np.random.default_rng(6)
        t = np.concatenate([np.arange(30.0), np.arange(300.0, 330.0)])
        g = grid_series(t, rng.standard_normal(t.size), max_gap=120.0)
        periods = period_grid(2, 120, 0.5)
        d = morlet_transform(g, periods, 0.5)
        theta = significance_mask(d, g, alpha=1.0, nsim=50, seed=0)
        assert np.all(theta[:, g.valid] == 1)
        assert np.all(theta[:, ~g.valid] == 0)

    def test_flat_series_is_all_zero(self):
        g = grid_series(np.arange(80.0), np.zeros(80))
        d = morlet_transform(g, period_grid(2, 79, 0.5), 0.5)
        assert significance_mask(d, g, 0.05, 50, 0).sum() == 0

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        g = grid_series(np.arange(120.0), rng.standard_normal(120))
        periods = period_grid(2, 119, 0.25)
        d = morlet_transform(g, periods, 0.25)
        a = significance_mask(d, g, 0.05, 100, 42)
        b = significance_mask(d, g, 0.05, 100, 42)
        assert np.array_equal(a, b)


class TestReconstruction:
    def test_masked_everywhere_gives_zero(self):
        rng = np.random.default_rng(8)
        g = grid_series(np.arange(100.0), rng.standard_normal(100))
        d = morlet_transform(g, period_grid(2, 99, 0.25), 0.25)
        d = replace(d, theta=np.zeros_like(d.power, dtype=np.int8))
        assert np.all(band_reconstruct(d, (2, 99)).values == 0.0)

    def test_full_band_reconstruction_fidelity(self):
        t = np.arange(365.0)
        y = np.cos(2 * np.pi * t / 30.0)
        g = grid_series(t, y)
        periods = period_grid(2, 364, 1 / 32)
        d = morlet_transform(g, periods, 1 / 32)
        d = replace(d, theta=np.ones_like(d.power, dtype=np.int8))
        s = band_reconstruct(d, (2, 364))
        lo, hi = 121, 243
        corr = np.corrcoef(s.values[lo:hi], y[lo:hi])[0, 1]
        assert corr > 0.9

    def test_reconstruction_constant(self):
        assert abs(PSI0 - 0.7511255) < 5e-8
        assert C_DELTA == 0.776

    def test_band_additivity(self):
        rng = np.random.default_rng(9)
        t = np.arange(500.0)
        g = grid_series(t, rng.standard_normal(500))
        periods = period_grid(2, 365, 1 / 32)
        d = morlet_transform(g, periods, 1 / 32)
        theta = significance_mask(d, g, 0.05, 100, 3)
        d = replace(d, theta=theta)
        total = band_reconstruct(d, (2.0, 365.0)).values
        parts = sum(band_reconstruct(d, (lo, hi)).values for _, lo, hi in DEFAULT_BANDS)
        assert np.abs(total - parts).max() < 1e-10

    def test_scale_covariance(self):
        rng = np.random.default_rng(10)
        t = np.arange(200.0)
        y = rng.standard_normal(200)
        periods = period_grid(2, 199, 0.25)
        d1 = morlet_transform(grid_series(t, y), periods, 0.25)
        d2 = morlet_transform(grid_series(t, 3.0 * y), periods, 0.25)
        theta = np.ones_like(d1.power, dtype=np.int8)
        s1 = band_reconstruct(replace(d1, theta=theta), (2, 199)).values
        s2 = band_reconstruct(replace(d2, theta=theta), (2, 199)).values
        assert np.abs(s2 - 3.0 * s1).max() < 1e-10

    def test_band_outside_range(self):
        g = grid_series(np.arange(50.0), np.ones(50))
        d = morlet_transform(g, period_grid(2, 40, 0.5), 0.5)
        d = replace(d, theta=np.ones_like(d.power, dtype=np.int8))
        with pytest.raises(BandError):
            band_reconstruct(d, (300, 400))

    def test_requires_theta(self):
        g = grid_series(np.arange(50.0), np.ones(50))
        d = morlet_transform(g, period_grid(2, 40, 0.5), 0.5)
        with pytest.raises(ValidationError):
            band_reconstruct(d, (2, 40))


class TestStates:
    def _signal(self, values):
        from wavemark.wavelet import BandSignal

        return BandSignal("s", (2.0, 14.0), 0.0, 1.0, np.asarray(values, dtype=float))

    def test_sign_trichotomy(self):
        sig = self._signal([0.0, 0.2, -0.2])
        assert oscillation_state(sig, 0.0) == STATE_NONE
        assert oscillation_state(sig, 1.0) == STATE_UP
        assert oscillation_state(sig, 2.0) == STATE_DOWN

    def test_nearest_grid_point(self):
        sig = self._signal([0.0, 0.2, -0.2])
        assert oscillation_state(sig, 1.4) == STATE_UP
        assert oscillation_state(sig, 1.6) == STATE_DOWN

    def test_far_outside_span_is_none(self):
        sig = self._signal([0.2, 0.2, 0.2])
        assert oscillation_state(sig, 2.0 + 120.0 + 1.0) == STATE_NONE
        assert oscillation_state(sig, 2.0 + 119.0) == STATE_UP


class TestBurstLocalization:
    def test_short_burst_prefers_short_band(self):
        # a 10-day bump concentrates reconstruction energy at short periods
        t = np.arange(365.0)
        u = (t - 182.0) / 10.0
        y = np.where(np.abs(u) <= 0.5, 0.5 * (1 + np.cos(2 * np.pi * u)), 0.0)
        g = grid_series(t, y)
        periods = period_grid(2, 364, 1 / 16)
        d = morlet_transform(g, periods, 1 / 16)
        d = replace(d, theta=np.ones_like(d.power, dtype=np.int8))
        short = band_reconstruct(d, (2.0, 14.5)).values
        long = band_reconstruct(d, (180.5, 364.0)).values
        center = 182
        assert abs(short[center]) > abs(long[center])


class TestEngine:
    def test_matches_definitional_path(self):
        cfg = WaveletConfig(nsim=120, seed=42)
        eng = WaveletEngine(cfg)
        rng = np.random.default_rng(9)
        times = np.sort(rng.choice(np.arange(0, 400), size=55, replace=False)).astype(float)
        vals = 0.25 * rng.standard_normal(55)
        bump = (times > 340) & (times <= 380)
        vals[bump] += 0.8 * np.sin((times[bump] - 340) / 40 * 2 * np.pi)
        h = float(times[-1]) + 3.0
        feats = eng.features(times, vals, h)

        min_len = int(math.ceil(cfg.p_max / cfg.dt)) + 1
        g = eng.grid_for(times, vals, "x", min_len=min_len)
        d = morlet_transform(g, eng.periods, cfg.df)
        noise = eng.surrogate_noise_obs(times.size)
        theta = significance_mask(d, g, cfg.alpha, cfg.nsim, cfg.seed, noise=noise)
        d = replace(d, theta=theta)
        slow = np.array([band_reconstruct(d, (lo, hi)).values[-1] for _, lo, hi in DEFAULT_BANDS])
        assert np.abs(slow - feats.values).max() < 1e-10
        for v, st in zip(feats.values, feats.states):
            assert st == (STATE_UP if v > 0 else STATE_DOWN if v < 0 else STATE_NONE)

    def test_no_lookahead(self):
        cfg = WaveletConfig(nsim=80, seed=1)
        eng = WaveletEngine(cfg)
        rng = np.random.default_rng(3)
        times = np.sort(rng.choice(np.arange(0, 600), size=70, replace=False)).astype(float)
        vals = 0.3 * rng.standard_normal(70)
        h = 400.0
        full = eng.features(times, vals, h)
        keep = times <= h
        trunc = eng.features(times[keep], vals[keep], h)
        assert full.states == trunc.states
        assert np.array_equal(full.values, trunc.values)

    def test_stale_series_gives_none(self):
        cfg = WaveletConfig(nsim=50, seed=1)
        eng = WaveletEngine(cfg)
        times = np.arange(0.0, 100.0, 5.0)
        vals = np.sin(times / 5.0)
        f = eng.features(times, vals, 95.0 + cfg.max_gap + 1.0)
        assert all(st == STATE_NONE for st in f.states)
        assert np.all(f.values == 0.0)

    def test_flat_residuals_all_none(self):
        eng = WaveletEngine(WaveletConfig(nsim=50, seed=1))
        times = np.arange(0.0, 300.0, 3.0)
        f = eng.features(times, np.zeros(times.size), 300.0)
        assert all(st == STATE_NONE for st in f.states)

    def test_deterministic_and_call_order_independent(self):
        cfg = WaveletConfig(nsim=60, seed=5)
        rng = np.random.default_rng(4)
        times1 = np.sort(rng.choice(np.arange(0, 300), 40, replace=False)).astype(float)
        vals1 = rng.standard_normal(40)
        times2 = np.sort(rng.choice(np.arange(0, 500), 60, replace=False)).astype(float)
        vals2 = rng.standard_normal(60)
        e1 = WaveletEngine(cfg)
        a1 = e1.features(times1, vals1, 310.0)
        b1 = e1.features(times2, vals2, 510.0)
        e2 = WaveletEngine(cfg)
        b2 = e2.features(times2, vals2, 510.0)
        a2 = e2.features(times1, vals1, 310.0)
        assert a1.states == a2.states and np.array_equal(a1.values, a2.values)
        assert b1.states == b2.states and np.array_equal(b1.values, b2.values)


def test_periodogram_dump(tmp_path):
    rng = np.random.default_rng(2)
    t = np.sort(rng.choice(np.arange(0, 200), 40, replace=False)).astype(float)
    g, d = decompose(t, rng.standard_normal(40), WaveletConfig(nsim=50, seed=0))
    path = tmp_path / "pg.csv"
    write_periodogram(d, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau_days,period_days,power,theta"
    assert len(lines) == 1 + d.periods.size * d.taus.size
