"""Analytic Morlet decomposition of de-trended biomarker series.

Conventions follow the classic practical guide to wavelet analysis
(Torrence & Compo 1998) for the omega0 = 6 analytic Morlet: scale and
period are identified (the 1.033 factor between them is treated as one),
band-limited reconstruction uses the 0.776 amplitude constant with
psi(0) = pi**-0.25, and the local power spectrum is period * |Wave|^2.
Significance against white noise is Monte-Carlo: pointwise power
quantiles of seeded surrogate series sharing the series' grid, gap mask
and sample variance.

Irregular series are linearly interpolated onto a regular grid;
gaps wider than ``max_gap`` are masked instead of interpolated, which
zeroes both the transform input and the significance mask there.

:class:`WaveletEngine` computes the same quantities at the most recent
measurement time only, with surrogate draws keyed by the offset from the
evaluation point so thresholds memoize exactly across subjects and
landmarks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BandError, ConfigError, ValidationError

OMEGA0 = 6.0
PSI0 = math.pi ** -0.25  # mother wavelet at t = 0
C_DELTA = 0.776  # reconstruction constant for the omega0=6 Morlet
COI_EFOLD = math.sqrt(2.0)
_SIGMA_FLOOR = 1e-12  # below this the series is numerically flat

STATE_NONE = "none"
STATE_UP = "upward"
STATE_DOWN = "downward"

#: clinical duration windows (label, low, high); cut points sit between the
#: integer-day labels so the five windows partition the period axis
DEFAULT_BANDS = (
    ("2-14", 2.0, 14.5),
    ("15-30", 14.5, 30.5),
    ("31-90", 30.5, 90.5),
    ("91-180", 90.5, 180.5),
    ("181-365", 180.5, 365.0),
)


@dataclass(frozen=True)
class WaveletConfig:
    dt: float = 1.0  # grid step, days
    voices_per_octave: int = 32
    p_min: float = 2.0  # days
    p_max: float = 365.0
    max_gap: float = 120.0  # days; wider gaps are masked
    alpha: float = 0.05
    nsim: int = 200
    seed: int = 0

    @property
    def df(self):
        return 1.0 / self.voices_per_octave

    def validate(self):
        if self.dt <= 0 or self.p_min < 2 * self.dt or self.p_max <= self.p_min:
            raise ConfigError("need dt > 0 and 2*dt <= p_min < p_max")
        if self.voices_per_octave < 1 or self.nsim < 1 or not 0 < self.alpha <= 1:
            raise ConfigError("invalid wavelet significance settings")
        if self.max_gap <= 0:
            raise ConfigError("max_gap must be positive")
        return self


def period_grid(p_min, p_max, df, dt=1.0):
    """Log-spaced periods from ``p_min`` to at most ``p_max``, ``1/df`` per octave."""
    if p_min < 2 * dt:
        raise ConfigError("smallest period must be at least 2*dt")
    if p_max < p_min:
        return np.empty(0)
    n = int(math.floor(math.log2(p_max / p_min) / df + 1e-9)) + 1
    return p_min * 2.0 ** (df * np.arange(n))


@dataclass(frozen=True)
class GriddedSeries:
    subject_id: str
    t0: float
    dt: float
    values: np.ndarray
    valid: np.ndarray  # False inside gaps wider than max_gap (values forced to 0)
    obs_times: np.ndarray | None = None  # original sampling times (surrogates mimic them)
    obs_values: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if self.dt <= 0:
            raise ValidationError("grid step must be positive")
        if values.size < 2 or valid.size != values.size:
            raise ValidationError("gridded series needs at least 2 samples and a matching mask")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        for name in ("obs_times", "obs_values"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def taus(self):
        return self.t0 + self.dt * np.arange(self.values.size)


def grid_series(times, values, dt=1.0, max_gap=120.0, subject_id="", demean=False):
    """Linear interpolation onto a regular grid; long gaps masked, not filled.

    ``demean`` removes the series mean first (standard before a wavelet
    transform: a constant level otherwise leaks into edge coefficients).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        raise ValidationError("need at least 2 points to grid a series")
    if demean:
        values = values - values.mean()
    n = int(math.floor((times[-1] - times[0]) / dt + 1e-9)) + 1
    taus = times[0] + dt * np.arange(n)
    grid = np.interp(taus, times, values)
    valid = _gap_mask(taus, times, max_gap)
    grid[~valid] = 0.0
    return GriddedSeries(subject_id, float(times[0]), float(dt), grid, valid, times, values)


def _gap_mask(taus, times, max_gap):
    """True where a grid point coincides with an observation or lies in a
    bracketing gap no wider than ``max_gap``."""
    idx = np.searchsorted(times, taus)
    left = times[np.clip(idx - 1, 0, times.size - 1)]
    right = times[np.clip(idx, 0, times.size - 1)]
    exact = np.isclose(taus, right, rtol=0.0, atol=1e-9) | np.isclose(taus, left, rtol=0.0, atol=1e-9)
    inside = (idx > 0) & (idx < times.size)
    gap_ok = np.where(inside, right - left <= max_gap, False)
    return exact | gap_ok


@dataclass(frozen=True)
class WaveletDecomposition:
    subject_id: str
    t0: float
    dt: float
    df: float
    periods: np.ndarray  # (n_p,)
    coeffs: np.ndarray  # (n_p, n_tau) complex
    power: np.ndarray  # period * |coeffs|^2
    valid: np.ndarray  # grid mask carried from the input
    coi: np.ndarray  # True inside the cone of influence (edge-affected)
    theta: np.ndarray | None = None  # significance mask, set by significance_mask

    @property
    def taus(self):
        return self.t0 + self.dt * np.arange(self.coeffs.shape[1])


def _kernel_block(periods, dt, offsets):
    """Wavelet kernel values k(Delta) = sqrt(dt/p) * conj(psi)(Delta/p) at
    Delta = offsets*dt, for every period; shape (n_p, len(offsets))."""
    delta = np.asarray(offsets, dtype=float)[None, :] * dt
    eta = delta / np.asarray(periods, dtype=float)[:, None]
    return (
        np.sqrt(dt / np.asarray(periods, dtype=float))[:, None]
        * PSI0
        * np.exp(-0.5 * eta * eta)
        * np.exp(-1j * OMEGA0 * eta)
    )


def morlet_transform(g: GriddedSeries, periods=None, df=1.0 / 32.0):
    """Continuous analytic-Morlet transform on the series grid.

    Implemented as an exact linear convolution (zero beyond the grid), i.e.
    Wave(tau, p) = sum_t y(t) sqrt(dt/p) conj(psi)((t - tau)/p) over the
    full grid; no circular wrap-around.
    """
    n = g.values.size
    span = (n - 1) * g.dt
    if periods is None:
        periods = period_grid(2 * g.dt, span, df, g.dt)
    periods = np.asarray(periods, dtype=float)
    if periods.size == 0:
        raise BandError("empty period set")
    if periods.min() < 2 * g.dt - 1e-9 or periods.max() > span + 1e-9:
        raise BandError("periods must lie within [2*dt, series span]")

    offsets = np.arange(-(n - 1), n)
    kernels = _kernel_block(periods, g.dt, -offsets)  # k(t_j - tau) indexed by (j - i)
    nfft = _next_fast_len(n + offsets.size - 1)
    yf = np.fft.fft(g.values, nfft)
    kf = np.fft.fft(kernels, nfft, axis=1)
    conv = np.fft.ifft(yf[None, :] * kf, axis=1)
    wave = conv[:, n - 1 : 2 * n - 1]
    power = periods[:, None] * np.abs(wave) ** 2
    taus_rel = g.dt * np.arange(n)
    coi = (taus_rel[None, :] < COI_EFOLD * periods[:, None]) | (
        (taus_rel[-1] - taus_rel)[None, :] < COI_EFOLD * periods[:, None]
    )
    return WaveletDecomposition(
        subject_id=g.subject_id,
        t0=g.t0,
        dt=g.dt,
        df=float(df),
        periods=periods,
        coeffs=wave,
        power=power,
        valid=g.valid.copy(),
        coi=coi,
    )


def _next_fast_len(n):
    from scipy.fft import next_fast_len

    return next_fast_len(int(n))


_MAD_TO_SD = 1.482602218505602  # 1 / Phi^-1(3/4)
_CLOSE_PAIR_GAP = 7.0  # days; close re-tests isolate the measurement noise
_MIN_CLOSE_PAIRS = 8


def _robust_sd(x):
    """Median-based scale estimate; falls back to the sample SD when over
    half the values coincide."""
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad > 0:
        return _MAD_TO_SD * float(mad)
    return float(np.std(x, ddof=1))


def _noise_sd_rows(times, values):
    """White-noise scale per row of ``values`` (2-d: series stacked in rows),
    robust to oscillations.

    First differences over close re-tests cancel any component that moves
    slowly between neighbouring measurements, so the estimate targets the
    measurement noise itself; a raw scale would be inflated by a subject's
    own bursts (doubly so under crisis-triggered re-testing) and mask
    exactly the oscillations being tested.  Thresholds divide surrogate
    power by the surrogate's own estimate, so the statistic is pivotal and
    the estimator's sampling noise cancels out of the calibration.
    """
    values = np.atleast_2d(values)
    diffs = np.abs(np.diff(values, axis=1))
    gaps = np.diff(np.asarray(times, dtype=float))
    close = gaps <= _CLOSE_PAIR_GAP
    if int(close.sum()) >= _MIN_CLOSE_PAIRS:
        med = np.median(diffs[:, close], axis=1)
    elif diffs.shape[1] >= _MIN_CLOSE_PAIRS:
        med = np.median(diffs, axis=1)
    else:
        med = np.zeros(values.shape[0])
    out = _MAD_TO_SD * med / math.sqrt(2.0)
    for r in np.nonzero(out <= 0)[0]:
        out[r] = _robust_sd(values[r])
    return out


def _noise_sd(times, values):
    return float(_noise_sd_rows(times, values)[0])


def _surrogate_sigma(g):
    """Scale of the white noise the surrogates imitate (from the raw
    observations when the grid came from irregular sampling)."""
    if g.obs_times is not None and g.obs_values is not None and g.obs_values.size >= 2:
        return _noise_sd(g.obs_times, g.obs_values)
    nv = int(g.valid.sum())
    return _robust_sd(g.values[g.valid]) if nv >= 2 else 0.0


def significance_mask(d: WaveletDecomposition, g: GriddedSeries, alpha=0.05, nsim=200, seed=0, noise=None):
    """Pointwise white-noise exceedance mask.

    theta(tau, p) = 1 iff the observed power exceeds the (1 - alpha)
    quantile of power over ``nsim`` white-noise surrogates that mimic the
    series: independent draws at the original sampling times with the
    sample variance of the observations, pushed through the same
    interpolation, grid and gap mask as the data (for an already regular
    series this is plain white noise on the grid).  A numerically flat
    series yields an all-zero mask.  ``noise`` overrides the surrogate
    draws (unit variance, one column per sampling point) so external
    pipelines can reproduce thresholds exactly.
    """
    n = g.values.size
    sigma = _surrogate_sigma(g)
    theta = np.zeros_like(d.power, dtype=np.int8)
    if sigma < _SIGMA_FLOOR:
        return theta
    if g.obs_times is not None and g.obs_times.size < 3:
        # two observations cannot evidence oscillation: the self-normalized
        # statistic is the same constant for data and every surrogate
        return theta
    if alpha >= 1.0:
        theta[:, g.valid] = 1
        return theta

    n_src = n if g.obs_times is None else g.obs_times.size
    if noise is None:
        noise = np.random.default_rng(seed).standard_normal((nsim, n_src))
    if noise.shape != (nsim, n_src):
        raise ValidationError(f"surrogate noise must have shape ({nsim}, {n_src})")
    # surrogates receive the data's treatment: mean removal, interpolation,
    # mask, and their own noise-scale estimate (self-normalized thresholds)
    noise = noise - noise.mean(axis=1, keepdims=True)
    src_times = g.taus if g.obs_times is None else g.obs_times
    sur_sigma2 = _noise_sd_rows(src_times, noise) ** 2
    sur_sigma2 = np.where(sur_sigma2 > 0, sur_sigma2, 1.0)
    if g.obs_times is None:
        sur = noise
    else:
        taus = g.taus
        sur = np.empty((nsim, n))
        for r in range(nsim):
            sur[r] = np.interp(taus, g.obs_times, noise[r])
    sur[:, ~g.valid] = 0.0

    offsets = np.arange(-(n - 1), n)
    kernels = _kernel_block(d.periods, g.dt, -offsets)
    nfft = _next_fast_len(n + offsets.size - 1)
    sf = np.fft.fft(sur, nfft, axis=1)
    for i in range(d.periods.size):
        kf = np.fft.fft(kernels[i], nfft)
        conv = np.fft.ifft(sf * kf[None, :], axis=1)[:, n - 1 : 2 * n - 1]
        pw = d.periods[i] * np.abs(conv) ** 2 / sur_sigma2[:, None]
        thresh = np.quantile(pw, 1.0 - alpha, axis=0)
        theta[i] = d.power[i] > sigma**2 * thresh
    theta[:, ~g.valid] = 0
    return theta


@dataclass(frozen=True)
class BandSignal:
    subject_id: str
    band: tuple  # (p_low, p_high), days
    t0: float
    dt: float
    values: np.ndarray  # mmol/L

    @property
    def taus(self):
        return self.t0 + self.dt * np.arange(self.values.size)


def band_reconstruct(d: WaveletDecomposition, band):
    """Band-limited oscillation signal over the duration window ``band``.

    s(tau) = df sqrt(dt) / (0.776 psi(0)) * sum_{p in band} theta * Re(Wave) / sqrt(p);
    identically zero wherever the mask removes every period in the band.
    """
    if d.theta is None:
        raise ValidationError("decomposition has no significance mask; run significance_mask first")
    lo, hi = float(band[0]), float(band[1])
    sel = (d.periods >= lo) & (d.periods <= hi)
    if not np.any(sel):
        raise BandError(f"band [{lo}, {hi}] outside computed period range")
    contrib = d.theta[sel] * np.real(d.coeffs[sel]) / np.sqrt(d.periods[sel])[:, None]
    values = d.df * math.sqrt(d.dt) / (C_DELTA * PSI0) * contrib.sum(axis=0)
    return BandSignal(d.subject_id, (lo, hi), d.t0, d.dt, values)


def oscillation_state(sig: BandSignal, h, max_age=120.0):
    """Sign trichotomy of the band signal at the grid point nearest ``h``.

    Returns "none" when ``h`` falls further than ``max_age`` outside the
    series span (no data implies no detected oscillation).
    """
    taus = sig.taus
    if h < taus[0] - max_age or h > taus[-1] + max_age:
        return STATE_NONE
    i = int(np.clip(round((h - sig.t0) / sig.dt), 0, sig.values.size - 1))
    v = sig.values[i]
    if v > 0:
        return STATE_UP
    if v < 0:
        return STATE_DOWN
    return STATE_NONE


def decompose(times, values, cfg: WaveletConfig = WaveletConfig(), subject_id=""):
    """Grid, transform and mask one residual series (full definitional path).

    The series mean is removed before the transform, matching the
    zero-mean null of the significance surrogates.
    """
    cfg.validate()
    g = grid_series(times, values, cfg.dt, cfg.max_gap, subject_id, demean=True)
    span = (g.values.size - 1) * g.dt
    periods = period_grid(cfg.p_min, min(cfg.p_max, span), cfg.df, cfg.dt)
    if periods.size == 0:
        raise BandError("series span too short for the requested periods")
    d = morlet_transform(g, periods, cfg.df)
    theta = significance_mask(d, g, cfg.alpha, cfg.nsim, cfg.seed)
    return g, replace(d, theta=theta)


def write_periodogram(d: WaveletDecomposition, path):
    """Dump ``tau_days,period_days,power,theta`` rows for external plotting."""
    theta = d.theta if d.theta is not None else np.zeros_like(d.power, dtype=np.int8)
    taus = d.taus
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_days", "period_days", "power", "theta"])
        for j, tau in enumerate(taus):
            for i, p in enumerate(d.periods):
                w.writerow([repr(float(tau)), repr(float(p)), repr(float(d.power[i, j])), int(theta[i, j])])


def _row_quantile(a, q):
    """Row-wise linear-interpolation quantile (same convention as np.quantile,
    computed with a single partition pass)."""
    n = a.shape[1]
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    frac = pos - lo
    if frac == 0.0:
        part = np.partition(a, lo, axis=1)
        return part[:, lo].copy()
    part = np.partition(a, (lo, lo + 1), axis=1)
    # same arithmetic as np.quantile's linear interpolation
    return part[:, lo] + frac * (part[:, lo + 1] - part[:, lo])


@dataclass(frozen=True)
class WaveFeatures:
    """Oscillation summary at the evaluation time for one subject."""

    states: tuple  # one state per band
    values: np.ndarray  # band signal values at the evaluation point
    t_eval: float  # grid time the states refer to (last measurement)
    stale: bool  # True when the series end is further than max_gap from h


class WaveletEngine:
    """Band states at the most recent measurement before a landmark.

    The transform at a single time point is a dot product against the
    wavelet kernel, so the engine anchors every grid at the series end and
    keys both kernel columns and surrogate draws by the offset from that
    end.  Surrogates are white noise at the observation times pushed
    through the data's interpolation, compressed to one complex weight per
    observation, making per-row Monte-Carlo thresholds cheap.  Results
    match the definitional path on the same grid with the same draws.
    """

    def __init__(self, cfg: WaveletConfig = WaveletConfig(), bands=DEFAULT_BANDS):
        self.cfg = cfg.validate()
        self.bands = tuple(bands)
        self.periods = period_grid(cfg.p_min, cfg.p_max, cfg.df, cfg.dt)
        self._band_sel = [
            (label, (self.periods >= lo) & (self.periods <= hi)) for label, lo, hi in self.bands
        ]
        self._recon = cfg.df * math.sqrt(cfg.dt) / (C_DELTA * PSI0)
        self._inv_sqrt_p = 1.0 / np.sqrt(self.periods)
        self._kernel = np.empty((self.periods.size, 0), dtype=complex)
        self._noise = np.empty((cfg.nsim, 0))
        self._noise_rng = np.random.default_rng(cfg.seed)
        self._thresh_cache = {}

    # -- deterministic, call-order-independent backing arrays ---------------

    def _ensure_kernel(self, n):
        have = self._kernel.shape[1]
        if n > have:
            offsets = -np.arange(have, n)  # sample at t_end - k*dt, Delta <= 0
            self._kernel = np.concatenate(
                [self._kernel, _kernel_block(self.periods, self.cfg.dt, offsets)], axis=1
            )

    def _ensure_noise(self, m):
        while self._noise.shape[1] < m:
            # one column at a time so draws depend only on the offset index
            col = self._noise_rng.standard_normal((self.cfg.nsim, 1))
            self._noise = np.concatenate([self._noise, col], axis=1)

    def surrogate_noise_obs(self, m):
        """Unit-variance surrogate draws for the last ``m`` observations, in
        ascending time order; lets external code reproduce thresholds."""
        self._ensure_noise(m)
        return self._noise[:, :m][:, ::-1].copy()

    # -- featurization -------------------------------------------------------

    def grid_for(self, times, values, subject_id="", min_len=None):
        """End-anchored, mean-removed grid over the observed span.

        ``min_len`` left-pads with masked zeros; padding changes nothing at
        the series end but lets the grid span any requested period range.
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        values = values - values.mean()
        dt = self.cfg.dt
        n = int(math.floor((times[-1] - times[0]) / dt + 1e-9)) + 1
        if min_len is not None:
            n = max(n, int(min_len))
        t0 = times[-1] - (n - 1) * dt
        taus = t0 + dt * np.arange(n)
        grid = np.interp(taus, times, values)
        valid = _gap_mask(taus, times, self.cfg.max_gap)
        grid[~valid] = 0.0
        return GriddedSeries(subject_id, float(t0), float(dt), grid, valid, times, values)

    def _compress_kernel(self, g):
        """Per-observation complex weights C with C @ obs_values = Wave(t_end)
        for any values interpolated onto this grid (masked points excluded).

        Works in the kernel's native offset orientation (column k = offset -k
        from the series end) to avoid reversed-stride copies.
        """
        taus = g.taus
        s = g.obs_times
        n, m = taus.size, s.size
        k_off = self._kernel[:, :n]
        j = np.clip(np.searchsorted(s, taus, side="right") - 1, 0, m - 2)
        lam = (taus - s[j]) / (s[j + 1] - s[j])
        w = g.valid.astype(float)
        left = (w * (1.0 - lam))[::-1].copy()  # offset order
        right = (w * lam)[::-1].copy()
        j_off = j[::-1]  # non-increasing, so segment runs stay contiguous
        run_starts = np.concatenate([[0], 1 + np.nonzero(np.diff(j_off))[0]])
        block_seg = j_off[run_starts]
        L = np.add.reduceat(k_off * left[None, :], run_starts, axis=1)
        R = np.add.reduceat(k_off * right[None, :], run_starts, axis=1)
        C = np.zeros((self.periods.size, m), dtype=complex)
        C[:, block_seg] += L
        C[:, block_seg + 1] += R
        return C

    def _thresholds(self, g):
        """(1 - alpha) pointwise power quantiles at the series end for
        unit-variance observation noise on this grid (scale by the variance)."""
        if self.cfg.alpha >= 1.0:
            return np.full(self.periods.size, -np.inf)
        m = g.obs_times.size
        key = ((g.obs_times[-1] - g.obs_times).tobytes(), g.valid.tobytes())
        cached = self._thresh_cache.get(key)
        if cached is not None:
            return cached
        self._ensure_noise(m)
        C = self._compress_kernel(g)
        noise = self._noise[:, :m][:, ::-1]
        # surrogates get the data's treatment: mean removal and their own
        # noise-scale estimate (self-normalized, so estimator noise cancels)
        noise = noise - noise.mean(axis=1, keepdims=True)
        sur_sigma2 = _noise_sd_rows(g.obs_times, noise) ** 2
        sur_sigma2 = np.where(sur_sigma2 > 0, sur_sigma2, 1.0)
        wave_sur = C @ noise.T  # (n_p, nsim)
        power = self.periods[:, None] * (wave_sur.real**2 + wave_sur.imag**2) / sur_sigma2[None, :]
        thresh = _row_quantile(power, 1.0 - self.cfg.alpha)
        if len(self._thresh_cache) > 50000:
            self._thresh_cache.clear()
        self._thresh_cache[key] = thresh
        return thresh

    def features(self, times, values, h):
        """Oscillation states and band values at ``h`` from data up to ``h``."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        keep = times <= h
        times, values = times[keep], values[keep]
        none = WaveFeatures(
            tuple(STATE_NONE for _ in self.bands),
            np.zeros(len(self.bands)),
            float(times[-1]) if times.size else math.nan,
            True,
        )
        if times.size < 3:  # under three observations no oscillation is testable
            return none
        if h - times[-1] > self.cfg.max_gap:
            return none
        if times[-1] - times[0] < self.cfg.dt:
            return none

        g = self.grid_for(times, values, "")
        n = g.values.size
        self._ensure_kernel(n)
        wave = self._kernel[:, :n] @ g.values[::-1]
        power = self.periods * (wave.real**2 + wave.imag**2)

        sigma = _surrogate_sigma(g)
        if sigma < _SIGMA_FLOOR:
            theta = np.zeros(self.periods.size, dtype=bool)
        else:
            theta = power > sigma**2 * self._thresholds(g)

        contrib = np.where(theta, wave.real * self._inv_sqrt_p, 0.0)
        vals = np.empty(len(self.bands))
        states = []
        for k, (label, sel) in enumerate(self._band_sel):
            s = self._recon * float(contrib[sel].sum())
            vals[k] = s
            states.append(STATE_UP if s > 0 else STATE_DOWN if s < 0 else STATE_NONE)
        return WaveFeatures(tuple(states), vals, float(times[-1]), False)
