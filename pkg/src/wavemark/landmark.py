"""Stacked landmark datasets with administrative censoring at the horizon.

One row per (subject, landmark) for subjects still at risk with at least
one measurement available; events beyond the horizon are censored at the
horizon.  Feature variants: last observed value (spline-expanded or
low/normal/high categories), mixed-model subject mean at the landmark,
and the subject mean plus per-band oscillation states from the wavelet
engine.  Feature transformations (spline knots) are built on the rows of
the dataset being constructed unless a frozen basis is supplied, which is
how cross-validation keeps test folds untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cohort import SURVIVAL_COVARIATES
from .errors import ValidationError
from .lmm import empirical_bayes, predict_mean
from .splines import SplineBasis, eval_basis
from .wavelet import STATE_DOWN, STATE_NONE, STATE_UP, WaveletEngine

K_LOW = 3.5  # mmol/L, clinical hypokalemia cut-off
K_HIGH = 5.0  # mmol/L, clinical hyperkalemia cut-off


@dataclass(frozen=True)
class LandmarkGrid:
    times: tuple  # days, strictly increasing
    horizon: float  # days

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) == 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("landmark times must be non-empty and strictly increasing")
        if self.horizon <= 0:
            raise ValidationError("horizon must be positive")
        object.__setattr__(self, "times", times)

    @classmethod
    def default(cls):
        """1 to 5 years every 90 days, 6-month horizon."""
        return cls(tuple(np.arange(365.0, 1825.0 + 1e-9, 90.0)), 182.5)

    def stratum_for(self, t):
        """Greatest landmark at or before ``t``; error before the first one."""
        if t < self.times[0]:
            raise ValidationError(f"prediction time {t} is before the first landmark {self.times[0]}")
        idx = int(np.searchsorted(np.asarray(self.times), t, side="right")) - 1
        return self.times[idx]


@dataclass
class StackedLandmarkDataset:
    subject_ids: np.ndarray  # (n,) str
    landmark: np.ndarray  # (n,)
    exit_times: np.ndarray  # (n,), days since landmark, in (0, horizon]
    status: np.ndarray  # (n,) 1 = event within horizon
    X: np.ndarray  # (n, k)
    columns: tuple
    term_groups: dict
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return self.subject_ids.size

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "h_days", "exit_days", "status", *self.columns])
            for i in range(self.n_rows):
                w.writerow(
                    [
                        self.subject_ids[i],
                        repr(float(self.landmark[i])),
                        repr(float(self.exit_times[i])),
                        int(self.status[i]),
                        *[repr(float(v)) for v in self.X[i]],
                    ]
                )


def eligible_rows(cohort, grid):
    """(subject, landmark, exit, status) per the at-risk and availability rules."""
    rows = []
    for h in grid.times:
        for s in cohort.subjects:
            if s.event_time <= h:
                continue
            ser = cohort.series[s.id]
            if ser.times.size == 0 or ser.times[0] > h:
                continue
            exit_t = min(s.event_time, h + grid.horizon) - h
            status = 1 if (s.status == 1 and s.event_time <= h + grid.horizon) else 0
            rows.append((s, h, exit_t, status))
    return rows


def last_value_before(series, h):
    idx = int(np.searchsorted(series.times, h, side="right")) - 1
    return float(series.values[idx]) if idx >= 0 else None


def potassium_category(v):
    """Clinical categories from the cut-offs in routine use."""
    if v < K_LOW:
        return "low"
    if v > K_HIGH:
        return "high"
    return "normal"


def _assemble(cohort, rows, feat_cols, feat_names, feat_groups, meta):
    subjects = [r[0] for r in rows]
    cov = np.asarray([[s.covariate(c) for c in SURVIVAL_COVARIATES] for s in subjects], dtype=float)
    cov = cov.reshape(len(rows), len(SURVIVAL_COVARIATES))
    X = np.column_stack([cov, feat_cols]) if feat_cols.size else cov
    columns = (*SURVIVAL_COVARIATES, *feat_names)
    n_cov = len(SURVIVAL_COVARIATES)
    groups = {"covariates": tuple(range(n_cov))}
    for name, idx in feat_groups.items():
        groups[name] = tuple(n_cov + i for i in idx)
    return StackedLandmarkDataset(
        subject_ids=np.asarray([s.id for s in subjects], dtype=object),
        landmark=np.asarray([r[1] for r in rows], dtype=float),
        exit_times=np.asarray([r[2] for r in rows], dtype=float),
        status=np.asarray([r[3] for r in rows], dtype=np.int8),
        X=X,
        columns=columns,
        term_groups=groups,
        meta=meta,
    )


def _spline_block(values, basis, prefix):
    """Spline-expand a feature column; builds quartile knots when no basis is given.

    Boundary knots sit at the 1st/99th percentiles so sparse extreme values
    fall in the linear-extrapolation tails instead of giving the outermost
    basis columns support on a handful of rows (a quasi-separation hazard).
    """
    values = np.asarray(values, dtype=float)
    if basis is None:
        from .splines import quantile_knots

        interior = quantile_knots(values)
        lo, hi = np.quantile(values, (0.01, 0.99))
        if not (lo < interior[0] and interior[-1] < hi):
            lo, hi = float(values.min()), float(values.max())
        basis = SplineBasis(interior, (float(lo), float(hi)), include_intercept=False)
    block = eval_basis(basis, values).reshape(values.size, -1)
    names = tuple(f"cs({prefix})#{i + 1}" for i in range(block.shape[1]))
    return block, names, basis


def build_locf(cohort, grid, variant="continuous", basis=None):
    """Last-observation-carried-forward landmark dataset.

    ``variant="continuous"`` spline-expands the last value; ``"categorical"``
    uses the low/normal/high clinical categories (normal as reference).
    """
    rows = eligible_rows(cohort, grid)
    if not rows:
        raise ValidationError("no eligible (subject, landmark) rows")
    last = np.asarray([last_value_before(cohort.series[s.id], h) for s, h, _, _ in rows], dtype=float)
    if variant == "continuous":
        block, names, basis = _spline_block(last, basis, "last_k")
        groups = {"potassium": tuple(range(block.shape[1]))}
        meta = {"family": "locf1", "variant": variant, "basis": basis, "feature_ref": float(np.median(last))}
    elif variant == "categorical":
        block = np.column_stack([last < K_LOW, last > K_HIGH]).astype(float)
        names = ("last_k_low", "last_k_high")
        groups = {"potassium": (0, 1)}
        meta = {"family": "locf2", "variant": variant, "basis": None}
    else:
        raise ValidationError(f"unknown LOCF variant {variant!r}")
    return _assemble(cohort, rows, block, names, groups, meta)


def _mhat_and_residuals(lmm_fit, subject, series, h):
    """Landmark-truncated posterior mean at ``h`` plus de-trended values up to ``h``.

    Only measurements at or before the landmark enter, so rebuilding from a
    truncated series gives identical features (no look-ahead).
    """
    sub = series.up_to(h)
    b = empirical_bayes(lmm_fit, subject, sub.times, sub.values)
    mhat = predict_mean(lmm_fit, b, subject, float(h))
    resid = sub.values - predict_mean(lmm_fit, b, subject, sub.times) if len(sub) else np.empty(0)
    return mhat, sub.times, resid


class _EBFeaturizer:
    """Landmark-truncated posterior means and residuals with per-subject
    design caching (exactly :func:`_mhat_and_residuals`, amortized over the
    many (subject, landmark) rows of a stacked dataset)."""

    def __init__(self, lmm_fit, cohort):
        self.fit = lmm_fit
        self._cache = {}
        self._cohort = cohort
        self._h_basis = {}

    def _designs(self, sid):
        hit = self._cache.get(sid)
        if hit is None:
            subject = self._cohort.subject(sid)
            ser = self._cohort.series[sid]
            X, Z = self.fit.spec.designs(subject, ser.times)
            hit = (ser.times, ser.values, X, Z, X @ self.fit.beta)
            self._cache[sid] = hit
        return hit

    def _rows_at(self, subject, h):
        basis_rows = self._h_basis.get(h)
        if basis_rows is None:
            # covariates differ per subject; cache only the shared time part
            tb = (
                np.atleast_1d(eval_basis(self.fit.spec.time_basis, float(h)))
                if self.fit.spec.time_basis is not None
                else np.empty(0)
            )
            self._h_basis[h] = tb
            basis_rows = tb
        cov = [subject.covariate(c) for c in self.fit.spec.covariates]
        x_row = np.concatenate([[1.0], cov, basis_rows])
        if self.fit.spec.random_time and self.fit.spec.time_basis is not None:
            z_row = np.concatenate([[1.0], basis_rows])
        else:
            z_row = np.ones(1)
        return x_row, z_row

    def mhat_resid(self, subject, h):
        times, values, X, Z, fitted_fixed = self._designs(subject.id)
        n = int(np.searchsorted(times, h, side="right"))
        q = self.fit.q
        if n == 0:
            b = np.zeros(q)
        else:
            r = values[:n] - fitted_fixed[:n]
            Zp = Z[:n]
            D = self.fit.D
            u = Zp.T @ r
            b = np.linalg.solve(D @ (Zp.T @ Zp) + self.fit.sigma2 * np.eye(q), D @ u)
        x_row, z_row = self._rows_at(subject, float(h))
        mhat = float(x_row @ self.fit.beta + z_row @ b)
        resid = values[:n] - (fitted_fixed[:n] + Z[:n] @ b)
        return mhat, times[:n], resid


def build_mixed(cohort, lmm_fit, grid, basis=None):
    """Landmark dataset carrying the spline-expanded subject mean at each landmark."""
    rows = eligible_rows(cohort, grid)
    if not rows:
        raise ValidationError("no eligible (subject, landmark) rows")
    feat = _EBFeaturizer(lmm_fit, cohort)
    mhat = np.asarray([feat.mhat_resid(s, h)[0] for s, h, _, _ in rows], dtype=float)
    block, names, basis = _spline_block(mhat, basis, "m_hat")
    groups = {"potassium": tuple(range(block.shape[1]))}
    meta = {"family": "mixed", "variant": "continuous", "basis": basis, "feature_ref": float(np.median(mhat))}
    return _assemble(cohort, rows, block, names, groups, meta)


def state_indicator_columns(bands):
    names = []
    for label, _, _ in bands:
        names.append(f"osc[{label}]:{STATE_UP}")
        names.append(f"osc[{label}]:{STATE_DOWN}")
    return tuple(names)


def states_to_indicators(states):
    out = np.zeros(2 * len(states))
    for k, st in enumerate(states):
        if st == STATE_UP:
            out[2 * k] = 1.0
        elif st == STATE_DOWN:
            out[2 * k + 1] = 1.0
    return out


def build_wavelet(cohort, lmm_fit, grid, engine: WaveletEngine, variant="categorical", basis=None):
    """Landmark dataset with the subject mean plus short-term oscillation features.

    Per row the subject's measurements up to the landmark are de-trended
    with the landmark-truncated posterior mean and pushed through the
    wavelet engine; the categorical variant keeps per-band up/down states,
    the continuous variant keeps the band signal values.
    """
    rows = eligible_rows(cohort, grid)
    if not rows:
        raise ValidationError("no eligible (subject, landmark) rows")
    n = len(rows)
    mhat = np.empty(n)
    n_bands = len(engine.bands)
    svals = np.zeros((n, n_bands))
    states = np.empty((n, n_bands), dtype=object)
    feat = _EBFeaturizer(lmm_fit, cohort)
    for i, (s, h, _, _) in enumerate(rows):
        m, times, resid = feat.mhat_resid(s, h)
        mhat[i] = m
        feats = engine.features(times, resid, h)
        svals[i] = feats.values
        states[i] = feats.states

    block, names, basis = _spline_block(mhat, basis, "m_hat")
    groups = {"potassium": tuple(range(block.shape[1]))}
    if variant == "categorical":
        osc = np.vstack([states_to_indicators(states[i]) for i in range(n)])
        osc_names = state_indicator_columns(engine.bands)
    elif variant == "continuous":
        osc = svals
        osc_names = tuple(f"s[{label}]" for label, _, _ in engine.bands)
    else:
        raise ValidationError(f"unknown wavelet variant {variant!r}")
    feat = np.column_stack([block, osc])
    all_names = (*names, *osc_names)
    groups["oscillation"] = tuple(range(block.shape[1], block.shape[1] + osc.shape[1]))
    meta = {
        "family": "wavelet",
        "variant": variant,
        "basis": basis,
        "feature_ref": float(np.median(mhat)),
        "bands": tuple(engine.bands),
    }
    return _assemble(cohort, rows, feat, all_names, groups, meta)
