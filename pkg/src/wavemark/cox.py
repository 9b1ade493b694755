"""Stratified Cox proportional hazards on stacked landmark data.

Newton-Raphson on the stratified partial log-likelihood with Breslow tie
handling and step-halving, cluster-robust sandwich covariance over
per-subject summed score residuals (the same subject re-enters the stack
at several landmarks), Breslow baseline cumulative hazard per landmark
stratum, and the dynamic survival prediction
pi = exp(-H0(w) * exp(lp)).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .errors import ConvergenceError, NoEventsError, SeparationError, SingularDesignError, ValidationError

logger = logging.getLogger(__name__)

MAX_ITER = 100
SCORE_TOL = 1e-8
BETA_DIVERGENCE = 50.0


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous non-decreasing step function starting at 0."""

    times: np.ndarray
    values: np.ndarray  # cumulative values at the jump times

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        values = np.ascontiguousarray(self.values, dtype=float)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        vals = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return float(vals) if np.isscalar(t) else vals


@dataclass(frozen=True)
class CoxFit:
    beta: np.ndarray
    columns: tuple
    term_groups: dict
    naive_cov: np.ndarray
    robust_cov: np.ndarray
    baseline: dict  # stratum -> StepFunction (time measured from the landmark)
    strata_levels: tuple
    loglik: float
    n_iter: int
    converged: bool
    max_score: float
    n_rows: int
    n_events: int

    def coefficient(self, name):
        return float(self.beta[self.columns.index(name)])

    def se(self, name, robust=True):
        cov = self.robust_cov if robust else self.naive_cov
        return float(math.sqrt(cov[self.columns.index(name), self.columns.index(name)]))


@dataclass(frozen=True)
class DynamicPrediction:
    subject_id: str
    t: float  # prediction time, days
    w: float  # horizon, days
    pi: float  # probability of surviving (t, t + w]
    linear_predictor: float
    stratum: float


def _stratum_pass(time, status, X, lp, loglik_only=False):
    """Log-likelihood, score, information and event aggregates for one stratum.

    Rows sorted descending in time turn every risk set into a running prefix
    (Breslow ties: all events at a tied time share the same risk set).
    """
    order = np.argsort(-time, kind="stable")
    t_s, d_s, X_s, lp_s = time[order], status[order], X[order], lp[order]
    w = np.exp(lp_s)
    neg_t = -t_s
    ev_times = np.unique(t_s[d_s == 1])[::-1]
    k = X.shape[1]
    s0 = 0.0
    s1 = np.zeros(k)
    s2 = np.zeros((k, k))
    i = 0
    loglik = 0.0
    score = np.zeros(k)
    info = np.zeros((k, k))
    jumps = []
    for u in ev_times:
        j = int(np.searchsorted(neg_t, -u, side="right"))
        if j > i:
            wb, Xb = w[i:j], X_s[i:j]
            s0 += float(wb.sum())
            if not loglik_only:
                s1 += wb @ Xb
                s2 += Xb.T @ (wb[:, None] * Xb)
            i = j
        lo = int(np.searchsorted(neg_t, -u, side="left"))
        ev_rows = lo + np.nonzero(d_s[lo:j] == 1)[0]
        d_u = ev_rows.size
        loglik += float(lp_s[ev_rows].sum()) - d_u * math.log(s0)
        if not loglik_only:
            xbar = s1 / s0
            score += X_s[ev_rows].sum(axis=0) - d_u * xbar
            info += d_u * (s2 / s0 - np.outer(xbar, xbar))
            jumps.append((float(u), d_u / s0, xbar))
    return loglik, score, info, jumps


def fit_cox_arrays(time, status, X, strata=None, cluster=None, columns=None, term_groups=None):
    """Core fit on plain arrays; see :func:`fit_cox` for the dataset wrapper."""
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=int)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != time.size or status.size != time.size:
        raise ValidationError("misaligned survival arrays")
    n, k = X.shape
    strata = np.zeros(n) if strata is None else np.asarray(strata)
    cluster = np.arange(n) if cluster is None else np.asarray(cluster)
    columns = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(k))
    term_groups = dict(term_groups) if term_groups else {}

    # keep only strata that carry events
    levels = []
    keep = np.zeros(n, dtype=bool)
    for lev in np.unique(strata):
        sel = strata == lev
        if status[sel].sum() == 0:
            logger.warning("dropping stratum %r: no events", lev)
            continue
        levels.append(lev)
        keep |= sel
    if not levels:
        raise NoEventsError("no events in any stratum")
    time, status, X_k, strata_k, cluster_k = time[keep], status[keep], X[keep], strata[keep], cluster[keep]

    # identifiability: columns must vary within the retained strata
    Xc = X_k.copy()
    for lev in levels:
        sel = strata_k == lev
        Xc[sel] -= Xc[sel].mean(axis=0)
    if np.linalg.matrix_rank(Xc) < k:
        raise SingularDesignError("features are collinear or constant within strata")

    parts = [(time[strata_k == lev], status[strata_k == lev], X_k[strata_k == lev]) for lev in levels]

    beta = np.zeros(k)
    loglik = -np.inf
    n_iter = 0
    for n_iter in range(1, MAX_ITER + 1):
        score = np.zeros(k)
        info = np.zeros((k, k))
        ll = 0.0
        for t_p, d_p, x_p in parts:
            lp = x_p @ beta
            l_i, s_i, i_i, _ = _stratum_pass(t_p, d_p, x_p, lp)
            ll += l_i
            score += s_i
            info += i_i
        max_score = float(np.max(np.abs(score)))
        if float(np.linalg.norm(beta)) > BETA_DIVERGENCE:
            # divergent coefficients; a vanished score out here is the
            # monotone-likelihood plateau, not a usable optimum
            raise SeparationError("separation: partial likelihood is monotone in some direction")
        if max_score < SCORE_TOL:
            loglik = ll
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularDesignError("singular information matrix") from None
        # step halving keeps the partial likelihood monotone; the tolerance
        # stops float-level comparisons from stalling the quadratic tail
        accept_tol = 1e-10 * (1.0 + abs(ll))
        new_beta = beta + step
        for _ in range(30):
            ll_new = sum(
                _stratum_pass(t_p, d_p, x_p, x_p @ new_beta, loglik_only=True)[0]
                for t_p, d_p, x_p in parts
            )
            if ll_new >= ll - accept_tol or not np.isfinite(ll):
                break
            step *= 0.5
            new_beta = beta + step
        beta = new_beta
        loglik = ll
    else:
        raise ConvergenceError(
            "Cox Newton-Raphson did not converge", n_iter=MAX_ITER, max_score=max_score
        )

    # final aggregates at beta-hat
    score = np.zeros(k)
    info = np.zeros((k, k))
    loglik = 0.0
    jumps_by_level = {}
    for lev, (t_p, d_p, x_p) in zip(levels, parts):
        lp = x_p @ beta
        l_i, s_i, i_i, jumps = _stratum_pass(t_p, d_p, x_p, lp)
        loglik += l_i
        score += s_i
        info += i_i
        jumps_by_level[lev] = jumps
    max_score = float(np.max(np.abs(score)))
    converged = max_score < SCORE_TOL

    naive_cov = np.linalg.pinv(info)
    resid = _score_residuals(levels, parts, beta)
    # cluster-summed score residuals over the retained rows
    order_rows = np.concatenate([np.nonzero(strata_k == lev)[0] for lev in levels])
    U = np.zeros((time.size, k))
    U[order_rows] = resid
    M = np.zeros((k, k))
    for cid in np.unique(cluster_k):
        g = U[cluster_k == cid].sum(axis=0)
        M += np.outer(g, g)
    robust_cov = naive_cov @ M @ naive_cov

    baseline = {
        lev: StepFunction(
            np.asarray([u for u, dh, _ in sorted(jumps_by_level[lev])]),
            np.cumsum([dh for u, dh, _ in sorted(jumps_by_level[lev])]),
        )
        for lev in levels
    }
    return CoxFit(
        beta=beta,
        columns=columns,
        term_groups=term_groups,
        naive_cov=naive_cov,
        robust_cov=robust_cov,
        baseline=baseline,
        strata_levels=tuple(sorted(float(lev) for lev in levels)),
        loglik=float(loglik),
        n_iter=n_iter,
        converged=converged,
        max_score=max_score,
        n_rows=int(time.size),
        n_events=int(status.sum()),
    )


def _score_residuals(levels, parts, beta):
    """Per-row score residuals, stratum by stratum, in ``parts`` row order."""
    out = []
    for lev, (t_p, d_p, x_p) in zip(levels, parts):
        lp = x_p @ beta
        _, _, _, jumps = _stratum_pass(t_p, d_p, x_p, lp)
        jumps = sorted(jumps)  # ascending event times
        u_times = np.asarray([u for u, _, _ in jumps])
        dh = np.asarray([d for _, d, _ in jumps])
        xbar = np.vstack([xb for _, _, xb in jumps]) if jumps else np.zeros((0, x_p.shape[1]))
        cumA = np.concatenate([[0.0], np.cumsum(dh)])
        cumB = np.vstack([np.zeros(x_p.shape[1]), np.cumsum(xbar * dh[:, None], axis=0)])
        pos = np.searchsorted(u_times, t_p, side="right")
        A = cumA[pos]
        B = cumB[pos]
        expect = np.exp(lp)[:, None] * (x_p * A[:, None] - B)
        observed = np.zeros_like(x_p)
        ev = d_p == 1
        if np.any(ev):
            idx = np.searchsorted(u_times, t_p[ev])
            observed[ev] = x_p[ev] - xbar[idx]
        out.append(observed - expect)
    return np.vstack(out)


def fit_cox(ds, cluster="subject"):
    """Fit on a stacked landmark dataset: strata = landmark, cluster = subject."""
    return fit_cox_arrays(
        ds.exit_times,
        ds.status,
        ds.X,
        strata=ds.landmark,
        cluster=ds.subject_ids if cluster == "subject" else None,
        columns=ds.columns,
        term_groups=ds.term_groups,
    )


def breslow_baseline(fit, ds=None):
    """Per-stratum cumulative baseline hazard step functions.

    Already computed during fitting; exposed for direct inspection and for
    recomputation on alternative data when ``ds`` is given.
    """
    if ds is None:
        return dict(fit.baseline)
    refit = {}
    for lev in np.unique(ds.landmark):
        sel = ds.landmark == lev
        if ds.status[sel].sum() == 0:
            refit[float(lev)] = StepFunction(np.empty(0), np.empty(0))
            continue
        lp = ds.X[sel] @ fit.beta
        _, _, _, jumps = _stratum_pass(ds.exit_times[sel], ds.status[sel].astype(int), ds.X[sel], lp)
        jumps = sorted(jumps)
        refit[float(lev)] = StepFunction(
            np.asarray([u for u, _, _ in jumps]), np.cumsum([d for _, d, _ in jumps])
        )
    return refit


def predict_pi(fit, x, t, w, subject_id="", grid=None):
    """Dynamic survival probability over the next ``w`` days from time ``t``.

    ``t`` maps to the greatest fitted landmark stratum at or before it.
    """
    levels = np.asarray(fit.strata_levels)
    if t < levels[0]:
        raise ValidationError(f"prediction time {t} is before the first fitted landmark {levels[0]}")
    stratum = float(levels[int(np.searchsorted(levels, t, side="right")) - 1])
    lp = float(np.asarray(x, dtype=float) @ fit.beta)
    h0 = fit.baseline[stratum](w)
    pi = math.exp(-h0 * math.exp(lp))
    return DynamicPrediction(subject_id, float(t), float(w), pi, lp, stratum)


NO_OSCILLATION = "no-oscillation"


def score_quartiles(fit, ds):
    """Training quartiles of the oscillation partial linear predictor.

    Computed over rows with at least one active oscillation feature; rows
    with none belong to the separate no-oscillation category.
    """
    idx = fit.term_groups.get("oscillation")
    if not idx:
        raise ValidationError("fit has no oscillation term group")
    idx = list(idx)
    active = np.any(ds.X[:, idx] != 0.0, axis=1)
    if active.sum() < 4:
        raise ValidationError("too few oscillating rows to form quartiles")
    partial = ds.X[np.ix_(np.nonzero(active)[0], idx)] @ fit.beta[idx]
    return tuple(float(q) for q in np.quantile(partial, (0.25, 0.5, 0.75)))


def score_category(fit, quartiles, x):
    """Quartile-binned oscillation risk category, or the no-oscillation class."""
    idx = list(fit.term_groups["oscillation"])
    x = np.asarray(x, dtype=float)
    if not np.any(x[idx] != 0.0):
        return NO_OSCILLATION
    partial = float(x[idx] @ fit.beta[idx])
    q1, q2, q3 = quartiles
    if partial <= q1:
        return "1"
    if partial <= q2:
        return "2"
    if partial <= q3:
        return "3"
    return "4"


def wald_test(fit, group, robust=True):
    """Joint Wald chi-square test that every coefficient in ``group`` is zero."""
    idx = list(fit.term_groups[group])
    cov = fit.robust_cov if robust else fit.naive_cov
    sub = cov[np.ix_(idx, idx)]
    b = fit.beta[idx]
    stat = float(b @ np.linalg.pinv(sub) @ b)
    df = len(idx)
    return stat, df, float(chi2.sf(stat, df))


def coefficient_table(fit, level=0.95):
    """Rows of term, coefficient, robust SE, normal CI and Wald p-value."""
    z = norm.ppf(0.5 + level / 2.0)
    rows = []
    for j, name in enumerate(fit.columns):
        se = math.sqrt(max(fit.robust_cov[j, j], 0.0))
        b = float(fit.beta[j])
        p = 2.0 * norm.sf(abs(b) / se) if se > 0 else math.nan
        rows.append(
            {
                "term": name,
                "coef": b,
                "se_robust": se,
                "ci_low": b - z * se,
                "ci_high": b + z * se,
                "p_value": p,
            }
        )
    return rows


def write_coefficient_table(fit, path, level=0.95):
    rows = coefficient_table(fit, level)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "coef", "se_robust", "ci_low", "ci_high", "p_value"])
        for r in rows:
            w.writerow(
                [r["term"], repr(r["coef"]), repr(r["se_robust"]), repr(r["ci_low"]), repr(r["ci_high"]), repr(r["p_value"])]
            )
