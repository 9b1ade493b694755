"""Predictive-accuracy comparison under subject-level cross-validation.

IPCW time-dependent AUC and Brier score at fixed prediction times with a
common horizon: censoring weights come from the Kaplan-Meier estimate of
the censoring distribution on each test fold, test-fold predictions are
pooled across folds before scoring, and the covariate-free reference is
the conditional Kaplan-Meier survival among test subjects at risk.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError, WeightsError
from .families import FamilyModel, PipelineConfig, fit_family, predict
from .landmark import LandmarkGrid
from .lmm import default_spec, fit_lmm
from .wavelet import WaveletEngine


@dataclass(frozen=True)
class EvalConfig:
    prediction_times: tuple = (365.0, 730.0, 1095.0)
    horizon: float = 182.5
    folds: int = 10
    seed: int = 0
    workers: int | None = None  # None = one process per available core, capped at folds

    def validate(self):
        if self.folds < 2:
            raise ValidationError("need at least 2 folds")
        if self.horizon <= 0 or len(self.prediction_times) == 0:
            raise ValidationError("invalid evaluation horizon or prediction times")
        return self


@dataclass(frozen=True)
class EvalRow:
    model: str
    pred_time: float
    auc_pct: float
    brier_pct: float
    brier_reduction_pct: float


@dataclass
class EvalReport:
    rows: list
    fold_rows: list  # (model, pred_time, fold, auc, brier), NaN when undefined
    config: EvalConfig

    def row(self, model, pred_time):
        for r in self.rows:
            if r.model == model and r.pred_time == pred_time:
                return r
        raise KeyError((model, pred_time))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "pred_time_days", "auc_pct", "brier_pct", "brier_reduction_pct"])
            for r in self.rows:
                w.writerow(
                    [r.model, repr(r.pred_time), repr(r.auc_pct), repr(r.brier_pct), repr(r.brier_reduction_pct)]
                )


def censoring_km(times, status):
    """Kaplan-Meier of the censoring distribution (censorings are the events;
    deaths at tied times stay in the risk set)."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=int)
    order = np.argsort(times, kind="stable")
    t_s, d_s = times[order], status[order]
    cens_times = np.unique(t_s[d_s == 0])
    jumps, factors = [], []
    for c in cens_times:
        n_at = int((t_s >= c).sum())
        m_c = int(((t_s == c) & (d_s == 0)).sum())
        jumps.append(c)
        factors.append(1.0 - m_c / n_at)
    surv = np.cumprod(factors) if factors else np.empty(0)
    jumps = np.asarray(jumps)

    def G(u, left=False):
        side = "left" if left else "right"
        idx = int(np.searchsorted(jumps, u, side=side)) - 1
        return float(surv[idx]) if idx >= 0 else 1.0

    return G


def censoring_weights(times, status, t, w):
    """IPCW weights for subjects at risk at ``t`` over the window (t, t+w].

    Cases weigh 1/G(Z-), survivors past the window 1/G(t+w), subjects
    censored inside the window weigh 0.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=int)
    if np.any(times <= t):
        raise ValidationError("censoring weights expect subjects at risk at t")
    G = censoring_km(times, status)
    end = t + w
    out = np.zeros(times.size)
    for i, (z, d) in enumerate(zip(times, status)):
        if z <= end and d == 1:
            g = G(z, left=True)
            if g <= 0:
                raise WeightsError("inestimable weights: censoring survival hit zero before a case")
            out[i] = 1.0 / g
        elif z > end:
            g = G(end)
            if g <= 0:
                raise WeightsError("inestimable weights: no usable controls beyond the horizon")
            out[i] = 1.0 / g
        # censored inside the window: weight stays 0
    return out


def auc_t(pi, is_case, is_control, weights):
    """IPCW concordance of risk (1 - pi) between cases and controls; ties count half."""
    pi = np.asarray(pi, dtype=float)
    risk = 1.0 - pi
    w = np.asarray(weights, dtype=float)
    ci = np.asarray(is_case, dtype=bool)
    co = np.asarray(is_control, dtype=bool)
    if not ci.any() or not co.any():
        raise ValidationError("AUC needs at least one case and one control")
    rc, wc = risk[ci], w[ci]
    rn, wn = risk[co], w[co]
    pair_w = wc[:, None] * wn[None, :]
    conc = (rc[:, None] > rn[None, :]) + 0.5 * (rc[:, None] == rn[None, :])
    denom = pair_w.sum()
    if denom <= 0:
        raise ValidationError("AUC weights sum to zero")
    return float((pair_w * conc).sum() / denom)


def brier_t(pi, survived, weights):
    """IPCW mean squared error of the survival prediction over the window."""
    pi = np.asarray(pi, dtype=float)
    s = np.asarray(survived, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValidationError("Brier weights sum to zero")
    return float((w * (s - pi) ** 2).sum() / total)


def km_conditional(times, status, t, w):
    """Kaplan-Meier probability of surviving (t, t+w] among subjects at risk at t."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=int)
    at = times > t
    t_s, d_s = times[at], status[at]
    if t_s.size == 0:
        raise ValidationError("no subjects at risk at t")
    surv = 1.0
    for u in np.unique(t_s[(d_s == 1) & (t_s <= t + w)]):
        n_at = int((t_s >= u).sum())
        d_u = int(((t_s == u) & (d_s == 1)).sum())
        surv *= 1.0 - d_u / n_at
    return float(surv)


def _fold_ids(cohort, folds, seed):
    ids = sorted(s.id for s in cohort.subjects)
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [sorted(ids[j] for j in chunk) for chunk in np.array_split(perm, folds)]


def _run_fold(args):
    cohort, test_ids, families, pcfg, ecfg = args
    test_set = set(test_ids)
    train = cohort.subset([s.id for s in cohort.subjects if s.id not in test_set])
    test = cohort.subset(test_ids)

    shared_lmm = None
    if any(f in ("mixed", "wavelet") for f in families):
        shared_lmm = fit_lmm(train, default_spec(train, pcfg.lmm_covariates))
    engine = WaveletEngine(pcfg.wavelet) if "wavelet" in families else None
    models = {f: fit_family(train, f, pcfg, lmm_fit=shared_lmm, engine=engine) for f in families}

    out = {}
    for t in ecfg.prediction_times:
        elig = [
            s
            for s in test.subjects
            if s.event_time > t and test.series[s.id].times.size and test.series[s.id].times[0] <= t
        ]
        if not elig:
            out[t] = None
            continue
        z = np.asarray([s.event_time for s in elig])
        d = np.asarray([s.status for s in elig], dtype=int)
        pis = {}
        for fam, model in models.items():
            pis[fam] = np.asarray([predict(model, test, s.id, t, ecfg.horizon)[0].pi for s in elig])
        # covariate-free reference: conditional KM among test subjects at risk at t
        all_z = np.asarray([s.event_time for s in test.subjects])
        all_d = np.asarray([s.status for s in test.subjects], dtype=int)
        pis["null"] = np.full(len(elig), km_conditional(all_z, all_d, t, ecfg.horizon))
        weights = censoring_weights(z, d, t, ecfg.horizon)
        out[t] = {"z": z, "d": d, "pis": pis, "weights": weights}
    return out


def crossvalidate(cohort, families, pcfg: PipelineConfig, ecfg: EvalConfig):
    """Subject-level k-fold cross-validated AUC(t), Brier and Brier reduction.

    Pipelines are refit per training fold (knots, quartiles and the mixed
    model all training-derived); test predictions are pooled across folds
    before scoring.  Every metric is deterministic given the seeds.
    """
    ecfg.validate()
    fold_ids = _fold_ids(cohort, ecfg.folds, ecfg.seed)
    tasks = [(cohort, ids, tuple(families), pcfg, ecfg) for ids in fold_ids]
    workers = ecfg.workers
    if workers is None:
        workers = min(len(tasks), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fold_results = list(pool.map(_run_fold, tasks))
    else:
        fold_results = [_run_fold(task) for task in tasks]

    model_names = [*families, "null"]
    rows = []
    fold_rows = []
    for t in ecfg.prediction_times:
        chunks = [fr[t] for fr in fold_results if fr[t] is not None]
        if not chunks:
            raise ValidationError(f"no eligible test subjects at prediction time {t}")
        z = np.concatenate([c["z"] for c in chunks])
        d = np.concatenate([c["d"] for c in chunks])
        weights = np.concatenate([c["weights"] for c in chunks])
        end = t + ecfg.horizon
        is_case = (z <= end) & (d == 1)
        is_control = z > end
        survived = is_control.astype(float)
        used = is_case | is_control
        for name in model_names:
            pi = np.concatenate([c["pis"][name] for c in chunks])
            auc = auc_t(pi[used], is_case[used], is_control[used], weights[used])
            brier = brier_t(pi[used], survived[used], weights[used])
            rows.append((name, t, auc, brier))
            for fold_i, c in enumerate([fr[t] for fr in fold_results]):
                if c is None:
                    fold_rows.append((name, t, fold_i, float("nan"), float("nan")))
                    continue
                zc, dc, wc = c["z"], c["d"], c["weights"]
                cc = (zc <= end) & (dc == 1)
                oo = zc > end
                uu = cc | oo
                if cc.any() and oo.any():
                    fold_rows.append(
                        (
                            name,
                            t,
                            fold_i,
                            auc_t(c["pis"][name][uu], cc[uu], oo[uu], wc[uu]),
                            brier_t(c["pis"][name][uu], oo[uu].astype(float), wc[uu]),
                        )
                    )
                else:
                    fold_rows.append((name, t, fold_i, float("nan"), float("nan")))

    report_rows = []
    for name, t, auc, brier in rows:
        null_brier = next(b for n2, t2, _, b in rows if n2 == "null" and t2 == t)
        reduction = 100.0 * (null_brier - brier) / null_brier if null_brier > 0 else float("nan")
        report_rows.append(EvalRow(name, t, 100.0 * auc, 100.0 * brier, reduction))
    return EvalReport(report_rows, fold_rows, ecfg)
