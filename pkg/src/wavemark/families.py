"""Model families: fitted landmark pipelines and subject-level prediction.

A family bundles everything needed to turn a subject's measurement history
at a prediction time into a dynamic survival probability: the mixed-model
fit (where used), frozen feature transformations from the training data,
the stratified Cox fit on the stacked landmark dataset, and the training
quartiles behind the oscillation risk score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import SURVIVAL_COVARIATES
from .cox import CoxFit, fit_cox, predict_pi, score_category, score_quartiles
from .errors import ValidationError
from .landmark import (
    LandmarkGrid,
    build_locf,
    build_mixed,
    build_wavelet,
    last_value_before,
    potassium_category,
    states_to_indicators,
    K_HIGH,
    K_LOW,
    _mhat_and_residuals,
)
from .lmm import LmmFit, default_spec, fit_lmm
from .splines import eval_basis
from .wavelet import WaveletConfig, WaveletEngine

FAMILIES = ("locf1", "locf2", "mixed", "wavelet")


@dataclass(frozen=True)
class PipelineConfig:
    grid: LandmarkGrid = field(default_factory=LandmarkGrid.default)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    lmm_covariates: tuple = ("sex_male", "age_std", "ckd", "nyha_high")
    wavelet_variant: str = "categorical"


@dataclass
class FamilyModel:
    family: str
    grid: LandmarkGrid
    cox: CoxFit
    kept: tuple  # indices into the full builder design kept for fitting
    full_columns: tuple
    meta: dict
    lmm: LmmFit | None
    quartiles: tuple | None
    wavelet_cfg: WaveletConfig | None
    _engine: WaveletEngine | None = None

    @property
    def engine(self):
        if self.family == "wavelet" and self._engine is None:
            self._engine = WaveletEngine(self.wavelet_cfg, self.meta["bands"])
        return self._engine


def _drop_degenerate(ds):
    """Indices of columns the Cox fit can support on the training design.

    Constant columns are unidentifiable, and 0/1 indicators whose active or
    inactive cell carries no events have no finite MLE (the likelihood is
    monotone in that coefficient); both are removed before fitting and
    prediction re-applies the same selection.
    """
    spread = ds.X.max(axis=0) - ds.X.min(axis=0)
    kept = []
    for j in range(ds.X.shape[1]):
        if spread[j] <= 0:
            continue
        col = ds.X[:, j]
        if np.isin(col, (0.0, 1.0)).all():
            active = col == 1.0
            if ds.status[active].sum() == 0 or ds.status[~active].sum() == 0:
                continue
        kept.append(int(j))
    if not kept:
        raise ValidationError("every design column is constant or unsupported")
    return tuple(kept)


def _subset(ds, kept):
    from dataclasses import replace

    remap = {old: new for new, old in enumerate(kept)}
    groups = {}
    for name, idx in ds.term_groups.items():
        sub = tuple(remap[i] for i in idx if i in remap)
        if sub:
            groups[name] = sub
    return replace(
        ds,
        X=ds.X[:, list(kept)],
        columns=tuple(ds.columns[i] for i in kept),
        term_groups=groups,
    )


def fit_family(cohort, family, pcfg: PipelineConfig, lmm_fit=None, engine=None):
    """Fit one family end to end on ``cohort`` (the training data)."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    quartiles = None
    wavelet_cfg = None
    if family == "locf1":
        ds = build_locf(cohort, pcfg.grid, "continuous")
    elif family == "locf2":
        ds = build_locf(cohort, pcfg.grid, "categorical")
    else:
        if lmm_fit is None:
            lmm_fit = fit_lmm(cohort, default_spec(cohort, pcfg.lmm_covariates))
        if family == "mixed":
            ds = build_mixed(cohort, lmm_fit, pcfg.grid)
        else:
            wavelet_cfg = pcfg.wavelet
            if engine is None:
                engine = WaveletEngine(wavelet_cfg)
            ds = build_wavelet(cohort, lmm_fit, pcfg.grid, engine, pcfg.wavelet_variant)

    kept = _drop_degenerate(ds)
    sub = _subset(ds, kept)
    cox = fit_cox(sub)
    if family == "wavelet" and "oscillation" in cox.term_groups:
        try:
            quartiles = score_quartiles(cox, sub)
        except ValidationError:
            quartiles = None
    return FamilyModel(
        family=family,
        grid=pcfg.grid,
        cox=cox,
        kept=kept,
        full_columns=ds.columns,
        meta=ds.meta,
        lmm=lmm_fit if family in ("mixed", "wavelet") else None,
        quartiles=quartiles,
        wavelet_cfg=wavelet_cfg,
        _engine=engine if family == "wavelet" else None,
    )


def design_row(model: FamilyModel, subject, series, t):
    """Full feature row for one subject at time ``t`` (before column selection).

    Uses only measurements at or before ``t``; raises when the subject has
    none (the family's features are undefined there).
    """
    if series.times.size == 0 or series.times[0] > t:
        raise ValidationError(f"subject {subject.id!r} has no measurement at or before {t}")
    cov = [subject.covariate(c) for c in SURVIVAL_COVARIATES]
    fam = model.family
    if fam == "locf1":
        v = last_value_before(series, t)
        feats = np.atleast_1d(eval_basis(model.meta["basis"], v)).tolist()
    elif fam == "locf2":
        v = last_value_before(series, t)
        feats = [float(v < K_LOW), float(v > K_HIGH)]
    elif fam == "mixed":
        mhat, _, _ = _mhat_and_residuals(model.lmm, subject, series, t)
        feats = np.atleast_1d(eval_basis(model.meta["basis"], mhat)).tolist()
    else:
        mhat, times, resid = _mhat_and_residuals(model.lmm, subject, series, t)
        feats = np.atleast_1d(eval_basis(model.meta["basis"], mhat)).tolist()
        wf = model.engine.features(times, resid, t)
        if model.meta["variant"] == "categorical":
            feats += states_to_indicators(wf.states).tolist()
        else:
            feats += wf.values.tolist()
    return np.asarray(cov + feats, dtype=float)


def predict(model: FamilyModel, cohort, subject_id, t, w=None):
    """Dynamic prediction for one subject; returns (prediction, risk category).

    The category is the quartile-binned oscillation score (wavelet family
    only; ``None`` otherwise).
    """
    subject = cohort.subject(subject_id)
    if subject.event_time <= t:
        raise ValidationError(f"subject {subject_id!r} is not at risk at t={t}")
    series = cohort.series[subject_id]
    row = design_row(model, subject, series, t)[list(model.kept)]
    horizon = model.grid.horizon if w is None else float(w)
    pred = predict_pi(model.cox, row, t, horizon, subject_id=subject_id)
    category = None
    if model.family == "wavelet" and model.quartiles is not None and "oscillation" in model.cox.term_groups:
        category = score_category(model.cox, model.quartiles, row)
    return pred, category
