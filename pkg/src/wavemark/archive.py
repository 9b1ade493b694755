"""Versioned model archive: lossless JSON round trip of a fitted family.

Floats serialize through ``repr`` (shortest round-trip representation), so
save -> load -> predict reproduces fit -> predict bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .cox import CoxFit, StepFunction
from .errors import ArchiveError
from .families import FamilyModel
from .landmark import LandmarkGrid
from .lmm import LmmFit, LmmSpec
from .splines import SplineBasis
from .wavelet import WaveletConfig

FORMAT_VERSION = 1


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _basis_dump(b):
    if b is None:
        return None
    return {
        "interior_knots": list(b.interior_knots),
        "boundary": list(b.boundary),
        "include_intercept": b.include_intercept,
    }


def _basis_load(d):
    if d is None:
        return None
    return SplineBasis(tuple(d["interior_knots"]), tuple(d["boundary"]), d["include_intercept"])


def _lmm_dump(fit):
    if fit is None:
        return None
    return {
        "covariates": list(fit.spec.covariates),
        "time_basis": _basis_dump(fit.spec.time_basis),
        "random_time": fit.spec.random_time,
        "beta": _arr(fit.beta),
        "coef_names": list(fit.coef_names),
        "chol_D": _arr(fit.chol_D),
        "sigma2": fit.sigma2,
        "loglik": fit.loglik,
        "fixed_cov": _arr(fit.fixed_cov),
        "n_subjects": fit.n_subjects,
        "n_obs": fit.n_obs,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
        "n_iter": fit.n_iter,
    }


def _lmm_load(d):
    if d is None:
        return None
    spec = LmmSpec(tuple(d["covariates"]), _basis_load(d["time_basis"]), d["random_time"])
    return LmmFit(
        spec=spec,
        beta=np.asarray(d["beta"]),
        coef_names=tuple(d["coef_names"]),
        chol_D=np.asarray(d["chol_D"]),
        sigma2=d["sigma2"],
        loglik=d["loglik"],
        fixed_cov=np.asarray(d["fixed_cov"]),
        n_subjects=d["n_subjects"],
        n_obs=d["n_obs"],
        converged=d["converged"],
        grad_norm=d["grad_norm"],
        n_iter=d["n_iter"],
    )


def _cox_dump(fit):
    return {
        "beta": _arr(fit.beta),
        "columns": list(fit.columns),
        "term_groups": {k: list(v) for k, v in fit.term_groups.items()},
        "naive_cov": _arr(fit.naive_cov),
        "robust_cov": _arr(fit.robust_cov),
        "baseline": [
            {"stratum": float(lev), "times": _arr(sf.times), "values": _arr(sf.values)}
            for lev, sf in sorted(fit.baseline.items())
        ],
        "strata_levels": list(fit.strata_levels),
        "loglik": fit.loglik,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "max_score": fit.max_score,
        "n_rows": fit.n_rows,
        "n_events": fit.n_events,
    }


def _cox_load(d):
    return CoxFit(
        beta=np.asarray(d["beta"]),
        columns=tuple(d["columns"]),
        term_groups={k: tuple(v) for k, v in d["term_groups"].items()},
        naive_cov=np.asarray(d["naive_cov"]),
        robust_cov=np.asarray(d["robust_cov"]),
        baseline={
            b["stratum"]: StepFunction(np.asarray(b["times"]), np.asarray(b["values"]))
            for b in d["baseline"]
        },
        strata_levels=tuple(d["strata_levels"]),
        loglik=d["loglik"],
        n_iter=d["n_iter"],
        converged=d["converged"],
        max_score=d["max_score"],
        n_rows=d["n_rows"],
        n_events=d["n_events"],
    )


def save_model(model: FamilyModel, path, config_snapshot=None):
    meta = dict(model.meta)
    basis = meta.pop("basis", None)
    bands = meta.pop("bands", None)
    doc = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "grid": {"times": list(model.grid.times), "horizon": model.grid.horizon},
        "cox": _cox_dump(model.cox),
        "kept": list(model.kept),
        "full_columns": list(model.full_columns),
        "meta": meta,
        "feature_basis": _basis_dump(basis),
        "bands": [list(b) for b in bands] if bands is not None else None,
        "lmm": _lmm_dump(model.lmm),
        "quartiles": list(model.quartiles) if model.quartiles is not None else None,
        "wavelet_cfg": vars(model.wavelet_cfg) if model.wavelet_cfg is not None else None,
        "config": config_snapshot or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArchiveError(f"unreadable archive {path}: {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"archive version {version!r} not supported (expected {FORMAT_VERSION})")
    meta = dict(doc["meta"])
    basis = _basis_load(doc["feature_basis"])
    if basis is not None:
        meta["basis"] = basis
    if doc["bands"] is not None:
        meta["bands"] = tuple(tuple(b) for b in doc["bands"])
    wavelet_cfg = WaveletConfig(**doc["wavelet_cfg"]) if doc["wavelet_cfg"] is not None else None
    return FamilyModel(
        family=doc["family"],
        grid=LandmarkGrid(tuple(doc["grid"]["times"]), doc["grid"]["horizon"]),
        cox=_cox_load(doc["cox"]),
        kept=tuple(doc["kept"]),
        full_columns=tuple(doc["full_columns"]),
        meta=meta,
        lmm=_lmm_load(doc["lmm"]),
        quartiles=tuple(doc["quartiles"]) if doc["quartiles"] is not None else None,
        wavelet_cfg=wavelet_cfg,
    )
