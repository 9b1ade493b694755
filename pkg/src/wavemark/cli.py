"""Command-line pipeline: simulate, fit, predict, evaluate.

Configuration is a flat ``key = value`` text file; command-line flags
override file values.  Every command is deterministic given the config and
seed, and all errors leave on stderr as one JSON line with a machine code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .archive import load_model, save_model
from .cohort import SimConfig, cohort_summary, load_cohort, simulate_cohort, write_cohort
from .cox import wald_test, write_coefficient_table
from .errors import ConfigError, ValidationError, WavemarkError
from .evaluation import EvalConfig, crossvalidate
from .families import FAMILIES, PipelineConfig, fit_family, predict
from .landmark import LandmarkGrid
from .lmm import residuals as lmm_residuals
from .splines import eval_basis
from .wavelet import WaveletConfig, decompose, write_periodogram

#: every config key with its default; flags override file values
CONFIG_DEFAULTS = {
    "seed": 0,
    "out": "out",
    "subjects_csv": "",
    "measurements_csv": "",
    "model": "wavelet",
    "n_subjects": 200,
    "landmarks_start": 365.0,
    "landmarks_end": 1825.0,
    "landmarks_step": 90.0,
    "horizon_days": 182.5,
    "wavelet_dt": 1.0,
    "wavelet_voices": 32,
    "wavelet_alpha": 0.05,
    "wavelet_nsim": 200,
    "wavelet_max_gap": 120.0,
    "wavelet_variant": "categorical",
    "eval_times": "365,730,1095",
    "eval_folds": 10,
    "workers": 0,  # 0 = one per core
    "subject": "",
    "times": "",
    "archive": "",
    "periodogram_subject": "",
}


def parse_config_file(path):
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value, default):
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def merge_config(file_cfg, overrides):
    cfg = dict(CONFIG_DEFAULTS)
    sim_fields = {f.name: f.default for f in dataclasses.fields(SimConfig)}
    for key, value in file_cfg.items():
        if key in cfg:
            cfg[key] = _coerce(value, cfg[key])
        elif key.startswith("sim_") and key[4:] in sim_fields:
            cfg[key] = _coerce(value, sim_fields[key[4:]])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _grid(cfg):
    times = np.arange(cfg["landmarks_start"], cfg["landmarks_end"] + 1e-9, cfg["landmarks_step"])
    return LandmarkGrid(tuple(float(t) for t in times), cfg["horizon_days"])


def _wavelet_cfg(cfg):
    return WaveletConfig(
        dt=cfg["wavelet_dt"],
        voices_per_octave=cfg["wavelet_voices"],
        max_gap=cfg["wavelet_max_gap"],
        alpha=cfg["wavelet_alpha"],
        nsim=cfg["wavelet_nsim"],
        seed=cfg["seed"],
    )


def _pipeline_cfg(cfg):
    return PipelineConfig(grid=_grid(cfg), wavelet=_wavelet_cfg(cfg), wavelet_variant=cfg["wavelet_variant"])


def _sim_cfg(cfg):
    kwargs = {"n_subjects": cfg["n_subjects"], "seed": cfg["seed"]}
    for key, value in cfg.items():
        if key.startswith("sim_"):
            kwargs[key[4:]] = value
    return SimConfig(**kwargs)


def _load(cfg):
    if not cfg["subjects_csv"] or not cfg["measurements_csv"]:
        raise ConfigError("subjects_csv and measurements_csv must be set")
    return load_cohort(cfg["subjects_csv"], cfg["measurements_csv"])


def cmd_simulate(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cohort = simulate_cohort(_sim_cfg(cfg))
    write_cohort(cohort, out / "subjects.csv", out / "measurements.csv")
    summary = cohort_summary(cohort)
    print("Cohort summary")
    print(f"  subjects                 {summary['n_subjects']}")
    print(f"  events                   {summary['n_events']}")
    print(f"  median follow-up, days   {summary['median_follow_up_days']:.0f}")
    print(f"  measurements, total      {summary['total_measurements']}")
    print(f"  median per subject       {summary['median_measurements_per_subject']:.0f}")
    print(f"  median gap, days         {summary['median_gap_days']:.0f}")
    print(f"  male                     {summary['pct_male']:.0f}%")
    print(f"  NYHA III-IV              {summary['pct_nyha_3_4']:.0f}%")
    print(f"  HFrEF                    {summary['pct_hfref']:.0f}%")
    print(f"  CKD                      {summary['pct_ckd']:.0f}%")
    print(f"  >3 comorbidities         {summary['pct_comorbid_gt3']:.0f}%")
    print(f"files: {out / 'subjects.csv'}, {out / 'measurements.csv'}")
    return 0


def _write_relative_risk(model, path):
    """exp((f(x) - f(x_ref)) gamma-hat) over the training feature range, for
    external plotting of the spline effect; reference = training median."""
    basis = model.meta.get("basis")
    ref = model.meta.get("feature_ref")
    if basis is None or ref is None or "potassium" not in model.cox.term_groups:
        return False
    beta_by_name = dict(zip(model.cox.columns, model.cox.beta))
    spline_names = [n for n in model.full_columns if n.startswith("cs(")]
    gamma = np.asarray([beta_by_name.get(n, 0.0) for n in spline_names])
    lo, hi = basis.boundary
    xs = np.linspace(lo, hi, 101)
    ref_row = np.atleast_1d(eval_basis(basis, float(ref)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("feature_value,relative_risk\n")
        for x in xs:
            row = np.atleast_1d(eval_basis(basis, float(x)))
            rr = float(np.exp((row - ref_row) @ gamma))
            fh.write(f"{x!r},{rr!r}\n")
    return True


def cmd_fit(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cohort = _load(cfg)
    family = cfg["model"]
    model = fit_family(cohort, family, _pipeline_cfg(cfg))
    archive_path = out / f"model_{family}.json"
    # paths stay out of the snapshot: identical inputs give identical archives
    skip = {"out", "subjects_csv", "measurements_csv", "archive", "subject", "times", "periodogram_subject"}
    save_model(model, archive_path, config_snapshot={k: cfg[k] for k in sorted(cfg) if k not in skip})
    coef_path = out / f"coefficients_{family}.csv"
    write_coefficient_table(model.cox, coef_path)
    wrote_rr = _write_relative_risk(model, out / f"relative_risk_{family}.csv")
    print(f"fitted {family}: {model.cox.n_rows} landmark rows, {model.cox.n_events} events")
    if "potassium" in model.cox.term_groups:
        stat, df, p = wald_test(model.cox, "potassium")
        print(f"potassium term: Wald chi2={stat:.2f}, df={df}, p={p:.4g}")
    print(f"files: {archive_path}, {coef_path}" + (f", {out / f'relative_risk_{family}.csv'}" if wrote_rr else ""))
    return 0


def cmd_predict(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if not cfg["archive"]:
        raise ConfigError("predict needs archive = <model json>")
    if not cfg["subject"]:
        raise ConfigError("predict needs subject = <id>")
    if not cfg["times"]:
        raise ConfigError("predict needs times = <comma-separated days>")
    model = load_model(cfg["archive"])
    cohort = _load(cfg)
    times = [float(x) for x in str(cfg["times"]).split(",") if x.strip()]
    sid = cfg["subject"]
    path = out / f"prediction_{sid}.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t_days,pi,linear_predictor,risk_category\n")
        for t in times:
            pred, category = predict(model, cohort, sid, t)
            fh.write(f"{t!r},{pred.pi!r},{pred.linear_predictor!r},{category if category is not None else ''}\n")
            cat = f"  category={category}" if category is not None else ""
            print(f"t={t:.1f}: pi({t}+{model.grid.horizon}|{t}) = {pred.pi:.4f}{cat}")
    print(f"file: {path}")
    if cfg["periodogram_subject"]:
        _dump_periodogram(cfg, model, cohort, out)
    return 0


def _dump_periodogram(cfg, model, cohort, out):
    sid = cfg["periodogram_subject"]
    if model.lmm is None:
        raise ConfigError("periodogram dump needs a mixed or wavelet model archive")
    res = lmm_residuals(model.lmm, cohort.subset([sid]))
    times, values = res[sid]
    _, dec = decompose(times, values, model.wavelet_cfg or _wavelet_cfg(cfg), subject_id=sid)
    path = out / f"periodogram_{sid}.csv"
    write_periodogram(dec, path)
    print(f"file: {path}")


def cmd_evaluate(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cohort = _load(cfg)
    fams = [f.strip() for f in str(cfg["model"]).split(",") if f.strip()]
    if fams == ["all"]:
        fams = list(FAMILIES)
    for fam in fams:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown model family {fam!r}")
    ecfg = EvalConfig(
        prediction_times=tuple(float(x) for x in str(cfg["eval_times"]).split(",") if x.strip()),
        horizon=cfg["horizon_days"],
        folds=cfg["eval_folds"],
        seed=cfg["seed"],
        workers=cfg["workers"] if cfg["workers"] > 0 else None,
    )
    report = crossvalidate(cohort, fams, _pipeline_cfg(cfg), ecfg)
    path = out / "evaluation.csv"
    report.to_csv(path)
    print(f"{'model':<10} {'t_days':>7} {'AUC%':>7} {'Brier%':>7} {'dBrier%':>8}")
    for r in report.rows:
        print(f"{r.model:<10} {r.pred_time:>7.0f} {r.auc_pct:>7.2f} {r.brier_pct:>7.3f} {r.brier_reduction_pct:>8.2f}")
    print(f"file: {path}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser():
    p = argparse.ArgumentParser(prog="wavemark", description=__doc__)
    p.add_argument("--version", action="version", version=f"wavemark {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--model", default=None, help="model family (or comma list / 'all' for evaluate)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--subject", default=None, help="subject id for predict")
    p.add_argument("--times", default=None, help="comma-separated prediction times, days")
    p.add_argument("--subjects", dest="subjects_csv", default=None, help="subjects CSV path")
    p.add_argument("--measurements", dest="measurements_csv", default=None, help="measurements CSV path")
    p.add_argument("--archive", default=None, help="model archive for predict")
    p.add_argument("--n-subjects", dest="n_subjects", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        file_cfg = parse_config_file(args.config) if args.config else {}
        overrides = {
            k: getattr(args, k)
            for k in (
                "seed",
                "model",
                "out",
                "subject",
                "times",
                "subjects_csv",
                "measurements_csv",
                "archive",
                "n_subjects",
                "workers",
            )
        }
        cfg = merge_config(file_cfg, overrides)
        return COMMANDS[args.command](cfg)
    except WavemarkError as exc:
        sys.stderr.write(json.dumps({"code": exc.code, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
