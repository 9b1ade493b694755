"""Cohort data model, CSV ingestion/validation and synthetic generation.

Subjects carry baseline covariates and a right-censored event time; each
included subject owns one irregularly sampled potassium series.  The
simulator reproduces the regime the models are built for: long follow-up,
bimodal measurement gaps, and transient oscillation bursts that may drive
the hazard.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ValidationError

SUBJECTS_HEADER = ["id", "age_years", "sex", "nyha", "lvef_class", "ckd", "comorbid_gt3", "time_days", "status"]
MEASUREMENTS_HEADER = ["id", "t_days", "k_mmol_l"]

# covariates entering the survival models (age on the standardized scale)
SURVIVAL_COVARIATES = ("age_std", "sex_male", "nyha_high", "hfref", "comorbid_gt3")


@dataclass(frozen=True)
class Subject:
    id: str
    age_years: float
    sex: str  # "M" / "F"
    nyha: int  # 1..4
    hfref: bool
    ckd: bool
    comorbid_gt3: bool
    event_time: float  # days
    status: int  # 1 = event, 0 = censored
    age_std: float = 0.0

    @property
    def sex_male(self):
        return self.sex == "M"

    @property
    def nyha_high(self):
        return self.nyha >= 3

    def covariate(self, name):
        v = getattr(self, name)
        return float(v)


@dataclass(frozen=True)
class MeasurementSeries:
    subject_id: str
    times: np.ndarray  # days, strictly increasing
    values: np.ndarray  # mmol/L, > 0

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        values = np.ascontiguousarray(self.values, dtype=float)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.times.size

    def up_to(self, t):
        """Sub-series with measurement times <= t."""
        n = int(np.searchsorted(self.times, t, side="right"))
        return MeasurementSeries(self.subject_id, self.times[:n], self.values[:n])


@dataclass(frozen=True)
class Cohort:
    subjects: tuple
    series: dict  # subject id -> MeasurementSeries

    def __post_init__(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids in cohort")
        if set(ids) != set(self.series):
            raise ValidationError("cohort requires exactly one series per subject")
        object.__setattr__(self, "_index", {s.id: s for s in self.subjects})

    @property
    def n_subjects(self):
        return len(self.subjects)

    def subject(self, subject_id):
        try:
            return self._index[subject_id]
        except KeyError:
            raise ValidationError(f"unknown subject id {subject_id!r}") from None

    def subset(self, ids):
        """Cohort restricted to ``ids`` (ingestion-time age scaling is kept)."""
        keep = set(ids)
        subjects = tuple(s for s in self.subjects if s.id in keep)
        series = {s.id: self.series[s.id] for s in subjects}
        return Cohort(subjects, series)


def standardize_age(subjects):
    """Attach the zero-mean/unit-SD copy of age used by the models."""
    ages = np.asarray([s.age_years for s in subjects], dtype=float)
    mean = float(ages.mean()) if len(subjects) else 0.0
    sd = float(ages.std(ddof=0)) if len(subjects) else 1.0
    if sd == 0.0:
        sd = 1.0
    return tuple(replace(s, age_std=(s.age_years - mean) / sd) for s in subjects)


def _parse_row(row, lineno, path, names, parsers):
    if len(row) != len(names):
        raise ValidationError(f"{path}:{lineno}: malformed row, expected {len(names)} fields, got {len(row)}")
    out = {}
    for name, parser, raw in zip(names, parsers, row):
        try:
            out[name] = parser(raw)
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for {name!r}: {exc}") from None
    return out


def _choice(allowed):
    def parse(raw):
        if raw not in allowed:
            raise ValueError(f"expected one of {sorted(allowed)}, got {raw!r}")
        return raw

    return parse


def load_cohort(subjects_path, measurements_path):
    """Load and validate a cohort from the two CSV files.

    Subjects with fewer than two measurements are rejected; the error lists
    every offending id.
    """
    subjects = []
    seen = set()
    with open(subjects_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SUBJECTS_HEADER:
            raise ValidationError(f"{subjects_path}:1: bad header, expected {','.join(SUBJECTS_HEADER)}")
        parsers = [str, float, _choice({"M", "F"}), int, _choice({"HFpEF", "HFrEF"}), int, int, float, int]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            rec = _parse_row(row, lineno, subjects_path, SUBJECTS_HEADER, parsers)
            if rec["id"] in seen:
                raise ValidationError(f"{subjects_path}:{lineno}: duplicate subject id {rec['id']!r}")
            seen.add(rec["id"])
            if rec["nyha"] not in (1, 2, 3, 4):
                raise ValidationError(f"{subjects_path}:{lineno}: nyha must be 1..4")
            if rec["ckd"] not in (0, 1) or rec["comorbid_gt3"] not in (0, 1):
                raise ValidationError(f"{subjects_path}:{lineno}: ckd/comorbid_gt3 must be 0 or 1")
            if rec["status"] not in (0, 1):
                raise ValidationError(f"{subjects_path}:{lineno}: status must be 0 or 1")
            if not rec["time_days"] > 0:
                raise ValidationError(f"{subjects_path}:{lineno}: time_days must be > 0")
            subjects.append(
                Subject(
                    id=rec["id"],
                    age_years=rec["age_years"],
                    sex=rec["sex"],
                    nyha=rec["nyha"],
                    hfref=rec["lvef_class"] == "HFrEF",
                    ckd=bool(rec["ckd"]),
                    comorbid_gt3=bool(rec["comorbid_gt3"]),
                    event_time=rec["time_days"],
                    status=rec["status"],
                )
            )

    by_subject = {s.id: ([], []) for s in subjects}
    index = {s.id: s for s in subjects}
    with open(measurements_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MEASUREMENTS_HEADER:
            raise ValidationError(f"{measurements_path}:1: bad header, expected {','.join(MEASUREMENTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            rec = _parse_row(row, lineno, measurements_path, MEASUREMENTS_HEADER, [str, float, float])
            sid, t, v = rec["id"], rec["t_days"], rec["k_mmol_l"]
            if sid not in by_subject:
                raise ValidationError(f"{measurements_path}:{lineno}: measurement for unknown subject {sid!r}")
            if t < 0:
                raise ValidationError(f"{measurements_path}:{lineno}: negative measurement time")
            if t > index[sid].event_time:
                raise ValidationError(
                    f"{measurements_path}:{lineno}: measurement after event_time for subject {sid!r}"
                )
            if not v > 0:
                raise ValidationError(f"{measurements_path}:{lineno}: non-positive value")
            times, values = by_subject[sid]
            if times and t <= times[-1]:
                raise ValidationError(f"{measurements_path}:{lineno}: non-increasing times for subject {sid!r}")
            times.append(t)
            values.append(v)

    short = [sid for sid, (times, _) in by_subject.items() if len(times) < 2]
    if short:
        raise ValidationError(
            "subject has fewer than 2 measurements: " + ", ".join(sorted(short)),
            subject_ids=sorted(short),
        )

    subjects = standardize_age(tuple(subjects))
    series = {sid: MeasurementSeries(sid, np.asarray(t), np.asarray(v)) for sid, (t, v) in by_subject.items()}
    return Cohort(subjects, series)


def write_cohort(cohort, subjects_path, measurements_path):
    """Write the two CSV files (inverse of :func:`load_cohort`)."""
    with open(subjects_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUBJECTS_HEADER)
        for s in cohort.subjects:
            writer.writerow(
                [
                    s.id,
                    repr(s.age_years),
                    s.sex,
                    s.nyha,
                    "HFrEF" if s.hfref else "HFpEF",
                    int(s.ckd),
                    int(s.comorbid_gt3),
                    repr(s.event_time),
                    s.status,
                ]
            )
    with open(measurements_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENTS_HEADER)
        for s in cohort.subjects:
            ser = cohort.series[s.id]
            for t, v in zip(ser.times, ser.values):
                writer.writerow([s.id, repr(float(t)), repr(float(v))])


@dataclass(frozen=True)
class SimConfig:
    """Generator settings for synthetic EHR-like cohorts.

    Measurement timestamps are whole days (chart dates).  Photo of the
    target regime: slow flat trend, bimodal re-test gaps, rare transient
    bursts, hazard raised while a burst is in progress.
    """

    n_subjects: int = 200
    seed: int = 0
    follow_up_days: float = 2190.0  # administrative censoring horizon
    # measurement gap mixture (log-normal components, days): clustered
    # re-tests within days plus routine-visit gaps of a few months
    gap_short_median: float = 3.0
    gap_short_sigma: float = 0.9
    gap_long_median: float = 150.0
    gap_long_sigma: float = 0.8
    gap_short_weight: float = 0.55
    # latent trajectory
    baseline_level: float = 4.1  # mmol/L
    trend_slope_per_year: float = 0.0
    level_sex_male: float = 0.06
    level_age_per_sd: float = -0.01
    level_ckd: float = 0.12
    level_nyha_high: float = -0.04
    subject_sd: float = 0.15  # per-subject level shift
    noise_sd: float = 0.22
    # burst process
    burst_rate_per_year: float = 0.9
    burst_rate_cv: float = 1.0  # gamma dispersion of per-subject rates; 0 = homogeneous
    burst_duration_min: float = 7.0  # days
    burst_duration_max: float = 45.0
    burst_amplitude: float = 1.0  # mmol/L, sign random
    burst_retest_boost: float = 0.9  # P(short gap) while a burst is active (crisis re-testing)
    # hazard
    base_hazard_per_year: float = 0.05
    loghr_burst: float = 1.7
    loghr_age: float = 0.5  # per SD
    loghr_sex_male: float = 0.32
    loghr_nyha_high: float = 0.6
    loghr_hfref: float = 0.13
    loghr_comorbid: float = 0.4
    dropout_rate_per_year: float = 0.0
    # covariate mix
    age_mean: float = 77.0
    age_sd: float = 8.0
    p_male: float = 0.58
    p_nyha_high: float = 0.12
    p_hfref: float = 0.40
    p_ckd: float = 0.48
    p_comorbid_gt3: float = 0.64

    def validate(self):
        if self.n_subjects <= 0:
            raise ConfigError("n_subjects must be positive")
        if self.follow_up_days <= 0:
            raise ConfigError("follow_up_days must be positive")
        for name in ("gap_short_median", "gap_long_median"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gap_short_sigma", "gap_long_sigma", "subject_sd", "noise_sd", "burst_rate_per_year",
                     "burst_rate_cv", "burst_amplitude", "dropout_rate_per_year"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.burst_retest_boost <= 1:
            raise ConfigError("burst_retest_boost must be in [0, 1]")
        if not 0 <= self.gap_short_weight <= 1:
            raise ConfigError("gap_short_weight must be in [0, 1]")
        if not 0 < self.burst_duration_min <= self.burst_duration_max:
            raise ConfigError("burst durations must satisfy 0 < min <= max")
        if self.base_hazard_per_year <= 0:
            raise ConfigError("base_hazard_per_year must be positive")
        for name in ("p_male", "p_nyha_high", "p_hfref", "p_ckd", "p_comorbid_gt3"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be a probability")
        if self.age_sd <= 0:
            raise ConfigError("age_sd must be positive")
        return self


def _raised_cosine(t, center, duration, amplitude):
    """Smooth compactly supported bump: peak ``amplitude`` at the center."""
    u = (t - center) / duration
    out = np.zeros_like(np.asarray(t, dtype=float))
    inside = np.abs(u) <= 0.5
    out[inside] = amplitude * 0.5 * (1.0 + np.cos(2.0 * np.pi * u[inside]))
    return out


def _burst_intervals(rng, rate_per_day, horizon, dur_min, dur_max):
    """Poisson burst onsets on [0, horizon); returns (start, end, sign) triples."""
    bursts = []
    t = 0.0
    if rate_per_day <= 0:
        return bursts
    while True:
        t += rng.exponential(1.0 / rate_per_day)
        if t >= horizon:
            break
        dur = rng.uniform(dur_min, dur_max)
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        bursts.append((t, t + dur, sign, dur))
    return bursts


def _draw_event_time(rng, base, loghr_burst, bursts, horizon):
    """Inversion sampling from the piecewise-constant hazard.

    The hazard equals ``base`` outside bursts and ``base * exp(loghr_burst)``
    while at least one burst is in progress; exact for the piecewise model.
    """
    # breakpoints where the burst-active indicator can change
    cuts = sorted({0.0, horizon} | {b[0] for b in bursts} | {b[1] for b in bursts})
    cuts = [c for c in cuts if 0.0 <= c <= horizon]
    if cuts[-1] < horizon:
        cuts.append(horizon)
    target = rng.exponential(1.0)
    acc = 0.0
    for left, right in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (left + right)
        active = any(b[0] <= mid < b[1] for b in bursts)
        rate = base * (math.exp(loghr_burst) if active else 1.0)
        seg = rate * (right - left)
        if acc + seg >= target:
            return left + (target - acc) / rate
        acc += seg
    return math.inf


def _measurement_days(rng, cfg, last_day, bursts=()):
    """Whole-day measurement times from 0 up to ``last_day`` inclusive.

    Measurement is informative, as in real charts: a burst onset triggers a
    visit within a few days, and while a burst is in progress the short-gap
    component dominates (crisis re-testing).
    """
    visits = []
    for b0, _, *_ in bursts:
        visit = math.ceil(b0 + rng.exponential(1.5))
        if visit <= last_day:
            visits.append(int(visit))
    visits.sort()
    days = [0]
    t = 0.0
    vi = 0
    while True:
        active = any(b0 <= t <= b1 for b0, b1, *_ in bursts)
        p_short = max(cfg.gap_short_weight, cfg.burst_retest_boost) if active else cfg.gap_short_weight
        if rng.uniform() < p_short:
            gap = rng.lognormal(math.log(cfg.gap_short_median), cfg.gap_short_sigma)
        else:
            gap = rng.lognormal(math.log(cfg.gap_long_median), cfg.gap_long_sigma)
        t_next = t + max(1.0, math.ceil(gap))
        while vi < len(visits) and visits[vi] <= t:
            vi += 1
        if vi < len(visits) and visits[vi] < t_next:
            t_next = float(visits[vi])  # the crisis interrupts the routine schedule
            vi += 1
        if t_next > last_day:
            break
        days.append(int(t_next))
        t = t_next
    return days


def simulate_cohort(cfg: SimConfig, return_truth=False):
    """Generate a cohort; a pure function of the config (seed included).

    Subjects are re-drawn until they meet the inclusion criteria of the
    study design (at least two measurements before the event), which mimics
    cohort selection rather than distorting the generative model.

    With ``return_truth`` the latent burst intervals per subject are also
    returned (testing/debug aid; not part of the cohort proper).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    subjects = []
    series = {}
    truth = {}
    base_day = cfg.base_hazard_per_year / 365.0
    digits = max(4, len(str(cfg.n_subjects)))
    for idx in range(cfg.n_subjects):
        sid = f"S{idx + 1:0{digits}d}"
        while True:
            age = rng.normal(cfg.age_mean, cfg.age_sd)
            age_sd_units = (age - cfg.age_mean) / cfg.age_sd
            sex_male = rng.uniform() < cfg.p_male
            nyha_high = rng.uniform() < cfg.p_nyha_high
            nyha = (3 if rng.uniform() < 0.9 else 4) if nyha_high else (1 if rng.uniform() < 0.42 else 2)
            hfref = rng.uniform() < cfg.p_hfref
            ckd = rng.uniform() < cfg.p_ckd
            comorbid = rng.uniform() < cfg.p_comorbid_gt3

            if cfg.burst_rate_cv > 0 and cfg.burst_rate_per_year > 0:
                # gamma frailty on the burst rate: mean = configured rate, CV as set
                shape = 1.0 / cfg.burst_rate_cv**2
                rate = rng.gamma(shape, cfg.burst_rate_per_year / shape)
            else:
                rate = cfg.burst_rate_per_year
            bursts = _burst_intervals(
                rng, rate / 365.0, cfg.follow_up_days + 365.0, cfg.burst_duration_min, cfg.burst_duration_max
            )

            lp = (
                cfg.loghr_age * age_sd_units
                + cfg.loghr_sex_male * sex_male
                + cfg.loghr_nyha_high * nyha_high
                + cfg.loghr_hfref * hfref
                + cfg.loghr_comorbid * comorbid
            )
            death = _draw_event_time(rng, base_day * math.exp(lp), cfg.loghr_burst, bursts, cfg.follow_up_days)
            censor = cfg.follow_up_days
            if cfg.dropout_rate_per_year > 0:
                censor = min(censor, rng.exponential(365.0 / cfg.dropout_rate_per_year))
            z = min(death, censor)
            status = 1 if death <= censor else 0

            days = _measurement_days(rng, cfg, z, bursts)
            if len(days) < 2:
                continue  # inclusion criteria: two measurements under observation

            t_arr = np.asarray(days, dtype=float)
            level = (
                cfg.baseline_level
                + cfg.level_sex_male * sex_male
                + cfg.level_age_per_sd * age_sd_units
                + cfg.level_ckd * ckd
                + cfg.level_nyha_high * nyha_high
                + cfg.subject_sd * rng.normal()
            )
            values = level + cfg.trend_slope_per_year * t_arr / 365.0
            for b0, b1, sign, dur in bursts:
                values = values + sign * _raised_cosine(t_arr, 0.5 * (b0 + b1), dur, cfg.burst_amplitude)
            values = values + cfg.noise_sd * rng.standard_normal(t_arr.size)
            values = np.maximum(values, 1e-3)  # physical floor; unreachable under defaults

            subjects.append(
                Subject(
                    id=sid,
                    age_years=float(age),
                    sex="M" if sex_male else "F",
                    nyha=int(nyha),
                    hfref=bool(hfref),
                    ckd=bool(ckd),
                    comorbid_gt3=bool(comorbid),
                    event_time=float(z),
                    status=status,
                )
            )
            series[sid] = MeasurementSeries(sid, t_arr, values)
            truth[sid] = tuple((b0, b1, sign) for b0, b1, sign, _ in bursts)
            break

    cohort = Cohort(standardize_age(tuple(subjects)), series)
    return (cohort, truth) if return_truth else cohort


def cohort_summary(cohort):
    """Descriptive statistics in the usual cohort-table layout."""
    n = cohort.n_subjects
    events = sum(s.status for s in cohort.subjects)
    fu = np.asarray([s.event_time for s in cohort.subjects])
    n_meas = np.asarray([len(cohort.series[s.id]) for s in cohort.subjects])
    gaps = np.concatenate([np.diff(cohort.series[s.id].times) for s in cohort.subjects if len(cohort.series[s.id]) > 1])
    return {
        "n_subjects": n,
        "n_events": int(events),
        "median_follow_up_days": float(np.median(fu)),
        "median_measurements_per_subject": float(np.median(n_meas)),
        "total_measurements": int(n_meas.sum()),
        "median_gap_days": float(np.median(gaps)) if gaps.size else float("nan"),
        "pct_male": 100.0 * np.mean([s.sex_male for s in cohort.subjects]),
        "pct_nyha_3_4": 100.0 * np.mean([s.nyha_high for s in cohort.subjects]),
        "pct_hfref": 100.0 * np.mean([s.hfref for s in cohort.subjects]),
        "pct_ckd": 100.0 * np.mean([s.ckd for s in cohort.subjects]),
        "pct_comorbid_gt3": 100.0 * np.mean([s.comorbid_gt3 for s in cohort.subjects]),
        "median_age": float(np.median([s.age_years for s in cohort.subjects])),
    }
