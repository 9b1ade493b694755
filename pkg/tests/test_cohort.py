import numpy as np
import pytest
from scipy.stats import chi2_contingency

from wavemark.cohort import (
    SimConfig,
    cohort_summary,
    load_cohort,
    simulate_cohort,
    write_cohort,
)
from wavemark.errors import ConfigError, ValidationError

from conftest import make_cohort, make_subject


def write_files(tmp_path, subjects_rows, measurement_rows):
    sp = tmp_path / "subjects.csv"
    mp = tmp_path / "measurements.csv"
    sp.write_text(
        "id,age_years,sex,nyha,lvef_class,ckd,comorbid_gt3,time_days,status\n"
        + "".join(r + "\n" for r in subjects_rows)
    )
    mp.write_text("id,t_days,k_mmol_l\n" + "".join(r + "\n" for r in measurement_rows))
    return sp, mp


GOOD_SUBJECTS = [
    "A1,80,M,2,HFrEF,1,0,584,1",
    "A2,70,F,3,HFpEF,0,1,900,0",
]
GOOD_MEASUREMENTS = [
    "A1,0,4.1",
    "A1,30,4.3",
    "A1,200,3.9",
    "A2,10,4.4",
    "A2,50,4.2",
]


def test_load_valid_fixture(tmp_path):
    sp, mp = write_files(tmp_path, GOOD_SUBJECTS, GOOD_MEASUREMENTS)
    cohort = load_cohort(sp, mp)
    assert cohort.n_subjects == 2
    assert len(cohort.series["A1"]) == 3
    assert len(cohort.series["A2"]) == 2
    a1 = cohort.subject("A1")
    assert a1.sex_male and a1.hfref and a1.ckd and not a1.comorbid_gt3
    assert a1.status == 1 and a1.event_time == 584.0
    assert cohort.subject("A2").nyha_high
    # age standardized to zero mean / unit SD at ingestion
    ages = np.asarray([s.age_std for s in cohort.subjects])
    assert abs(ages.mean()) < 1e-12 and abs(ages.std() - 1.0) < 1e-12


def test_empty_measurements_rejects_every_subject(tmp_path):
    sp, mp = write_files(tmp_path, GOOD_SUBJECTS, [])
    with pytest.raises(ValidationError, match="fewer than 2 measurements") as err:
        load_cohort(sp, mp)
    assert "A1" in str(err.value) and "A2" in str(err.value)


def test_tied_times_rejected(tmp_path):
    sp, mp = write_files(tmp_path, GOOD_SUBJECTS, ["A1,3,4.1", "A1,3,4.2", "A2,1,4.0", "A2,2,4.1"])
    with pytest.raises(ValidationError, match="non-increasing times"):
        load_cohort(sp, mp)


@pytest.mark.parametrize(
    "rows,message",
    [
        (["A1,0,4.1,9"], "malformed row"),
        (["A1,zero,4.1"], "bad value"),
        (["A1,600,4.1"], "after event_time"),
        (["A1,5,0.0"], "non-positive value"),
        (["ZZ,5,4.0"], "unknown subject"),
        (["A1,-2,4.0"], "negative measurement time"),
    ],
)
def test_measurement_errors_report_lines(tmp_path, rows, message):
    sp, mp = write_files(tmp_path, GOOD_SUBJECTS, rows)
    with pytest.raises(ValidationError, match=message) as err:
        load_cohort(sp, mp)
    assert ":2:" in str(err.value)  # first data line of the measurements file


def test_duplicate_subject_id(tmp_path):
    sp, mp = write_files(tmp_path, GOOD_SUBJECTS + ["A1,70,F,1,HFpEF,0,0,100,0"], GOOD_MEASUREMENTS)
    with pytest.raises(ValidationError, match="duplicate subject id"):
        load_cohort(sp, mp)


def test_measurement_at_event_time_kept(tmp_path):
    sp, mp = write_files(
        tmp_path, GOOD_SUBJECTS, GOOD_MEASUREMENTS + ["A2,900,4.4"]
    )
    cohort = load_cohort(sp, mp)
    assert cohort.series["A2"].times[-1] == 900.0


def test_roundtrip_write_load(tmp_path, two_subject_cohort):
    sp = tmp_path / "s.csv"
    mp = tmp_path / "m.csv"
    write_cohort(two_subject_cohort, sp, mp)
    back = load_cohort(sp, mp)
    assert back.n_subjects == two_subject_cohort.n_subjects
    for s in two_subject_cohort.subjects:
        b = back.subject(s.id)
        assert b.event_time == s.event_time and b.status == s.status
        assert np.array_equal(back.series[s.id].times, two_subject_cohort.series[s.id].times)
        assert np.array_equal(back.series[s.id].values, two_subject_cohort.series[s.id].values)


class TestSimulate:
    def test_no_stochastic_terms_gives_flat_series(self):
        cfg = SimConfig(
            n_subjects=5,
            seed=1,
            burst_rate_per_year=0.0,
            noise_sd=0.0,
            subject_sd=0.0,
            baseline_level=4.1,
            trend_slope_per_year=0.0,
            level_sex_male=0.0,
            level_age_per_sd=0.0,
            level_ckd=0.0,
            level_nyha_high=0.0,
        )
        cohort = simulate_cohort(cfg)
        for s in cohort.subjects:
            assert np.all(cohort.series[s.id].values == 4.1)

    def test_same_seed_identical(self):
        a = simulate_cohort(SimConfig(n_subjects=40, seed=7))
        b = simulate_cohort(SimConfig(n_subjects=40, seed=7))
        for s, t in zip(a.subjects, b.subjects):
            assert s == t
        for sid in a.series:
            assert np.array_equal(a.series[sid].times, b.series[sid].times)
            assert np.array_equal(a.series[sid].values, b.series[sid].values)

    def test_roundtrip_validates(self, tmp_path):
        cohort = simulate_cohort(SimConfig(n_subjects=50, seed=3))
        sp = tmp_path / "s.csv"
        mp = tmp_path / "m.csv"
        write_cohort(cohort, sp, mp)
        back = load_cohort(sp, mp)
        assert back.n_subjects == 50

    def test_null_burst_hazard_independent_of_burst_count(self):
        # pooled contingency of event status by burst count over 20 replicates
        table = np.zeros((3, 2))
        for rep in range(20):
            cfg = SimConfig(n_subjects=120, seed=500 + rep, loghr_burst=0.0, follow_up_days=1200.0)
            cohort, truth = simulate_cohort(cfg, return_truth=True)
            for s in cohort.subjects:
                k = min(len(truth[s.id]), 2)
                table[k, s.status] += 1
        assert table.sum(axis=1).min() > 0
        _, p, *_ = chi2_contingency(table)
        assert p > 0.01

    def test_marginal_noise_variance(self):
        cfg = SimConfig(
            n_subjects=400,
            seed=11,
            burst_amplitude=0.0,
            subject_sd=0.0,
            noise_sd=0.3,
            trend_slope_per_year=0.2,
            level_sex_male=0.0,
            level_age_per_sd=0.0,
            level_ckd=0.0,
            level_nyha_high=0.0,
        )
        cohort = simulate_cohort(cfg)
        resid = []
        for s in cohort.subjects:
            ser = cohort.series[s.id]
            trend = cfg.baseline_level + cfg.trend_slope_per_year * ser.times / 365.0
            resid.append(ser.values - trend)
        resid = np.concatenate(resid)
        assert resid.size > 10000
        assert abs(resid.var() - 0.09) < 0.009

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SimConfig(n_subjects=0).validate()
        with pytest.raises(ConfigError):
            SimConfig(burst_duration_min=10.0, burst_duration_max=5.0).validate()
        with pytest.raises(ConfigError):
            SimConfig(base_hazard_per_year=0.0).validate()

    def test_summary_fields(self):
        cohort = simulate_cohort(SimConfig(n_subjects=60, seed=2))
        summary = cohort_summary(cohort)
        assert summary["n_subjects"] == 60
        assert 0 <= summary["n_events"] <= 60
        assert summary["median_measurements_per_subject"] >= 2


def test_series_up_to(two_subject_cohort):
    ser = two_subject_cohort.series["A1"]
    sub = ser.up_to(200.0)
    assert np.array_equal(sub.times, [0.0, 30.0, 200.0])
    assert len(ser.up_to(-1.0)) == 0


def test_series_immutable(two_subject_cohort):
    ser = two_subject_cohort.series["A1"]
    with pytest.raises(ValueError):
        ser.times[0] = 5.0
