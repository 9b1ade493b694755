import numpy as np
import pytest

from wavemark.archive import load_model, save_model
from wavemark.cohort import SimConfig, simulate_cohort
from wavemark.cox import NO_OSCILLATION
from wavemark.errors import ArchiveError, ValidationError
from wavemark.families import FAMILIES, PipelineConfig, design_row, fit_family, predict
from wavemark.landmark import LandmarkGrid
from wavemark.wavelet import WaveletConfig


@pytest.fixture(scope="module")
def cohort():
    return simulate_cohort(SimConfig(n_subjects=220, seed=31, follow_up_days=1200.0))


@pytest.fixture(scope="module")
def pcfg():
    return PipelineConfig(
        grid=LandmarkGrid((365.0, 545.0), 182.5),
        wavelet=WaveletConfig(nsim=40, seed=3, voices_per_octave=8),
    )


@pytest.fixture(scope="module")
def models(cohort, pcfg):
    return {fam: fit_family(cohort, fam, pcfg) for fam in FAMILIES}


def _at_risk_subject(cohort, t):
    for s in cohort.subjects:
        if s.event_time > t and cohort.series[s.id].times[0] <= t:
            return s.id
    raise AssertionError("no eligible subject")


class TestFitFamily:
    def test_unknown_family(self, cohort, pcfg):
        with pytest.raises(ValidationError):
            fit_family(cohort, "bogus", pcfg)

    def test_all_families_fit(self, models):
        for fam, m in models.items():
            assert m.cox.converged, fam
            assert m.cox.n_rows > 0

    def test_wavelet_has_quartiles_and_lmm(self, models):
        m = models["wavelet"]
        assert m.lmm is not None
        assert m.quartiles is None or len(m.quartiles) == 3
        assert models["mixed"].lmm is not None
        assert models["locf1"].lmm is None

    def test_predictions_in_unit_interval(self, cohort, models):
        t = 365.0
        sid = _at_risk_subject(cohort, t)
        for fam, m in models.items():
            pred, category = predict(m, cohort, sid, t)
            assert 0.0 <= pred.pi <= 1.0, fam
            if fam == "wavelet":
                assert category is None or category in ("1", "2", "3", "4", NO_OSCILLATION)
            else:
                assert category is None

    def test_predict_requires_at_risk(self, cohort, models):
        dead = min(cohort.subjects, key=lambda s: s.event_time)
        with pytest.raises(ValidationError):
            predict(models["locf2"], cohort, dead.id, dead.event_time + 1.0)

    def test_predict_unknown_subject(self, cohort, models):
        with pytest.raises(ValidationError):
            predict(models["locf2"], cohort, "NOPE", 365.0)

    def test_design_row_matches_training_row(self, cohort, pcfg, models):
        # the featurizer reproduces the stacked training rows at a landmark
        from wavemark.landmark import build_locf

        ds = build_locf(cohort, pcfg.grid, "categorical")
        m = models["locf2"]
        for i in (0, 5, 10):
            sid = ds.subject_ids[i]
            h = ds.landmark[i]
            subject = cohort.subject(sid)
            row = design_row(m, subject, cohort.series[sid], h)
            assert np.allclose(row, ds.X[i], atol=1e-12)


class TestArchive:
    def test_roundtrip_bitwise_predictions(self, cohort, models, tmp_path):
        t = 365.0
        sid = _at_risk_subject(cohort, t)
        for fam, m in models.items():
            path = tmp_path / f"{fam}.json"
            save_model(m, path, config_snapshot={"note": "test"})
            back = load_model(path)
            p1, c1 = predict(m, cohort, sid, t)
            p2, c2 = predict(back, cohort, sid, t)
            assert p1.pi == p2.pi and p1.linear_predictor == p2.linear_predictor
            assert c1 == c2

    def test_version_check(self, models, tmp_path):
        import json

        path = tmp_path / "m.json"
        save_model(models["locf2"], path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ArchiveError):
            load_model(path)

    def test_unreadable_archive(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ArchiveError):
            load_model(path)
