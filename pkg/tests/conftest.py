import numpy as np
import pytest

from wavemark.cohort import Cohort, MeasurementSeries, Subject, standardize_age


def make_subject(sid, event_time=1000.0, status=0, **kw):
    fields = dict(
        id=sid,
        age_years=75.0,
        sex="F",
        nyha=2,
        hfref=False,
        ckd=False,
        comorbid_gt3=False,
        event_time=event_time,
        status=status,
    )
    fields.update(kw)
    return Subject(**fields)


def make_cohort(rows):
    """rows: list of (subject, times, values)."""
    subjects = standardize_age(tuple(r[0] for r in rows))
    series = {
        r[0].id: MeasurementSeries(r[0].id, np.asarray(r[1], dtype=float), np.asarray(r[2], dtype=float))
        for r in rows
    }
    return Cohort(subjects, series)


@pytest.fixture
def two_subject_cohort():
    s1 = make_subject("A1", event_time=584.0, status=1, sex="M", age_years=80.0)
    s2 = make_subject("A2", event_time=900.0, status=0, age_years=70.0)
    return make_cohort(
        [
            (s1, [0.0, 30.0, 200.0, 400.0], [4.1, 4.3, 3.9, 4.0]),
            (s2, [10.0, 50.0, 300.0], [4.4, 4.2, 4.5]),
        ]
    )
