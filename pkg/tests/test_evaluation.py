import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import classify_rules
from quenchwatch.errors import DataError
from quenchwatch.evaluation import (
    AlarmClass,
    Taxonomy,
    classify_alarm,
    evaluate,
    lead_time_ms,
)
from quenchwatch.labeling import DisruptionMark, make_label
from quenchwatch.nn_core import zero_params
from quenchwatch.signal_model import AlignedShot


def test_examples():
    assert classify_alarm(100, 350) is AlarmClass.FalseAlarm  # 50 ms
    assert classify_alarm(290, 350) is AlarmClass.TrueAlarm  # 12 ms
    assert classify_alarm(None, 350) is AlarmClass.MissedAlarm
    assert classify_alarm(200, 350) is AlarmClass.PrematureAlarm  # 30 ms


@pytest.mark.parametrize("lead,expected", [
    (7.8, AlarmClass.MissedAlarm),
    (8.0, AlarmClass.TrueAlarm),
    (20.0, AlarmClass.TrueAlarm),
    (20.2, AlarmClass.PrematureAlarm),
    (40.0, AlarmClass.PrematureAlarm),
    (40.2, AlarmClass.FalseAlarm),
])
def test_boundaries(lead, expected):
    d = 400
    alarm = d - int(round(lead / 0.2))
    assert lead_time_ms(alarm, d) == pytest.approx(lead)
    assert classify_alarm(alarm, d) is expected


def test_literal_taxonomy_late_alarms():
    assert classify_alarm(205, 200, taxonomy="literal") is AlarmClass.TrueAlarm  # -1 ms
    assert classify_alarm(240, 200, taxonomy="literal") is AlarmClass.MissedAlarm  # -8 ms
    assert classify_alarm(239, 200, taxonomy=Taxonomy.literal) is AlarmClass.TrueAlarm
    assert classify_alarm(205, 200) is AlarmClass.MissedAlarm


@given(a=st.one_of(st.none(), st.integers(0, 500)), d=st.integers(0, 500),
       shift=st.integers(-200, 200), tax=st.sampled_from(["default", "literal"]))
def test_matches_oracle_and_shift_invariant(a, d, shift, tax):
    got = classify_alarm(a, d, taxonomy=tax)
    assert got.name == classify_rules(a, d, tax)
    shifted = None if a is None else a + shift
    assert classify_alarm(shifted, d + shift, taxonomy=tax) is got


def make_shot(shot_id, T=100, d=60, normalized=True):
    rng = np.random.default_rng(shot_id)
    return AlignedShot(shot_id, rng.uniform(0, 1, (T, 10)), label=make_label(T, DisruptionMark(d, 1.0)),
                       disruption_step=d, normalized=normalized)


def test_all_true_split():
    p = zero_params(4)
    p.b_y = 10.0  # fires at step 0: lead = 60 * 0.2 = 12 ms
    report = evaluate(p, {"test": [make_shot(i) for i in range(5)]})
    s = report.splits["test"]
    assert s.counts[AlarmClass.TrueAlarm] == 5
    assert s.fraction(AlarmClass.TrueAlarm) == 1.0
    assert s.mean_true_lead_ms == pytest.approx(12.0)
    assert s.pointwise_accuracy == pytest.approx(0.4)


def test_report_consistency():
    p = zero_params(4)
    p.b_y = -10.0
    splits = {"train": [make_shot(i) for i in range(3)], "test": [make_shot(9)]}
    report = evaluate(p, splits)
    for name, s in report.splits.items():
        assert sum(s.counts.values()) == s.size == len(splits[name])
        assert s.counts[AlarmClass.MissedAlarm] == s.size
        assert s.mean_true_lead_ms is None
        assert s.pointwise_accuracy == pytest.approx(0.6)
    assert len(report.records) == 4


def test_unlabeled_shot_is_rejected():
    shot = make_shot(1).replace(label=None)
    with pytest.raises(DataError):
        evaluate(zero_params(2), {"test": [shot]})


def test_table_and_csv(tmp_path):
    p = zero_params(4)
    p.b_y = 10.0
    report = evaluate(p, {"train": [make_shot(1)], "test": [make_shot(2, d=300, T=400)]})
    table = report.table()
    assert "train set" in table and "test set" in table
    assert "True alarm" in table and "1/1 (100.0%)" in table
    path = report.to_csv(tmp_path / "eval.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "shot_id,alarm_step,disruption_step,lead_ms,class"
    assert lines[1] == "1,0,60,12.0,true"
    assert lines[2] == "2,0,300,60.0,false"
