import numpy as np
import pytest

from pathx.errors import InputFormatError
from pathx.models.models import ClinicalRecord, ClusterAssignment
from pathx.services.survival import (
    assign_risk_labels,
    km_curve,
    logrank_test,
    median_survival,
    pairwise_logrank,
    restricted_mean_survival,
    risk_curves,
    survival_at,
)
from tests.conftest import make_records


def steps(curve):
    return [(s.time, s.survival, s.at_risk) for s in curve.steps]


def test_product_limit_by_hand():
    curve = km_curve(make_records([1, 2, 3], [True, False, True]))
    assert [(t, n) for t, _, n in steps(curve)] == [(0.0, 3), (1.0, 3), (2.0, 2), (3.0, 1)]
    np.testing.assert_allclose([s for _, s, _ in steps(curve)], [1.0, 2 / 3, 2 / 3, 0.0], atol=1e-15)
    assert survival_at(curve, 0.5) == 1.0
    assert survival_at(curve, 2.5) == pytest.approx(2 / 3, abs=1e-15)
    assert survival_at(curve, 3.0) == 0.0


def test_all_censored_curve_stays_at_one():
    curve = km_curve(make_records([4, 8, 9], [False, False, False]))
    assert all(s.survival == 1.0 for s in curve.steps)
    assert median_survival(curve) is None


def test_single_event():
    curve = km_curve(make_records([5], [True]))
    assert steps(curve) == [(0.0, 1.0, 1), (5.0, 0.0, 1)]


def test_empirical_survival_without_censoring():
    generator = np.random.default_rng(0)
    for _ in range(100):
        n = int(generator.integers(1, 51))
        times = generator.integers(0, 20, size=n).astype(float)
        curve = km_curve(make_records(times, [True] * n))
        for t in np.unique(np.concatenate([times, times + 0.5])):
            assert abs(survival_at(curve, t) - np.count_nonzero(times > t) / n) < 1e-12


def test_median_and_restricted_mean():
    curve = km_curve(make_records([2, 4, 6, 8], [True, True, True, True]))
    assert median_survival(curve) == 4.0
    # steps of width 2 at heights 1, 0.75, 0.5, 0.25
    assert restricted_mean_survival(curve) == pytest.approx(2 * (1 + 0.75 + 0.5 + 0.25))
    assert restricted_mean_survival(curve, 3.0) == pytest.approx(2 + 0.75)


def test_logrank_hand_example():
    a = make_records([1, 2], [True, True], "a")
    b = make_records([3, 4], [True, True], "b")
    result = logrank_test(a, b)
    assert result.observed_a == 2.0
    assert result.expected_a == pytest.approx(5 / 6, abs=1e-15)
    assert result.variance == pytest.approx(17 / 36, abs=1e-15)
    assert result.statistic == pytest.approx(49 / 17, abs=1e-12)
    assert result.p_value == pytest.approx(0.0896, abs=1e-3)
    assert result.observed_a + result.observed_b == pytest.approx(result.expected_a + result.expected_b, abs=1e-12)


def test_logrank_symmetric_groups():
    result = logrank_test(make_records([1], [True], "a"), make_records([1], [True], "b"))
    assert result.statistic == 0.0
    assert result.p_value == 1.0


def test_logrank_identical_datasets():
    records = make_records([3, 5, 5, 9, 12], [True, True, False, True, False])
    result = logrank_test(records, list(records))
    assert result.statistic == pytest.approx(0.0, abs=1e-24)
    assert result.p_value == pytest.approx(1.0)


def test_logrank_no_events_is_degenerate():
    result = logrank_test(make_records([1, 2], [False, False]), make_records([3], [False]))
    assert result.degenerate
    assert (result.statistic, result.p_value) == (0.0, 1.0)


def test_logrank_label_swap():
    generator = np.random.default_rng(3)
    a = make_records(generator.exponential(10, 15), generator.uniform(size=15) < 0.8, "a")
    b = make_records(generator.exponential(20, 12), generator.uniform(size=12) < 0.8, "b")
    forward, backward = logrank_test(a, b), logrank_test(b, a)
    assert forward.statistic == pytest.approx(backward.statistic, rel=1e-12)
    assert forward.p_value == pytest.approx(backward.p_value, rel=1e-9)


def test_logrank_needs_two_groups():
    with pytest.raises(ValueError):
        logrank_test([], make_records([1], [True]))


def planted_cohort(seed=11, per_group=100, hazards=(0.001, 0.005, 0.02)):
    generator = np.random.default_rng(seed)
    groups = generator.permutation(np.repeat(np.arange(len(hazards)), per_group))
    times = generator.exponential(1.0 / np.asarray(hazards)[groups])
    records = [ClinicalRecord(case_id=f"c{i}", time=float(t), event=True) for i, t in enumerate(times)]
    # cluster indices deliberately disagree with the hazard order
    relabel = {0: 2, 1: 0, 2: 1}
    clusters = {f"c{i}": relabel[int(g)] for i, g in enumerate(groups)}
    return records, ClusterAssignment(k=len(hazards), clusters=clusters), relabel


def test_planted_hazards_ranked_and_significant():
    records, assignment, relabel = planted_cohort()
    ranked = assign_risk_labels(assignment, records)
    assert ranked.risk == {relabel[0]: "Low", relabel[1]: "Medium", relabel[2]: "High"}

    results = pairwise_logrank(ranked, records)
    assert [r.comparison for r in results] == ["(Low vs Medium)", "(Low vs High)", "(Medium vs High)"]
    assert all(r.p_value < 0.01 for r in results)

    curves = risk_curves(ranked, records)
    assert [c.group for c in curves] == ["Low", "Medium", "High"]


def test_early_events_are_high_risk():
    records = make_records([1, 2, 3, 100, 200, 300], [True] * 6)
    assignment = ClusterAssignment(k=2, clusters={"c0": 1, "c1": 1, "c2": 1, "c3": 0, "c4": 0, "c5": 0})
    ranked = assign_risk_labels(assignment, records)
    assert ranked.risk == {0: "Low", 1: "High"}
    results = pairwise_logrank(ranked, records)
    assert len(results) == 1 and results[0].comparison == "(Low vs High)"


def test_undefined_median_ranks_lowest_risk():
    records = make_records([10, 20, 30, 40], [True, True, False, False])
    assignment = ClusterAssignment(k=2, clusters={"c0": 0, "c1": 0, "c2": 1, "c3": 1})
    assert assign_risk_labels(assignment, records).risk == {1: "Low", 0: "High"}


def test_identical_clusters_rank_by_index():
    records = make_records([5, 9, 5, 9], [True, True, True, True])
    assignment = ClusterAssignment(k=2, clusters={"c0": 0, "c1": 0, "c2": 1, "c3": 1})
    assert assign_risk_labels(assignment, records).risk == {0: "Low", 1: "High"}


def test_missing_clinical_record_is_named():
    assignment = ClusterAssignment(k=1, clusters={"c0": 0, "ghost": 0})
    with pytest.raises(InputFormatError, match="ghost"):
        assign_risk_labels(assignment, make_records([1], [True]))
