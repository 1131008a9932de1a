"""
Survival analysis service: Kaplan-Meier curves, two-group log-rank tests and
risk naming of clusters.
"""

import logging
import sys
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from pathx.errors import InputFormatError
from pathx.ml.numeric import chi2_sf
from pathx.models.models import (
    ClinicalRecord,
    ClusterAssignment,
    LogRankResult,
    SurvivalCurve,
    SurvivalStep,
    risk_names,
)

logger = logging.getLogger(__name__)

SMALLEST_P = sys.float_info.min

Clinical = Union[Mapping[str, ClinicalRecord], Sequence[ClinicalRecord]]


def _arrays(records: Sequence[ClinicalRecord]):
    times = np.array([r.time for r in records], dtype=np.float64)
    events = np.array([bool(r.event) for r in records], dtype=bool)
    if np.any(times < 0):
        raise ValueError("negative survival time")
    return times, events


def km_curve(records: Sequence[ClinicalRecord], group: str = "all") -> SurvivalCurve:
    """
    Product-limit estimate with one step per distinct observed time.

    A (0, 1, n) step is prepended when no observation sits at time 0.
    Censor-only times keep S and only shrink the at-risk count.
    """
    if not records:
        raise ValueError("km_curve needs at least one record")
    times, events = _arrays(records)
    n = times.size

    steps = []
    if times.min() > 0:
        steps.append(SurvivalStep(time=0.0, survival=1.0, at_risk=n))
    survival = 1.0
    for t in np.unique(times):
        at_risk = int(np.count_nonzero(times >= t))
        deaths = int(np.count_nonzero((times == t) & events))
        if deaths:
            survival *= 1.0 - deaths / at_risk
        steps.append(SurvivalStep(time=float(t), survival=survival, at_risk=at_risk))
    return SurvivalCurve(group=group, steps=steps)


def survival_at(curve: SurvivalCurve, t: float) -> float:
    value = 1.0
    for step in curve.steps:
        if step.time > t:
            break
        value = step.survival
    return value


def median_survival(curve: SurvivalCurve) -> Optional[float]:
    """First time S drops to 0.5 or below; None when the curve never gets there"""
    for step in curve.steps:
        if step.survival <= 0.5:
            return step.time
    return None


def restricted_mean_survival(curve: SurvivalCurve, horizon: Optional[float] = None) -> float:
    """Area under S from 0 to horizon (default: the curve's last time)"""
    if horizon is None:
        horizon = curve.steps[-1].time
    area = 0.0
    previous_time, previous_s = 0.0, 1.0
    for step in curve.steps:
        if step.time >= horizon:
            break
        area += previous_s * (step.time - previous_time)
        previous_time, previous_s = step.time, step.survival
    area += previous_s * max(0.0, horizon - previous_time)
    return area


def logrank_test(
    group_a: Sequence[ClinicalRecord],
    group_b: Sequence[ClinicalRecord],
    name_a: str = "A",
    name_b: str = "B",
) -> LogRankResult:
    """Two-group log-rank test with the hypergeometric variance and 1-df chi-square p-value"""
    if not group_a or not group_b:
        raise ValueError("log-rank test needs two nonempty groups")
    times_a, events_a = _arrays(group_a)
    times_b, events_b = _arrays(group_b)

    event_times = np.unique(np.concatenate([times_a[events_a], times_b[events_b]]))
    expected_a = 0.0
    variance = 0.0
    for t in event_times:
        n_a = np.count_nonzero(times_a >= t)
        n_b = np.count_nonzero(times_b >= t)
        d = np.count_nonzero((times_a == t) & events_a) + np.count_nonzero((times_b == t) & events_b)
        total = n_a + n_b
        share = n_a / total
        expected_a += d * share
        if total > 1:
            variance += d * share * (1.0 - share) * (total - d) / (total - 1)

    observed_a = float(np.count_nonzero(events_a))
    observed_b = float(np.count_nonzero(events_b))
    expected_b = observed_a + observed_b - expected_a

    if variance <= 0.0:
        statistic, p_value, degenerate = 0.0, 1.0, True
    else:
        statistic = (observed_a - expected_a) ** 2 / variance
        p_value = min(1.0, max(chi2_sf(statistic, 1), SMALLEST_P))
        degenerate = False

    return LogRankResult(
        group_a=name_a,
        group_b=name_b,
        observed_a=observed_a,
        observed_b=observed_b,
        expected_a=expected_a,
        expected_b=expected_b,
        variance=variance,
        statistic=statistic,
        p_value=p_value,
        degenerate=degenerate,
    )


def _as_mapping(clinical: Clinical) -> Dict[str, ClinicalRecord]:
    if isinstance(clinical, Mapping):
        return dict(clinical)
    return {record.case_id: record for record in clinical}


def cluster_records(assignment: ClusterAssignment, clinical: Clinical) -> Dict[int, List[ClinicalRecord]]:
    """Clinical records grouped by cluster index; every assigned case must have one"""
    lookup = _as_mapping(clinical)
    groups: Dict[int, List[ClinicalRecord]] = {c: [] for c in range(assignment.k)}
    for case_id, cluster in assignment.clusters.items():
        if case_id not in lookup:
            raise InputFormatError(f"no clinical record for case '{case_id}'")
        groups.setdefault(cluster, []).append(lookup[case_id])
    return groups


def assign_risk_labels(assignment: ClusterAssignment, clinical: Clinical) -> ClusterAssignment:
    """
    Rank clusters from lowest to highest risk and name them.

    Higher KM median means lower risk. Clusters whose curve never reaches 0.5
    rank below every cluster with a defined median, ordered among themselves
    by S at their last time. Remaining ties go to the larger restricted mean
    survival over the cohort's follow-up, then to the smaller cluster index.
    """
    groups = cluster_records(assignment, clinical)
    horizon = max(r.time for members in groups.values() for r in members) if groups else 0.0

    keys = {}
    for cluster, members in groups.items():
        if not members:
            # empty clusters rank last
            keys[cluster] = (2, 0.0, 0.0, cluster)
            continue
        curve = km_curve(members)
        median = median_survival(curve)
        rmst = restricted_mean_survival(curve, horizon)
        if median is None:
            keys[cluster] = (0, -curve.steps[-1].survival, -rmst, cluster)
        else:
            keys[cluster] = (1, -median, -rmst, cluster)

    order = sorted(keys, key=keys.get)
    names = risk_names(assignment.k)
    risk = {cluster: names[rank] for rank, cluster in enumerate(order)}
    logger.info(f"Risk order for k={assignment.k}: " + ", ".join(f"{risk[c]}=cluster {c}" for c in order))
    return assignment.model_copy(update={"risk": risk})


def risk_curves(assignment: ClusterAssignment, clinical: Clinical) -> List[SurvivalCurve]:
    """One KM curve per risk group, lowest risk first"""
    groups = cluster_records(assignment, clinical)
    return [
        km_curve(groups[cluster], group=assignment.risk[cluster])
        for cluster in assignment.clusters_by_risk()
        if groups[cluster]
    ]


def pairwise_logrank(assignment: ClusterAssignment, clinical: Clinical) -> List[LogRankResult]:
    """All risk-group pairs, lower-risk group first (Low-Medium, Low-High, Medium-High)"""
    if assignment.k < 2:
        raise ValueError("pairwise log-rank needs k >= 2")
    if not assignment.risk:
        assignment = assign_risk_labels(assignment, clinical)
    groups = cluster_records(assignment, clinical)
    ordered = assignment.clusters_by_risk()

    results = []
    for i, first in enumerate(ordered):
        for second in ordered[i + 1:]:
            result = logrank_test(
                groups[first], groups[second],
                assignment.risk[first], assignment.risk[second],
            )
            logger.info(f"Log-rank {result.comparison}: chi2={result.statistic:.4f}, p={result.p_value:.3e}")
            results.append(result)
    return results

