"""Tests for ambiguity-aware evaluation."""

import numpy as np
import pytest

from adept_agent.agent import BACKEND_UNAVAILABLE, COMPLETED, PhaseRecord, Trajectory
from adept_agent.errors import InsufficientData
from adept_agent.labels import ALL_EMOTIONS, Emotion
from adept_agent.metrics import (
    EvalPair,
    EvalReport,
    avg_cardinality,
    evaluate,
    format_table,
    primary_macro_f1,
    set_recall_and_jaccard,
    soft_recall,
    strict_accuracy,
    tool_usage_report,
)
from adept_agent.tools import SEMANTIC_GATE, Observation
from tests.conftest import label_set


def pair(gt_primary, primary, minor=(), gt_minor=()):
    return EvalPair.from_prediction(
        label_set(gt_primary, gt_minor),
        [Emotion[e] for e in primary],
        [Emotion[e] for e in minor],
    )


def trajectory(uid, primary, minor=(), n_calls=0, rollout=0, status=COMPLETED):
    decision = {"primary_emotions": list(primary), "minor_emotions": list(minor)}
    observations = [
        Observation.create(f"obs-{i}", SEMANTIC_GATE, SEMANTIC_GATE, {"emotion": "Anger"}, 2, i, result={})
        for i in range(1, n_calls + 1)
    ]
    return Trajectory(uid, rollout, status=status, phases=[PhaseRecord(3, "{}", decision)],
                      observations=observations)


PAIRS = [
    pair(["Anger"], ["Anger"]),
    pair(["Sadness"], ["Anger"]),
    pair(["Happiness", "Neutral"], ["Happiness"]),
]


class TestEvalPair:
    """Test prediction pairs."""

    def test_predicted_contains_primary(self):
        p = pair(["Anger"], ["Anger"], minor=["Sadness"])
        assert p.predicted == {Emotion.Anger, Emotion.Sadness}

    def test_inconsistent_pair(self):
        with pytest.raises(ValueError):
            EvalPair(label_set(["Anger"]), frozenset({Emotion.Fear}), frozenset({Emotion.Anger}))

    def test_from_trajectory(self):
        p = EvalPair.from_trajectory(trajectory("u", ["Fear"], ["Sadness"]), label_set(["Fear"]))
        assert p.primary == {Emotion.Fear}
        assert p.predicted == {Emotion.Fear, Emotion.Sadness}


class TestPrimaryMetrics:
    """Test macro-F1, strict accuracy and soft recall."""

    def test_macro_f1(self):
        result = primary_macro_f1(PAIRS)
        assert result.per_class["Anger"] == {"tp": 1, "fp": 1, "fn": 0, "f1": pytest.approx(2 / 3)}
        assert result.per_class["Neutral"]["fn"] == 1
        assert result.value == pytest.approx((2 / 3 + 0 + 1 + 0) / 4)
        assert result.excluded == ["Surprise", "Fear", "Disgust", "Contempt"]
        assert "excluded" in result.note

    def test_strict_and_soft(self):
        assert strict_accuracy(PAIRS) == pytest.approx(1 / 3)
        assert soft_recall(PAIRS) == pytest.approx(2 / 3)

    def test_soft_recall_counts_minor(self):
        assert soft_recall([pair(["Sadness"], ["Anger"], minor=["Sadness"])]) == 1.0

    def test_empty(self):
        with pytest.raises(InsufficientData):
            strict_accuracy([])


class TestSetMetrics:
    """Test set recall, Jaccard and cardinality."""

    def test_partial_overlap(self):
        recall, iou = set_recall_and_jaccard([pair(["Anger"], ["Anger"], minor=["Fear"], gt_minor=["Sadness"])])
        assert recall == pytest.approx(0.5)
        assert iou == pytest.approx(1 / 3)

    def test_predict_everything(self):
        everything = [e.name for e in ALL_EMOTIONS]
        p = pair(["Anger"], ["Anger"], minor=everything[1:])
        recall, iou = set_recall_and_jaccard([p])
        assert recall == 1.0
        assert iou == pytest.approx(0.125)
        assert avg_cardinality([p]) == 8.0

    def test_per_pair_mean(self):
        pairs = [pair(["Anger"], ["Anger"]), pair(["Anger"], ["Fear"])]
        assert set_recall_and_jaccard(pairs) == (0.5, 0.5)


class TestToolUsage:
    """Test phase-2 call counts by consensus level."""

    def test_buckets(self):
        gt = {
            "a": label_set(["Anger"]),
            "b": label_set(["Sadness"]),
            "c": label_set(["Fear"], ["Anger", "Sadness", "Neutral"]),
        }
        trajectories = [
            trajectory("a", ["Anger"], n_calls=1),
            trajectory("b", ["Sadness"], n_calls=3),
            trajectory("c", ["Fear"], n_calls=7),
            trajectory("c", ["Fear"], n_calls=2, rollout=1, status=BACKEND_UNAVAILABLE),
        ]
        report = tool_usage_report(trajectories, gt)
        assert report["High"]["mean_calls"] == 2.0
        assert report["High"]["calls"] == [1, 3]
        assert report["Low"]["mean_calls"] == 7.0
        assert report["Low"]["tools"] == {SEMANTIC_GATE: 7}
        assert "Medium" not in report


class TestEvaluate:
    """Test the end-to-end evaluation report."""

    def test_first_completed_rollout_wins(self, caplog):
        gt = {"a": label_set(["Anger"], ["Sadness"]), "b": label_set(["Neutral"])}
        trajectories = [
            trajectory("a", ["Fear"], rollout=0, status=BACKEND_UNAVAILABLE),
            trajectory("a", ["Anger"], ["Sadness"], rollout=1),
            trajectory("a", ["Fear"], rollout=2),
            trajectory("b", ["Neutral"], ["Happiness"]),
            trajectory("z", ["Neutral"]),
        ]
        report = evaluate(trajectories, gt)
        assert report.n_pairs == 2
        assert report.n_aborted == 1
        assert report.strict_accuracy == 1.0
        assert report.avg_size == 2.0
        assert "aborted trajectories excluded" in caplog.text

    def test_avg_size_note(self):
        report = evaluate([trajectory("a", ["Anger"])], {"a": label_set(["Anger"])})
        assert any("avg_size 1.00" in note for note in report.notes)

    def test_nothing_to_score(self):
        with pytest.raises(InsufficientData):
            evaluate([trajectory("a", ["Anger"], status=BACKEND_UNAVAILABLE)], {"a": label_set(["Anger"])})

    def test_report_round_trip_and_table(self):
        report = evaluate([trajectory("a", ["Anger"], n_calls=2)], {"a": label_set(["Anger"])})
        assert EvalReport.from_dict(report.to_dict()) == report
        table = format_table(report, name="scripted")
        assert table.splitlines()[0].split() == ["Method", "Avg", "Size", "P-MacroF1", "Soft", "R", "Set", "R",
                                                 "Jaccard"]
        assert "scripted" in table
        assert "High" in table


def random_label_set(rng, max_primary=2, max_minor=3):
    order = [ALL_EMOTIONS[i] for i in rng.permutation(len(ALL_EMOTIONS))]
    n_primary = int(rng.integers(1, max_primary + 1))
    n_minor = int(rng.integers(0, max_minor + 1))
    return frozenset(order[:n_primary]), frozenset(order[n_primary:n_primary + n_minor])


def random_pairs(rng, n=None):
    pairs = []
    for _ in range(n or int(rng.integers(1, 101))):
        gt_primary, gt_minor = random_label_set(rng)
        primary, minor = random_label_set(rng)
        pairs.append(EvalPair.from_prediction(label_set([e.name for e in gt_primary], [e.name for e in gt_minor]),
                                              primary, minor))
    return pairs


def oracle_metrics(pairs):
    """Brute-force recount over plain index sets."""
    rows = []
    for p in pairs:
        gt_pri = {int(e) for e in p.gt.primary}
        gt_all = gt_pri | {int(e) for e in p.gt.minor}
        pred_pri = {int(e) for e in p.primary}
        pred_all = {int(e) for e in p.predicted}
        rows.append((gt_pri, gt_all, pred_pri, pred_all))

    f1s = []
    for c in range(8):
        tp = sum(1 for g, _, q, _ in rows if c in g and c in q)
        fp = sum(1 for g, _, q, _ in rows if c not in g and c in q)
        fn = sum(1 for g, _, q, _ in rows if c in g and c not in q)
        if tp + fn:
            f1s.append(2 * tp / (2 * tp + fp + fn))
    n = len(rows)
    return {
        "f1": sum(f1s) / len(f1s),
        "strict": sum(1 for g, _, q, _ in rows if g == q) / n,
        "soft": sum(1 for g, _, _, a in rows if g & a) / n,
        "set_recall": sum(len(ga & a) / len(ga) for _, ga, _, a in rows) / n,
        "iou": sum(len(ga & a) / len(ga | a) for _, ga, _, a in rows) / n,
        "size": sum(len(a) for _, _, _, a in rows) / n,
    }


class TestRandomizedMetricOracle:
    """Compare every metric with a brute-force recount on random pair sets."""

    def test_metrics_match_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            pairs = random_pairs(rng)
            expected = oracle_metrics(pairs)
            recall, iou = set_recall_and_jaccard(pairs)
            assert primary_macro_f1(pairs).value == pytest.approx(expected["f1"], abs=1e-12)
            assert strict_accuracy(pairs) == pytest.approx(expected["strict"], abs=1e-12)
            assert soft_recall(pairs) == pytest.approx(expected["soft"], abs=1e-12)
            assert recall == pytest.approx(expected["set_recall"], abs=1e-12)
            assert iou == pytest.approx(expected["iou"], abs=1e-12)
            assert avg_cardinality(pairs) == pytest.approx(expected["size"], abs=1e-12)

    def test_dominance(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            pairs = random_pairs(rng)
            recall, iou = set_recall_and_jaccard(pairs)
            assert soft_recall(pairs) >= strict_accuracy(pairs)
            assert iou <= recall + 1e-12

    def test_adding_labels(self):
        rng = np.random.default_rng(101)
        for _ in range(500):
            (p,) = random_pairs(rng, n=1)
            recall, iou = set_recall_and_jaccard([p])
            missing = sorted(p.gt.all_labels - p.predicted)
            wrong = sorted(set(ALL_EMOTIONS) - p.gt.all_labels - p.predicted)
            if missing:
                more = EvalPair(p.gt, p.primary, p.predicted | {missing[0]})
                assert set_recall_and_jaccard([more])[0] >= recall
            if wrong:
                more = EvalPair(p.gt, p.primary, p.predicted | {wrong[0]})
                assert set_recall_and_jaccard([more])[1] <= iou
