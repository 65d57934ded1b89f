"""Ambiguity-aware evaluation and tool-usage diagnostics."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .agent import Trajectory
from .errors import InsufficientData
from .labels import ALL_EMOTIONS, ConsensusLevel, Emotion, LabelSet

logger = logging.getLogger(__name__)

# reported next to avg_size; a calibrated system on naturalistic speech sits here
REFERENCE_AVG_SIZE = (2.0, 2.6)


@dataclass(frozen=True)
class EvalPair:
    gt: LabelSet
    primary: FrozenSet[Emotion]
    predicted: FrozenSet[Emotion]

    def __post_init__(self):
        if not self.primary <= self.predicted:
            raise ValueError("predicted set must contain the predicted primary set")

    @classmethod
    def from_prediction(cls, gt: LabelSet, primary: Iterable[Emotion],
                        minor: Iterable[Emotion] = ()) -> "EvalPair":
        primary = frozenset(primary)
        return cls(gt, primary, primary | frozenset(minor))

    @classmethod
    def from_trajectory(cls, traj: Trajectory, gt: LabelSet) -> "EvalPair":
        primary, minor = traj.prediction
        return cls.from_prediction(gt, primary, minor)


def _require(pairs: Sequence[EvalPair]) -> None:
    if not pairs:
        raise InsufficientData("evaluation needs at least one pair")


@dataclass
class F1Result:
    value: float
    per_class: Dict[str, Dict[str, float]]
    excluded: List[str]

    @property
    def note(self) -> Optional[str]:
        if not self.excluded:
            return None
        return "classes absent from ground truth excluded from macro-F1: " + ", ".join(self.excluded)


def primary_macro_f1(pairs: Sequence[EvalPair]) -> F1Result:
    """
    Macro-F1 over primary sets.

    Each class is scored set-wise: predicted and in GT is a TP, predicted only
    is a FP, in GT only is a FN. A tied GT credits the matched class and
    charges one FN per unmatched tied class.
    """
    _require(pairs)
    tp: Counter = Counter()
    fp: Counter = Counter()
    fn: Counter = Counter()
    for pair in pairs:
        for e in pair.primary & pair.gt.primary:
            tp[e] += 1
        for e in pair.primary - pair.gt.primary:
            fp[e] += 1
        for e in pair.gt.primary - pair.primary:
            fn[e] += 1

    present = [e for e in ALL_EMOTIONS if tp[e] + fn[e] > 0]
    per_class = {}
    for e in present:
        per_class[e.name] = {
            "tp": tp[e],
            "fp": fp[e],
            "fn": fn[e],
            "f1": 2 * tp[e] / (2 * tp[e] + fp[e] + fn[e]),
        }
    value = sum(c["f1"] for c in per_class.values()) / len(per_class)
    excluded = [e.name for e in ALL_EMOTIONS if e not in present]
    return F1Result(value, per_class, excluded)


def strict_accuracy(pairs: Sequence[EvalPair]) -> float:
    _require(pairs)
    return sum(1 for p in pairs if p.primary == p.gt.primary) / len(pairs)


def soft_recall(pairs: Sequence[EvalPair]) -> float:
    _require(pairs)
    return sum(1 for p in pairs if p.gt.primary & p.predicted) / len(pairs)


def set_recall_and_jaccard(pairs: Sequence[EvalPair]) -> Tuple[float, float]:
    """Per-pair mean of |gt & pred| / |gt| and |gt & pred| / |gt | pred|."""
    _require(pairs)
    recall = 0.0
    iou = 0.0
    for p in pairs:
        gt = p.gt.all_labels
        hit = len(gt & p.predicted)
        recall += hit / len(gt)
        iou += hit / len(gt | p.predicted)
    return recall / len(pairs), iou / len(pairs)


def avg_cardinality(pairs: Sequence[EvalPair]) -> float:
    _require(pairs)
    return sum(len(p.predicted) for p in pairs) / len(pairs)


def tool_usage_report(trajectories: Iterable[Trajectory], gt: Mapping[str, LabelSet]) -> Dict[str, Dict]:
    """
    Phase-2 call counts per consensus level.

    Buckets with no trajectories are omitted rather than reported as zero.
    """
    calls: Dict[ConsensusLevel, List[int]] = {}
    tools: Dict[ConsensusLevel, Counter] = {}
    for traj in trajectories:
        if traj.aborted or traj.utterance_id not in gt:
            continue
        level = gt[traj.utterance_id].consensus_level
        observations = traj.phase2_calls
        calls.setdefault(level, []).append(len(observations))
        tools.setdefault(level, Counter()).update(o.tool for o in observations)

    report = {}
    for level in ConsensusLevel:
        if level not in calls:
            continue
        counts = calls[level]
        report[level.value] = {
            "n": len(counts),
            "mean_calls": sum(counts) / len(counts),
            "calls": counts,
            "tools": dict(sorted(tools[level].items())),
        }
    return report


@dataclass
class EvalReport:
    n_pairs: int
    avg_size: float
    macro_f1: float
    strict_accuracy: float
    soft_recall: float
    set_recall: float
    jaccard: float
    per_class: Dict[str, Dict[str, float]]
    tool_usage: Dict[str, Dict]
    n_aborted: int = 0
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "n_pairs": self.n_pairs,
            "n_aborted": self.n_aborted,
            "summary": {
                "avg_size": self.avg_size,
                "p_macro_f1": self.macro_f1,
                "strict_accuracy": self.strict_accuracy,
                "soft_recall": self.soft_recall,
                "set_recall": self.set_recall,
                "jaccard": self.jaccard,
            },
            "per_class": self.per_class,
            "tool_usage": self.tool_usage,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        s = data["summary"]
        return cls(
            n_pairs=data["n_pairs"],
            avg_size=s["avg_size"],
            macro_f1=s["p_macro_f1"],
            strict_accuracy=s["strict_accuracy"],
            soft_recall=s["soft_recall"],
            set_recall=s["set_recall"],
            jaccard=s["jaccard"],
            per_class=data.get("per_class", {}),
            tool_usage=data.get("tool_usage", {}),
            n_aborted=data.get("n_aborted", 0),
            notes=list(data.get("notes", [])),
        )


def evaluate(trajectories: Sequence[Trajectory], gt: Mapping[str, LabelSet]) -> EvalReport:
    """
    Score the first completed rollout of every utterance against ground truth.

    Raises:
        InsufficientData: No completed trajectory has ground truth
    """
    chosen: Dict[str, Trajectory] = {}
    aborted = 0
    for traj in sorted(trajectories, key=lambda t: (t.utterance_id, t.rollout)):
        if traj.aborted:
            aborted += 1
            continue
        if traj.utterance_id in gt and traj.utterance_id not in chosen:
            chosen[traj.utterance_id] = traj
    pairs = [EvalPair.from_trajectory(chosen[uid], gt[uid]) for uid in sorted(chosen)]
    if not pairs:
        raise InsufficientData("no completed trajectory matches the ground truth")

    f1 = primary_macro_f1(pairs)
    set_r, iou = set_recall_and_jaccard(pairs)
    avg = avg_cardinality(pairs)
    notes = [f1.note] if f1.note else []
    lo, hi = REFERENCE_AVG_SIZE
    if not lo <= avg <= hi:
        notes.append(f"avg_size {avg:.2f} outside the {lo}-{hi} band typical of calibrated systems")
    if aborted:
        logger.warning("%d aborted trajectories excluded from evaluation", aborted)
    return EvalReport(
        n_pairs=len(pairs),
        avg_size=avg,
        macro_f1=f1.value,
        strict_accuracy=strict_accuracy(pairs),
        soft_recall=soft_recall(pairs),
        set_recall=set_r,
        jaccard=iou,
        per_class=f1.per_class,
        tool_usage=tool_usage_report(trajectories, gt),
        n_aborted=aborted,
        notes=notes,
    )


def format_table(report: EvalReport, name: str = "adept") -> str:
    """Summary row in the usual Avg Size / P-MacroF1 / Soft R / Set R / Jaccard layout."""
    headers = ["Method", "Avg Size", "P-MacroF1", "Soft R", "Set R", "Jaccard"]
    row = [
        name,
        f"{report.avg_size:.2f}",
        f"{report.macro_f1:.4f}",
        f"{report.soft_recall:.4f}",
        f"{report.set_recall:.4f}",
        f"{report.jaccard:.4f}",
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
        "  ".join(v.ljust(w) for v, w in zip(row, widths)),
    ]
    if report.tool_usage:
        lines.append("")
        lines.append("Tool calls by consensus level:")
        for level, bucket in report.tool_usage.items():
            lines.append(f"  {level:<7} n={bucket['n']:<4} mean={bucket['mean_calls']:.2f}")
    return "\n".join(lines)
