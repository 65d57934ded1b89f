"""Reward components, the evidence trust gate and group-relative advantages.

Every component is a pure function of a trajectory (and ground truth), so
scoring the same trajectory twice is bit-identical.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .agent import Trajectory
from .errors import GroupTooSmall
from .labels import Emotion, LabelSet
from .tools import compared_pairs, touched_emotions
from .validation import CONFIDENCES, FORMAT, PHASE_CONSTRAINTS, Candidate

logger = logging.getLogger(__name__)

# fixed evidence-score coefficients for the trust gate
LAMBDA_EVID = 0.2
LAMBDA_TOOL = 0.3
EPS_ADV = 1e-6

PHASE_PASS = 1.0
PHASE_FAIL = -2.0
OVERLAP_PAIRS = (
    frozenset({Emotion.Happiness, Emotion.Surprise}),
    frozenset({Emotion.Contempt, Emotion.Disgust}),
)
BUDGET_MIN = 2
BUDGET_MAX = 8
BUDGET_BONUS = 0.3
BUDGET_STEP = 0.15
BUDGET_CAP = 0.6


class RewardWeights(BaseModel):
    """Composite reward coefficients; preset B carries the baseline weights."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    w_fmt: float = Field(default=0.5, ge=0)
    w_phase: float = Field(default=0.2, ge=0)
    w_out: float = Field(default=0.4, ge=0)
    w_evid: float = Field(default=0.2, ge=0)
    w_tool: float = Field(default=0.3, ge=0)

    @property
    def outcome_to_process(self) -> float:
        process = self.w_evid + self.w_tool
        return self.w_out / process if process else math.inf

    @classmethod
    def preset(cls, name: str) -> "RewardWeights":
        key = name.upper()
        if key not in PRESETS:
            raise ValueError(f"Unsupported weight preset: {name}. Supported: {', '.join(PRESETS)}")
        return PRESETS[key]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RewardWeights":
        """
        Load a JSON override file.

        The file may name a base preset under "preset"; the remaining keys
        override its coefficients.
        """
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        base = cls.preset(data.pop("preset", "B")).model_dump()
        base.update(data)
        try:
            return cls(**base)
        except ValidationError as e:
            raise ValueError(f"Invalid reward weights in {path}: {e}")

    @classmethod
    def resolve(cls, spec: str) -> "RewardWeights":
        if spec.upper() in PRESETS:
            return cls.preset(spec)
        return cls.load(spec)


PRESETS: Dict[str, RewardWeights] = {
    "A": RewardWeights(w_out=0.4, w_evid=0.04, w_tool=0.06),
    "B": RewardWeights(),
    "C": RewardWeights(w_out=0.1, w_evid=0.16, w_tool=0.24),
}


def r_fmt(traj: Trajectory) -> int:
    """1 when all three phase outputs parsed with canonical labels and no format violation, else 0."""
    if traj.aborted:
        return 0
    if any(v.category == FORMAT for v in traj.violations):
        return 0
    parsed = [traj.phase(p) for p in (1, 2, 3)]
    return int(all(rec is not None and rec.parsed is not None for rec in parsed))


def r_phase(traj: Trajectory) -> float:
    score = 0.0
    for phase, codes in PHASE_CONSTRAINTS.items():
        broken = any(v.phase == phase and v.code in codes for v in traj.violations)
        score += PHASE_FAIL if broken else PHASE_PASS
    return score


def _confidence_rank(confidence: Optional[str]) -> int:
    return CONFIDENCES.index(confidence) if confidence in CONFIDENCES else len(CONFIDENCES)


def top_candidates(pool: Sequence[Candidate], n: int = 3) -> List[Emotion]:
    """Pool ordered by emitted rank, then confidence (high > mid > low), then position."""
    ordered = sorted(
        enumerate(pool),
        key=lambda item: (
            item[1].rank if item[1].rank is not None else item[0] + 1,
            _confidence_rank(item[1].confidence),
            item[0],
        ),
    )
    return [c.emotion for _, c in ordered[:n]]


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def r_out(primary: Iterable[Emotion], minor: Iterable[Emotion], gt: LabelSet,
          pool: Sequence[Candidate]) -> float:
    primary = frozenset(primary)
    score = 0.0
    if primary & gt.primary:
        score += 1.0
    if gt.primary <= set(top_candidates(pool)):
        score += 0.5
    score += 0.3 * jaccard(minor, gt.minor)
    if gt.is_tie and primary == gt.primary:
        score += 0.2
    return min(2.0, max(0.0, score))


def r_evid(traj: Trajectory) -> float:
    """Coverage of the pool, core-first probing and minor-label grounding."""
    p1 = traj.phase1
    pool = top_candidates(p1.candidate_pool, n=len(p1.candidate_pool)) if p1 else []
    calls = traj.phase2_calls
    touched = set(touched_emotions(calls))

    s_cov = min(1.0, len(touched & set(pool)) / len(pool)) if pool else 0.0
    core = set(pool[:2])
    s_core = 0.5 if core and core <= set(touched_emotions(calls[:3])) else 0.0

    _, minor = traj.prediction
    if minor:
        s_minor = 0.5 * len(minor & touched) / len(minor)
        p_minor = min(2.0, 1.0 * len(minor - touched))
    else:
        s_minor = p_minor = 0.0
    return s_cov + s_core + s_minor - p_minor


def budget_term(n_calls: int) -> float:
    if BUDGET_MIN <= n_calls <= BUDGET_MAX:
        return BUDGET_BONUS
    outside = BUDGET_MIN - n_calls if n_calls < BUDGET_MIN else n_calls - BUDGET_MAX
    return -min(BUDGET_CAP, BUDGET_STEP * outside)


def r_tool(traj: Trajectory) -> float:
    pool = set(traj.pool)
    compared = compared_pairs(traj.phase2_calls)
    score = 0.0
    for pair in OVERLAP_PAIRS:
        if pair <= pool:
            score += 1.0 if pair in compared else -1.0
    return score + budget_term(len(traj.phase2_calls))


def s_evid(r_evid_value: float, r_tool_value: float) -> float:
    return LAMBDA_EVID * r_evid_value + LAMBDA_TOOL * r_tool_value


def trust_gate(scores: Sequence[float], correct: Sequence[bool]) -> Tuple[float, Optional[float], Optional[float]]:
    """
    Evidence trust gate for one rollout group.

    Returns:
        (tau, mu_pos, mu_neg); tau is 1 when either partition is empty or mu_pos >= mu_neg
    """
    pos = [s for s, c in zip(scores, correct) if c]
    neg = [s for s, c in zip(scores, correct) if not c]
    if not pos or not neg:
        return 1.0, (float(np.mean(pos)) if pos else None), (float(np.mean(neg)) if neg else None)
    mu_pos, mu_neg = float(np.mean(pos)), float(np.mean(neg))
    tau = 1.0 if mu_pos >= mu_neg else math.exp(mu_pos - mu_neg)
    return tau, mu_pos, mu_neg


def composite(r_fmt_value: int, r_phase_value: float, r_out_value: float, r_evid_value: float,
              r_tool_value: float, weights: RewardWeights, tau: float = 1.0) -> float:
    if r_fmt_value != 1:
        return 0.0
    return (
        weights.w_fmt * r_fmt_value
        + weights.w_phase * r_phase_value
        + weights.w_out * r_out_value
        + tau * (weights.w_evid * r_evid_value + weights.w_tool * r_tool_value)
    )


def group_advantage(rewards: Sequence[float], eps: float = EPS_ADV) -> List[float]:
    if len(rewards) < 2:
        raise GroupTooSmall(f"advantages need at least 2 rollouts, got {len(rewards)}")
    arr = np.asarray(rewards, dtype=float)
    return [float(a) for a in (arr - arr.mean()) / (arr.std() + eps)]


@dataclass
class RewardBreakdown:
    utterance_id: str
    rollout: int
    status: str
    correct: bool = False
    n_calls: int = 0
    r_fmt: int = 0
    r_phase: float = 0.0
    r_out: float = 0.0
    r_evid: float = 0.0
    r_tool: float = 0.0
    s_evid: float = 0.0
    gate: float = 1.0
    composite: Optional[float] = None
    ungated: Optional[float] = None
    advantage: Optional[float] = None

    @property
    def aborted(self) -> bool:
        return self.status != "completed"

    def to_dict(self) -> Dict:
        return asdict(self)


def score_trajectory(traj: Trajectory, gt: LabelSet) -> RewardBreakdown:
    """Per-trajectory components; gate, composite and advantage are filled in per group."""
    if traj.aborted:
        return RewardBreakdown(traj.utterance_id, traj.rollout, traj.status)
    primary, minor = traj.prediction
    p1 = traj.phase1
    evid, tool = r_evid(traj), r_tool(traj)
    return RewardBreakdown(
        utterance_id=traj.utterance_id,
        rollout=traj.rollout,
        status=traj.status,
        correct=bool(primary & gt.primary),
        n_calls=len(traj.phase2_calls),
        r_fmt=r_fmt(traj),
        r_phase=r_phase(traj),
        r_out=r_out(primary, minor, gt, p1.candidate_pool if p1 else ()),
        r_evid=evid,
        r_tool=tool,
        s_evid=s_evid(evid, tool),
    )


@dataclass
class GroupScore:
    utterance_id: str
    breakdowns: List[RewardBreakdown]
    tau: float = 1.0
    mu_pos: Optional[float] = None
    mu_neg: Optional[float] = None
    n_aborted: int = 0

    def to_dict(self) -> Dict:
        return {
            "utterance_id": self.utterance_id,
            "tau": self.tau,
            "mu_pos": self.mu_pos,
            "mu_neg": self.mu_neg,
            "n_aborted": self.n_aborted,
        }

    def rows(self) -> List[Dict]:
        group = self.to_dict()
        return [dict(b.to_dict(), group=group) for b in self.breakdowns]


def score_group(trajectories: Sequence[Trajectory], gt: LabelSet,
                weights: Optional[RewardWeights] = None) -> GroupScore:
    """Score K rollouts of one utterance; aborted rollouts are reported but excluded from the group."""
    weights = weights or PRESETS["B"]
    breakdowns = [score_trajectory(t, gt) for t in trajectories]
    live = [b for b in breakdowns if not b.aborted]
    tau, mu_pos, mu_neg = trust_gate([b.s_evid for b in live], [b.correct for b in live])
    for b in live:
        b.gate = tau
        b.composite = composite(b.r_fmt, b.r_phase, b.r_out, b.r_evid, b.r_tool, weights, tau)
        b.ungated = composite(b.r_fmt, b.r_phase, b.r_out, b.r_evid, b.r_tool, weights, 1.0)
    utterance_id = trajectories[0].utterance_id if trajectories else ""
    if len(live) >= 2:
        for b, adv in zip(live, group_advantage([b.composite for b in live])):
            b.advantage = float(adv)
    else:
        logger.warning("Group %s has %d scorable rollouts; advantages omitted", utterance_id, len(live))
    return GroupScore(utterance_id, breakdowns, tau, mu_pos, mu_neg, len(breakdowns) - len(live))


def group_by_utterance(trajectories: Iterable[Trajectory]) -> Dict[str, List[Trajectory]]:
    groups: Dict[str, List[Trajectory]] = {}
    for traj in trajectories:
        groups.setdefault(traj.utterance_id, []).append(traj)
    for group in groups.values():
        group.sort(key=lambda t: t.rollout)
    return groups


def score_all(trajectories: Iterable[Trajectory], gt: Mapping[str, LabelSet],
              weights: Optional[RewardWeights] = None) -> List[GroupScore]:
    scores = []
    for utterance_id, group in sorted(group_by_utterance(trajectories).items()):
        if utterance_id not in gt:
            logger.warning("No ground truth for %s; skipping %d trajectories", utterance_id, len(group))
            continue
        scores.append(score_group(group, gt[utterance_id], weights))
    return scores
