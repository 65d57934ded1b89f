"""Corpus-level co-occurrence prior and the structural prior scheduling queries.

The prior only ranks pairs and suggests candidates. It never scores an
emotion for a given utterance.
"""

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

import numpy as np

from .errors import AnchorNotInCandidates, EmptyCandidateSet
from .labels import ALL_EMOTIONS, Emotion, LabelSet, UtteranceRecord, canonicalize_emotion

N_EMOTIONS = len(ALL_EMOTIONS)
DEFAULT_LAMBDA = 0.5
DEFAULT_EPS = 1e-8
DEFAULT_K = 3
DEFAULT_L = 2

Pair = Tuple[Emotion, Emotion]


@dataclass(eq=False)
class CooccurrenceCounts:
    """Raw primary-minor counts (rows primary) and symmetric tie counts."""

    pm: np.ndarray = field(default_factory=lambda: np.zeros((N_EMOTIONS, N_EMOTIONS), dtype=np.int64))
    tie: np.ndarray = field(default_factory=lambda: np.zeros((N_EMOTIONS, N_EMOTIONS), dtype=np.int64))

    def merge(self, other: "CooccurrenceCounts") -> "CooccurrenceCounts":
        return CooccurrenceCounts(pm=self.pm + other.pm, tie=self.tie + other.tie)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CooccurrenceCounts):
            return NotImplemented
        return bool(np.array_equal(self.pm, other.pm) and np.array_equal(self.tie, other.tie))


def accumulate(records: Iterable[Union[UtteranceRecord, LabelSet]]) -> CooccurrenceCounts:
    """Fold label sets into co-occurrence counts. Ties of size > 2 add every unordered pair."""
    counts = CooccurrenceCounts()
    for record in records:
        ls = record.labels if isinstance(record, UtteranceRecord) else record
        for p in ls.primary:
            for m in ls.minor:
                counts.pm[p, m] += 1
        for a, b in itertools.combinations(sorted(ls.primary), 2):
            counts.tie[a, b] += 1
            counts.tie[b, a] += 1
    return counts


def normalize(c: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """
    Symmetric normalization C[a,b] / (sqrt(rowsum[a] * rowsum[b]) + eps).

    Entries whose row-sum product is zero map to 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = np.asarray(c, dtype=float)
    row = c.sum(axis=1)
    denom = np.sqrt(np.outer(row, row))
    return np.where(denom > 0, c / (denom + eps), 0.0)


def fuse(pm_norm: np.ndarray, tie_norm: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    pm_norm = np.asarray(pm_norm, dtype=float)
    tie_norm = np.asarray(tie_norm, dtype=float)
    if pm_norm.shape != tie_norm.shape:
        raise ValueError("matrices must share a shape")
    return lam * pm_norm + (1.0 - lam) * tie_norm


@dataclass(eq=False)
class PriorTable:
    counts: CooccurrenceCounts
    pm_norm: np.ndarray
    tie_norm: np.ndarray
    s_co: np.ndarray
    lam: float = DEFAULT_LAMBDA
    eps: float = DEFAULT_EPS
    fingerprint: str = ""

    def pair_score(self, a: Emotion, b: Emotion) -> float:
        # unordered pair: either direction may be the primary
        return float(max(self.s_co[a, b], self.s_co[b, a]))

    def to_dict(self) -> Dict:
        return {
            "emotions": [e.name for e in ALL_EMOTIONS],
            "lambda": self.lam,
            "eps": self.eps,
            "fingerprint": self.fingerprint,
            "counts": {"pm": self.counts.pm.tolist(), "tie": self.counts.tie.tolist()},
            "normalized": {"pm": self.pm_norm.tolist(), "tie": self.tie_norm.tolist()},
            "s_co": self.s_co.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PriorTable":
        counts = CooccurrenceCounts(
            pm=np.array(data["counts"]["pm"], dtype=np.int64),
            tie=np.array(data["counts"]["tie"], dtype=np.int64),
        )
        return cls(
            counts=counts,
            pm_norm=np.array(data["normalized"]["pm"], dtype=float),
            tie_norm=np.array(data["normalized"]["tie"], dtype=float),
            s_co=np.array(data["s_co"], dtype=float),
            lam=float(data["lambda"]),
            eps=float(data["eps"]),
            fingerprint=data.get("fingerprint", ""),
        )

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PriorTable":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_prior(
    records: Iterable[Union[UtteranceRecord, LabelSet]],
    lam: float = DEFAULT_LAMBDA,
    eps: float = DEFAULT_EPS,
    fingerprint: Optional[str] = None,
) -> PriorTable:
    """Build a PriorTable from training-split records."""
    counts = accumulate(records)
    pm_norm = normalize(counts.pm, eps)
    tie_norm = normalize(counts.tie, eps)
    if fingerprint is None:
        digest = hashlib.sha256()
        digest.update(counts.pm.tobytes())
        digest.update(counts.tie.tobytes())
        fingerprint = f"counts:{digest.hexdigest()}"
    return PriorTable(
        counts=counts,
        pm_norm=pm_norm,
        tie_norm=tie_norm,
        s_co=fuse(pm_norm, tie_norm, lam),
        lam=lam,
        eps=eps,
        fingerprint=fingerprint,
    )


@dataclass(frozen=True)
class PriorQuery:
    candidates: FrozenSet[Emotion]
    intent: str = "verify"
    anchor: Optional[Emotion] = None
    tie_mode: bool = False
    k: int = DEFAULT_K
    l: int = DEFAULT_L  # noqa: E741

    @classmethod
    def from_arguments(
        cls,
        candidates: Iterable[str],
        intent: str = "verify",
        anchor: Optional[str] = None,
        tie_mode: bool = False,
        k: int = DEFAULT_K,
        l: int = DEFAULT_L,  # noqa: E741
    ) -> "PriorQuery":
        return cls(
            candidates=frozenset(canonicalize_emotion(c) for c in candidates),
            intent=intent,
            anchor=canonicalize_emotion(anchor) if anchor else None,
            tie_mode=tie_mode,
            k=k,
            l=l,
        )


@dataclass(frozen=True)
class PriorAnswer:
    """Ranked scheduling hints. Holds ranks only, never scores."""

    priority_pairs: Tuple[Pair, ...] = ()
    suggested_candidates: Tuple[Emotion, ...] = ()
    tie_priority_pairs: Tuple[Pair, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "priority_pairs": [[a.name, b.name] for a, b in self.priority_pairs],
            "suggested_candidates": [e.name for e in self.suggested_candidates],
            "tie_priority_pairs": [[a.name, b.name] for a, b in self.tie_priority_pairs],
        }


def _ranked_pairs(pairs: List[Pair], score) -> List[Pair]:
    return sorted(pairs, key=lambda p: (-score(p), int(p[0]), int(p[1])))


def query(table: PriorTable, q: PriorQuery) -> PriorAnswer:
    """
    Answer a structural prior query.

    verify ranks unordered pairs inside the candidate set by fused score,
    anchor-containing pairs first and then a global fill. expand ranks
    emotions outside the candidate set by their strongest link to a
    candidate. tie_mode ranks candidate pairs by normalized tie counts.
    Equal scores break by ascending emotion index.

    Raises:
        EmptyCandidateSet: No candidates given
        AnchorNotInCandidates: Anchor outside the candidate set
        ValueError: Unknown intent or negative K/L
    """
    if not q.candidates:
        raise EmptyCandidateSet("candidate set is empty")
    if q.anchor is not None and q.anchor not in q.candidates:
        raise AnchorNotInCandidates(f"anchor {q.anchor.name} is not a candidate")
    if q.intent not in ("verify", "expand"):
        raise ValueError(f"Unsupported intent: {q.intent}. Supported: verify, expand")
    if q.k < 0 or q.l < 0:
        raise ValueError("K and L must be non-negative")

    pairs: List[Pair] = list(itertools.combinations(sorted(q.candidates), 2))

    priority: List[Pair] = []
    if q.intent == "verify":
        ranked = _ranked_pairs(pairs, lambda p: table.pair_score(*p))
        if q.anchor is not None:
            anchored = [p for p in ranked if q.anchor in p]
            ranked = anchored + [p for p in ranked if q.anchor not in p]
        priority = ranked[: q.k]

    suggested: List[Emotion] = []
    if q.intent == "expand":
        outside = [c for c in ALL_EMOTIONS if c not in q.candidates]
        strength = {c: max(float(table.s_co[a, c]) for a in q.candidates) for c in outside}
        suggested = sorted(outside, key=lambda c: (-strength[c], int(c)))[: q.l]

    tie_pairs: List[Pair] = []
    if q.tie_mode:
        tie_pairs = _ranked_pairs(pairs, lambda p: float(table.tie_norm[p[0], p[1]]))[: q.k]

    return PriorAnswer(
        priority_pairs=tuple(priority),
        suggested_candidates=tuple(suggested),
        tie_priority_pairs=tuple(tie_pairs),
    )
