"""Ambiguity-preserving label construction and manifest ingestion."""

import hashlib
import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    AlignmentError,
    EmptyAfterFilter,
    InsufficientData,
    ManifestError,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

OTHER = "Other"


class Emotion(IntEnum):
    """The closed 8-way emotion set. Index order is stable and used for tie-breaks."""

    Anger = 0
    Sadness = 1
    Happiness = 2
    Surprise = 3
    Fear = 4
    Disgust = 5
    Contempt = 6
    Neutral = 7

    @property
    def label(self) -> str:
        return self.name

    def __str__(self) -> str:
        return self.name


ALL_EMOTIONS: Tuple[Emotion, ...] = tuple(Emotion)

DEFAULT_ALIASES: Dict[str, str] = {
    "happy": "Happiness",
    "sad": "Sadness",
    "angry": "Anger",
    "neutral": "Neutral",
    "surprised": "Surprise",
    "fearful": "Fear",
    "disgusted": "Disgust",
}

# Recipe for 7-way corpora such as IEMOCAP; applied before construct_labels.
IEMOCAP_TAXONOMY: Dict[str, Optional[str]] = {
    "excited": "Happiness",
    "frustrated": None,
    "other": None,
}


class ConsensusLevel(str, Enum):
    High = "High"
    Medium = "Medium"
    Low = "Low"

    @classmethod
    def for_count(cls, total_label_count: int) -> "ConsensusLevel":
        if total_label_count <= 1:
            return cls.High
        if total_label_count <= 3:
            return cls.Medium
        return cls.Low


def _fold(raw: str) -> str:
    return " ".join(raw.split()).casefold()


def is_other(raw: str) -> bool:
    return isinstance(raw, str) and _fold(raw) == OTHER.casefold()


def canonicalize_emotion(raw: str, aliases: Optional[Mapping[str, str]] = None) -> Emotion:
    """
    Map a raw annotator or model string onto the canonical emotion set.

    Args:
        raw: Any string; trimmed, whitespace-collapsed and case-folded before lookup
        aliases: Alias table (alias -> canonical name). Defaults to DEFAULT_ALIASES

    Returns:
        The matching Emotion

    Raises:
        UnknownLabel: For anything outside the set, "Other" included
    """
    if isinstance(raw, Emotion):
        return raw
    if not isinstance(raw, str):
        raise UnknownLabel(repr(raw))
    key = _fold(raw)
    for emotion in ALL_EMOTIONS:
        if emotion.name.casefold() == key:
            return emotion
    table = DEFAULT_ALIASES if aliases is None else aliases
    for alias, target in table.items():
        if _fold(alias) == key:
            return canonicalize_emotion(target, aliases={})
    raise UnknownLabel(raw)


def sort_emotions(emotions: Iterable[Emotion]) -> List[Emotion]:
    return sorted(emotions, key=int)


def emotion_names(emotions: Iterable[Emotion]) -> List[str]:
    return [e.name for e in sort_emotions(emotions)]


@dataclass(frozen=True)
class LabelSet:
    primary: FrozenSet[Emotion]
    minor: FrozenSet[Emotion] = frozenset()

    def __post_init__(self):
        if not self.primary:
            raise ValueError("primary emotion set must be non-empty")
        if self.primary & self.minor:
            raise ValueError("primary and minor emotion sets must be disjoint")

    @property
    def is_tie(self) -> bool:
        return len(self.primary) >= 2

    @property
    def total_label_count(self) -> int:
        return len(self.primary) + len(self.minor)

    @property
    def consensus_level(self) -> ConsensusLevel:
        return ConsensusLevel.for_count(self.total_label_count)

    @property
    def all_labels(self) -> FrozenSet[Emotion]:
        return self.primary | self.minor

    def to_dict(self) -> Dict:
        return {
            "primary": emotion_names(self.primary),
            "minor": emotion_names(self.minor),
            "is_tie": self.is_tie,
            "consensus_level": self.consensus_level.value,
            "total_label_count": self.total_label_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LabelSet":
        return cls(
            primary=frozenset(canonicalize_emotion(e) for e in data["primary"]),
            minor=frozenset(canonicalize_emotion(e) for e in data.get("minor", [])),
        )


@dataclass(frozen=True)
class VoteRecord:
    utterance_id: str
    votes: Tuple[str, ...]

    def __post_init__(self):
        if not self.votes:
            raise ValueError(f"{self.utterance_id}: votes must be non-empty")


@dataclass(frozen=True)
class AlignedWord:
    word: str
    start: float
    end: float

    def to_dict(self) -> Dict:
        return {"w": self.word, "s": self.start, "e": self.end}


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio: str
    transcript: str
    alignment: Tuple[AlignedWord, ...]
    votes: VoteRecord
    labels: LabelSet
    speaker: Optional[str] = None


def construct_labels(
    votes: Union[VoteRecord, Sequence[str]], aliases: Optional[Mapping[str, str]] = None
) -> LabelSet:
    """
    Plurality consensus with ties retained.

    "Other" votes are removed before counting. Every class sharing the maximal
    count is primary; every remaining voted class is minor.

    Raises:
        UnknownLabel: A vote is neither canonical nor "Other"
        EmptyAfterFilter: Every vote was "Other"
    """
    raw = votes.votes if isinstance(votes, VoteRecord) else tuple(votes)
    if not raw:
        raise ValueError("votes must be non-empty")
    counts: Counter = Counter(
        canonicalize_emotion(v, aliases) for v in raw if not is_other(v)
    )
    if not counts:
        raise EmptyAfterFilter("all votes were 'Other'")
    top = max(counts.values())
    primary = frozenset(e for e, c in counts.items() if c == top)
    minor = frozenset(e for e in counts if e not in primary)
    return LabelSet(primary=primary, minor=minor)


def map_taxonomy(votes: Sequence[str], mapping: Mapping[str, Optional[str]] = IEMOCAP_TAXONOMY) -> List[str]:
    """Rewrite corpus-specific vote strings; dropped classes become "Other"."""
    out = []
    for vote in votes:
        key = _fold(vote)
        if key in mapping:
            target = mapping[key]
            out.append(target if target is not None else OTHER)
        else:
            out.append(vote)
    return out


def normalize_token(token: str) -> str:
    return token.lower().strip(string.punctuation)


def transcript_tokens(transcript: str) -> List[str]:
    tokens = (normalize_token(t) for t in transcript.split())
    return [t for t in tokens if t]


def validate_alignment(alignment: Sequence[AlignedWord], transcript: str) -> None:
    """
    Check word times and token agreement with the transcript.

    Raises:
        AlignmentError: Naming the first offending word index
    """
    previous = 0.0
    for i, word in enumerate(alignment):
        if word.start < 0 or word.end < word.start:
            raise AlignmentError(f"invalid times [{word.start}, {word.end}]", i)
        if word.start < previous:
            raise AlignmentError(f"start {word.start} precedes previous end {previous}", i)
        previous = word.end

    expected = transcript_tokens(transcript)
    aligned = [normalize_token(w.word) for w in alignment]
    aligned = [w for w in aligned if w]
    for i, (a, b) in enumerate(zip(aligned, expected)):
        if a != b:
            raise AlignmentError(f"aligned word {a!r} does not match transcript token {b!r}", i)
    if len(aligned) != len(expected):
        raise AlignmentError(
            f"{len(aligned)} aligned words for {len(expected)} transcript tokens",
            min(len(aligned), len(expected)),
        )


def other_is_plurality(votes: Sequence[str]) -> bool:
    counts = Counter("Other" if is_other(v) else _fold(v) for v in votes)
    other = counts.pop("Other", 0)
    return other > 0 and other >= max(counts.values(), default=0)


@dataclass(frozen=True)
class ManifestIssue:
    line_no: int
    code: str
    message: str

    def to_dict(self) -> Dict:
        return {"line": self.line_no, "code": self.code, "message": self.message}


@dataclass
class ManifestResult:
    records: List[UtteranceRecord] = field(default_factory=list)
    issues: List[ManifestIssue] = field(default_factory=list)
    other_plurality: int = 0

    @property
    def skipped(self) -> int:
        return len(self.issues)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def parse_manifest_line(
    data: Mapping, line_no: int, base_dir: Optional[Path] = None,
    aliases: Optional[Mapping[str, str]] = None,
) -> UtteranceRecord:
    """Build one UtteranceRecord from a decoded manifest object."""
    if not isinstance(data, Mapping):
        raise ManifestError("line is not a JSON object", line_no, code="not_an_object")
    for key in ("id", "audio", "transcript", "alignment", "votes"):
        if key not in data:
            raise ManifestError(f"missing field '{key}'", line_no, code="missing_field")
    votes = data["votes"]
    if not isinstance(votes, list) or not votes:
        raise ManifestError("votes must be a non-empty list", line_no, code="missing_field")

    try:
        labels = construct_labels([str(v) for v in votes], aliases)
        alignment = tuple(
            AlignedWord(str(w["w"]), float(w["s"]), float(w["e"])) for w in data["alignment"]
        )
        validate_alignment(alignment, str(data["transcript"]))
    except (UnknownLabel, EmptyAfterFilter, AlignmentError) as e:
        raise ManifestError(str(e), line_no, code=e.code) from e
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"malformed alignment: {e}", line_no, code="alignment_error") from e

    audio = Path(str(data["audio"]))
    if base_dir is not None and not audio.is_absolute():
        audio = base_dir / audio
    speaker = data.get("speaker")
    return UtteranceRecord(
        id=str(data["id"]),
        audio=str(audio),
        transcript=str(data["transcript"]),
        alignment=alignment,
        votes=VoteRecord(str(data["id"]), tuple(str(v) for v in votes)),
        labels=labels,
        speaker=str(speaker) if speaker is not None else None,
    )


def load_manifest(
    path: Union[str, Path], strict: bool = False, aliases: Optional[Mapping[str, str]] = None
) -> ManifestResult:
    """
    Load a JSONL manifest, one utterance per line.

    Args:
        path: Manifest file; relative audio paths resolve against its directory
        strict: Abort on the first bad line instead of skipping it
        aliases: Label alias table

    Returns:
        ManifestResult with records in file order plus per-line issues

    Raises:
        ManifestError: In strict mode, for the first bad line
    """
    path = Path(path)
    result = ManifestResult()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ManifestError(f"invalid JSON: {e.msg}", line_no, code="invalid_json")
                if isinstance(data, Mapping) and isinstance(data.get("votes"), list):
                    if other_is_plurality([str(v) for v in data["votes"]]):
                        result.other_plurality += 1
                record = parse_manifest_line(data, line_no, path.parent, aliases)
            except ManifestError as e:
                if strict:
                    raise
                logger.warning("Skipping manifest %s line %d: %s", path, line_no, e.detail)
                result.issues.append(ManifestIssue(line_no, e.code, e.detail))
                continue
            result.records.append(record)
    return result


@dataclass
class StatsReport:
    n: int
    tie_rate: float
    label_count: Dict[str, float]
    mean_primary: float
    mean_minor: float
    consensus: Dict[str, int]
    primary_distribution: Dict[str, int]
    per_emotion_tie_rate: Dict[str, float]
    minor_count_distribution: Dict[str, int]

    def to_dict(self) -> Dict:
        return {
            "n": self.n,
            "tie_rate": self.tie_rate,
            "label_count": self.label_count,
            "mean_primary": self.mean_primary,
            "mean_minor": self.mean_minor,
            "consensus": self.consensus,
            "primary_distribution": self.primary_distribution,
            "per_emotion_tie_rate": self.per_emotion_tie_rate,
            "minor_count_distribution": self.minor_count_distribution,
        }


def corpus_stats(records: Sequence[Union[UtteranceRecord, LabelSet]]) -> StatsReport:
    """Corpus-level label statistics (tie rate, label-count summary, per-emotion panels)."""
    labelsets = [r.labels if isinstance(r, UtteranceRecord) else r for r in records]
    if not labelsets:
        raise InsufficientData("corpus_stats requires at least one record")

    counts = np.array([ls.total_label_count for ls in labelsets], dtype=float)
    ties = np.array([ls.is_tie for ls in labelsets], dtype=bool)

    consensus = {level.value: 0 for level in ConsensusLevel}
    primary_hits: Counter = Counter()
    primary_ties: Counter = Counter()
    minor_sizes: Counter = Counter()
    for ls in labelsets:
        consensus[ls.consensus_level.value] += 1
        minor_sizes[len(ls.minor)] += 1
        for e in ls.primary:
            primary_hits[e] += 1
            if ls.is_tie:
                primary_ties[e] += 1

    return StatsReport(
        n=len(labelsets),
        tie_rate=float(ties.mean()),
        label_count={
            "mean": float(counts.mean()),
            "median": float(np.median(counts)),
            "min": float(counts.min()),
            "max": float(counts.max()),
            "std": float(counts.std()),
        },
        mean_primary=float(np.mean([len(ls.primary) for ls in labelsets])),
        mean_minor=float(np.mean([len(ls.minor) for ls in labelsets])),
        consensus=consensus,
        primary_distribution={e.name: primary_hits[e] for e in ALL_EMOTIONS},
        per_emotion_tie_rate={
            e.name: primary_ties[e] / primary_hits[e] for e in ALL_EMOTIONS if primary_hits[e]
        },
        minor_count_distribution={str(k): minor_sizes[k] for k in sorted(minor_sizes)},
    )


def manifest_fingerprint(path: Union[str, Path]) -> str:
    """sha256 of the manifest bytes, used to tie derived artifacts to their split."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
