"""Global acoustic reference distributions built from a training manifest."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .acoustic import MetricStats, SignalView, robust_stats
from .errors import AdeptError, InsufficientData
from .features import METRIC_NAMES, AudioSignal, FrameParams, load_audio
from .labels import UtteranceRecord

logger = logging.getLogger(__name__)

MIN_UNIT_UTTERANCES = 10
SCOPES = ("corpus", "speaker")


@dataclass
class GlobalReference:
    corpus: Dict[str, MetricStats]
    speakers: Dict[str, Dict[str, MetricStats]] = field(default_factory=dict)
    scope: str = "corpus"
    fingerprint: Dict = field(default_factory=dict)
    fallbacks: List[str] = field(default_factory=list)
    fingerprint_mismatch: bool = False

    def lookup(self, speaker: Optional[str] = None) -> Tuple[Dict[str, MetricStats], str]:
        if speaker is not None and speaker in self.speakers:
            return self.speakers[speaker], f"speaker:{speaker}"
        return self.corpus, "corpus"

    def to_dict(self) -> Dict:
        return {
            "scope": self.scope,
            "fingerprint": self.fingerprint,
            "corpus": {m: s.to_dict() for m, s in self.corpus.items()},
            "speakers": {
                spk: {m: s.to_dict() for m, s in stats.items()}
                for spk, stats in self.speakers.items()
            },
            "fallbacks": list(self.fallbacks),
        }

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict) -> "GlobalReference":
        def block(raw: Dict) -> Dict[str, MetricStats]:
            return {m: MetricStats.from_dict(s) for m, s in raw.items()}

        return cls(
            corpus=block(data.get("corpus", {})),
            speakers={spk: block(raw) for spk, raw in data.get("speakers", {}).items()},
            scope=data.get("scope", "corpus"),
            fingerprint=data.get("fingerprint", {}),
            fallbacks=list(data.get("fallbacks", [])),
        )

    @classmethod
    def load(
        cls,
        path: Union[str, Path],
        params: Optional[FrameParams] = None,
        manifest_sha256: Optional[str] = None,
    ) -> "GlobalReference":
        """Load a reference file and flag it when its fingerprint disagrees with the current run."""
        with open(path, "r", encoding="utf-8") as f:
            ref = cls.from_dict(json.load(f))
        expected_params = (params or FrameParams()).to_dict()
        mismatches = []
        if ref.fingerprint.get("frame_params") != expected_params:
            mismatches.append("frame parameters")
        if manifest_sha256 and ref.fingerprint.get("manifest_sha256") != manifest_sha256:
            mismatches.append("training manifest")
        if mismatches:
            ref.fingerprint_mismatch = True
            logger.warning(
                "Reference %s fingerprint mismatch (%s); observations will be tagged",
                path, ", ".join(mismatches),
            )
        return ref


def utterance_metrics(
    record: UtteranceRecord,
    params: FrameParams,
    loader: Callable[[str], AudioSignal] = load_audio,
) -> Optional[Dict[str, Optional[float]]]:
    try:
        view = SignalView(loader(record.audio), params)
        return view.whole_utterance_metrics()
    except AdeptError as e:
        logger.warning("Skipping %s in reference build: %s", record.id, e)
        return None


def _stats(rows: Sequence[Dict[str, Optional[float]]]) -> Dict[str, MetricStats]:
    out = {}
    for name in METRIC_NAMES:
        stats = robust_stats(row.get(name) for row in rows)
        if stats is not None:
            out[name] = stats
    return out


def build_reference(
    records: Sequence[UtteranceRecord],
    scope: str = "corpus",
    params: Optional[FrameParams] = None,
    manifest_sha256: str = "",
    loader: Callable[[str], AudioSignal] = load_audio,
    jobs: int = 1,
) -> GlobalReference:
    """
    Robust per-metric statistics over whole-utterance summaries.

    Args:
        records: Training-split utterances
        scope: "corpus" or "speaker"; speakers with fewer than 10 usable
            utterances fall back to the corpus block
        params: Frame parameters, recorded in the fingerprint
        manifest_sha256: Hash of the source manifest, recorded in the fingerprint
        loader: Audio loader
        jobs: Worker threads for per-utterance extraction

    Raises:
        InsufficientData: No utterance produced usable metrics
    """
    if scope not in SCOPES:
        raise ValueError(f"Unsupported scope: {scope}. Supported: corpus, speaker")
    params = params or FrameParams()

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(lambda r: utterance_metrics(r, params, loader), records))

    usable = [(rec, row) for rec, row in zip(records, rows) if row is not None]
    if not usable:
        raise InsufficientData("no usable utterances for the reference")
    if len(usable) < MIN_UNIT_UTTERANCES:
        logger.warning("Corpus reference built from only %d utterances", len(usable))

    ref = GlobalReference(
        corpus=_stats([row for _, row in usable]),
        scope=scope,
        fingerprint={"manifest_sha256": manifest_sha256, "frame_params": params.to_dict()},
    )
    if scope == "speaker":
        groups: Dict[str, List[Dict]] = {}
        for rec, row in usable:
            if rec.speaker is not None:
                groups.setdefault(rec.speaker, []).append(row)
        for speaker in sorted(groups):
            if len(groups[speaker]) < MIN_UNIT_UTTERANCES:
                logger.warning(
                    "Speaker %s has %d utterances (< %d); using corpus reference",
                    speaker, len(groups[speaker]), MIN_UNIT_UTTERANCES,
                )
                ref.fallbacks.append(speaker)
                continue
            ref.speakers[speaker] = _stats(groups[speaker])
    return ref
