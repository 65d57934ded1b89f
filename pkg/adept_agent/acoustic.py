"""Emotion-neutral acoustic probing.

Span anchoring, hotspot navigation, segment analysis with dual-reference
bucketing and segment comparison. Nothing here names or scores an emotion;
observations carry raw values, robust z-scores, bins and provenance only.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import IndexOutOfRange, SegmentOutOfBounds, SegmentTooShort
from .features import (
    AudioSignal,
    FrameParams,
    FrameTrack,
    check_metrics,
    compute_metric,
    extract_frames,
    pause_frames,
    runs,
)
from .labels import AlignedWord

logger = logging.getLogger(__name__)

EPS_REF = 1e-9
LEVEL_THRESHOLD = 1.0
VOLATILITY_THRESHOLD = 1.0
SPIKE_PERCENTILE = 99
LOCAL_WINDOW_S = 0.3
LOCAL_STEP_S = 0.15
MIN_SEGMENT_FRAMES = 3
DEFAULT_PADDING_MS = 75.0

HOTSPOT_WINDOW_S = 0.3
HOTSPOT_OVERLAP = 0.5
NMS_OVERLAP = 0.5
RELATIVE_FLOOR = 0.2
PITCH_FLOOR_HZ = 2.0
FOCUS_TYPES = ("energy_burst", "pitch_excursion", "pause_contrast", "voicing_instability")

APPROX_GAP = 0.25
STRONG_GAP = 1.5

PITCH_METRICS = ("f0_median", "f0_iqr", "pitch_velocity")
ENERGY_METRICS = ("rms", "energy_burstiness")

DESCRIPTORS: Dict[str, Dict[str, str]] = {
    "speech_rate": {"Low": "Slow", "Mid": "Normal", "High": "Fast"},
    "pause_density": {"Low": "Sparse", "Mid": "Normal", "High": "Dense"},
    "spectral_tilt": {"Low": "Dark", "Mid": "Neutral", "High": "Bright"},
}


@dataclass(frozen=True)
class MetricStats:
    median: float
    iqr: float
    n: int = 0

    def z(self, value: float) -> float:
        return (value - self.median) / (self.iqr + EPS_REF)

    def to_dict(self) -> Dict:
        return {"median": self.median, "iqr": self.iqr, "n": self.n}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricStats":
        return cls(float(data["median"]), float(data["iqr"]), int(data.get("n", 0)))


def robust_stats(values: Iterable[Optional[float]]) -> Optional[MetricStats]:
    arr = np.array([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None
    q75, q25 = np.percentile(arr, [75, 25])
    return MetricStats(float(np.median(arr)), float(q75 - q25), int(arr.size))


def level_bin(z: Optional[float]) -> Optional[str]:
    if z is None:
        return None
    if z < -LEVEL_THRESHOLD:
        return "Low"
    if z > LEVEL_THRESHOLD:
        return "High"
    return "Mid"


def sliding_windows(duration: float, window: float, step: float) -> List[Tuple[float, float]]:
    """Windows of fixed length covering [0, duration]; the last one is flush with the end."""
    if duration <= window:
        return [(0.0, duration)]
    out = []
    k = 0
    while k * step + window <= duration + 1e-9:
        out.append((round(k * step, 6), round(k * step + window, 6)))
        k += 1
    if out[-1][1] < duration - 1e-9:
        out.append((round(duration - window, 6), round(duration, 6)))
    return out


def _iqr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    q75, q25 = np.percentile(values, [75, 25])
    return float(q75 - q25)


class SignalView:
    """Read-only handle on one utterance's audio with a lazily built FrameTrack."""

    def __init__(self, signal: AudioSignal, params: Optional[FrameParams] = None):
        self.signal = signal
        self.params = params or FrameParams()
        self._lock = threading.Lock()
        self._track: Optional[FrameTrack] = None
        self._local: Optional[Dict[str, Optional[MetricStats]]] = None

    @property
    def duration(self) -> float:
        return self.signal.duration

    @property
    def track(self) -> FrameTrack:
        with self._lock:
            if self._track is None:
                self._track = extract_frames(self.signal, self.params)
            return self._track

    def local_reference(self) -> Dict[str, Optional[MetricStats]]:
        """Per-metric median/IQR over 300 ms windows with a 150 ms step across the utterance."""
        track = self.track
        with self._lock:
            if self._local is None:
                series: Dict[str, List[Optional[float]]] = {}
                for t_s, t_e in sliding_windows(track.duration, LOCAL_WINDOW_S, LOCAL_STEP_S):
                    lo, hi = track.frame_range(t_s, t_e)
                    if hi - lo < 1:
                        continue
                    samples = self.signal.segment(t_s, t_e)
                    for name in check_metrics(None):
                        series.setdefault(name, []).append(
                            compute_metric(name, track, lo, hi, samples)
                        )
                self._local = {name: robust_stats(vals) for name, vals in series.items()}
            return self._local

    def whole_utterance_metrics(self, metrics: Optional[Sequence[str]] = None) -> Dict[str, Optional[float]]:
        track = self.track
        return {
            name: compute_metric(name, track, 0, track.n_frames, self.signal.samples)
            for name in check_metrics(metrics)
        }


def as_view(audio: Union[SignalView, AudioSignal]) -> SignalView:
    return audio if isinstance(audio, SignalView) else SignalView(audio)


def anchor_span(
    alignment: Sequence[AlignedWord],
    word_indices: Iterable[int],
    padding_ms: float = DEFAULT_PADDING_MS,
    duration: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Time span covering the given words (convex hull), padded and clamped.

    Raises:
        IndexOutOfRange: Empty selection or an index outside the alignment
    """
    indices = list(word_indices)
    if not indices:
        raise IndexOutOfRange("no word indices given")
    for i in indices:
        if not 0 <= i < len(alignment):
            raise IndexOutOfRange(f"word index {i} outside alignment of {len(alignment)} words")
    lo, hi = min(indices), max(indices)
    pad = padding_ms / 1000.0
    t_s = max(0.0, min(w.start for w in alignment[lo: hi + 1]) - pad)
    t_e = max(w.end for w in alignment[lo: hi + 1]) + pad
    if duration is not None:
        t_e = min(t_e, duration)
    return t_s, t_e


@dataclass
class MetricReading:
    name: str
    value: Optional[float]
    z_global: Optional[float]
    z_local: Optional[float]
    level: Optional[str]
    reference: str
    volatility: Optional[str] = None
    descriptor: Optional[str] = None
    summary: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        out = {
            "value": self.value,
            "z_global": self.z_global,
            "z_local": self.z_local,
            "level": self.level,
            "reference": self.reference,
        }
        if self.volatility is not None:
            out["volatility"] = self.volatility
        if self.descriptor is not None:
            out["descriptor"] = self.descriptor
        if self.summary:
            out["summary"] = self.summary
        return out


@dataclass
class AcousticObservation:
    t_s: float
    t_e: float
    readings: Dict[str, MetricReading]
    flags: List[str]
    provenance: Dict

    def level(self, metric: str) -> Optional[str]:
        reading = self.readings.get(metric)
        return reading.level if reading else None

    def volatility(self, metric: str) -> Optional[str]:
        reading = self.readings.get(metric)
        return reading.volatility if reading else None

    def to_dict(self) -> Dict:
        return {
            "segment": [self.t_s, self.t_e],
            "metrics": {name: r.to_dict() for name, r in self.readings.items()},
            "flags": list(self.flags),
            "provenance": self.provenance,
        }


def _summary(values: np.ndarray) -> Dict[str, float]:
    if values.size == 0:
        return {}
    q25, med, q75, q90 = np.percentile(values, [25, 50, 75, 90])
    return {"median": float(med), "iqr": float(q75 - q25), "p75": float(q75), "p90": float(q90)}


def _derivative(track: FrameTrack, metric: str, lo: int, hi: int) -> Optional[np.ndarray]:
    idx = np.arange(max(lo + 1, 1), hi)
    if metric in PITCH_METRICS:
        return track.delta_f0[idx[track.voiced[idx] & track.voiced[idx - 1]]]
    if metric in ENERGY_METRICS:
        return track.delta_e[idx]
    return None


def analyze_segment(
    audio: Union[SignalView, AudioSignal],
    t_s: float,
    t_e: float,
    metrics: Optional[Sequence[str]] = None,
    refs=None,
    speaker: Optional[str] = None,
) -> AcousticObservation:
    """
    Measure metrics on [t_s, t_e] and bucket them against both references.

    Args:
        audio: Utterance view or raw signal
        t_s: Segment start (s)
        t_e: Segment end (s)
        metrics: Metric names; all supported metrics when omitted
        refs: GlobalReference or None; metrics without a global entry fall
            back to the local reference with a provenance note
        speaker: Speaker id for speaker-scoped references

    Raises:
        SegmentOutOfBounds: Segment outside [0, duration] or empty
        SegmentTooShort: Fewer than three frames inside the segment
        UnknownMetric: Unsupported metric name
    """
    view = as_view(audio)
    names = check_metrics(metrics)
    duration = view.duration
    if t_s < 0 or t_e > duration + 1e-6 or t_e <= t_s:
        raise SegmentOutOfBounds(f"segment [{t_s}, {t_e}] outside [0, {duration:.3f}]")
    t_e = min(t_e, duration)
    track = view.track
    lo, hi = track.frame_range(t_s, t_e)
    if hi - lo < MIN_SEGMENT_FRAMES:
        raise SegmentTooShort(f"segment [{t_s}, {t_e}] holds {hi - lo} frames, need 3")

    local = view.local_reference()
    global_stats: Dict[str, MetricStats] = {}
    scope = "none"
    notes: List[str] = []
    if refs is not None:
        global_stats, scope = refs.lookup(speaker)
        if getattr(refs, "fingerprint_mismatch", False):
            notes.append("global_reference_fingerprint_mismatch")
    samples = view.signal.segment(t_s, t_e)

    readings: Dict[str, MetricReading] = {}
    for name in names:
        value = compute_metric(name, track, lo, hi, samples)
        loc = local.get(name)
        glob = global_stats.get(name)
        z_l = loc.z(value) if (loc is not None and value is not None) else None
        z_g = glob.z(value) if (glob is not None and value is not None) else None
        if glob is None:
            notes.append(f"missing_global_reference:{name}")
            level, reference = level_bin(z_l), "local"
        else:
            level, reference = level_bin(z_g), f"global:{scope}"

        volatility = None
        derivative = _derivative(track, name, lo, hi)
        if derivative is not None:
            utterance = _derivative(track, name, 0, track.n_frames)
            ratio = _iqr(derivative) / (_iqr(utterance) + EPS_REF)
            volatility = "Volatile" if ratio > VOLATILITY_THRESHOLD else "Stable"

        if name in PITCH_METRICS:
            summary = _summary(track.f0[lo:hi][track.voiced[lo:hi]])
        elif name in ENERGY_METRICS:
            summary = _summary(track.rms[lo:hi])
        else:
            summary = {}

        readings[name] = MetricReading(
            name=name,
            value=value,
            z_global=z_g,
            z_local=z_l,
            level=level,
            reference=reference,
            volatility=volatility,
            descriptor=DESCRIPTORS.get(name, {}).get(level) if level else None,
            summary=summary,
        )

    flags = []
    seg_de = track.delta_e[lo + 1: hi]
    if seg_de.size and track.n_frames > 1:
        if float(seg_de.max()) > float(np.percentile(track.delta_e[1:], SPIKE_PERCENTILE)):
            flags.append("SuddenSpike")

    provenance = {
        "segment": [round(t_s, 6), round(t_e, 6)],
        "frames": [lo, hi],
        "frame_times": [round(float(track.times[lo]), 6), round(float(track.times[hi - 1]), 6)],
        "global_reference": scope,
        "local_reference": "utterance",
        "notes": notes,
    }
    return AcousticObservation(t_s=t_s, t_e=t_e, readings=readings, flags=flags, provenance=provenance)


@dataclass(frozen=True)
class ROI:
    t_s: float
    t_e: float
    focus_type: str
    score: float
    rationale: str

    def to_dict(self) -> Dict:
        return {
            "segment": [self.t_s, self.t_e],
            "focus_type": self.focus_type,
            "score": self.score,
            "rationale": self.rationale,
        }


@dataclass
class HotspotResult:
    focus_type: str
    rois: List[ROI]
    flags: List[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rois)

    def __len__(self) -> int:
        return len(self.rois)

    def __getitem__(self, i):
        return self.rois[i]

    def to_dict(self) -> Dict:
        return {
            "focus_type": self.focus_type,
            "rois": [r.to_dict() for r in self.rois],
            "flags": list(self.flags),
        }


def _window_score(track: FrameTrack, focus_type: str, lo: int, hi: int) -> Tuple[float, float, str]:
    """(score, secondary key, rationale) for one hotspot window."""
    if focus_type == "energy_burst":
        de = track.delta_e[lo:hi]
        i = int(np.argmax(de))
        return (float(de[i]), float(np.mean(track.rms[lo:hi])),
                f"max rising energy step at {track.times[lo + i]:.2f}s")
    if focus_type == "pitch_excursion":
        jumps = np.abs(track.delta_f0[lo:hi])
        i = int(np.argmax(jumps))
        return (float(jumps[i]), float(np.mean(track.voiced[lo:hi])),
                f"max F0 jump {jumps[i]:.1f} Hz at {track.times[lo + i]:.2f}s")
    if focus_type == "pause_contrast":
        voiced = track.voiced[lo:hi]
        longest = max((n for _, n, v in runs(voiced) if not v), default=0)
        if not voiced.any() or longest < pause_frames(track.hop):
            return 0.0, 0.0, ""
        return (longest * track.hop, float(np.mean(voiced)),
                f"{longest * track.hop:.2f}s pause between voiced stretches")
    if focus_type == "voicing_instability":
        voiced = track.voiced[lo:hi].astype(np.int8)
        if voiced.size < 2:
            return 0.0, 0.0, ""
        flips = int(np.sum(np.abs(np.diff(voiced))))
        return (flips / (voiced.size - 1), float(np.mean(voiced)),
                f"{flips} voicing flips")
    raise ValueError(f"Unsupported focus type: {focus_type}. Supported: {', '.join(FOCUS_TYPES)}")


def _overlap(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    shorter = min(a[1] - a[0], b[1] - b[0])
    return max(0.0, inter) / shorter if shorter > 0 else 0.0


def find_hotspots(
    audio: Union[SignalView, AudioSignal],
    focus_type: str,
    top_n: int = 3,
    window: float = HOTSPOT_WINDOW_S,
    overlap: float = HOTSPOT_OVERLAP,
) -> HotspotResult:
    """
    Rank regions of interest for one focus type.

    Sliding windows are scored, weak windows (below 20% of the best score for
    energy and pitch, below 2 Hz for pitch) are dropped, then greedy
    non-maximum suppression keeps windows overlapping every kept one by less
    than half. Order is score, then secondary key, then earlier start.
    """
    if focus_type not in FOCUS_TYPES:
        raise ValueError(f"Unsupported focus type: {focus_type}. Supported: {', '.join(FOCUS_TYPES)}")
    view = as_view(audio)
    track = view.track
    if focus_type == "pitch_excursion" and not track.voiced.any():
        return HotspotResult(focus_type, [], ["no_voiced_frames"])

    scored = []
    for t_s, t_e in sliding_windows(track.duration, window, window * (1.0 - overlap)):
        lo, hi = track.frame_range(t_s, t_e)
        if hi - lo < 2:
            continue
        score, secondary, rationale = _window_score(track, focus_type, lo, hi)
        if score > 0:
            scored.append((score, secondary, t_s, t_e, rationale))

    if scored and focus_type in ("energy_burst", "pitch_excursion"):
        floor = RELATIVE_FLOOR * max(s[0] for s in scored)
        if focus_type == "pitch_excursion":
            floor = max(floor, PITCH_FLOOR_HZ)
        scored = [s for s in scored if s[0] >= floor]

    scored.sort(key=lambda s: (-s[0], -s[1], s[2]))
    kept: List[ROI] = []
    for score, _, t_s, t_e, rationale in scored:
        if len(kept) >= top_n:
            break
        if all(_overlap((t_s, t_e), (k.t_s, k.t_e)) < NMS_OVERLAP for k in kept):
            kept.append(ROI(t_s, t_e, focus_type, round(score, 9), rationale))
    return HotspotResult(focus_type, kept, [])


def relation(delta_z: Optional[float]) -> str:
    if delta_z is None:
        return "n/a"
    if abs(delta_z) < APPROX_GAP:
        return "A~B"
    if delta_z >= STRONG_GAP:
        return "A>>B"
    if delta_z <= -STRONG_GAP:
        return "A<<B"
    return "A>B" if delta_z > 0 else "A<B"


@dataclass
class ComparisonReport:
    observations: List[AcousticObservation]
    relations: Dict[str, List[Dict]]
    rankings: Dict[str, List[int]]

    def to_dict(self) -> Dict:
        return {
            "segments": [[o.t_s, o.t_e] for o in self.observations],
            "relations": self.relations,
            "rankings": self.rankings,
            "observations": [o.to_dict() for o in self.observations],
        }


def compare_segments(
    audio: Union[SignalView, AudioSignal],
    segments: Sequence[Tuple[float, float]],
    metrics: Optional[Sequence[str]] = None,
    refs=None,
    speaker: Optional[str] = None,
) -> ComparisonReport:
    """
    Pairwise relations (A>>B, A>B, A~B, A<B, A<<B) on local z gaps, plus a
    per-metric ranking of segment indices (highest first).
    """
    if len(segments) < 2:
        raise ValueError("compare_segments needs at least two segments")
    view = as_view(audio)
    names = check_metrics(metrics)
    observations = [analyze_segment(view, s, e, names, refs, speaker) for s, e in segments]

    relations: Dict[str, List[Dict]] = {}
    rankings: Dict[str, List[int]] = {}
    for name in names:
        zs = [o.readings[name].z_local for o in observations]
        rows = []
        for i in range(len(zs)):
            for j in range(i + 1, len(zs)):
                gap = zs[i] - zs[j] if zs[i] is not None and zs[j] is not None else None
                rows.append({"pair": [i, j], "relation": relation(gap)})
        relations[name] = rows
        rankings[name] = sorted(
            range(len(zs)),
            key=lambda k: (zs[k] is None, -(zs[k] if zs[k] is not None else 0.0), k),
        )
    return ComparisonReport(observations, relations, rankings)
