"""Signal front-end: WAV loading, framewise F0/RMS tracks and metric definitions.

F0 uses a normalized autocorrelation restricted to [f0_min, f0_max]; a frame
is voiced when its peak clarity clears the threshold and its RMS clears the
floor. All metric definitions below operate on a FrameTrack slice so that
tests can recompute them independently.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import soundfile as sf

from .errors import TooShort, UnknownMetric, UnsupportedFormat

logger = logging.getLogger(__name__)

MIN_SAMPLE_RATE = 8000
MAX_SAMPLE_RATE = 48000
PAUSE_MIN_S = 0.2
TILT_MAX_HZ = 4000.0


@dataclass(frozen=True)
class FrameParams:
    win: float = 0.025
    hop: float = 0.010
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.6
    rms_floor: float = 1e-4
    peak_tolerance: float = 0.05

    def to_dict(self) -> Dict[str, float]:
        return {
            "win": self.win,
            "hop": self.hop,
            "f0_min": self.f0_min,
            "f0_max": self.f0_max,
            "voicing_threshold": self.voicing_threshold,
            "rms_floor": self.rms_floor,
            "peak_tolerance": self.peak_tolerance,
        }


@dataclass(frozen=True, eq=False)
class AudioSignal:
    samples: np.ndarray
    sr: int

    @property
    def duration(self) -> float:
        return len(self.samples) / float(self.sr)

    def segment(self, t_s: float, t_e: float) -> np.ndarray:
        lo = max(0, int(round(t_s * self.sr)))
        hi = min(len(self.samples), int(round(t_e * self.sr)))
        return self.samples[lo:hi]


def load_audio(path: Union[str, Path]) -> AudioSignal:
    """
    Read a mono PCM WAV file.

    Raises:
        UnsupportedFormat: Unreadable file, more than one channel, or a rate outside 8-48 kHz
    """
    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise UnsupportedFormat(f"cannot read audio {path}: {e}")
    if data.shape[1] != 1:
        raise UnsupportedFormat(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if not MIN_SAMPLE_RATE <= sr <= MAX_SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: sample rate {sr} outside [8000, 48000]")
    return AudioSignal(samples=data[:, 0], sr=int(sr))


@dataclass(frozen=True, eq=False)
class FrameTrack:
    sr: int
    params: FrameParams
    times: np.ndarray
    f0: np.ndarray
    rms: np.ndarray
    peak: np.ndarray
    clarity: np.ndarray
    voiced: np.ndarray
    delta_f0: np.ndarray
    delta_e: np.ndarray
    duration: float

    @property
    def hop(self) -> float:
        return self.params.hop

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def frame_range(self, t_s: float, t_e: float) -> Tuple[int, int]:
        """Half-open index range of frames whose centers fall inside [t_s, t_e]."""
        lo = int(np.searchsorted(self.times, t_s - 1e-9, side="left"))
        hi = int(np.searchsorted(self.times, t_e + 1e-9, side="right"))
        return lo, hi


def frame_count(n_samples: int, win: int, hop: int) -> int:
    return -(-(n_samples - win) // hop) + 1


def _frame_matrix(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = frame_count(len(x), win, hop)
    padded_len = (n - 1) * hop + win
    if padded_len > len(x):
        x = np.concatenate([x, np.zeros(padded_len - len(x))])
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _normalized_autocorrelation(frames: np.ndarray, lag_max: int) -> np.ndarray:
    """r[i, tau] = sum x[n]x[n+tau] / sqrt(E_head(tau) * E_tail(tau)) over the overlap."""
    win = frames.shape[1]
    spectrum = np.fft.rfft(frames, n=2 * win, axis=1)
    ac = np.fft.irfft(np.abs(spectrum) ** 2, n=2 * win, axis=1)[:, : lag_max + 1]
    sq = frames ** 2
    cum = np.cumsum(sq, axis=1)
    total = cum[:, -1:]
    lags = np.arange(lag_max + 1)
    head = cum[:, win - 1 - lags]
    tail = total - np.concatenate([np.zeros((frames.shape[0], 1)), cum[:, : lag_max]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = np.sqrt(np.maximum(head * tail, 0.0))
        r = np.where(denom > 0, ac / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def _pick_period(r: np.ndarray, lag_min: int, lag_max: int, tolerance: float) -> Tuple[float, float]:
    """First local maximum within tolerance of the best one, refined by a parabola."""
    candidates = [
        tau for tau in range(max(lag_min, 1), min(lag_max, len(r) - 2) + 1)
        if r[tau] > r[tau - 1] and r[tau] >= r[tau + 1]
    ]
    if not candidates:
        return 0.0, 0.0
    best = max(r[tau] for tau in candidates)
    tau = next(t for t in candidates if r[t] >= best - tolerance)
    a, b, c = r[tau - 1], r[tau], r[tau + 1]
    curvature = a - 2 * b + c
    offset = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
    return tau + float(np.clip(offset, -0.5, 0.5)), float(b)


def extract_frames(signal: AudioSignal, params: Optional[FrameParams] = None) -> FrameTrack:
    """
    Framewise F0, RMS, voicing and clarity.

    Raises:
        TooShort: Fewer samples than two analysis windows
        UnsupportedFormat: Sample rate outside 8-48 kHz
    """
    params = params or FrameParams()
    sr = signal.sr
    if not MIN_SAMPLE_RATE <= sr <= MAX_SAMPLE_RATE:
        raise UnsupportedFormat(f"sample rate {sr} outside [8000, 48000]")
    win = int(round(params.win * sr))
    hop = int(round(params.hop * sr))
    x = np.asarray(signal.samples, dtype=float)
    if len(x) < 2 * win:
        raise TooShort(f"{len(x)} samples is shorter than two {win}-sample windows")

    frames = _frame_matrix(x, win, hop)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    peak = np.max(np.abs(frames), axis=1)

    lag_min = int(np.floor(sr / params.f0_max))
    lag_max = min(int(np.ceil(sr / params.f0_min)), win - 2)
    r = _normalized_autocorrelation(frames, lag_max)

    n = frames.shape[0]
    f0 = np.zeros(n)
    clarity = np.zeros(n)
    for i in range(n):
        if rms[i] < params.rms_floor:
            continue
        lag, strength = _pick_period(r[i], lag_min, lag_max, params.peak_tolerance)
        clarity[i] = strength
        if lag > 0:
            f0[i] = sr / lag
    voiced = (clarity >= params.voicing_threshold) & (rms >= params.rms_floor) & (f0 > 0)
    f0 = np.where(voiced, np.clip(f0, params.f0_min, params.f0_max), 0.0)

    both = np.zeros(n, dtype=bool)
    both[1:] = voiced[1:] & voiced[:-1]
    delta_f0 = np.zeros(n)
    delta_f0[1:] = np.where(both[1:], f0[1:] - f0[:-1], 0.0)
    delta_e = np.zeros(n)
    delta_e[1:] = rms[1:] - rms[:-1]

    times = (np.arange(n) * hop + win / 2.0) / sr
    return FrameTrack(
        sr=sr,
        params=params,
        times=times,
        f0=f0,
        rms=rms,
        peak=peak,
        clarity=clarity,
        voiced=voiced,
        delta_f0=delta_f0,
        delta_e=delta_e,
        duration=len(x) / float(sr),
    )


def runs(flags: np.ndarray) -> List[Tuple[int, int, bool]]:
    """Run-length encoding as (start, length, value)."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return []
    change = np.flatnonzero(np.diff(flags.astype(np.int8))) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flags.size]])
    return [(int(s), int(e - s), bool(flags[s])) for s, e in zip(starts, ends)]


def pause_frames(hop: float) -> int:
    return int(np.ceil(PAUSE_MIN_S / hop - 1e-9))


# metric definitions; each takes (track, lo, hi, samples) and returns a float or None


def _voiced_pairs(track: FrameTrack, lo: int, hi: int) -> np.ndarray:
    idx = np.arange(max(lo + 1, 1), hi)
    return idx[track.voiced[idx] & track.voiced[idx - 1]]


def _f0_median(track, lo, hi, samples):
    f0 = track.f0[lo:hi][track.voiced[lo:hi]]
    return float(np.median(f0)) if f0.size else None


def _f0_iqr(track, lo, hi, samples):
    f0 = track.f0[lo:hi][track.voiced[lo:hi]]
    if not f0.size:
        return None
    q75, q25 = np.percentile(f0, [75, 25])
    return float(q75 - q25)


def _pitch_velocity(track, lo, hi, samples):
    idx = _voiced_pairs(track, lo, hi)
    if not idx.size:
        return None
    return float(np.percentile(np.abs(track.delta_f0[idx]), 75) / track.hop)


def _rms(track, lo, hi, samples):
    return float(np.median(track.rms[lo:hi]))


def _energy_burstiness(track, lo, hi, samples):
    de = track.delta_e[lo + 1: hi]
    return float(np.percentile(de, 90)) if de.size else None


def _speech_rate(track, lo, hi, samples):
    seconds = (hi - lo) * track.hop
    return sum(1 for _, _, v in runs(track.voiced[lo:hi]) if v) / seconds


def _pause_density(track, lo, hi, samples):
    seconds = (hi - lo) * track.hop
    min_len = pause_frames(track.hop)
    return sum(1 for _, n, v in runs(track.voiced[lo:hi]) if not v and n >= min_len) / seconds


def _voicing_ratio(track, lo, hi, samples):
    return float(np.mean(track.voiced[lo:hi]))


def _jitter(track, lo, hi, samples):
    idx = _voiced_pairs(track, lo, hi)
    if not idx.size:
        return None
    pert = np.abs(1.0 / track.f0[idx] - 1.0 / track.f0[idx - 1])
    return float(np.mean(pert) / np.mean(1.0 / track.f0[np.union1d(idx, idx - 1)]))


def _shimmer(track, lo, hi, samples):
    idx = _voiced_pairs(track, lo, hi)
    if not idx.size:
        return None
    amp = track.peak
    mean_amp = np.mean(amp[np.union1d(idx, idx - 1)])
    if mean_amp <= 0:
        return None
    return float(np.mean(np.abs(amp[idx] - amp[idx - 1])) / mean_amp)


def hnr_db(clarity: np.ndarray) -> np.ndarray:
    r = np.clip(clarity, 1e-6, 1 - 1e-6)
    return 10.0 * np.log10(r / (1.0 - r))


def _hnr(track, lo, hi, samples):
    mask = track.voiced[lo:hi]
    if not mask.any():
        return None
    return float(np.median(hnr_db(track.clarity[lo:hi][mask])))


def spectral_tilt(samples: np.ndarray, sr: int) -> Optional[float]:
    """Slope in dB/kHz of a linear fit to the Hann-windowed log spectrum over (0, 4] kHz."""
    if len(samples) < 16 or not np.any(samples):
        return None
    spectrum = np.abs(np.fft.rfft(samples * np.hanning(len(samples))))
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / sr)
    band = (freqs > 0) & (freqs <= TILT_MAX_HZ)
    if band.sum() < 2:
        return None
    db = 20.0 * np.log10(spectrum[band] + 1e-12)
    slope, _ = np.polyfit(freqs[band] / 1000.0, db, 1)
    return float(slope)


def _spectral_tilt(track, lo, hi, samples):
    return spectral_tilt(samples, track.sr)


MetricFn = Callable[[FrameTrack, int, int, np.ndarray], Optional[float]]

METRICS: Dict[str, MetricFn] = {
    "f0_median": _f0_median,
    "f0_iqr": _f0_iqr,
    "pitch_velocity": _pitch_velocity,
    "rms": _rms,
    "energy_burstiness": _energy_burstiness,
    "speech_rate": _speech_rate,
    "pause_density": _pause_density,
    "voicing_ratio": _voicing_ratio,
    "jitter": _jitter,
    "shimmer": _shimmer,
    "hnr": _hnr,
    "spectral_tilt": _spectral_tilt,
}

METRIC_NAMES: Tuple[str, ...] = tuple(METRICS)


def check_metrics(names) -> List[str]:
    names = list(names) if names else list(METRIC_NAMES)
    unknown = [m for m in names if m not in METRICS]
    if unknown:
        raise UnknownMetric(f"unknown metric(s): {', '.join(unknown)}")
    return names


def compute_metric(
    name: str, track: FrameTrack, lo: int, hi: int, samples: Optional[np.ndarray] = None
) -> Optional[float]:
    if name not in METRICS:
        raise UnknownMetric(f"unknown metric: {name}")
    if samples is None:
        samples = np.zeros(0)
    return METRICS[name](track, lo, hi, samples)
