"""Tests for span anchoring, hotspots, segment analysis and comparison."""

import numpy as np
import pytest

from adept_agent.acoustic import (
    MetricStats,
    SignalView,
    anchor_span,
    analyze_segment,
    compare_segments,
    find_hotspots,
    level_bin,
    relation,
    robust_stats,
    sliding_windows,
)
from adept_agent.errors import IndexOutOfRange, SegmentOutOfBounds, SegmentTooShort, UnknownMetric
from adept_agent.features import AudioSignal
from adept_agent.refstats import GlobalReference
from tests.conftest import SR, alignment_for, burst_signal, sine


@pytest.fixture
def burst_view():
    return SignalView(burst_signal())


class TestAnchorSpan:
    """Test word-index to time-span anchoring."""

    def test_padded_hull(self):
        t_s, t_e = anchor_span(alignment_for(), [2, 1])
        assert t_s == pytest.approx(0.375)
        assert t_e == pytest.approx(0.975)

    def test_clamped_at_zero_and_duration(self):
        words = alignment_for()
        assert anchor_span(words, [0], padding_ms=500)[0] == 0.0
        assert anchor_span(words, [7], duration=2.2)[1] == pytest.approx(2.2)

    def test_no_padding(self):
        assert anchor_span(alignment_for(), [3], padding_ms=0) == pytest.approx((0.95, 1.15))

    def test_bad_indices(self):
        with pytest.raises(IndexOutOfRange):
            anchor_span(alignment_for(), [8])
        with pytest.raises(IndexOutOfRange):
            anchor_span(alignment_for(), [])


class TestHelpers:
    """Test windows, bins and robust statistics."""

    def test_sliding_windows_end_flush(self):
        windows = sliding_windows(1.0, 0.3, 0.15)
        assert windows[0] == (0.0, 0.3)
        assert windows[-1] == (0.7, 1.0)
        assert len(windows) == 6

    def test_short_duration_single_window(self):
        assert sliding_windows(0.2, 0.3, 0.15) == [(0.0, 0.2)]

    def test_level_bins(self):
        assert level_bin(-1.5) == "Low"
        assert level_bin(1.0) == "Mid"
        assert level_bin(1.01) == "High"
        assert level_bin(None) is None

    def test_robust_stats_skips_missing(self):
        stats = robust_stats([1.0, None, 3.0, 2.0])
        assert stats.median == 2.0
        assert stats.n == 3
        assert robust_stats([None]) is None

    def test_relation_labels(self):
        assert relation(0.1) == "A~B"
        assert relation(0.5) == "A>B"
        assert relation(-2.0) == "A<<B"
        assert relation(1.5) == "A>>B"
        assert relation(None) == "n/a"


class TestHotspots:
    """Test ROI navigation."""

    def test_energy_bursts_found(self, burst_view):
        result = find_hotspots(burst_view, "energy_burst", top_n=2)
        assert len(result) == 2
        onsets = (0.6, 1.8)
        for onset in onsets:
            assert any(r.t_s <= onset <= r.t_e for r in result), onset
        assert result[0].score >= result[1].score

    def test_rois_do_not_overlap_by_half(self, burst_view):
        rois = list(find_hotspots(burst_view, "energy_burst", top_n=5))
        for i, a in enumerate(rois):
            for b in rois[i + 1:]:
                inter = max(0.0, min(a.t_e, b.t_e) - max(a.t_s, b.t_s))
                assert inter / min(a.t_e - a.t_s, b.t_e - b.t_s) < 0.5

    def test_deterministic(self, burst_view):
        first = find_hotspots(burst_view, "energy_burst").to_dict()
        second = find_hotspots(SignalView(burst_signal()), "energy_burst").to_dict()
        assert first == second

    def test_pitch_on_silence_flagged(self):
        result = find_hotspots(AudioSignal(np.zeros(SR), SR), "pitch_excursion")
        assert len(result) == 0
        assert result.flags == ["no_voiced_frames"]

    def test_pause_contrast_finds_gap(self):
        tone = sine(duration=0.6).samples
        signal = AudioSignal(np.concatenate([tone, np.zeros(int(0.25 * SR)), tone]), SR)
        result = find_hotspots(signal, "pause_contrast", top_n=1, window=0.5)
        assert len(result) == 1
        assert result[0].t_s < 0.7 < result[0].t_e

    def test_unknown_focus(self, burst_view):
        with pytest.raises(ValueError, match="Unsupported focus type"):
            find_hotspots(burst_view, "loudness")


class TestAnalyzeSegment:
    """Test dual-reference segment analysis."""

    def test_local_fallback_without_global(self, burst_view):
        obs = analyze_segment(burst_view, 0.6, 0.8, ["rms", "f0_median"])
        assert obs.level("rms") == "High"
        assert obs.readings["rms"].reference == "local"
        assert "missing_global_reference:rms" in obs.provenance["notes"]
        assert obs.readings["f0_median"].value == pytest.approx(200.0, abs=10.0)

    def test_global_reference_used(self, burst_view):
        refs = GlobalReference(corpus={"rms": MetricStats(median=1.0, iqr=0.1)})
        obs = analyze_segment(burst_view, 0.6, 0.8, ["rms"], refs=refs)
        reading = obs.readings["rms"]
        assert reading.reference == "global:corpus"
        assert reading.level == "Low"
        assert reading.z_global < -1
        assert obs.provenance["notes"] == []

    def test_speaker_reference_lookup(self, burst_view):
        refs = GlobalReference(
            corpus={"rms": MetricStats(1.0, 0.1)},
            speakers={"spk1": {"rms": MetricStats(0.0, 0.1)}},
            scope="speaker",
        )
        obs = analyze_segment(burst_view, 0.6, 0.8, ["rms"], refs=refs, speaker="spk1")
        assert obs.readings["rms"].reference == "global:speaker:spk1"
        assert obs.level("rms") == "High"

    def test_fingerprint_mismatch_noted(self, burst_view):
        refs = GlobalReference(corpus={"rms": MetricStats(0.1, 0.1)}, fingerprint_mismatch=True)
        obs = analyze_segment(burst_view, 0.6, 0.8, ["rms"], refs=refs)
        assert "global_reference_fingerprint_mismatch" in obs.provenance["notes"]

    def test_volatility_only_for_dynamic_metrics(self, burst_view):
        obs = analyze_segment(burst_view, 0.5, 0.9, ["rms", "speech_rate"])
        assert obs.volatility("rms") in ("Volatile", "Stable")
        assert obs.volatility("speech_rate") is None
        assert obs.readings["speech_rate"].descriptor in ("Slow", "Normal", "Fast")

    def test_provenance_frames(self, burst_view):
        obs = analyze_segment(burst_view, 0.6, 0.8, ["rms"])
        lo, hi = obs.provenance["frames"]
        assert hi - lo == 20
        data = obs.to_dict()
        assert data["segment"] == [0.6, 0.8]
        assert set(data) == {"segment", "metrics", "flags", "provenance"}

    def test_no_emotion_words(self, burst_view):
        text = str(analyze_segment(burst_view, 0.5, 0.9).to_dict())
        for word in ("Anger", "Sadness", "Happiness", "Fear", "emotion"):
            assert word not in text

    def test_out_of_bounds(self, burst_view):
        with pytest.raises(SegmentOutOfBounds):
            analyze_segment(burst_view, 2.0, 3.0)
        with pytest.raises(SegmentOutOfBounds):
            analyze_segment(burst_view, 0.5, 0.5)

    def test_too_short(self, burst_view):
        with pytest.raises(SegmentTooShort):
            analyze_segment(burst_view, 0.1, 0.11)

    def test_unknown_metric(self, burst_view):
        with pytest.raises(UnknownMetric):
            analyze_segment(burst_view, 0.1, 0.5, ["loudness"])


class TestCompareSegments:
    """Test pairwise segment comparison."""

    def test_burst_louder_than_background(self, burst_view):
        report = compare_segments(burst_view, [(0.6, 0.8), (1.0, 1.2)], ["rms"])
        assert report.relations["rms"] == [{"pair": [0, 1], "relation": "A>>B"}]
        assert report.rankings["rms"] == [0, 1]

    def test_needs_two_segments(self, burst_view):
        with pytest.raises(ValueError):
            compare_segments(burst_view, [(0.6, 0.8)])
