import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from somnwave.edf import Hypnogram, SignalTrace
from somnwave.exceptions import CacheFormatError, InvalidBand, SamplingMismatch, TooShort, ZeroVariance
from somnwave.preprocess import (
    ArtifactPolicy,
    EpochRecord,
    FilterSpec,
    bandpass_filter,
    flat_fraction,
    preprocess_recording,
    read_epoch_cache,
    reject_artifacts,
    segment_epochs,
    trim_wake_margins,
    write_epoch_cache,
    zscore_normalize,
)
from somnwave.stages import SleepStage

S = SleepStage


def trace(x, fs=100.0):
    return SignalTrace("EEG Fpz-Cz", fs, np.asarray(x, dtype=float))


def sine(f, seconds=60, fs=100.0, amp=1.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * f * t)


def mid(x, frac=0.25):
    k = int(len(x) * frac)
    return x[k:-k]


class TestBandpass:
    def test_dc_removed(self):
        out = bandpass_filter(trace(np.full(6000, 5.0))).samples
        assert np.max(np.abs(mid(out))) < 1e-3

    def test_passband_10hz(self):
        # oracle: squared magnitude response of the designed filter at 10 Hz
        sos = signal.butter(4, [0.5, 40], btype="bandpass", fs=100, output="sos")
        _, h = signal.sosfreqz(sos, worN=[10.0], fs=100)
        expected = abs(h[0]) ** 2
        out = bandpass_filter(trace(sine(10))).samples
        # 10 samples per period, so measure amplitude from the RMS
        amp = np.sqrt(2) * np.sqrt(np.mean(mid(out) ** 2))
        assert amp == pytest.approx(expected, rel=0.01)
        assert abs(amp - 1) < 0.05

    def test_stopband_0p1hz(self):
        out = bandpass_filter(trace(sine(0.1, seconds=300))).samples
        assert np.max(np.abs(mid(out))) <= 0.1

    def test_linear(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(2, 5000))
        f = lambda v: bandpass_filter(trace(v)).samples
        assert np.allclose(f(2 * x - 3 * y), 2 * f(x) - 3 * f(y), atol=1e-9)

    def test_zero_phase(self):
        rng = np.random.default_rng(1)
        x = signal.sosfiltfilt(signal.butter(4, [2, 20], btype="bandpass", fs=100,
                                             output="sos"), rng.normal(size=8000))
        y = bandpass_filter(trace(x)).samples
        xc = signal.correlate(y, x, mode="full")
        lags = signal.correlation_lags(len(y), len(x), mode="full")
        assert lags[np.argmax(xc)] == 0

    def test_same_length_and_fs(self):
        out = bandpass_filter(trace(np.random.default_rng(0).normal(size=4000), fs=100))
        assert len(out) == 4000 and out.fs == 100

    @pytest.mark.parametrize("spec", [FilterSpec(0.5, 60), FilterSpec(10, 5), FilterSpec(0, 40)])
    def test_invalid_band(self, spec):
        with pytest.raises(InvalidBand):
            bandpass_filter(trace(np.zeros(5000)), spec)

    def test_too_short(self):
        with pytest.raises(TooShort):
            bandpass_filter(trace(np.zeros(12)))


class TestZscore:
    def test_hand_values(self):
        out = zscore_normalize(trace([1.0, 2.0, 3.0])).samples
        assert np.allclose(out, [-1.224745, 0, 1.224745], atol=1e-6)

    def test_idempotent(self):
        x = np.random.default_rng(0).normal(size=10000)
        x = (x - x.mean()) / x.std()
        assert np.allclose(zscore_normalize(trace(x)).samples, x, atol=1e-9)

    def test_constant(self):
        with pytest.raises(ZeroVariance):
            zscore_normalize(trace(np.full(100, 3.0)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
    def test_moments(self, values):
        x = np.array(values)
        if x.std() < 1e-6:
            return
        out = zscore_normalize(trace(x)).samples
        assert abs(out.mean()) < 1e-9 and abs(out.std() - 1) < 1e-9


class TestSegment:
    def test_single_epoch(self):
        (ep,) = segment_epochs(trace(np.arange(3000.0)), Hypnogram((S.N2,)), "01")
        assert ep.samples.size == 3000 and ep.stage is S.N2 and ep.index == 0

    def test_short_trace(self):
        assert segment_epochs(trace(np.zeros(2999)), Hypnogram((S.N2,)), "01") == []

    def test_excluded_dropped(self):
        eps = segment_epochs(trace(np.zeros(9000)), Hypnogram((S.W, S.EXCLUDED, S.N1)), "01")
        assert [e.index for e in eps] == [0, 2]

    def test_partition_reproduces_prefix(self):
        x = np.random.default_rng(0).normal(size=10 * 3000 + 17)
        eps = segment_epochs(trace(x), Hypnogram((S.N2,) * 12), "01")
        assert len(eps) == 10
        assert np.array_equal(np.concatenate([e.samples for e in eps]), x[:30000])

    def test_non_integer_epoch_samples(self):
        with pytest.raises(SamplingMismatch):
            segment_epochs(trace(np.zeros(1000), fs=33.33), Hypnogram((S.W,)), "01")


def _epoch(x, stage=S.N2, index=0):
    return EpochRecord(np.asarray(x, dtype=float), stage, "01", "1", index)


class TestArtifacts:
    def test_spike_rejected(self):
        x = sine(5, seconds=30, amp=50)
        x[100] = 500
        kept, n = reject_artifacts([_epoch(x)], ArtifactPolicy(250))
        assert kept == [] and n == 1

    def test_flat_rejected(self):
        kept, n = reject_artifacts([_epoch(np.zeros(3000))], ArtifactPolicy(250, 0.9))
        assert n == 1 and flat_fraction(np.zeros(3000)) == 1.0

    def test_sine_kept(self):
        ep = _epoch(sine(5, seconds=30, amp=50))
        kept, n = reject_artifacts([ep])
        assert kept == [ep] and n == 0 and not kept[0].artifact

    def test_reference_samples_used(self):
        ep = EpochRecord(np.zeros(3000) + sine(3, 30), S.N2, "01", "1", 0,
                         reference=sine(3, 30, amp=400))
        assert reject_artifacts([ep])[1] == 1

    def test_order_and_counts(self):
        rng = np.random.default_rng(0)
        eps = []
        for i in range(40):
            x = rng.normal(scale=30, size=3000)
            if i % 3 == 0:
                x[5] = 1000
            eps.append(_epoch(x, index=i))
        kept, n = reject_artifacts(eps)
        assert len(kept) + n == 40
        assert [e.index for e in kept] == sorted(e.index for e in kept)


class TestTrim:
    def _night(self, pattern):
        stages = []
        for stage, n in pattern:
            stages += [stage] * n
        return [_epoch(np.zeros(1), s, i) for i, s in enumerate(stages)]

    def test_margin_60(self):
        # sleep spans 500..599, so the window is 440..659
        eps = self._night([(S.W, 500), (S.N2, 100), (S.W, 400)])
        kept = trim_wake_margins(eps, 60)
        assert kept[0].index == 440 and kept[-1].index == 659 and len(kept) == 220

    def test_disabled(self):
        eps = self._night([(S.W, 500), (S.N2, 100), (S.W, 400)])
        assert trim_wake_margins(eps, math.inf) == eps
        assert trim_wake_margins(eps, None) == eps

    def test_all_wake(self):
        eps = self._night([(S.W, 50)])
        assert trim_wake_margins(eps, 10) == eps

    def test_clamped_at_edges(self):
        eps = self._night([(S.W, 5), (S.N1, 3), (S.W, 5)])
        assert trim_wake_margins(eps, 60) == eps


class TestPipelineAndCache:
    def test_preprocess_recording(self):
        rng = np.random.default_rng(0)
        x = rng.normal(scale=20, size=3000 * 6)
        x[3000 * 4 + 10] = 900
        hyp = Hypnogram((S.W, S.N1, S.N2, S.EXCLUDED, S.N3, S.REM))
        kept, stats = preprocess_recording(trace(x), hyp, "01", "1")
        assert stats["segmented"] == 5
        assert stats["rejected"] == 1
        assert [e.index for e in kept] == [0, 1, 2, 5]
        assert all(e.samples.size == 3000 for e in kept)

    def test_cache_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        eps = [EpochRecord(rng.normal(size=3000), S(i % 5), "07", "2", i) for i in range(4)]
        path, index = write_epoch_cache(tmp_path / "c.somn", eps)
        assert path.read_bytes()[:5] == b"SOMN1"
        back = read_epoch_cache(path)
        assert [(e.subject, e.night, e.index, e.stage) for e in back] == \
            [(e.subject, e.night, e.index, e.stage) for e in eps]
        assert np.allclose(back[2].samples, eps[2].samples.astype(np.float32))
        assert index.read_text().splitlines()[0].startswith("subject,night,index,stage")

    def test_cache_bad_magic(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"NOPE")
        with pytest.raises(CacheFormatError):
            read_epoch_cache(p)

    def test_cache_truncated(self, tmp_path):
        eps = [EpochRecord(np.zeros(3000), S.W, "01", "1", 0)]
        path, _ = write_epoch_cache(tmp_path / "c.somn", eps)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CacheFormatError):
            read_epoch_cache(path)
