import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somnwave.exceptions import BandOutsideGrid, NonFiniteFeature
from somnwave.features import (
    EEG_BANDS,
    BandDefinition,
    EpochFeatureExtractor,
    FeatureMatrix,
    assemble_features,
    band_power_features,
    epoch_features,
    feature_names,
    scalogram_features,
    time_domain_features,
    wavelet_band_features,
)
from somnwave.preprocess import EpochRecord
from somnwave.stages import SleepStage
from somnwave.wavelet import ScaleGrid, SubbandSet, cwt_scalogram, dwt_multilevel

FS = 100.0


def sine(f, n=3000, amp=1.0):
    return amp * np.sin(2 * np.pi * f * np.arange(n) / FS)


def epoch(x, index=0, subject="01"):
    return EpochRecord(np.asarray(x, dtype=float), SleepStage.N2, subject, "1", index)


class TestTimeDomain:
    def test_sine_skewness(self):
        assert abs(time_domain_features(sine(10))["skewness"]) < 1e-9

    def test_sine_kurtosis(self):
        assert time_domain_features(sine(10))["kurtosis"] == pytest.approx(-1.5, abs=1e-2)

    def test_sine_mobility(self):
        expected = math.sqrt(2 * (1 - math.cos(2 * math.pi * 10 / 100)))
        assert expected == pytest.approx(0.6180, abs=1e-4)
        assert time_domain_features(sine(10))["hjorth_mobility"] == pytest.approx(expected, abs=1e-3)

    def test_sine_complexity_is_one(self):
        assert time_domain_features(sine(10))["hjorth_complexity"] == pytest.approx(1.0, abs=1e-2)

    def test_activity_equals_variance(self):
        x = np.random.default_rng(0).normal(size=3000)
        f = time_domain_features(x)
        assert f["hjorth_activity"] == f["variance"] == pytest.approx(x.var())

    def test_zero_variance_sentinel(self):
        flags = []
        f = time_domain_features(np.full(3000, 2.0), flags)
        assert flags == ["zero_variance"]
        assert f["skewness"] == f["kurtosis"] == f["hjorth_mobility"] == \
            f["hjorth_complexity"] == 0.0


class TestBandPower:
    def test_relative_sum(self):
        f = band_power_features(np.random.default_rng(0).normal(size=3000), FS)
        assert abs(sum(f[f"relpow_{b.name}"] for b in EEG_BANDS) - 1) < 1e-9

    def test_2hz_in_delta(self):
        assert band_power_features(sine(2), FS)["relpow_delta"] >= 0.98

    def test_white_noise_fractions(self):
        rng = np.random.default_rng(1)
        rel = np.mean([[band_power_features(rng.normal(size=3000), FS)[f"relpow_{b.name}"]
                        for b in EEG_BANDS] for _ in range(20)], axis=0)
        assert rel[0] == pytest.approx(3.5 / 29.5, abs=0.05)
        assert rel[3] == pytest.approx(17 / 29.5, abs=0.05)

    def test_log_power_of_scaled(self):
        x = np.random.default_rng(2).normal(size=3000)
        a = band_power_features(x, FS)
        b = band_power_features(3 * x, FS)
        assert b["logpow_alpha"] - a["logpow_alpha"] == pytest.approx(math.log(9))

    def test_low_fs_rejected(self):
        with pytest.raises(ValueError):
            band_power_features(np.zeros(3000), 50.0)

    def test_silent_sentinel(self):
        flags = []
        f = band_power_features(np.zeros(3000), FS, flags=flags)
        assert "zero_band_power" in flags and np.isfinite(f["logpow_delta"])
        assert f["relpow_delta"] == 0.25

    def test_band_definition_order(self):
        with pytest.raises(ValueError):
            BandDefinition("bad", 8, 4)


def _subbands(energies):
    # one coefficient per band carrying the requested energy
    spec = dwt_multilevel(np.ones(32)).spec
    coeffs = [np.array([math.sqrt(e)]) for e in energies]
    return SubbandSet(coeffs[-1], tuple(coeffs[:-1]), 32, spec)


class TestWaveletFeatures:
    def test_relative_sum(self):
        f = wavelet_band_features(dwt_multilevel(np.random.default_rng(0).normal(size=3000)))
        total = sum(f[f"{n}_rel_energy"] for n in ("D1", "D2", "D3", "D4", "D5", "A5"))
        assert abs(total - 1) < 1e-12

    def test_entropy_zero(self):
        f = wavelet_band_features(_subbands([0, 0, 4.0, 0, 0, 0]))
        assert f["wavelet_entropy"] == 0.0 and f["D3_rel_energy"] == 1.0

    def test_entropy_uniform(self):
        f = wavelet_band_features(_subbands([2.0] * 6))
        assert f["wavelet_entropy"] == pytest.approx(math.log(6), abs=1e-12)

    def test_all_zero_sentinel(self):
        flags = []
        f = wavelet_band_features(dwt_multilevel(np.zeros(3000)), flags)
        assert flags == ["zero_wavelet_energy"]
        assert f["A5_rel_energy"] == pytest.approx(1 / 6)

    def test_column_count(self):
        assert len(wavelet_band_features(dwt_multilevel(sine(5)))) == 31


class TestScalogramFeatures:
    def test_zero(self):
        f = scalogram_features(cwt_scalogram(np.zeros(3000)))
        assert len(f) == 12 and all(v == 0 for v in f.values())

    def test_alpha_dominates_for_10hz(self):
        f = scalogram_features(cwt_scalogram(sine(10)))
        alpha = f["cwt_alpha_mean"]
        assert all(alpha > f[f"cwt_{b}_mean"] for b in ("delta", "theta", "beta"))

    def test_alpha_dominance_dense_oracle(self):
        # mean response per band from a dense analytic Morlet grid
        freqs = np.linspace(0.5, 30, 600)
        a = 6 / (2 * np.pi) * 100 / freqs
        w = 2 * np.pi * 10 / 100
        resp = np.sqrt(a) * np.exp(-0.5 * (a * w - 6) ** 2)
        means = {b.name: resp[(freqs >= b.lo_hz) & (freqs < b.hi_hz)].mean() for b in EEG_BANDS}
        assert max(means, key=means.get) == "alpha"

    def test_scaling(self):
        x = np.random.default_rng(0).normal(size=3000)
        a = scalogram_features(cwt_scalogram(x))
        b = scalogram_features(cwt_scalogram(3 * x))
        for k in a:
            assert abs(b[k] - 3 * a[k]) < 1e-9 * max(1.0, abs(b[k]))

    def test_band_outside_grid(self):
        grid = ScaleGrid.log_spaced(fmin=5, fmax=20)
        with pytest.raises(BandOutsideGrid):
            scalogram_features(cwt_scalogram(sine(10), grid))


NORMALIZED = ["skewness", "kurtosis", "hjorth_mobility", "hjorth_complexity",
              "wavelet_entropy"] + [f"relpow_{b.name}" for b in EEG_BANDS] + \
    [f"{n}_rel_energy" for n in ("D1", "D2", "D3", "D4", "D5", "A5")]


class TestAssembly:
    def test_shape_and_order(self):
        names = feature_names()
        assert len(names) == 57 and len(set(names)) == 57
        assert names[:6] == ["variance", "skewness", "kurtosis", "hjorth_activity",
                             "hjorth_mobility", "hjorth_complexity"]
        assert names[6] == "relpow_delta" and names[14] == "D1_log_energy"
        assert names[45] == "cwt_delta_mean" and names[-1] == "cwt_beta_max"

    def test_two_epochs(self):
        rng = np.random.default_rng(0)
        fm = assemble_features([epoch(rng.normal(size=3000), i) for i in range(2)])
        assert fm.X.shape == (2, 57) and fm.columns == tuple(feature_names())
        assert list(fm.groups) == ["01", "01"]

    def test_non_finite(self):
        x = np.random.default_rng(0).normal(size=3000)
        x[10] = np.inf
        with pytest.raises(NonFiniteFeature) as info:
            assemble_features([epoch(np.zeros(3000) + 1e-3 * np.arange(3000)), epoch(x, 7)])
        assert info.value.key == ("01", "1", 7) and info.value.column == "variance"

    def test_order_permutation(self):
        rng = np.random.default_rng(1)
        eps = [epoch(rng.normal(size=3000), i) for i in range(4)]
        a = assemble_features(eps)
        b = assemble_features(eps[::-1])
        assert np.array_equal(a.X, b.X[::-1])

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=3000)
        assert np.array_equal(assemble_features([epoch(x)]).X, assemble_features([epoch(x)]).X)

    def test_toggles(self):
        x = np.random.default_rng(3).normal(size=3000)
        assert len(epoch_features(x, FS, include_dwt=False, include_cwt=False)) == 14
        assert assemble_features([epoch(x)], include_cwt=False).X.shape == (1, 45)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        fm = assemble_features([epoch(rng.normal(size=3000), i, s)
                                for i, s in enumerate(["01", "02", "02"])])
        back = FeatureMatrix.from_csv(fm.to_csv(tmp_path / "f.csv"))
        assert np.array_equal(back.X, fm.X) and back.columns == fm.columns
        assert list(back.subjects) == ["01", "02", "02"] and list(back.indices) == [0, 1, 2]
        assert list(back.stages) == [int(SleepStage.N2)] * 3

    def test_extractor_matches(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(3, 3000))
        ext = EpochFeatureExtractor().fit(X)
        out = ext.transform(X)
        fm = assemble_features([epoch(r, i) for i, r in enumerate(X)])
        assert np.array_equal(out, fm.X)
        assert list(ext.get_feature_names_out()) == list(fm.columns)


class TestInvariants:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 10_000))
    def test_amplitude_invariance(self, c, seed):
        x = np.random.default_rng(seed).normal(size=3000)
        a = epoch_features(x, FS)
        b = epoch_features(c * x, FS)
        for name in NORMALIZED:
            assert abs(a[name] - b[name]) < 1e-9, name
        assert b["variance"] == pytest.approx(c * c * a["variance"], rel=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["noise", "sine", "mixed"]))
    def test_unit_sums_and_entropy_range(self, seed, kind):
        rng = np.random.default_rng(seed)
        x = {"noise": rng.normal(size=3000),
             "sine": sine(rng.uniform(0.5, 30), amp=rng.uniform(0.1, 50)),
             "mixed": sine(2) + 0.1 * rng.normal(size=3000)}[kind]
        f = epoch_features(x, FS)
        assert abs(sum(f[f"relpow_{b.name}"] for b in EEG_BANDS) - 1) < 1e-9
        assert abs(sum(f[f"{n}_rel_energy"]
                       for n in ("D1", "D2", "D3", "D4", "D5", "A5")) - 1) < 1e-9
        assert 0 <= f["wavelet_entropy"] <= math.log(6) + 1e-12
        assert all(np.isfinite(v) for v in f.values())
