import math
import time
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somnwave.exceptions import EmptyScaleGrid, InconsistentSubbands, TooShortForLevels
from somnwave.wavelet import (
    DB4_LOWPASS,
    ScaleGrid,
    SubbandSet,
    WaveletSpec,
    cwt_scalogram,
    default_grid,
    dwt_multilevel,
    idwt_multilevel,
    qmf_highpass,
    scale_for_frequency,
    scale_frequency_map,
)


def daubechies_oracle(n_moments):
    """Minimum-phase Daubechies scaling filter by spectral factorization.

    |H(w)|^2 = 2 cos^2(w/2)^N P(sin^2(w/2)) with the Bezout polynomial P;
    keep the roots of P mapped into the z plane that lie inside the unit circle.
    """
    n = n_moments
    p = [comb(n - 1 + k, k) for k in range(n)]
    y_roots = np.roots(p[::-1])
    q = np.array([1.0 + 0j])
    for y in y_roots:
        # y = (2 - z - 1/z) / 4  ->  z^2 - (2 - 4y) z + 1 = 0
        z = np.roots([1.0, -(2 - 4 * y), 1.0])
        zin = z[np.argmin(np.abs(z))]
        q = np.convolve(q, [1.0, -zin])
    binom = np.array([comb(n, k) for k in range(n + 1)], dtype=float)
    h = np.real(np.convolve(binom, q))
    return h * math.sqrt(2) / h.sum()


class TestDb4Filter:
    def test_matches_spectral_factorization(self):
        oracle = daubechies_oracle(4)
        assert oracle.size == 8
        match = np.allclose(DB4_LOWPASS, oracle, atol=1e-12) or \
            np.allclose(DB4_LOWPASS, oracle[::-1], atol=1e-12)
        assert match

    def test_sum_and_norm(self):
        assert abs(DB4_LOWPASS.sum() - math.sqrt(2)) < 1e-12
        assert abs(np.dot(DB4_LOWPASS, DB4_LOWPASS) - 1) < 1e-12

    @pytest.mark.parametrize("shift", [2, 4, 6])
    def test_even_shift_orthogonality(self, shift):
        h = DB4_LOWPASS
        assert abs(np.dot(h[shift:], h[:-shift])) < 1e-12

    def test_highpass_annihilates_polynomials(self):
        g = qmf_highpass(DB4_LOWPASS)
        n = np.arange(8)
        for p in range(4):
            assert abs(np.dot(g, n ** p)) < 1e-9

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            WaveletSpec(taps=6)
        with pytest.raises(ValueError):
            WaveletSpec(levels=0)
        with pytest.raises(ValueError):
            WaveletSpec(boundary="symmetric")


class TestDwt:
    def test_constant_has_no_details(self):
        s = dwt_multilevel(np.ones(64))
        for d in s.details:
            assert np.max(np.abs(d)) < 1e-10

    def test_subband_lengths_3000(self):
        s = dwt_multilevel(np.random.default_rng(0).normal(size=3000))
        assert [d.size for d in s.details] == [1504, 752, 376, 188, 94]
        assert s.approximation.size == 94 and s.original_length == 3000

    def test_parseval_padded(self):
        x = np.random.default_rng(1).normal(size=3000)
        s = dwt_multilevel(x)
        padded = np.concatenate([x, x[:8]])
        energy = sum(np.dot(c, c) for _, c in s.bands())
        assert abs(energy - np.dot(padded, padded)) < 1e-8

    def test_round_trip(self):
        x = np.random.default_rng(2).normal(size=3000)
        assert np.max(np.abs(idwt_multilevel(dwt_multilevel(x)) - x)) < 1e-8

    def test_zero_subbands(self):
        s = dwt_multilevel(np.zeros(100))
        assert np.array_equal(idwt_multilevel(s), np.zeros(100))

    def test_impulse(self):
        x = np.zeros(3000)
        x[17] = 1.0
        assert np.max(np.abs(idwt_multilevel(dwt_multilevel(x)) - x)) < 1e-12

    def test_too_short(self):
        with pytest.raises(TooShortForLevels):
            dwt_multilevel(np.ones(31))
        with pytest.raises(TooShortForLevels):
            dwt_multilevel(np.array([]))

    def test_inconsistent_subbands(self):
        s = dwt_multilevel(np.ones(64))
        bad = SubbandSet(s.approximation, s.details[:-1], 64, s.spec)
        with pytest.raises(InconsistentSubbands):
            idwt_multilevel(bad)
        bad = SubbandSet(s.approximation[:-1], s.details, 64, s.spec)
        with pytest.raises(InconsistentSubbands):
            idwt_multilevel(bad)

    def test_frequency_spans(self):
        s = dwt_multilevel(np.ones(64))
        assert s.frequency_span("D1", 100) == (25.0, 50.0)
        assert s.frequency_span("D5", 100) == (1.5625, 3.125)
        assert s.frequency_span("A5", 100) == (0.0, 1.5625)

    @staticmethod
    def _share(x, name):
        bands = dict(dwt_multilevel(x).bands())
        total = sum(np.dot(c, c) for c in bands.values())
        return np.dot(bands[name], bands[name]) / total

    def test_20hz_in_d2(self):
        t = np.arange(3000) / 100
        assert self._share(np.sin(2 * np.pi * 20 * t), "D2") > 0.8

    def test_0p7hz_in_a5(self):
        t = np.arange(3000) / 100
        assert self._share(np.sin(2 * np.pi * 0.7 * t), "A5") > 0.8

    def test_bulk_round_trip_and_parseval(self):
        # 1000 random signals of length 3000 within the runtime budget
        rng = np.random.default_rng(3)
        start = time.perf_counter()
        worst_rt = worst_energy = 0.0
        for _ in range(1000):
            x = rng.normal(size=3000)
            s = dwt_multilevel(x)
            padded = np.concatenate([x, x[:8]])
            energy = sum(np.dot(c, c) for _, c in s.bands())
            worst_energy = max(worst_energy, abs(energy - np.dot(padded, padded)))
            worst_rt = max(worst_rt, np.max(np.abs(idwt_multilevel(s) - x)))
        assert worst_rt < 1e-8 and worst_energy < 1e-8
        assert time.perf_counter() - start < 10

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from([64, 1000, 3000]), st.integers(0, 2 ** 32 - 1))
    def test_reconstruction_property(self, n, seed):
        x = np.random.default_rng(seed).normal(size=n)
        assert np.max(np.abs(idwt_multilevel(dwt_multilevel(x)) - x)) < 1e-8


class TestScaleMap:
    def test_hand_value(self):
        grid = ScaleGrid(np.array([9.5493]))
        assert scale_frequency_map(grid)[0] == pytest.approx(10.0, abs=1e-4)

    def test_inverse(self):
        grid = default_grid()
        back = scale_for_frequency(scale_frequency_map(grid))
        assert np.max(np.abs(back - grid.scales)) < 1e-9

    def test_doubling_halves(self):
        f = scale_frequency_map(ScaleGrid(np.array([4.0, 8.0])))
        assert f[1] == pytest.approx(f[0] / 2)

    def test_default_grid_covers_band(self):
        grid = default_grid()
        f = grid.frequencies
        assert grid.scales.size == 64
        assert f.max() == pytest.approx(40.0) and f.min() == pytest.approx(0.5)
        assert np.all(np.diff(grid.scales) > 0)


def _unit_sine(f, n=3000, fs=100.0):
    return np.sin(2 * np.pi * f * np.arange(n) / fs)


class TestCwt:
    def test_zero_signal(self):
        s = cwt_scalogram(np.zeros(3000))
        assert s.magnitudes.shape == (64, 3000) and not s.magnitudes.any()

    def test_linearity(self):
        x = np.random.default_rng(0).normal(size=3000)
        a = cwt_scalogram(x).magnitudes
        b = cwt_scalogram(2 * x).magnitudes
        assert np.max(np.abs(b - 2 * a)) < 1e-9

    def test_non_negative(self):
        s = cwt_scalogram(np.random.default_rng(1).normal(size=500))
        assert s.magnitudes.min() >= 0 and s.magnitudes.shape[1] == 500

    def test_ridge_10hz(self):
        s = cwt_scalogram(_unit_sine(10))
        col = s.magnitudes[:, 1500]
        assert abs(s.frequencies[np.argmax(col)] - 10) <= 0.5

    def test_ridge_against_dense_time_domain_oracle(self):
        # direct time-domain Morlet correlation on a dense scale grid
        x = _unit_sine(10)
        t0 = 1500
        scales = np.linspace(5, 15, 401)
        resp = []
        for a in scales:
            k = np.arange(-int(6 * a), int(6 * a) + 1)
            psi = np.pi ** -0.25 * np.exp(1j * 6 * k / a) * np.exp(-0.5 * (k / a) ** 2)
            resp.append(abs(np.sum(x[t0 + k] * np.conj(psi))) / math.sqrt(a))
        oracle_f = 6 / (2 * np.pi) * 100 / scales[int(np.argmax(resp))]
        s = cwt_scalogram(x)
        ours = s.frequencies[np.argmax(s.magnitudes[:, t0])]
        assert abs(oracle_f - 10) <= 0.5
        assert abs(ours - oracle_f) <= 0.5

    def test_matches_time_domain_value(self):
        x = np.random.default_rng(5).normal(size=3000)
        grid = ScaleGrid(np.array([default_grid().scales[0], 4.0, 12.0]))
        s = cwt_scalogram(x, grid)
        t0 = 1400
        for row, a in enumerate(grid.scales):
            k = np.arange(-int(8 * a), int(8 * a) + 1)
            psi = np.pi ** -0.25 * np.exp(1j * 6 * k / a) * np.exp(-0.5 * (k / a) ** 2)
            direct = abs(np.sum(x[t0 + k] * np.conj(psi))) / math.sqrt(a)
            assert s.magnitudes[row, t0] == pytest.approx(direct, rel=1e-7)

    def test_time_shift_covariance(self):
        # per-row edge band of 5 scales, where the Gaussian envelope is < 4e-6
        x = np.random.default_rng(2).normal(size=4000)
        k = 37
        grid = default_grid()
        a = cwt_scalogram(x[k:k + 3000]).magnitudes
        b = cwt_scalogram(x[:3000]).magnitudes
        for row, scale in enumerate(grid.scales):
            edge = int(math.ceil(5 * scale))
            diff = a[row, edge:3000 - edge - k] - b[row, edge + k:3000 - edge]
            assert np.max(np.abs(diff)) < 1e-4 * b.max()

    def test_empty_grid(self):
        with pytest.raises(EmptyScaleGrid):
            cwt_scalogram(np.ones(10), ScaleGrid(np.array([])))

    def test_csv_export(self, tmp_path):
        s = cwt_scalogram(_unit_sine(10, n=200))
        path = s.to_csv(tmp_path / "s.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 201
        assert np.allclose([float(v) for v in lines[0].split(",")], s.grid.scales)

    def test_pgm_export_shows_ridge(self, tmp_path):
        s = cwt_scalogram(_unit_sine(10))
        path = s.to_pgm(tmp_path / "s.pgm")
        raw = path.read_bytes()
        header = b"P5\n3000 64\n255\n"
        assert raw.startswith(header)
        img = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(64, 3000)
        row = int(np.argmax(img[:, 1500]))
        assert abs(s.frequencies[row] - 10) <= 0.5 and img[row, 1500] >= 250
