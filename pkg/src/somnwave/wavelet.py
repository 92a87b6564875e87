"""Periodized db4 multilevel DWT and complex-Morlet CWT scalograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from somnwave.exceptions import EmptyScaleGrid, InconsistentSubbands, TooShortForLevels

# Daubechies 4-vanishing-moment (8-tap) scaling filter from the minimum-phase
# spectral factorization. tests/test_wavelet.py recomputes it independently.
DB4_LOWPASS = np.array([
    0.23037781330889615,
    0.7148465705529148,
    0.6308807679298586,
    -0.027983769416858834,
    -0.18703481171909234,
    0.030841381835560674,
    0.03288301166688512,
    -0.010597401785069,
])


def qmf_highpass(lowpass):
    """Quadrature-mirror wavelet filter ``g[n] = (-1)^n h[L-1-n]``."""
    lowpass = np.asarray(lowpass, dtype=np.float64)
    signs = np.where(np.arange(lowpass.size) % 2 == 0, 1.0, -1.0)
    return signs * lowpass[::-1]


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "daubechies"
    taps: int = 8
    levels: int = 5
    boundary: str = "periodic"

    def __post_init__(self):
        if self.family != "daubechies" or self.taps != 8:
            raise ValueError("only the 8-tap Daubechies (db4) filter is available")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundary handling is supported")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    @property
    def lowpass(self):
        return DB4_LOWPASS

    @property
    def highpass(self):
        return qmf_highpass(DB4_LOWPASS)

    def padded_length(self, n):
        block = 2 ** self.levels
        return -(-n // block) * block


@dataclass(frozen=True, eq=False)
class SubbandSet:
    """Multilevel coefficients; ``details[0]`` is D1 (finest)."""

    approximation: np.ndarray
    details: tuple
    original_length: int
    spec: WaveletSpec = field(default_factory=WaveletSpec)

    @property
    def levels(self):
        return len(self.details)

    def bands(self):
        """Subbands in ``D1..DL, AL`` order with their names."""
        names = [f"D{k}" for k in range(1, self.levels + 1)] + [f"A{self.levels}"]
        return list(zip(names, list(self.details) + [self.approximation]))

    def frequency_span(self, name, fs):
        """Nominal (low, high) Hz range of a subband."""
        if name.startswith("A"):
            return 0.0, fs / 2 ** (self.levels + 1)
        k = int(name[1:])
        return fs / 2 ** (k + 1), fs / 2 ** k


def _indices(n, taps):
    # idx[k, j] = (2k + j) mod n
    return (2 * np.arange(n // 2)[:, None] + np.arange(taps)[None, :]) % n


def _analysis_step(x, h, g):
    idx = _indices(x.size, h.size)
    windows = x[idx]
    return windows @ h, windows @ g


def _synthesis_step(a, d, h, g):
    n = 2 * a.size
    idx = _indices(n, h.size)
    contrib = a[:, None] * h[None, :] + d[:, None] * g[None, :]
    return np.bincount(idx.ravel(), weights=contrib.ravel(), minlength=n)


def periodic_pad(x, length):
    if length == x.size:
        return x
    return np.concatenate([x, np.resize(x, length - x.size)])


def dwt_multilevel(x, spec=WaveletSpec()):
    """Orthonormal periodized DWT down to ``spec.levels``.

    The input is extended periodically to the next multiple of
    ``2**levels`` before decomposition.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise TooShortForLevels("input must be a non-empty 1-D array")
    if x.size < 2 ** spec.levels:
        raise TooShortForLevels(f"{x.size} samples cannot support {spec.levels} levels")
    h, g = spec.lowpass, spec.highpass
    approx = periodic_pad(x, spec.padded_length(x.size))
    details = []
    for _ in range(spec.levels):
        approx, detail = _analysis_step(approx, h, g)
        details.append(detail)
    return SubbandSet(approx, tuple(details), x.size, spec)


def idwt_multilevel(s):
    """Invert :func:`dwt_multilevel` and truncate to the original length."""
    levels = len(s.details)
    if levels != s.spec.levels:
        raise InconsistentSubbands(f"expected {s.spec.levels} detail bands, got {levels}")
    n = s.approximation.size * 2 ** levels
    for k, d in enumerate(s.details, start=1):
        if d.size * 2 ** k != n:
            raise InconsistentSubbands(f"D{k} has {d.size} coefficients, expected {n // 2 ** k}")
    if not 0 < s.original_length <= n or n - s.original_length >= 2 ** levels:
        raise InconsistentSubbands("original_length does not match the padded length")
    h, g = s.spec.lowpass, s.spec.highpass
    approx = np.asarray(s.approximation, dtype=np.float64)
    for d in reversed(s.details):
        approx = _synthesis_step(approx, np.asarray(d, dtype=np.float64), h, g)
    return approx[:s.original_length]


# --- continuous transform --------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScaleGrid:
    """Morlet scales in samples, strictly increasing."""

    scales: np.ndarray
    omega0: float = 6.0
    fs: float = 100.0

    def __post_init__(self):
        scales = np.array(self.scales, dtype=np.float64)
        scales.flags.writeable = False
        object.__setattr__(self, "scales", scales)

    @classmethod
    def log_spaced(cls, fmin=0.5, fmax=40.0, n_scales=64, omega0=6.0, fs=100.0):
        freqs = np.geomspace(fmax, fmin, n_scales)
        return cls(scale_for_frequency(freqs, omega0, fs), omega0, fs)

    def validate(self):
        if self.scales.size == 0:
            raise EmptyScaleGrid("scale grid is empty")
        if np.any(self.scales <= 0) or np.any(np.diff(self.scales) <= 0):
            raise ValueError("scales must be positive and strictly increasing")

    @cached_property
    def frequencies(self):
        return scale_frequency_map(self)

    def _kernels(self, n_fft):
        cache = self.__dict__.setdefault("_kernel_cache", {})
        if n_fft not in cache:
            omega = 2 * np.pi * sp_fft.fftfreq(n_fft)
            a = self.scales[:, None]
            # sqrt(a) * conj(Psi(a w)); Psi(w) = pi^-1/4 sqrt(2 pi) exp(-(w - w0)^2 / 2).
            # The 2 pi alias term makes this the DTFT of the sampled wavelet, so
            # small scales whose spectrum reaches Nyquist keep a compact kernel.
            norm = np.pi ** -0.25 * np.sqrt(2 * np.pi) * np.sqrt(a)
            kern = np.where(omega > 0, np.exp(-0.5 * (a * omega - self.omega0) ** 2), 0.0)
            kern = norm * (kern + np.exp(-0.5 * (a * (omega + 2 * np.pi) - self.omega0) ** 2))
            kern.flags.writeable = False
            cache[n_fft] = kern
        return cache[n_fft]

    def edge_samples(self):
        """Samples at each end affected by zero padding at the largest scale."""
        return int(math.ceil(math.sqrt(2) * self.scales[-1]))


@dataclass(frozen=True, eq=False)
class Scalogram:
    magnitudes: np.ndarray
    grid: ScaleGrid
    meta: dict = field(default_factory=dict)

    @property
    def frequencies(self):
        return self.grid.frequencies

    def to_csv(self, path):
        path = Path(path)
        header = ",".join(repr(float(a)) for a in self.grid.scales)
        # one row per time sample, one column per scale
        np.savetxt(path, self.magnitudes.T, delimiter=",", header=header, comments="")
        return path

    def to_pgm(self, path):
        """8-bit grayscale image; highest frequency (smallest scale) on top."""
        mags = self.magnitudes
        peak = mags.max() if mags.size else 0.0
        scaled = np.zeros_like(mags) if peak == 0 else mags / peak
        pixels = np.round(255 * scaled).astype(np.uint8)
        h, w = pixels.shape
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
        return path


def scale_frequency_map(grid):
    """Pseudo-frequency (Hz) of each Morlet scale: ``omega0 / (2 pi) * fs / a``."""
    return grid.omega0 / (2 * np.pi) * grid.fs / np.asarray(grid.scales, dtype=np.float64)


def scale_for_frequency(freq, omega0=6.0, fs=100.0):
    return omega0 / (2 * np.pi) * fs / np.asarray(freq, dtype=np.float64)


def cwt_scalogram(x, grid=None, meta=None):
    """Magnitude of the complex-Morlet CWT at every scale and sample.

    Each scale is computed as a frequency-domain correlation with the
    L2-normalized dilated wavelet; the signal is zero padded to avoid
    circular wrap-around.
    """
    grid = grid or default_grid()
    grid.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("input must be a non-empty 1-D array")
    n = x.size
    n_fft = sp_fft.next_fast_len(n + int(math.ceil(4 * grid.scales[-1])))
    spectrum = sp_fft.fft(x, n_fft)
    coeffs = sp_fft.ifft(grid._kernels(n_fft) * spectrum[None, :], axis=1)[:, :n]
    return Scalogram(np.abs(coeffs), grid, dict(meta or {}))


_DEFAULT_GRIDS = {}


def default_grid(fs=100.0):
    """64 log-spaced scales over 0.5-40 Hz, omega0 = 6 (shared, cached)."""
    if fs not in _DEFAULT_GRIDS:
        _DEFAULT_GRIDS[fs] = ScaleGrid.log_spaced(fs=fs)
    return _DEFAULT_GRIDS[fs]
