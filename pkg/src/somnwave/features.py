"""Per-epoch time, spectral, DWT and CWT features.

Column order is fixed: time (6) | band power (8) | DWT (31) | CWT (12).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from somnwave.exceptions import BandOutsideGrid, NonFiniteFeature
from somnwave.stages import SleepStage
from somnwave.wavelet import WaveletSpec, cwt_scalogram, default_grid, dwt_multilevel

logger = logging.getLogger(__name__)

# floor for log-power of silent epochs, keeps the log finite
_LOG_FLOOR = 1e-20


@dataclass(frozen=True)
class BandDefinition:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not self.lo_hz < self.hi_hz:
            raise ValueError(f"band {self.name}: lo must be below hi")


EEG_BANDS = (
    BandDefinition("delta", 0.5, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 13.0),
    BandDefinition("beta", 13.0, 30.0),
)

TIME_NAMES = ("variance", "skewness", "kurtosis",
              "hjorth_activity", "hjorth_mobility", "hjorth_complexity")


def _moments(x):
    """Population variance, skewness and excess kurtosis (0, 0 when flat)."""
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0, 0.0, 0.0
    m3 = np.mean(d ** 3)
    m4 = np.mean(d ** 4)
    return float(m2), float(m3 / m2 ** 1.5), float(m4 / m2 ** 2 - 3.0)


def time_domain_features(x, flags=None):
    """Variance, skewness, excess kurtosis and the three Hjorth parameters.

    A zero-variance input gives zeros for the shape parameters and adds
    ``"zero_variance"`` to ``flags``.
    """
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    var, skew, kurt = _moments(x)
    dx = np.diff(x)
    ddx = np.diff(dx)
    var_dx = dx.var()
    var_ddx = ddx.var()
    if var == 0:
        if flags is not None:
            flags.append("zero_variance")
        mobility = complexity = 0.0
    else:
        mobility = math.sqrt(var_dx / var)
        if var_dx == 0:
            complexity = 0.0
        else:
            complexity = math.sqrt(var_ddx / var_dx) / mobility
    return dict(zip(TIME_NAMES, (var, skew, kurt, var, mobility, complexity)))


def welch_psd(x, fs):
    """Welch PSD with 4 s Hann segments and 50% overlap."""
    nperseg = min(int(round(4 * fs)), x.size)
    return signal.welch(x, fs=fs, window="hann", nperseg=nperseg,
                        noverlap=nperseg // 2, scaling="density")


def band_power_features(x, fs=None, bands=EEG_BANDS, flags=None):
    """Relative power per band and the log of absolute band power.

    Band power integrates the Welch PSD over ``[lo, hi)``; relative power is
    normalized by the sum over the given bands so it sums to one.
    """
    fs = fs if fs is not None else getattr(x, "fs")
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if fs <= 2 * max(b.hi_hz for b in bands):
        raise ValueError(f"fs={fs} Hz too low for the highest band edge")
    freqs, psd = welch_psd(x, fs)
    df = freqs[1] - freqs[0]
    powers = np.array([psd[(freqs >= b.lo_hz) & (freqs < b.hi_hz)].sum() * df for b in bands])
    total = powers.sum()
    if total > 0:
        relative = powers / total
    else:
        if flags is not None:
            flags.append("zero_band_power")
        relative = np.full(len(bands), 1.0 / len(bands))
    out = {}
    for b, r in zip(bands, relative):
        out[f"relpow_{b.name}"] = float(r)
    for b, p in zip(bands, powers):
        out[f"logpow_{b.name}"] = math.log(max(p, _LOG_FLOOR))
    return out


def wavelet_band_features(subbands, flags=None):
    """Energy and moment statistics per DWT subband plus wavelet entropy."""
    bands = subbands.bands()
    energies = np.array([float(np.dot(c, c)) for _, c in bands])
    total = energies.sum()
    if total > 0:
        rel = energies / total
    else:
        if flags is not None:
            flags.append("zero_wavelet_energy")
        rel = np.full(len(bands), 1.0 / len(bands))
    out = {}
    for (name, coeffs), e, r in zip(bands, energies, rel):
        var, skew, kurt = _moments(coeffs)
        out[f"{name}_log_energy"] = math.log(max(e, _LOG_FLOOR))
        out[f"{name}_rel_energy"] = float(r)
        out[f"{name}_variance"] = var
        out[f"{name}_skewness"] = skew
        out[f"{name}_kurtosis"] = kurt
    nz = rel[rel > 0]
    out["wavelet_entropy"] = float(-np.sum(nz * np.log(nz))) if nz.size else 0.0
    return out


def _band_rows(freqs, band):
    rows = np.flatnonzero((freqs >= band.lo_hz) & (freqs < band.hi_hz))
    if rows.size == 0 or band.lo_hz < freqs.min() - 1e-9 or band.hi_hz > freqs.max() + 1e-9:
        raise BandOutsideGrid(
            f"band {band.name} ({band.lo_hz}-{band.hi_hz} Hz) not covered by "
            f"{freqs.min():.3g}-{freqs.max():.3g} Hz"
        )
    return rows


def scalogram_features(s, bands=EEG_BANDS):
    """Mean, std and max of |W| per band over interior time columns."""
    freqs = s.frequencies
    edge = s.grid.edge_samples()
    n = s.magnitudes.shape[1]
    cols = slice(edge, n - edge) if n > 2 * edge else slice(0, n)
    out = {}
    for band in bands:
        block = s.magnitudes[_band_rows(freqs, band), cols]
        out[f"cwt_{band.name}_mean"] = float(block.mean())
        out[f"cwt_{band.name}_std"] = float(block.std())
        out[f"cwt_{band.name}_max"] = float(block.max())
    return out


def feature_names(bands=EEG_BANDS, include_dwt=True, include_cwt=True, levels=5):
    names = list(TIME_NAMES)
    names += [f"relpow_{b.name}" for b in bands] + [f"logpow_{b.name}" for b in bands]
    if include_dwt:
        for sub in [f"D{k}" for k in range(1, levels + 1)] + [f"A{levels}"]:
            names += [f"{sub}_{stat}" for stat in
                      ("log_energy", "rel_energy", "variance", "skewness", "kurtosis")]
        names.append("wavelet_entropy")
    if include_cwt:
        for b in bands:
            names += [f"cwt_{b.name}_{stat}" for stat in ("mean", "std", "max")]
    return names


def epoch_features(x, fs, bands=EEG_BANDS, include_dwt=True, include_cwt=True,
                   wavelet=WaveletSpec(), grid=None, flags=None):
    """Ordered feature dict for one epoch's samples."""
    x = np.asarray(x, dtype=np.float64)
    values = time_domain_features(x, flags)
    values.update(band_power_features(x, fs, bands, flags))
    if include_dwt:
        values.update(wavelet_band_features(dwt_multilevel(x, wavelet), flags))
    if include_cwt:
        values.update(scalogram_features(cwt_scalogram(x, grid or default_grid(fs)), bands))
    return values


class EpochFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from raw epochs (rows of samples) to features.

    Parameters
    ----------
    fs : float
        Sampling rate of the epochs.
    include_dwt, include_cwt : bool
        Toggle the DWT (31 columns) and CWT (12 columns) blocks.
    """

    def __init__(self, fs=100.0, include_dwt=True, include_cwt=True):
        self.fs = fs
        self.include_dwt = include_dwt
        self.include_cwt = include_cwt

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = feature_names(EEG_BANDS, self.include_dwt, self.include_cwt)
        return self

    def transform(self, X):
        X = check_array(X)
        names = feature_names(EEG_BANDS, self.include_dwt, self.include_cwt)
        out = np.empty((X.shape[0], len(names)))
        grid = default_grid(self.fs)
        for i, row in enumerate(X):
            values = epoch_features(row, self.fs, EEG_BANDS, self.include_dwt,
                                    self.include_cwt, grid=grid)
            out[i] = [values[n] for n in names]
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_names(EEG_BANDS, self.include_dwt, self.include_cwt),
                          dtype=object)


@dataclass(eq=False)
class FeatureMatrix:
    """Epochs x named features with subject group ids for grouped splitting."""

    X: np.ndarray
    columns: tuple
    subjects: np.ndarray
    nights: np.ndarray
    indices: np.ndarray
    stages: np.ndarray
    flags: list = field(default_factory=list)

    def __len__(self):
        return self.X.shape[0]

    @property
    def groups(self):
        return self.subjects

    @property
    def y(self):
        return self.stages

    def keys(self):
        return list(zip(self.subjects, self.nights, self.indices.tolist()))

    def subset(self, mask):
        mask = np.asarray(mask)
        return FeatureMatrix(self.X[mask], self.columns, self.subjects[mask],
                             self.nights[mask], self.indices[mask], self.stages[mask])

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject", "night", "epoch", "stage", *self.columns])
            for i in range(len(self)):
                writer.writerow([self.subjects[i], self.nights[i], int(self.indices[i]),
                                 SleepStage(int(self.stages[i])).label,
                                 *(repr(float(v)) for v in self.X[i])])
        return path

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        columns = tuple(header[4:])
        X = np.array([[float(v) for v in r[4:]] for r in rows]).reshape(len(rows), len(columns))
        return cls(
            X=X,
            columns=columns,
            subjects=np.array([r[0] for r in rows], dtype=object),
            nights=np.array([r[1] for r in rows], dtype=object),
            indices=np.array([int(r[2]) for r in rows], dtype=np.int64),
            stages=np.array([int(SleepStage.from_name(r[3])) for r in rows], dtype=np.int64),
        )


def assemble_features(epochs, include_dwt=True, include_cwt=True):
    """Feature matrix for a list of :class:`EpochRecord`.

    Raises :class:`NonFiniteFeature` naming the epoch and column of the first
    NaN/Inf value instead of imputing it.
    """
    epochs = list(epochs)
    fs_values = {ep.fs for ep in epochs}
    if len(fs_values) > 1:
        raise ValueError(f"epochs mix sampling rates {sorted(fs_values)}")
    fs = fs_values.pop() if fs_values else 100.0
    names = feature_names(EEG_BANDS, include_dwt, include_cwt)
    X = np.empty((len(epochs), len(names)))
    grid = default_grid(fs) if include_cwt else None
    all_flags = []
    for i, ep in enumerate(epochs):
        flags = []
        # non-finite input is reported below as NonFiniteFeature
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            values = epoch_features(ep.samples, fs, EEG_BANDS, include_dwt, include_cwt,
                                    grid=grid, flags=flags)
        row = np.array([values[n] for n in names])
        bad = np.flatnonzero(~np.isfinite(row))
        if bad.size:
            raise NonFiniteFeature(ep.key, names[bad[0]])
        X[i] = row
        if flags:
            all_flags.append((ep.key, tuple(flags)))
    if all_flags:
        logger.info("%d epochs produced sentinel feature values", len(all_flags))
    return FeatureMatrix(
        X=X,
        columns=tuple(names),
        subjects=np.array([ep.subject for ep in epochs], dtype=object),
        nights=np.array([ep.night for ep in epochs], dtype=object),
        indices=np.array([ep.index for ep in epochs], dtype=np.int64),
        stages=np.array([int(ep.stage) for ep in epochs], dtype=np.int64),
        flags=all_flags,
    )
