"""Trace preprocessing: band-pass, z-score, 30 s epoching and artifact rejection."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal

from somnwave.edf import EPOCH_SECONDS
from somnwave.exceptions import (
    CacheFormatError,
    InvalidBand,
    SamplingMismatch,
    TooShort,
    ZeroVariance,
)
from somnwave.stages import SleepStage


@dataclass(frozen=True)
class FilterSpec:
    low_hz: float = 0.5
    high_hz: float = 40.0
    order: int = 4
    design: str = "butterworth"

    def validate(self, fs):
        if self.design != "butterworth":
            raise InvalidBand(f"unsupported filter design {self.design!r}")
        if self.order < 1:
            raise InvalidBand("filter order must be >= 1")
        if not 0 < self.low_hz < self.high_hz < fs / 2:
            raise InvalidBand(
                f"need 0 < {self.low_hz} < {self.high_hz} < Nyquist ({fs / 2} Hz)"
            )


@dataclass(frozen=True)
class ArtifactPolicy:
    amplitude_limit_uv: float = 250.0
    max_flat_fraction: float = 0.5

    def __post_init__(self):
        if not self.amplitude_limit_uv > 0:
            raise ValueError("amplitude_limit_uv must be positive")
        if not 0.0 <= self.max_flat_fraction <= 1.0:
            raise ValueError("max_flat_fraction must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class EpochRecord:
    """One 30 s segment.

    ``reference`` holds the pre-normalization (µV) samples used for artifact
    thresholds; when absent the normalized ``samples`` are used.
    """

    samples: np.ndarray
    stage: SleepStage
    subject: str
    night: str
    index: int
    fs: float = 100.0
    artifact: bool = False
    reference: np.ndarray | None = None

    @property
    def key(self):
        return (self.subject, self.night, self.index)


def _butter_sos(spec, fs):
    return signal.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass",
                         fs=fs, output="sos")


def filter_padlen(spec):
    # 3x the length of the equivalent transfer-function filter
    return 3 * (4 * spec.order + 1)


def bandpass_filter(trace, spec=FilterSpec()):
    """Zero-phase Butterworth band-pass (forward-backward, odd reflection padding)."""
    spec.validate(trace.fs)
    padlen = filter_padlen(spec)
    if len(trace) <= padlen:
        raise TooShort(f"trace of {len(trace)} samples is too short for padding of {padlen}")
    sos = _butter_sos(spec, trace.fs)
    out = signal.sosfiltfilt(sos, trace.samples, padtype="odd", padlen=padlen)
    return trace.with_samples(out)


def zscore_normalize(trace):
    """Standardize a whole recording with its mean and population std."""
    x = trace.samples
    if x.size == 0:
        raise ZeroVariance("empty trace")
    mean = x.mean()
    std = x.std()
    if std == 0 or not np.isfinite(std):
        raise ZeroVariance(f"{trace.label}: recording has zero variance")
    return trace.with_samples((x - mean) / std)


def segment_epochs(trace, hyp, subject, night="", reference=None):
    """Cut ``trace`` into labelled 30 s epochs, dropping ``EXCLUDED`` ones.

    Epoch samples are read-only views into the trace.
    """
    per_epoch = trace.fs * EPOCH_SECONDS
    if abs(per_epoch - round(per_epoch)) > 1e-9:
        raise SamplingMismatch(f"fs={trace.fs} Hz does not give whole-sample 30 s epochs")
    per_epoch = int(round(per_epoch))
    if reference is not None and (reference.fs != trace.fs or len(reference) != len(trace)):
        raise SamplingMismatch("reference trace does not match the normalized trace")
    n = min(len(trace) // per_epoch, len(hyp))
    records = []
    for i in range(n):
        stage = hyp.stages[i]
        if stage is SleepStage.EXCLUDED:
            continue
        window = slice(i * per_epoch, (i + 1) * per_epoch)
        records.append(EpochRecord(
            samples=trace.samples[window],
            stage=SleepStage(stage),
            subject=subject,
            night=night,
            index=i,
            fs=trace.fs,
            reference=None if reference is None else reference.samples[window],
        ))
    return records


def flat_fraction(x):
    """Fraction of consecutive sample pairs with no change."""
    if x.size < 2:
        return 1.0
    return float(np.count_nonzero(np.diff(x) == 0)) / (x.size - 1)


def is_artifact(ep, policy=ArtifactPolicy()):
    """Amplitude or flat-line rule on the pre-normalization samples."""
    x = ep.samples if ep.reference is None else ep.reference
    too_big = x.size > 0 and float(np.max(np.abs(x))) > policy.amplitude_limit_uv
    return bool(too_big or flat_fraction(x) > policy.max_flat_fraction)


def reject_artifacts(epochs, policy=ArtifactPolicy()):
    """Split off contaminated epochs.

    Returns
    -------
    kept : list of EpochRecord
        Epochs in input order, all with ``artifact=False``.
    rejected_count : int
    """
    kept = []
    rejected = 0
    for ep in epochs:
        if is_artifact(ep, policy):
            rejected += 1
        else:
            kept.append(replace(ep, artifact=False) if ep.artifact else ep)
    return kept, rejected


def trim_wake_margins(epochs, margin_epochs=60):
    """Keep the sleep period plus ``margin_epochs`` of wake on each side.

    ``margin_epochs=None`` (or ``math.inf``) disables trimming.
    """
    if margin_epochs is None or margin_epochs == math.inf:
        return list(epochs)
    sleep_idx = [ep.index for ep in epochs if ep.stage != SleepStage.W]
    if not sleep_idx:
        return list(epochs)
    lo = min(sleep_idx) - margin_epochs
    hi = max(sleep_idx) + margin_epochs
    return [ep for ep in epochs if lo <= ep.index <= hi]


def preprocess_recording(trace, hyp, subject, night="", filter_spec=FilterSpec(),
                         policy=ArtifactPolicy(), wake_margin=60):
    """Run the full chain on one recording.

    Returns the kept epochs and a small dict of counts.
    """
    filtered = bandpass_filter(trace, filter_spec)
    normalized = zscore_normalize(filtered)
    epochs = segment_epochs(normalized, hyp, subject, night, reference=filtered)
    n_segmented = len(epochs)
    epochs = trim_wake_margins(epochs, wake_margin)
    n_trimmed = n_segmented - len(epochs)
    kept, rejected = reject_artifacts(epochs, policy)
    stats = {"segmented": n_segmented, "trimmed": n_trimmed, "rejected": rejected,
             "kept": len(kept)}
    return kept, stats


# --- binary epoch cache -----------------------------------------------------
#
# "SOMN1" | u32 n_epochs | per epoch:
#   u16 len + subject utf-8 | u16 len + night utf-8 | u32 index | u8 stage |
#   f64 fs | u32 n_samples | n_samples x f32
# all little-endian. A CSV index (subject,night,index,stage,fs,n_samples,offset)
# sits next to the cache.

CACHE_MAGIC = b"SOMN1"


def _pack_text(text):
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_epoch_cache(path, epochs, index_path=None):
    path = Path(path)
    index_path = Path(index_path) if index_path else path.with_suffix(".csv")
    rows = []
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(epochs)))
        for ep in epochs:
            offset = fh.tell()
            samples = np.asarray(ep.samples, dtype="<f4")
            fh.write(_pack_text(ep.subject))
            fh.write(_pack_text(ep.night))
            fh.write(struct.pack("<IBdI", ep.index, int(ep.stage), ep.fs, samples.size))
            fh.write(samples.tobytes())
            rows.append((ep.subject, ep.night, ep.index, SleepStage(ep.stage).label,
                         repr(float(ep.fs)), samples.size, offset))
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "night", "index", "stage", "fs", "n_samples", "offset"])
        writer.writerows(rows)
    return path, index_path


def read_epoch_cache(path):
    data = Path(path).read_bytes()
    if not data.startswith(CACHE_MAGIC):
        raise CacheFormatError(f"{path}: not an epoch cache (bad magic)")
    pos = len(CACHE_MAGIC)
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        epochs = []
        for _ in range(count):
            texts = []
            for _ in range(2):
                (n,) = struct.unpack_from("<H", data, pos)
                pos += 2
                texts.append(data[pos:pos + n].decode("utf-8"))
                pos += n
            index, stage, fs, n_samples = struct.unpack_from("<IBdI", data, pos)
            pos += struct.calcsize("<IBdI")
            end = pos + 4 * n_samples
            if end > len(data):
                raise CacheFormatError(f"{path}: truncated epoch payload")
            samples = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64)
            pos = end
            epochs.append(EpochRecord(samples, SleepStage(stage), texts[0], texts[1],
                                      index, fs))
    except struct.error as exc:
        raise CacheFormatError(f"{path}: truncated cache ({exc})") from None
    return epochs
