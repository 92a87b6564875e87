"""Reader for EDF/EDF+ polysomnography and hypnogram files.

Only what the Sleep-EDF sleep-cassette collection needs is supported: 16-bit
EDF/EDF+ data records, calibrated channel reads and EDF+ TAL annotations.
Headers can be serialized back to bytes for round-trip tests; writing signal
data is not supported.
"""

from __future__ import annotations

import io
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from fractions import Fraction
from pathlib import Path

import numpy as np

from somnwave.exceptions import (
    DegenerateCalibration,
    InconsistentHeaderBytes,
    MalformedHeader,
    MalformedTal,
    NonAsciiField,
    OverlappingEvents,
    TruncatedHeader,
    TruncatedRecord,
    UnknownChannel,
)
from somnwave.stages import SleepStage, stage_from_label

logger = logging.getLogger(__name__)

EPOCH_SECONDS = 30
ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the fixed part of the header
_FIXED_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)

# per-signal fields, stored field-major in the header
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass(frozen=True)
class SignalSpec:
    label: str
    transducer: str
    physical_dim: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefiltering: str
    samples_per_record: int
    reserved: str = ""

    @property
    def gain(self):
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def calibrate(self, digital):
        """Convert digital sample values to physical units."""
        if self.digital_max == self.digital_min:
            raise DegenerateCalibration(f"signal {self.label!r}: digital_min == digital_max")
        digital = np.asarray(digital, dtype=np.float64)
        return (digital - self.digital_min) * self.gain + self.physical_min


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    reserved: str
    n_records: int
    record_duration_s: Fraction
    signals: tuple[SignalSpec, ...] = field(default_factory=tuple)

    @property
    def n_signals(self):
        return len(self.signals)

    @property
    def is_edf_plus(self):
        return self.reserved.startswith("EDF+")

    @property
    def start_datetime(self):
        """Recording start, using the EDF 1985-2084 clipping rule for years."""
        try:
            day, month, yy = (int(p) for p in self.start_date.split("."))
            hh, mm, ss = (int(p) for p in self.start_time.split("."))
        except ValueError:
            return None
        year = 1900 + yy if yy >= 85 else 2000 + yy
        return datetime(year, month, day, hh, mm, ss)

    @property
    def record_samples(self):
        return sum(s.samples_per_record for s in self.signals)

    @property
    def record_bytes(self):
        return 2 * self.record_samples

    @property
    def labels(self):
        return [s.label for s in self.signals]

    def signal_index(self, label):
        for i, spec in enumerate(self.signals):
            if spec.label == label:
                return i
        raise UnknownChannel(f"channel {label!r} not in {self.labels}")

    def duration_s(self):
        return float(self.n_records * self.record_duration_s)

    def to_bytes(self):
        """Serialize back to the ``256 + 256 * n_signals`` byte header."""
        fixed = {
            "version": self.version,
            "patient_id": self.patient_id,
            "recording_id": self.recording_id,
            "start_date": self.start_date,
            "start_time": self.start_time,
            "header_bytes": str(self.header_bytes),
            "reserved": self.reserved,
            "n_records": str(self.n_records),
            "record_duration": _format_number(self.record_duration_s),
            "n_signals": str(self.n_signals),
        }
        out = io.BytesIO()
        for name, width in _FIXED_FIELDS:
            out.write(_pad(fixed[name], width))
        for name, width in _SIGNAL_FIELDS:
            for spec in self.signals:
                value = getattr(spec, name)
                if not isinstance(value, str):
                    value = _format_number(value)
                out.write(_pad(value, width))
        return out.getvalue()


@dataclass(frozen=True)
class SignalTrace:
    label: str
    fs: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.flags.writeable:
            samples = samples.copy()
            samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    def with_samples(self, samples):
        return SignalTrace(self.label, self.fs, samples)


@dataclass(frozen=True)
class AnnotationEvent:
    onset_s: float
    duration_s: float
    label: str


@dataclass(frozen=True)
class Hypnogram:
    stages: tuple
    source: str = ""
    epoch_len_s: int = EPOCH_SECONDS
    n_floored: int = 0

    def __len__(self):
        return len(self.stages)

    def codes(self):
        return np.array([int(s) for s in self.stages], dtype=np.int8)


def _pad(text, width):
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _format_number(value):
    if isinstance(value, Fraction) and value.denominator == 1:
        return str(value.numerator)
    value = float(value)
    if value.is_integer():
        return str(int(value))
    text = repr(value)
    return text[:8]


def _decode_ascii(raw, name):
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError:
        raise NonAsciiField(f"header field {name!r} contains non-ASCII bytes") from None


def _parse_int(text, name):
    try:
        return int(text.strip())
    except ValueError:
        # some writers emit "100.0" style integers
        try:
            value = float(text.strip())
        except ValueError:
            raise MalformedHeader(f"field {name!r}: {text!r} is not a number") from None
        if not value.is_integer():
            raise MalformedHeader(f"field {name!r}: {text!r} is not an integer")
        return int(value)


def _parse_float(text, name):
    try:
        return float(text.strip())
    except ValueError:
        raise MalformedHeader(f"field {name!r}: {text!r} is not a number") from None


def _parse_fraction(text, name):
    try:
        return Fraction(text.strip())
    except ValueError:
        raise MalformedHeader(f"field {name!r}: {text!r} is not a number") from None


def parse_header(data):
    """Parse an EDF header from the leading bytes of a file.

    Parameters
    ----------
    data : bytes
        At least the full header (``256 + 256 * n_signals`` bytes); any
        trailing data is ignored.

    Returns
    -------
    EdfHeader
    """
    data = bytes(data)
    if len(data) < 256:
        raise TruncatedHeader(f"need 256 bytes for the fixed header, got {len(data)}")
    fixed = {}
    pos = 0
    for name, width in _FIXED_FIELDS:
        fixed[name] = _decode_ascii(data[pos:pos + width], name)
        pos += width

    n_signals = _parse_int(fixed["n_signals"], "n_signals")
    header_bytes = _parse_int(fixed["header_bytes"], "header_bytes")
    expected = 256 + 256 * n_signals
    if header_bytes != expected:
        raise InconsistentHeaderBytes(
            f"header declares {header_bytes} bytes but {n_signals} signals need {expected}"
        )
    if len(data) < expected:
        raise TruncatedHeader(f"need {expected} header bytes, got {len(data)}")

    columns = {}
    for name, width in _SIGNAL_FIELDS:
        values = []
        for _ in range(n_signals):
            values.append(_decode_ascii(data[pos:pos + width], name))
            pos += width
        columns[name] = values

    signals = []
    for i in range(n_signals):
        signals.append(SignalSpec(
            label=columns["label"][i].rstrip(),
            transducer=columns["transducer"][i].rstrip(),
            physical_dim=columns["physical_dim"][i].rstrip(),
            physical_min=_parse_float(columns["physical_min"][i], "physical_min"),
            physical_max=_parse_float(columns["physical_max"][i], "physical_max"),
            digital_min=_parse_int(columns["digital_min"][i], "digital_min"),
            digital_max=_parse_int(columns["digital_max"][i], "digital_max"),
            prefiltering=columns["prefiltering"][i].rstrip(),
            samples_per_record=_parse_int(columns["samples_per_record"][i], "samples_per_record"),
            reserved=columns["reserved"][i].rstrip(),
        ))

    return EdfHeader(
        version=fixed["version"].rstrip(),
        patient_id=fixed["patient_id"].rstrip(),
        recording_id=fixed["recording_id"].rstrip(),
        start_date=fixed["start_date"].rstrip(),
        start_time=fixed["start_time"].rstrip(),
        header_bytes=header_bytes,
        reserved=fixed["reserved"].rstrip(),
        n_records=_parse_int(fixed["n_records"], "n_records"),
        record_duration_s=_parse_fraction(fixed["record_duration"], "record_duration"),
        signals=tuple(signals),
    )


def _read_bytes(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    pos = source.tell()
    source.seek(0)
    data = source.read()
    source.seek(pos)
    return data


def _record_matrix(data, header):
    """Data region as an ``(n_records, record_samples)`` int16 matrix."""
    payload = memoryview(data)[header.header_bytes:]
    rec_bytes = header.record_bytes
    if rec_bytes == 0:
        return np.zeros((0, 0), dtype="<i2")
    n_records = header.n_records
    if n_records < 0:
        n_records = len(payload) // rec_bytes
    needed = n_records * rec_bytes
    if len(payload) < needed:
        raise TruncatedRecord(
            f"data region holds {len(payload)} bytes, {n_records} records need {needed}"
        )
    flat = np.frombuffer(payload[:needed], dtype="<i2")
    return flat.reshape(n_records, header.record_samples)


def _signal_slice(header, index):
    start = sum(s.samples_per_record for s in header.signals[:index])
    return slice(start, start + header.signals[index].samples_per_record)


def read_signal(source, header, channel):
    """Read one channel in physical units.

    ``source`` may be raw file bytes, a path or a seekable binary file.
    """
    index = header.signal_index(channel)
    spec = header.signals[index]
    if spec.digital_max == spec.digital_min:
        raise DegenerateCalibration(f"signal {channel!r}: digital_min == digital_max")
    if header.record_duration_s <= 0:
        raise MalformedHeader("record duration must be positive to derive a sampling rate")
    matrix = _record_matrix(_read_bytes(source), header)
    digital = matrix[:, _signal_slice(header, index)].reshape(-1)
    fs = float(Fraction(spec.samples_per_record) / header.record_duration_s)
    return SignalTrace(spec.label, fs, spec.calibrate(digital))


_ONSET_RE = re.compile(rb"^[+-]\d+(\.\d*)?$")
_DURATION_RE = re.compile(rb"^\d+(\.\d*)?$")


def parse_tals(raw):
    """Decode the TAL byte stream of one annotation record."""
    events = []
    for chunk in raw.split(b"\x00"):
        if not chunk:
            continue
        if not chunk.endswith(b"\x14"):
            raise MalformedTal(f"TAL missing 0x14 terminator: {chunk[:40]!r}")
        parts = chunk.split(b"\x14")
        stamp, annotations = parts[0], parts[1:-1]
        onset_raw, _, duration_raw = stamp.partition(b"\x15")
        if not _ONSET_RE.match(onset_raw):
            raise MalformedTal(f"bad TAL onset {onset_raw!r}")
        if duration_raw and not _DURATION_RE.match(duration_raw):
            raise MalformedTal(f"bad TAL duration {duration_raw!r}")
        onset = float(onset_raw)
        duration = float(duration_raw) if duration_raw else 0.0
        for text in annotations:
            events.append(AnnotationEvent(onset, duration, text.decode("utf-8", errors="replace")))
    return events


def parse_annotations(source, header):
    """All EDF+ annotation events of the file, in file order."""
    index = header.signal_index(ANNOTATION_LABEL)
    matrix = _record_matrix(_read_bytes(source), header)
    block = np.ascontiguousarray(matrix[:, _signal_slice(header, index)])
    events = []
    for record in block:
        events.extend(parse_tals(record.tobytes()))
    return events


def expand_hypnogram(events, total_span_s, source=""):
    """Expand stage annotations to one label per 30 s epoch.

    Epochs not covered by any stage event are ``EXCLUDED``. Durations that
    are not whole multiples of 30 s are floored (and counted in
    ``Hypnogram.n_floored``).
    """
    n_epochs = int(math.floor(total_span_s / EPOCH_SECONDS + 1e-9))
    stages = [SleepStage.EXCLUDED] * n_epochs
    # zero-duration events (timekeeping TALs, markers) carry no stage
    scored = sorted((e for e in events if e.duration_s > 0), key=lambda e: e.onset_s)
    n_floored = 0
    prev_end = -math.inf
    for event in scored:
        if event.onset_s < prev_end - 1e-9:
            raise OverlappingEvents(
                f"event at {event.onset_s}s overlaps the previous one ending at {prev_end}s"
            )
        prev_end = max(prev_end, event.onset_s + event.duration_s)
        stage = stage_from_label(event.label)
        count = event.duration_s / EPOCH_SECONDS
        whole = int(math.floor(count + 1e-9))
        if abs(count - round(count)) > 1e-9:
            n_floored += 1
        first = int(math.floor(event.onset_s / EPOCH_SECONDS + 1e-9))
        for i in range(max(first, 0), min(first + whole, n_epochs)):
            stages[i] = stage
    if n_floored:
        logger.warning("%s: floored %d annotation(s) with non-30 s durations", source, n_floored)
    return Hypnogram(tuple(stages), source=source, n_floored=n_floored)


class EdfFile:
    """Parsed EDF file held in memory.

    >>> edf = EdfFile("SC4001E0-PSG.edf")            # doctest: +SKIP
    >>> trace = edf.read_signal("EEG Fpz-Cz")        # doctest: +SKIP
    """

    def __init__(self, source):
        self.path = Path(source) if isinstance(source, (str, os.PathLike)) else None
        self._data = _read_bytes(source)
        header = parse_header(self._data)
        if header.n_records < 0:
            rec = header.record_bytes
            n = (len(self._data) - header.header_bytes) // rec if rec else 0
            header = replace(header, n_records=n)
        self.header = header

    @property
    def name(self):
        return self.path.name if self.path else "<bytes>"

    def read_signal(self, channel):
        try:
            return read_signal(self._data, self.header, channel)
        except UnknownChannel as exc:
            raise UnknownChannel(f"{self.name}: {exc}") from None

    def annotations(self):
        return parse_annotations(self._data, self.header)


@dataclass(frozen=True)
class Recording:
    """A paired PSG/hypnogram file set for one subject-night."""

    key: str
    subject: str
    night: str
    psg: Path
    hypnogram: Path


_SC_RE = re.compile(r"^SC4(\d\d)(\d)")


def _pair_key(name):
    stem = name.split("-")[0]
    return stem[:-2] if len(stem) > 2 else stem


def discover_recordings(data_dir):
    """Pair ``*-PSG.edf`` with ``*-Hypnogram.edf`` files by subject/night prefix.

    Sleep-cassette names look like ``SC4ssNE0-PSG.edf`` and
    ``SC4ssNXX-Hypnogram.edf``; both reduce to the key ``SC4ssN``.
    """
    data_dir = Path(data_dir)
    psgs = {}
    hyps = {}
    for path in sorted(data_dir.rglob("*.edf")):
        name = path.name
        if name.endswith("-PSG.edf"):
            psgs.setdefault(_pair_key(name), path)
        elif name.endswith("-Hypnogram.edf"):
            hyps.setdefault(_pair_key(name), path)
    recordings = []
    for key in sorted(psgs):
        if key not in hyps:
            logger.warning("no hypnogram for %s", psgs[key].name)
            continue
        m = _SC_RE.match(key)
        subject, night = (m.group(1), m.group(2)) if m else (key, "1")
        recordings.append(Recording(key, subject, night, psgs[key], hyps[key]))
    return recordings


def load_hypnogram(path, total_span_s):
    edf = EdfFile(path)
    return expand_hypnogram(edf.annotations(), total_span_s, source=edf.name)
