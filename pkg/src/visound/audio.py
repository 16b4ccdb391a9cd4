"""Waveform I/O and the 256-bin linear sample quantizer.

Real samples live in [-1, 1]; codes are integers in [0, 255].  Quantization
uses equal-width bins with midpoint reconstruction, so codes are exact fixed
points of quantize(dequantize(code)) and the worst-case round-trip error is
one bin width at the clamped +1 endpoint, half a bin everywhere else.

WAV support is deliberately narrow: 16-bit linear PCM, canonical 44-byte
RIFF header on write, mono (stereo is averaged on read).  No resampling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, FormatError

N_CODES = 256
SILENCE_CODE = 128  # quantize(0.0)


@dataclass(frozen=True)
class Waveform:
    """Real-valued samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ContractError("waveform must be a non-empty 1-D sample array")
        if not np.isfinite(arr).all():
            raise DataError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", np.clip(arr, -1.0, 1.0))
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class QuantizedClip:
    """Waveform as integer sample codes in [0, 255]."""

    codes: np.ndarray
    sample_rate: float

    def __post_init__(self):
        arr = np.asarray(self.codes)
        if arr.ndim != 1 or arr.size == 0:
            raise ContractError("clip must be a non-empty 1-D code array")
        if arr.dtype.kind not in "iu":
            raise ContractError("codes must be integers")
        if arr.min() < 0 or arr.max() >= N_CODES:
            raise DataError(
                f"codes out of range [0, {N_CODES}): min {arr.min()}, max {arr.max()}"
            )
        object.__setattr__(self, "codes", arr.astype(np.int64))
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.codes.size


def quantize_samples(samples: np.ndarray) -> np.ndarray:
    """code = clamp(floor((x+1)/2 * 256), 0, 255), elementwise."""
    raw = np.floor((np.asarray(samples, dtype=np.float64) + 1.0) * (N_CODES / 2.0))
    return np.clip(raw, 0, N_CODES - 1).astype(np.int64)


def dequantize_codes(codes: np.ndarray) -> np.ndarray:
    """Bin midpoint: x = (code + 0.5)/256 * 2 - 1, elementwise."""
    return (np.asarray(codes, dtype=np.float64) + 0.5) * (2.0 / N_CODES) - 1.0


def quantize(w: Waveform) -> QuantizedClip:
    return QuantizedClip(quantize_samples(w.samples), w.sample_rate)


def dequantize(q: QuantizedClip) -> Waveform:
    return Waveform(dequantize_codes(q.codes), q.sample_rate)


def pad_to_length(q: QuantizedClip, target_samples: int) -> QuantizedClip:
    """Repeat the clip end-to-end and truncate to exactly ``target_samples``."""
    if target_samples < 1:
        raise ContractError(f"target length must be >= 1, got {target_samples}")
    n = len(q)
    if n == target_samples:
        return q
    reps = -(-target_samples // n)  # ceil
    return QuantizedClip(np.tile(q.codes, reps)[:target_samples], q.sample_rate)


_PCM_MAX = 32767


def write_wav(path, w: Waveform) -> None:
    """Write mono 16-bit PCM with the canonical 44-byte header."""
    ints = np.clip(np.round(w.samples * _PCM_MAX), -_PCM_MAX, _PCM_MAX).astype("<i2")
    payload = ints.tobytes()
    rate = int(round(w.sample_rate))
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        rate,
        rate * 2,  # byte rate
        2,  # block align
        16,  # bits per sample
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_wav(path) -> Waveform:
    """Read 16-bit PCM WAV; stereo is averaged to mono, samples clamped."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[0:4] != b"RIFF":
        raise FormatError(f"{path}: missing RIFF chunk id")
    if blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is {blob[8:12]!r}, expected WAVE")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError(f"{path}: no fmt chunk")
    if data is None:
        raise FormatError(f"{path}: no data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: audio format {audio_format} is not linear PCM")
    if bits != 16:
        raise FormatError(f"{path}: bits per sample is {bits}, only 16 supported")
    if channels not in (1, 2):
        raise FormatError(f"{path}: {channels} channels, only mono/stereo supported")
    if len(data) % (2 * channels) != 0:
        raise FormatError(f"{path}: data chunk size {len(data)} not a whole frame count")

    ints = np.frombuffer(data, dtype="<i2").astype(np.float64)
    if channels == 2:
        ints = ints.reshape(-1, 2).mean(axis=1)
    if ints.size == 0:
        raise DataError(f"{path}: empty data chunk")
    return Waveform(np.clip(ints / _PCM_MAX, -1.0, 1.0), rate)
