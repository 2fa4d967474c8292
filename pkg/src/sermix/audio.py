"""Waveform container, WAV file I/O, and segment energy.

Supports little-endian RIFF/WAVE files holding PCM16 or IEEE float32
samples. Multichannel files are averaged down to mono on load. All
in-memory samples are float64 in nominal range [-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedWav, OutOfBounds, UnsupportedEncoding

_WAVE_FMT_PCM = 1
_WAVE_FMT_FLOAT = 3


@dataclass
class Waveform:
    """Mono audio signal: sample values plus their rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a nonempty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class Segment:
    """Half-open sample range [start, start + length) of a parent waveform."""

    start: int
    length: int

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")
        if self.length <= 0:
            raise ValueError(f"length must be > 0, got {self.length}")

    def check_within(self, w: Waveform) -> None:
        if self.start + self.length > len(w):
            raise OutOfBounds(
                f"segment [{self.start}, {self.start + self.length}) exceeds "
                f"waveform of {len(w)} samples"
            )


def extract_segment(w: Waveform, s: Segment) -> Waveform:
    """Copy of the samples covered by ``s``, keeping the sample rate."""
    s.check_within(w)
    return Waveform(w.samples[s.start : s.start + s.length].copy(), w.sample_rate)


def segment_energy(w: Waveform, s: Segment) -> float:
    """Mean power (average squared amplitude) over the segment."""
    s.check_within(w)
    x = w.samples[s.start : s.start + s.length]
    return float(np.mean(x * x))


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise MalformedWav(f"truncated file: expected {n} bytes for {what}")
    return data


def load_wav(path: str | Path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono float64 waveform.

    Integer samples are scaled to [-1, 1] by dividing by 2^15; multichannel
    audio is averaged across channels.
    """
    with open(path, "rb") as f:
        riff, _size, wave_id = struct.unpack("<4sI4s", _read_exact(f, 12, "RIFF header"))
        if riff != b"RIFF" or wave_id != b"WAVE":
            raise MalformedWav(f"not a RIFF/WAVE file: {path}")

        fmt = None
        data = None
        while True:
            header = f.read(8)
            if len(header) == 0:
                break
            if len(header) < 8:
                raise MalformedWav("truncated chunk header")
            chunk_id, chunk_size = struct.unpack("<4sI", header)
            if chunk_id == b"fmt ":
                fmt = _read_exact(f, chunk_size, "fmt chunk")
            elif chunk_id == b"data":
                data = _read_exact(f, chunk_size, "data chunk")
            else:
                f.seek(chunk_size, 1)
            if chunk_size % 2:  # chunks are word-aligned
                f.seek(1, 1)

    if fmt is None or len(fmt) < 16:
        raise MalformedWav("missing or short fmt chunk")
    if data is None:
        raise MalformedWav("missing data chunk")

    audio_format, n_channels, sample_rate, _brate, _balign, bits = struct.unpack(
        "<HHIIHH", fmt[:16]
    )
    if n_channels < 1:
        raise MalformedWav("fmt chunk declares zero channels")

    if audio_format == _WAVE_FMT_PCM and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FMT_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"unsupported WAV encoding: format tag {audio_format}, {bits}-bit"
        )

    n_frames = samples.size // n_channels
    if n_frames == 0:
        raise MalformedWav("data chunk holds no complete frame")
    samples = samples[: n_frames * n_channels].reshape(n_frames, n_channels)
    return Waveform(samples.mean(axis=1), sample_rate)


def save_wav(w: Waveform, path: str | Path, encoding: str = "pcm16") -> None:
    """Write a mono WAV file, either 16-bit PCM or IEEE float32.

    PCM16 output clips to [-1, 1] and quantizes; round-tripping in-range
    samples is accurate to within 1/2^15 each. Float32 output is lossless
    at float32 precision and preserves out-of-range amplitudes.
    """
    if not np.all(np.isfinite(w.samples)):
        raise ValueError("cannot write non-finite samples")
    if encoding == "pcm16":
        scaled = np.clip(np.rint(w.samples * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
        fmt_tag, bits = _WAVE_FMT_PCM, 16
    elif encoding == "float32":
        payload = w.samples.astype("<f4").tobytes()
        fmt_tag, bits = _WAVE_FMT_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    byte_rate = w.sample_rate * block_align
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, w.sample_rate, byte_rate, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) % 2:
        body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(body)) + body)
