"""Reading, writing and resampling mono audio.

Everything downstream works on :class:`AudioBuffer` -- float64 samples in
[-1, 1] at a known integer rate. WAV parsing is done by hand with ``struct``
because the stdlib ``wave`` module rejects IEEE-float files.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

CANONICAL_RATE = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# trailing 14 bytes shared by the KSDATAFORMAT_SUBTYPE_* GUIDs
_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


class AudioError(ValueError):
    """Base class for audio decoding problems."""


class WavFormatError(AudioError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedCodecError(AudioError):
    """The container is valid but holds compressed or exotic sample data."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioBuffer holds mono samples, got shape {x.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if x is self.samples:
            x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _decode_pcm(raw: bytes, bits: int, channels: int) -> np.ndarray:
    width = bits // 8
    n = len(raw) // (width * channels)
    raw = raw[: n * width * channels]
    if bits == 8:
        ints = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0
    elif bits == 16:
        ints = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        ints = v.astype(np.float64)
    elif bits == 32:
        ints = np.frombuffer(raw, dtype="<i4").astype(np.float64)
    else:
        raise UnsupportedCodecError(f"unsupported PCM bit depth: {bits}")
    return (ints / float(1 << (bits - 1))).reshape(n, channels)


def _decode_float(raw: bytes, bits: int, channels: int) -> np.ndarray:
    if bits == 32:
        dtype = "<f4"
    elif bits == 64:
        dtype = "<f8"
    else:
        raise UnsupportedCodecError(f"unsupported float bit depth: {bits}")
    width = bits // 8
    n = len(raw) // (width * channels)
    x = np.frombuffer(raw[: n * width * channels], dtype=dtype).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise AudioError("float WAV contains NaN or Inf samples")
    return np.clip(x, -1.0, 1.0).reshape(n, channels)


def load_wav(path: str | os.PathLike) -> AudioBuffer:
    """Load a RIFF/WAVE file as a mono :class:`AudioBuffer`.

    Integer PCM (8/16/24/32 bit) is divided by ``2**(bits-1)``; 8-bit data is
    unsigned and re-centred first. Channels are averaged.

    Raises FileNotFoundError, WavFormatError or UnsupportedCodecError.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too short")
            fmt = body
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40 or fmt[26:40] != _GUID_TAIL:
            raise UnsupportedCodecError(f"{path}: unrecognised WAVE_FORMAT_EXTENSIBLE subtype")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if channels < 1 or rate < 1:
        raise WavFormatError(f"{path}: bad channel count {channels} or rate {rate}")
    if bits == 0 or bits % 8 or block_align != channels * bits // 8:
        raise WavFormatError(f"{path}: inconsistent block alignment")

    if tag == WAVE_FORMAT_PCM:
        frames = _decode_pcm(payload, bits, channels)
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        frames = _decode_float(payload, bits, channels)
    else:
        raise UnsupportedCodecError(f"{path}: compressed format tag 0x{tag:04x} is not supported")
    return AudioBuffer(to_mono(frames), rate)


def to_mono(frames: np.ndarray) -> np.ndarray:
    """Average an (n, channels) array down to (n,)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        return frames.copy()
    return frames.mean(axis=1)


def write_wav(
    path: str | os.PathLike,
    samples: np.ndarray,
    sample_rate: int,
    bits: int = 16,
    float_format: bool = False,
) -> None:
    """Write samples (shape (n,) or (n, channels)) in [-1, 1] to a WAV file.

    Integers are quantised by rounding ``x * 2**(bits-1)`` and clipping to the
    representable range, so a round-trip through :func:`load_wav` is exact for
    values already on the quantisation grid.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]

    if float_format:
        if bits not in (32, 64):
            raise ValueError("float WAV must be 32 or 64 bit")
        raw = x.astype("<f4" if bits == 32 else "<f8").tobytes()
        tag = WAVE_FORMAT_IEEE_FLOAT
    else:
        scale = float(1 << (bits - 1))
        q = np.clip(np.round(x * scale), -scale, scale - 1).astype(np.int64)
        if bits == 8:
            raw = (q + 128).astype(np.uint8).tobytes()
        elif bits == 16:
            raw = q.astype("<i2").tobytes()
        elif bits == 24:
            u = (q & 0xFFFFFF).astype("<u4").reshape(-1, 1).view(np.uint8)
            raw = u[:, :3].tobytes()
        elif bits == 32:
            raw = q.astype("<i4").tobytes()
        else:
            raise ValueError(f"unsupported PCM bit depth: {bits}")
        tag = WAVE_FORMAT_PCM

    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block_align, block_align, bits)
    pad = b"\x00" if len(raw) & 1 else b""
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw + pad
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample_linear(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Linear-interpolation resampling.

    Output sample j sits at input position ``j * src / dst``; positions past
    the last input sample hold the last value. Output length is
    ``round(n * dst / src)``.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    n = len(buf)
    n_out = int(round(n * target_rate / buf.sample_rate))
    pos = np.arange(n_out, dtype=np.float64) * (buf.sample_rate / target_rate)
    out = np.interp(pos, np.arange(n, dtype=np.float64), buf.samples)
    return AudioBuffer(out, target_rate)


def load_for_features(path: str | os.PathLike, sample_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Load a WAV and bring it to the engine's working rate."""
    return resample_linear(load_wav(path), sample_rate)
