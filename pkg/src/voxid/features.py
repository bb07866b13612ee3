"""MFCC front end: pre-emphasis, framing, Hamming window, power spectrum,
Mel filterbank, log, orthonormal DCT-II.

Coefficient c0 is dropped, so the default output is c1..c16 per frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .audio_io import AudioBuffer

LOG_FLOOR = 1e-10


class InsufficientAudioError(ValueError):
    """The signal is shorter than one analysis frame."""


@dataclass(frozen=True)
class MfccConfig:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    preemphasis: float = 0.97
    n_fft: int = 512
    n_mels: int = 26
    fmin: float = 0.0
    fmax: float = 8000.0
    n_coeffs: int = 16

    def __post_init__(self):
        if self.frame_len_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("frame_len_ms and hop_ms must be positive")
        if self.hop_ms > self.frame_len_ms:
            raise ValueError(f"hop_ms ({self.hop_ms}) exceeds frame_len_ms ({self.frame_len_ms})")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ValueError(f"preemphasis must lie in [0, 1), got {self.preemphasis}")
        if self.n_fft < 1 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        # c0 is dropped, so c1..c_n needs n_mels > n_coeffs
        if not 1 <= self.n_coeffs < self.n_mels:
            raise ValueError(f"need 1 <= n_coeffs < n_mels, got {self.n_coeffs} / {self.n_mels}")
        if not 0.0 <= self.fmin < self.fmax:
            raise ValueError(f"need 0 <= fmin < fmax, got {self.fmin} / {self.fmax}")

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def validate_for_rate(self, sample_rate: int) -> None:
        if self.fmax > sample_rate / 2:
            raise ValueError(f"fmax {self.fmax} Hz is above Nyquist for {sample_rate} Hz audio")
        if self.n_fft < self.frame_length(sample_rate):
            raise ValueError(
                f"n_fft {self.n_fft} is shorter than a {self.frame_len_ms} ms frame at {sample_rate} Hz"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MfccConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown MfccConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MelFilterBank:
    """Triangular filters stored densely as an (n_filters, n_fft//2 + 1) matrix."""

    weights: np.ndarray
    bins: np.ndarray  # n_filters + 2 edge/centre bin indices
    sample_rate: int
    n_fft: int

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def center_bins(self) -> np.ndarray:
        return self.bins[1:-1]

    @property
    def center_frequencies(self) -> np.ndarray:
        return self.center_bins * self.sample_rate / self.n_fft

    def apply(self, power: np.ndarray) -> np.ndarray:
        return power @ self.weights.T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def pre_emphasize(samples, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    x = np.asarray(samples, dtype=np.float64)
    y = x.copy()
    y[1:] -= alpha * x[:-1]
    return y


def num_frames(n: int, frame_len: int, hop: int) -> int:
    if n < frame_len:
        return 0
    return (n - frame_len) // hop + 1


def frame_signal(samples, frame_len: int, hop: int) -> np.ndarray:
    """Slice into overlapping frames; the trailing partial frame is dropped.

    Returns an array of shape (n_frames, frame_len), possibly with zero rows.
    """
    if frame_len < 1 or hop < 1:
        raise ValueError("frame_len and hop must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    n = num_frames(x.shape[0], frame_len, hop)
    if n == 0:
        return np.zeros((0, frame_len))
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def hamming(length: int) -> np.ndarray:
    if length < 1:
        raise ValueError("window length must be >= 1")
    if length == 1:
        # 2*pi*n/(L-1) with 0/0 -> 0
        return np.array([0.54 - 0.46])
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def hamming_window(frame) -> np.ndarray:
    """Multiply a frame (or the rows of a frame matrix) by a Hamming window."""
    f = np.asarray(frame, dtype=np.float64)
    return f * hamming(f.shape[-1])


def power_spectrum(frame, n_fft: int) -> np.ndarray:
    """|rfft|^2 / n_fft of the zero-padded frame(s), bins 0..n_fft/2."""
    f = np.asarray(frame, dtype=np.float64)
    if n_fft < f.shape[-1] or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two >= frame length, got {n_fft}")
    spec = np.fft.rfft(f, n=n_fft, axis=-1)
    return (spec.real**2 + spec.imag**2) / n_fft


def build_mel_filterbank(
    n_filters: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> MelFilterBank:
    """Triangular filters between n_filters + 2 Mel-spaced points.

    Points are snapped to FFT bins with ``floor((n_fft + 1) * f / rate)``.
    Filter i rises from point i to a unit peak at point i+1 and falls to zero
    at point i+2.
    """
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    if not 0.0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got {fmin}, {fmax}")
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2)
    bins = np.floor((n_fft + 1) * mel_to_hz(mels) / sample_rate).astype(np.int64)
    if np.any(np.diff(bins) <= 0):
        raise ValueError(
            f"{n_filters} Mel filters do not fit into {n_fft // 2 + 1} FFT bins "
            f"between {fmin} and {fmax} Hz (adjacent points share a bin)"
        )
    weights = np.zeros((n_filters, n_fft // 2 + 1))
    k = np.arange(n_fft // 2 + 1)
    for i in range(n_filters):
        lo, c, hi = bins[i], bins[i + 1], bins[i + 2]
        rise = (k - lo) / (c - lo)
        fall = (hi - k) / (hi - c)
        weights[i] = np.clip(np.minimum(rise, fall), 0.0, None)
    return MelFilterBank(weights, bins, sample_rate, n_fft)


def dct_matrix(n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis as an (n_in, n_in) matrix, rows = coefficients."""
    k = np.arange(n_in)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def _framed_power(buf: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    x = buf.samples
    if not np.all(np.isfinite(x)):
        raise ValueError("audio contains NaN or Inf samples")
    cfg.validate_for_rate(buf.sample_rate)
    frame_len = cfg.frame_length(buf.sample_rate)
    hop = cfg.hop_length(buf.sample_rate)
    frames = frame_signal(pre_emphasize(x, cfg.preemphasis), frame_len, hop)
    if frames.shape[0] == 0:
        raise InsufficientAudioError(
            f"audio too short: {len(buf)} samples cannot fill one {frame_len}-sample frame"
        )
    return power_spectrum(hamming_window(frames), cfg.n_fft)


def filterbank_energies(
    buf: AudioBuffer, cfg: MfccConfig, bank: MelFilterBank | None = None
) -> np.ndarray:
    """Per-frame Mel filterbank energies (before the log), shape (T, n_mels)."""
    cfg.validate_for_rate(buf.sample_rate)
    if bank is None:
        bank = build_mel_filterbank(cfg.n_mels, cfg.n_fft, buf.sample_rate, cfg.fmin, cfg.fmax)
    return bank.apply(_framed_power(buf, cfg))


def extract_mfcc(
    buf: AudioBuffer,
    cfg: MfccConfig | None = None,
    log_floor: float | None = LOG_FLOOR,
    bank: MelFilterBank | None = None,
) -> np.ndarray:
    """MFCC matrix of shape (T, cfg.n_coeffs), rows in time order.

    ``log_floor=None`` disables the clamp (silent frames then give -inf).
    """
    cfg = cfg or MfccConfig()
    energies = filterbank_energies(buf, cfg, bank)
    if log_floor is not None:
        energies = np.maximum(energies, log_floor)
    with np.errstate(divide="ignore"):
        log_e = np.log(energies)
    ceps = log_e @ dct_matrix(cfg.n_mels).T
    return ceps[:, 1 : cfg.n_coeffs + 1]


def as_features(X, dim: int | None = None) -> np.ndarray:
    """Validate and return a 2-D float64 feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: features have D={X.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite entries")
    return X
