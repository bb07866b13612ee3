"""Synthetic multi-speaker corpus and manifest handling.

Each synthetic speaker owns a pitch and 3-5 "sounds"; a sound is a harmonic
series on the speaker's pitch shaped by a formant envelope. An utterance is a
chain of short segments, each voicing one sound drawn from a subset of the
speaker's sounds, with per-utterance pitch/formant jitter (a crude stand-in
for session variability) and additive white noise.

Manifest format: one line per utterance, ``<speaker_id>\\t<split>\\t<wav_path>``;
relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio_io import CANONICAL_RATE, write_wav

MANIFEST_NAME = "manifest.tsv"
TRAIN, TEST = "train", "test"


@dataclass(frozen=True)
class VoiceParams:
    f0: float
    formants: np.ndarray  # (n_sounds, 4) centre frequencies in Hz
    bandwidths: np.ndarray  # (n_sounds, 4)
    gains: np.ndarray  # (n_sounds, 4)
    sounds_per_utterance: int

    @property
    def n_sounds(self) -> int:
        return self.formants.shape[0]


@dataclass(frozen=True)
class SynthSettings:
    sample_rate: int = CANONICAL_RATE
    utterance_seconds: float = 8.0
    pitch_jitter: float = 0.06
    formant_jitter: float = 0.05
    snr_db: tuple = (15.0, 25.0)
    segment_ms: tuple = (80.0, 250.0)


class ManifestEntry(NamedTuple):
    speaker_id: str
    split: str
    path: Path


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32 & 0xFFFFFFFF, *path])


def speaker_voice(seed: int, index: int) -> VoiceParams:
    rng = _rng(seed, index)
    f0 = rng.uniform(90.0, 240.0)
    n = int(rng.integers(3, 6))
    lo = np.array([250.0, 850.0, 2300.0, 3300.0])
    hi = np.array([900.0, 2500.0, 3400.0, 4500.0])
    formants = rng.uniform(lo, hi, size=(n, 4))
    bandwidths = rng.uniform(60.0, 200.0, size=(n, 4))
    gains = rng.uniform(0.3, 1.0, size=(n, 4)) * np.array([1.0, 0.7, 0.4, 0.25])
    return VoiceParams(f0, formants, bandwidths, gains, max(2, n - 1))


def _harmonic_amplitudes(freqs, formants, bandwidths, gains) -> np.ndarray:
    env = np.zeros_like(freqs)
    for F, B, g in zip(formants, bandwidths, gains):
        env += g / (1.0 + ((freqs - F) / (B / 2.0)) ** 2)
    return env


def synth_utterance(
    voice: VoiceParams, rng: np.random.Generator, settings: SynthSettings = SynthSettings()
) -> np.ndarray:
    sr = settings.sample_rate
    n_total = int(round(settings.utterance_seconds * sr))
    f0 = voice.f0 * (1.0 + rng.uniform(-settings.pitch_jitter, settings.pitch_jitter))
    warp = 1.0 + rng.uniform(-settings.formant_jitter, settings.formant_jitter)
    subset = rng.choice(voice.n_sounds, size=voice.sounds_per_utterance, replace=False)

    out = np.zeros(n_total)
    ramp = int(0.01 * sr)
    pos = 0
    while pos < n_total:
        seg = int(rng.uniform(*settings.segment_ms) * sr / 1000.0)
        seg = min(seg, n_total - pos)
        s = subset[rng.integers(len(subset))]
        seg_f0 = f0 * (1.0 + rng.normal(0.0, 0.01))
        n_harm = int((sr / 2 - 200.0) // seg_f0)
        freqs = seg_f0 * np.arange(1, n_harm + 1)
        amps = _harmonic_amplitudes(
            freqs, voice.formants[s] * warp, voice.bandwidths[s], voice.gains[s]
        ) / np.arange(1, n_harm + 1) ** 0.5
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harm)
        t = np.arange(seg) / sr
        wave = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).T @ amps
        env = np.ones(seg)
        r = min(ramp, seg // 2)
        if r:
            env[:r] = np.linspace(0.0, 1.0, r)
            env[seg - r :] = np.linspace(1.0, 0.0, r)
        out[pos : pos + seg] = wave * env
        pos += seg

    signal_power = np.mean(out**2)
    snr = rng.uniform(*settings.snr_db)
    out += rng.normal(0.0, np.sqrt(signal_power / 10 ** (snr / 10.0)), size=n_total)
    return 0.5 * out / np.max(np.abs(out))


def n_test_utterances(n: int) -> int:
    if n < 2:
        return 0
    return max(1, int(round(0.2 * n)))


def synth_corpus(
    out_dir: str | os.PathLike,
    n_speakers: int = 8,
    utterances_per_speaker: int = 10,
    seed: int = 42,
    settings: SynthSettings = SynthSettings(),
) -> Path:
    """Write a corpus of 16-bit WAV files plus ``manifest.tsv``; returns the
    manifest path. The last 20% of each speaker's utterances form the test
    split."""
    if n_speakers < 1 or utterances_per_speaker < 1:
        raise ValueError("need at least one speaker and one utterance")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(n_speakers)))
    n_test = n_test_utterances(utterances_per_speaker)
    lines = []
    for i in range(n_speakers):
        sid = f"spk{i + 1:0{width}d}"
        voice = speaker_voice(seed, i)
        for u in range(utterances_per_speaker):
            audio = synth_utterance(voice, _rng(seed, i, u + 1), settings)
            name = f"{sid}_{u + 1:03d}.wav"
            write_wav(out / name, audio, settings.sample_rate)
            split = TEST if u >= utterances_per_speaker - n_test else TRAIN
            lines.append(f"{sid}\t{split}\t{name}\n")
    manifest = out / MANIFEST_NAME
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        sid, split, wav = parts
        if split not in (TRAIN, TEST):
            raise ValueError(f"{path}:{lineno}: split must be 'train' or 'test', got {split!r}")
        wav_path = Path(wav)
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        entries.append(ManifestEntry(sid, split, wav_path))
    return entries
