"""Closed-set evaluation over a labelled corpus, swept over a config grid.

Each grid point trains one model per speaker on that speaker's train split
(optionally capped to a number of seconds, taken from the utterances in
manifest order), then scores every test utterance against all speakers.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .audio_io import AudioBuffer, load_for_features
from .config import EngineConfig
from .corpus import TEST, TRAIN, read_manifest
from .features import build_mel_filterbank, extract_mfcc
from .gmm import em_fit, gmm_identify
from .registry import Backend
from .vq import DEFAULT_MAX_ITER as KMEANS_MAX_ITER
from .vq import kmeans_fit, vq_identify

CSV_COLUMNS = (
    "backend",
    "k_or_m",
    "iterations",
    "train_seconds",
    "test_seconds",
    "trials",
    "correct",
    "identification_rate",
)


class GridPoint(NamedTuple):
    backend: Backend
    k_or_m: int
    iterations: int
    train_cap: float | None  # seconds per speaker; None = whole train split


class Trial(NamedTuple):
    speaker_id: str
    utterance: str
    decision: str


@dataclass(frozen=True)
class EvalRow:
    backend: str
    k_or_m: int
    iterations: int
    train_seconds: float
    test_seconds: float
    trials: int
    correct: int
    identification_rate: float
    decisions: tuple = ()

    def csv_fields(self) -> list[str]:
        return [
            self.backend,
            str(self.k_or_m),
            str(self.iterations),
            f"{self.train_seconds:.2f}",
            f"{self.test_seconds:.2f}",
            str(self.trials),
            str(self.correct),
            f"{self.identification_rate:.4f}",
        ]


@dataclass(frozen=True)
class EvalReport:
    rows: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def to_table(self) -> str:
        header = ["backend", "K/M", "iters", "train s", "test s", "trials", "correct", "rate %"]
        body = [r.csv_fields() for r in self.rows]
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"


def make_grid(
    backends: Sequence[Backend | str],
    ks: Sequence[int],
    ms: Sequence[int],
    iters: Sequence[int],
    train_caps: Sequence[float | None] = (None,),
) -> list[GridPoint]:
    """Backend-major grid. VQ rows ignore ``iters`` (their iteration column
    reports the Lloyd iteration cap)."""
    grid = []
    for b in backends:
        b = Backend(b)
        if b is Backend.VQ:
            grid += [GridPoint(b, k, KMEANS_MAX_ITER, c) for k, c in itertools.product(ks, train_caps)]
        else:
            grid += [GridPoint(b, m, n, c) for m, n, c in itertools.product(ms, iters, train_caps)]
    return grid


class Corpus:
    """Decoded train/test audio for every speaker in a manifest, with a
    feature cache keyed by (utterance, sample count)."""

    def __init__(self, manifest: str | os.PathLike, cfg: EngineConfig):
        self.cfg = cfg
        self.bank = build_mel_filterbank(
            cfg.mfcc.n_mels, cfg.mfcc.n_fft, cfg.sample_rate, cfg.mfcc.fmin, cfg.mfcc.fmax
        )
        self.train: dict[str, list[tuple[str, AudioBuffer]]] = {}
        self.test: dict[str, list[tuple[str, AudioBuffer]]] = {}
        for e in read_manifest(manifest):
            if not e.path.exists():
                raise FileNotFoundError(f"manifest references missing file: {e.path}")
            target = self.train if e.split == TRAIN else self.test
            target.setdefault(e.speaker_id, []).append((str(e.path), load_for_features(e.path, cfg.sample_rate)))
        speakers = set(self.train) | set(self.test)
        for sid in sorted(speakers):
            if sid not in self.test:
                raise ValueError(f"speaker {sid!r} has no test utterances")
            if sid not in self.train:
                raise ValueError(f"speaker {sid!r} has no train utterances")
        self.speakers = sorted(speakers)
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def features(self, name: str, buf: AudioBuffer, n_samples: int | None = None) -> np.ndarray:
        n = len(buf) if n_samples is None else n_samples
        key = (name, n)
        if key not in self._cache:
            part = buf if n == len(buf) else AudioBuffer(buf.samples[:n], buf.sample_rate)
            self._cache[key] = extract_mfcc(part, self.cfg.mfcc, bank=self.bank)
        return self._cache[key]

    def train_features(self, sid: str, cap: float | None) -> tuple[np.ndarray, float]:
        """Concatenated train features, using at most ``cap`` seconds of audio."""
        min_len = self.cfg.mfcc.frame_length(self.cfg.sample_rate)
        budget = None if cap is None else int(round(cap * self.cfg.sample_rate))
        parts, used = [], 0
        for name, buf in self.train[sid]:
            n = len(buf) if budget is None else min(len(buf), budget - used)
            if n < min_len:
                break
            parts.append(self.features(name, buf, n))
            used += n
        if not parts:
            raise ValueError(f"speaker {sid!r}: train cap {cap} s leaves no usable audio")
        return np.vstack(parts), used / self.cfg.sample_rate

    def warm(self) -> None:
        """Extract every full-length utterance once (keeps threads off the cache writes)."""
        for table in (self.train, self.test):
            for utts in table.values():
                for name, buf in utts:
                    self.features(name, buf)


def evaluate_point(corpus: Corpus, point: GridPoint) -> EvalRow:
    cfg = corpus.cfg
    models = {}
    train_secs = []
    for sid in corpus.speakers:
        X, secs = corpus.train_features(sid, point.train_cap)
        train_secs.append(secs)
        if point.backend is Backend.VQ:
            models[sid] = kmeans_fit(X, point.k_or_m, cfg.seed, point.iterations)
        else:
            models[sid], _ = em_fit(X, point.k_or_m, cfg.seed, point.iterations, cfg.em_tol)

    trials = []
    test_secs = []
    for sid in corpus.speakers:
        for name, buf in corpus.test[sid]:
            Y = corpus.features(name, buf)
            test_secs.append(buf.duration)
            ranked = vq_identify(Y, models) if point.backend is Backend.VQ else gmm_identify(Y, models)
            trials.append(Trial(sid, name, ranked[0].speaker_id))

    correct = sum(t.decision == t.speaker_id for t in trials)
    return EvalRow(
        backend=point.backend.value,
        k_or_m=point.k_or_m,
        iterations=point.iterations,
        train_seconds=point.train_cap if point.train_cap is not None else float(np.mean(train_secs)),
        test_seconds=float(np.mean(test_secs)),
        trials=len(trials),
        correct=correct,
        identification_rate=100.0 * correct / len(trials),
        decisions=tuple(trials),
    )


def evaluate(
    manifest: str | os.PathLike | Corpus,
    grid: Iterable[GridPoint],
    cfg: EngineConfig | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Run every grid point; rows come back in grid order whatever ``jobs`` is."""
    corpus = manifest if isinstance(manifest, Corpus) else Corpus(manifest, cfg or EngineConfig())
    grid = list(grid)
    if jobs > 1:
        corpus.warm()
        for p in grid:  # capped partial utterances too
            for sid in corpus.speakers:
                corpus.train_features(sid, p.train_cap)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda p: evaluate_point(corpus, p), grid))
    else:
        rows = [evaluate_point(corpus, p) for p in grid]
    return EvalReport(tuple(rows))
