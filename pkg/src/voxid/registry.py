"""Enrolled-speaker store with VQ and GMM models and a checksummed binary file.

Every enrollment appends the new frames to the speaker's accumulated
training set and retrains both models from scratch on the whole set, so
enrolling F1 then F2 yields exactly the models of enrolling F1 and F2
concatenated.

Binary layout (little-endian)::

    magic     8 bytes  b"VOXID1\\0\\0"
    version   u32
    dim       u32      feature dimension D
    count     u32      number of speakers
    per speaker, sorted by id:
      name      u32 byte length + UTF-8
      frames    u32 T, then T*D f64 row-major
      flags     u8     bit 0: codebook present, bit 1: GMM present
      codebook  u32 K, then K*D f64            (if bit 0)
      gmm       u32 M, then M f64 weights,
                M*D f64 means, M*D f64 variances (if bit 1)
    crc32     u32 of every preceding byte
"""

from __future__ import annotations

import enum
import json
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import gmm as gmm_mod
from . import vq as vq_mod
from .features import as_features
from .gmm import GmmModel
from .vq import Codebook

MAGIC = b"VOXID1\x00\x00"
FORMAT_VERSION = 1
UNKNOWN = "unknown"

_HAS_CODEBOOK = 0x01
_HAS_GMM = 0x02


class RegistryError(Exception):
    pass


class NoTrainedModelsError(RegistryError):
    pass


class RegistryFileError(RegistryError):
    """The file is not a registry at all (bad magic)."""


class VersionMismatchError(RegistryFileError):
    pass


class ChecksumError(RegistryFileError):
    pass


class TruncatedFileError(RegistryFileError):
    pass


class Backend(str, enum.Enum):
    VQ = "vq"
    GMM = "gmm"


class EnrollStatus(str, enum.Enum):
    TRAINED = "trained"
    INSUFFICIENT = "insufficient data"


@dataclass(frozen=True)
class TrainConfig:
    k: int = vq_mod.DEFAULT_K
    m: int = gmm_mod.DEFAULT_M
    seed: int = 42
    em_max_iter: int = gmm_mod.DEFAULT_MAX_ITER
    em_tol: float = gmm_mod.DEFAULT_TOL
    kmeans_max_iter: int = vq_mod.DEFAULT_MAX_ITER


@dataclass(frozen=True, eq=False)
class SpeakerRecord:
    speaker_id: str
    features: np.ndarray
    codebook: Codebook | None = None
    gmm: GmmModel | None = None
    enrolled_utterances: int = 0
    last_trained: float | None = field(default=None, compare=False)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


class EnrollResult(NamedTuple):
    record: SpeakerRecord
    status: EnrollStatus
    messages: tuple


class IdentificationResult(NamedTuple):
    decision: str
    backend: Backend
    ranked_scores: list
    accepted: bool


def train_models(
    features: np.ndarray, cfg: TrainConfig
) -> tuple[Codebook | None, GmmModel | None, list[str]]:
    """Fit a codebook and a GMM on ``features``; a model whose cluster count
    exceeds the available (distinct) frames is left as None."""
    messages = []
    distinct = np.unique(features, axis=0).shape[0] if features.shape[0] else 0
    codebook = None
    if distinct >= cfg.k:
        codebook = vq_mod.kmeans_fit(features, cfg.k, cfg.seed, cfg.kmeans_max_iter)
    else:
        messages.append(f"codebook needs {cfg.k} distinct frames, have {distinct}")
    model = None
    if distinct >= cfg.m:
        model, _ = gmm_mod.em_fit(features, cfg.m, cfg.seed, cfg.em_max_iter, cfg.em_tol)
    else:
        messages.append(f"GMM needs {cfg.m} distinct frames, have {distinct}")
    return codebook, model, messages


class Registry:
    """Named speakers sharing one feature dimension.

    Enrollment is serialised by a lock; identification reads a snapshot of
    the speaker table and may run concurrently with it.
    """

    def __init__(self, dim: int = 16):
        if dim < 1:
            raise ValueError("feature dimension must be >= 1")
        self.dim = int(dim)
        self._speakers: dict[str, SpeakerRecord] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._speakers)

    def __contains__(self, speaker_id: str) -> bool:
        return speaker_id in self._speakers

    def __getitem__(self, speaker_id: str) -> SpeakerRecord:
        return self._speakers[speaker_id]

    @property
    def speakers(self) -> Mapping[str, SpeakerRecord]:
        return dict(self._speakers)

    def enroll(
        self, speaker_id: str, features, cfg: TrainConfig | None = None, utterances: int = 1
    ) -> EnrollResult:
        if not speaker_id:
            raise ValueError("speaker_id must be non-empty")
        cfg = cfg or TrainConfig()
        F = as_features(features, dim=self.dim)
        if F.shape[0] == 0:
            raise ValueError("cannot enroll an empty feature matrix")
        with self._lock:
            prev = self._speakers.get(speaker_id)
            if prev is None:
                acc = F.copy()
                count = utterances
            else:
                acc = np.vstack([prev.features, F])
                count = prev.enrolled_utterances + utterances
            acc.setflags(write=False)
            codebook, model, messages = train_models(acc, cfg)
            record = SpeakerRecord(speaker_id, acc, codebook, model, count, time.time())
            self._speakers[speaker_id] = record
        status = EnrollStatus.TRAINED if not messages else EnrollStatus.INSUFFICIENT
        return EnrollResult(record, status, tuple(messages))

    def retrain(self, cfg: TrainConfig) -> None:
        """Refit every speaker's models from its accumulated frames."""
        with self._lock:
            for sid, rec in list(self._speakers.items()):
                codebook, model, _ = train_models(rec.features, cfg)
                self._speakers[sid] = replace(
                    rec, codebook=codebook, gmm=model, last_trained=time.time()
                )

    def codebooks(self) -> dict[str, Codebook]:
        return {s: r.codebook for s, r in self._speakers.items() if r.codebook is not None}

    def gmms(self) -> dict[str, GmmModel]:
        return {s: r.gmm for s, r in self._speakers.items() if r.gmm is not None}

    def identify(
        self, features, backend: Backend | str = Backend.GMM, threshold: float | None = None
    ) -> IdentificationResult:
        """Closed-set decision, or open-set when ``threshold`` is given: VQ
        accepts if the best distortion is <= threshold, GMM if the best average
        log-likelihood is >= threshold."""
        backend = Backend(backend)
        X = as_features(features, dim=self.dim)
        if backend is Backend.VQ:
            models = self.codebooks()
            if not models:
                raise NoTrainedModelsError("no trained models for backend vq")
            ranked = vq_mod.vq_identify(X, models)
            best = ranked[0].distortion
            accepted = threshold is None or best <= threshold
        else:
            models = self.gmms()
            if not models:
                raise NoTrainedModelsError("no trained models for backend gmm")
            ranked = gmm_mod.gmm_identify(X, models)
            best = ranked[0].log_likelihood
            accepted = threshold is None or best >= threshold
        decision = ranked[0].speaker_id if accepted else UNKNOWN
        return IdentificationResult(decision, backend, ranked, accepted)

    def to_json_dict(self) -> dict:
        """Human-readable export using the binary format's field names."""
        out = {"format_version": FORMAT_VERSION, "dim": self.dim, "speakers": []}
        for sid in sorted(self._speakers):
            r = self._speakers[sid]
            entry = {
                "name": sid,
                "enrolled_utterances": r.enrolled_utterances,
                "last_trained": r.last_trained,
                "frames": r.features.tolist(),
                "codebook": None,
                "gmm": None,
            }
            if r.codebook is not None:
                entry["codebook"] = {"k": r.codebook.k, "centroids": r.codebook.centroids.tolist()}
            if r.gmm is not None:
                entry["gmm"] = {
                    "m": r.gmm.m,
                    "weights": r.gmm.weights.tolist(),
                    "means": r.gmm.means.tolist(),
                    "variances": r.gmm.variances.tolist(),
                }
            out["speakers"].append(entry)
        return out


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(registry: Registry) -> bytes:
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, registry.dim, len(registry))]
    for sid in sorted(registry._speakers):
        r = registry._speakers[sid]
        name = sid.encode("utf-8")
        parts.append(struct.pack("<I", len(name)) + name)
        parts.append(struct.pack("<I", r.n_frames) + _f64(r.features))
        flags = (_HAS_CODEBOOK if r.codebook is not None else 0) | (_HAS_GMM if r.gmm is not None else 0)
        parts.append(struct.pack("<B", flags))
        if r.codebook is not None:
            parts.append(struct.pack("<I", r.codebook.k) + _f64(r.codebook.centroids))
        if r.gmm is not None:
            g = r.gmm
            parts.append(struct.pack("<I", g.m) + _f64(g.weights) + _f64(g.means) + _f64(g.variances))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFileError(
                f"registry file truncated: need {n} bytes at offset {self.pos}, {self.end - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f64(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def loads(data: bytes) -> Registry:
    """Parse a registry image.

    Structural parsing runs first (running out of bytes is reported as
    truncation); the CRC is verified once the structure is known to fit.
    """
    if len(data) < len(MAGIC):
        raise TruncatedFileError("registry file shorter than its magic number")
    if data[: len(MAGIC)] != MAGIC:
        raise RegistryFileError("not a registry file (bad magic)")
    rd = _Reader(data, max(len(data) - 4, 0))
    rd.take(len(MAGIC))
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"registry format version {version}, expected {FORMAT_VERSION}")
    dim, count = rd.u32(), rd.u32()

    records = []
    for _ in range(count):
        name = rd.take(rd.u32())
        T = rd.u32()
        feats = rd.f64(T, dim)
        flags = rd.u8()
        codebook = model = None
        if flags & _HAS_CODEBOOK:
            codebook = rd.f64(rd.u32(), dim)
        if flags & _HAS_GMM:
            M = rd.u32()
            model = (rd.f64(M), rd.f64(M, dim), rd.f64(M, dim))
        records.append((name, feats, codebook, model))

    if rd.pos != rd.end:
        raise ChecksumError(f"{rd.end - rd.pos} unexpected bytes before the checksum")
    (stored,) = struct.unpack_from("<I", data, rd.end)
    if zlib.crc32(data[: rd.end]) != stored:
        raise ChecksumError("registry checksum mismatch")

    reg = Registry(dim)
    for name, feats, cb, mdl in records:
        try:
            sid = name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RegistryFileError(f"speaker name is not valid UTF-8: {exc}") from None
        feats.setflags(write=False)
        reg._speakers[sid] = SpeakerRecord(
            sid,
            feats,
            Codebook(cb, train_frames=feats.shape[0]) if cb is not None else None,
            GmmModel(*mdl) if mdl is not None else None,
            enrolled_utterances=1 if feats.shape[0] else 0,
        )
    return reg


def save_registry(registry: Registry, path: str | os.PathLike) -> None:
    data = dumps(registry)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_registry(path: str | os.PathLike) -> Registry:
    with open(path, "rb") as fh:
        return loads(fh.read())


def export_json(registry: Registry, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(registry.to_json_dict(), fh, indent=1)


def enroll(registry: Registry, speaker_id: str, features, cfg: TrainConfig | None = None) -> EnrollResult:
    return registry.enroll(speaker_id, features, cfg)


def identify(
    registry: Registry, features, backend: Backend | str = Backend.GMM, threshold: float | None = None
) -> IdentificationResult:
    return registry.identify(features, backend, threshold)


def ranked_pairs(result: IdentificationResult) -> Sequence[tuple[str, float]]:
    return [(s[0], float(s[1])) for s in result.ranked_scores]
