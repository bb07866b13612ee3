"""Engine configuration and its flat ``key = value`` file format.

Keys are the EngineConfig field names plus the MfccConfig field names, e.g.::

    # voxid.conf
    vq_k = 32
    gmm_m = 5
    frame_len_ms = 20
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .audio_io import CANONICAL_RATE
from .features import MfccConfig
from .gmm import DEFAULT_M, DEFAULT_MAX_ITER, DEFAULT_TOL
from .registry import TrainConfig
from .vq import DEFAULT_K

_SECTION = "voxid"


@dataclass(frozen=True)
class EngineConfig:
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    vq_k: int = DEFAULT_K
    gmm_m: int = DEFAULT_M
    em_max_iter: int = DEFAULT_MAX_ITER
    em_tol: float = DEFAULT_TOL
    seed: int = 42
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.vq_k < 1 or self.gmm_m < 1 or self.em_max_iter < 1:
            raise ValueError("vq_k, gmm_m and em_max_iter must be >= 1")
        if self.em_tol <= 0:
            raise ValueError("em_tol must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.mfcc.validate_for_rate(self.sample_rate)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            k=self.vq_k, m=self.gmm_m, seed=self.seed, em_max_iter=self.em_max_iter, em_tol=self.em_tol
        )

    def with_overrides(self, **kw) -> "EngineConfig":
        """Replace engine or MFCC fields by name; ``None`` values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        mfcc_names = {f.name for f in fields(MfccConfig)}
        mfcc_kw = {k: kw.pop(k) for k in list(kw) if k in mfcc_names}
        mfcc = replace(self.mfcc, **mfcc_kw) if mfcc_kw else self.mfcc
        return replace(self, mfcc=mfcc, **kw)

    def to_flat(self) -> dict:
        out = dict(self.mfcc.to_dict())
        for f in fields(self):
            if f.name != "mfcc":
                out[f.name] = getattr(self, f.name)
        return out


def _field_types() -> dict:
    types = {f.name: f.type for f in fields(MfccConfig)}
    types.update({f.name: f.type for f in fields(EngineConfig) if f.name != "mfcc"})
    return types


def parse_config(text: str, base: EngineConfig | None = None) -> EngineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(f"[{_SECTION}]\n" + text)
    types = _field_types()
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in types:
            raise ValueError(f"unknown config key: {key!r}")
        values[key] = int(raw) if types[key] == "int" else float(raw)
    return (base or EngineConfig()).with_overrides(**values)


def load_config(path: str | os.PathLike, base: EngineConfig | None = None) -> EngineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg: EngineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_flat().items())
