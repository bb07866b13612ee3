"""voxid command line.

Exit codes: 0 success / accepted, 1 usage error, 2 data error, 3 open-set reject.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import AudioError, load_for_features
from .config import EngineConfig, load_config
from .corpus import SynthSettings, synth_corpus
from .evaluate import evaluate, make_grid
from .features import InsufficientAudioError, extract_mfcc
from .registry import (
    Backend,
    EnrollStatus,
    NoTrainedModelsError,
    Registry,
    RegistryError,
    export_json,
    load_registry,
    save_registry,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REJECT = 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _backend_list(text: str) -> list[Backend]:
    return [Backend(t.strip().lower()) for t in text.split(",") if t.strip()]


def engine_config(args) -> EngineConfig:
    cfg = load_config(args.config) if args.config else EngineConfig()
    overrides = {"seed": args.seed}
    if args.command == "enroll":
        overrides.update(vq_k=args.k, gmm_m=args.m, em_max_iter=args.iters)
    return cfg.with_overrides(**overrides)


def file_features(path: str | Path, cfg: EngineConfig):
    try:
        buf = load_for_features(path, cfg.sample_rate)
        return extract_mfcc(buf, cfg.mfcc)
    except InsufficientAudioError as exc:
        raise DataError(f"{path}: insufficient data: {exc}") from None
    except (OSError, AudioError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _open_registry(path: str | Path, cfg: EngineConfig, create: bool) -> Registry:
    p = Path(path)
    if not p.exists():
        if create:
            return Registry(cfg.mfcc.n_coeffs)
        raise DataError(f"registry not found: {p}")
    try:
        reg = load_registry(p)
    except RegistryError as exc:
        raise DataError(f"{p}: {exc}") from None
    if reg.dim != cfg.mfcc.n_coeffs:
        raise DataError(f"{p}: registry holds D={reg.dim} features, config produces D={cfg.mfcc.n_coeffs}")
    return reg


def cmd_enroll(registry_path, speaker_id: str, wav_paths: Sequence, cfg: EngineConfig, out=None) -> int:
    out = out or sys.stdout
    reg = _open_registry(registry_path, cfg, create=True)
    feats = [file_features(p, cfg) for p in wav_paths]
    X = np.vstack(feats)
    before = reg[speaker_id].n_frames if speaker_id in reg else 0
    result = reg.enroll(speaker_id, X, cfg.train_config(), utterances=len(wav_paths))
    save_registry(reg, registry_path)
    rec = result.record
    print(f"{speaker_id}: +{rec.n_frames - before} frames (total {rec.n_frames})", file=out)
    print(f"  codebook: {'K=%d trained' % rec.codebook.k if rec.codebook else 'absent'}", file=out)
    print(f"  gmm: {'M=%d trained' % rec.gmm.m if rec.gmm else 'absent'}", file=out)
    if result.status is EnrollStatus.INSUFFICIENT:
        for msg in result.messages:
            print(f"  insufficient data: {msg}", file=out)
        return EXIT_DATA
    return EXIT_OK


def cmd_identify(
    registry_path, wav_path, backend: Backend | str, threshold: float | None, cfg: EngineConfig, out=None
) -> int:
    out = out or sys.stdout
    reg = _open_registry(registry_path, cfg, create=False)
    X = file_features(wav_path, cfg)
    try:
        result = reg.identify(X, backend, threshold)
    except NoTrainedModelsError as exc:
        raise DataError(str(exc)) from None
    for sid, score in result.ranked_scores:
        print(f"{sid}\t{score:.6f}", file=out)
    print(f"decision: {result.decision}", file=out)
    return EXIT_OK if result.accepted else EXIT_REJECT


def cmd_evaluate(
    manifest,
    cfg: EngineConfig,
    backends: Sequence[Backend],
    ks: Sequence[int],
    ms: Sequence[int],
    iters: Sequence[int],
    train_caps: Sequence[float | None] = (None,),
    csv_path=None,
    jobs: int = 1,
    out=None,
):
    out = out or sys.stdout
    grid = make_grid(backends, ks, ms, iters, train_caps)
    try:
        report = evaluate(manifest, grid, cfg, jobs=jobs)
    except (OSError, AudioError, ValueError) as exc:
        raise DataError(str(exc)) from None
    out.write(report.to_table())
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv())
    return report


def cmd_synth_corpus(out_dir, n_speakers: int, utterances: int, seed: int, seconds: float, out=None) -> int:
    out = out or sys.stdout
    manifest = synth_corpus(out_dir, n_speakers, utterances, seed, SynthSettings(utterance_seconds=seconds))
    print(f"wrote {n_speakers * utterances} utterances, manifest {manifest}", file=out)
    return EXIT_OK


def cmd_inspect(registry_path, json_path=None, out=None) -> int:
    out = out or sys.stdout
    try:
        reg = load_registry(registry_path)
    except OSError as exc:
        raise DataError(str(exc)) from None
    except RegistryError as exc:
        raise DataError(f"{registry_path}: {exc}") from None
    print(f"registry {registry_path}: D={reg.dim}, {len(reg)} speakers", file=out)
    for sid, rec in sorted(reg.speakers.items()):
        cb = f"K={rec.codebook.k}" if rec.codebook else "-"
        gm = f"M={rec.gmm.m}" if rec.gmm else "-"
        print(f"  {sid}\tframes={rec.n_frames}\tcodebook={cb}\tgmm={gm}", file=out)
    if json_path:
        export_json(reg, json_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="voxid", description="Text-independent speaker identification (MFCC + VQ/GMM).")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("enroll", parents=[common], help="add utterances for a speaker and retrain")
    e.add_argument("--registry", required=True)
    e.add_argument("--k", type=int)
    e.add_argument("--m", type=int)
    e.add_argument("--iters", type=int)
    e.add_argument("speaker")
    e.add_argument("wavs", nargs="+")

    i = sub.add_parser("identify", parents=[common], help="rank enrolled speakers for one utterance")
    i.add_argument("--registry", required=True)
    i.add_argument("--backend", type=Backend, choices=list(Backend), default=Backend.GMM)
    i.add_argument("--threshold", type=float)
    i.add_argument("wav")

    v = sub.add_parser("evaluate", parents=[common], help="closed-set identification rates over a grid")
    v.add_argument("manifest")
    v.add_argument("--backend", type=_backend_list, default=[Backend.VQ, Backend.GMM], help="e.g. vq,gmm")
    v.add_argument("--k", type=_int_list, help="codebook sizes, e.g. 8,16,32")
    v.add_argument("--m", type=_int_list, help="mixture sizes, e.g. 2,4")
    v.add_argument("--iters", type=_int_list, help="EM iteration caps, e.g. 6,8,10")
    v.add_argument("--train-seconds", type=_float_list, help="per-speaker train duration caps")
    v.add_argument("--csv")
    v.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("synth-corpus", parents=[common], help="generate a synthetic labelled corpus")
    s.add_argument("out_dir")
    s.add_argument("--speakers", type=int, default=8)
    s.add_argument("--utterances", type=int, default=10)
    s.add_argument("--seconds", type=float, default=SynthSettings.utterance_seconds)

    n = sub.add_parser("inspect", parents=[common], help="list a registry's speakers and model shapes")
    n.add_argument("--registry", required=True)
    n.add_argument("--json", help="also write a JSON export here")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = engine_config(args)
    except (OSError, ValueError) as exc:
        print(f"voxid: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "enroll":
            return cmd_enroll(args.registry, args.speaker, args.wavs, cfg)
        if args.command == "identify":
            return cmd_identify(args.registry, args.wav, args.backend, args.threshold, cfg)
        if args.command == "evaluate":
            cmd_evaluate(
                args.manifest,
                cfg,
                args.backend,
                args.k or [cfg.vq_k],
                args.m or [cfg.gmm_m],
                args.iters or [cfg.em_max_iter],
                args.train_seconds or [None],
                args.csv,
                args.jobs,
            )
            return EXIT_OK
        if args.command == "synth-corpus":
            seed = args.seed if args.seed is not None else cfg.seed
            return cmd_synth_corpus(args.out_dir, args.speakers, args.utterances, seed, args.seconds)
        if args.command == "inspect":
            return cmd_inspect(args.registry, args.json)
    except DataError as exc:
        print(f"voxid: {exc}", file=sys.stderr)
        return EXIT_DATA
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
