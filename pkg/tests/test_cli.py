import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from voxid.audio_io import write_wav
from voxid.cli import main
from voxid.config import EngineConfig, dump_config, load_config, parse_config
from voxid.corpus import SynthSettings, n_test_utterances, read_manifest, synth_corpus
from voxid.evaluate import CSV_COLUMNS, Corpus, evaluate, make_grid
from voxid.registry import load_registry


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return synth_corpus(out, n_speakers=3, utterances_per_speaker=5, seed=7, settings=SynthSettings(utterance_seconds=2.0))


def wavs_of(manifest, sid, split="train"):
    return [str(e.path) for e in read_manifest(manifest) if e.speaker_id == sid and e.split == split]


@pytest.fixture
def enrolled(tmp_path, small_corpus):
    reg = tmp_path / "reg.bin"
    for sid in ("spk01", "spk02"):
        assert main(["enroll", "--registry", str(reg), "--k", "8", "--m", "2", sid, *wavs_of(small_corpus, sid)]) == 0
    return reg


class TestEnroll:
    def test_three_wavs(self, tmp_path, small_corpus, capsys):
        reg = tmp_path / "r.bin"
        files = wavs_of(small_corpus, "spk01")[:3]
        assert main(["enroll", "--registry", str(reg), "spk01", *files]) == 0
        rec = load_registry(reg)["spk01"]
        assert rec.codebook.k == 16 and rec.gmm.m == 4 and rec.n_frames == 3 * 198
        assert "K=16 trained" in capsys.readouterr().out

    def test_too_short_file(self, tmp_path, capsys):
        short = tmp_path / "short.wav"
        write_wav(short, np.zeros(160), 16000)
        assert main(["enroll", "--registry", str(tmp_path / "r.bin"), "x", str(short)]) == 2
        assert "insufficient data" in capsys.readouterr().err

    def test_few_frames_reports_insufficient(self, tmp_path, capsys):
        w = tmp_path / "a.wav"
        write_wav(w, np.random.default_rng(0).uniform(-0.3, 0.3, 2000), 16000)
        reg = tmp_path / "r.bin"
        assert main(["enroll", "--registry", str(reg), "x", str(w)]) == 2
        assert "codebook: absent" in capsys.readouterr().out
        assert load_registry(reg)["x"].codebook is None

    def test_reenroll_grows(self, tmp_path, small_corpus):
        reg = tmp_path / "r.bin"
        files = wavs_of(small_corpus, "spk02")
        main(["enroll", "--registry", str(reg), "spk02", files[0]])
        n1 = load_registry(reg)["spk02"].n_frames
        main(["enroll", "--registry", str(reg), "spk02", files[1]])
        assert load_registry(reg)["spk02"].n_frames > n1

    def test_missing_wav(self, tmp_path):
        assert main(["enroll", "--registry", str(tmp_path / "r.bin"), "x", str(tmp_path / "nope.wav")]) == 2


class TestIdentify:
    @pytest.mark.parametrize("backend", ["vq", "gmm"])
    def test_ranked_output(self, enrolled, small_corpus, capsys, backend):
        probe = wavs_of(small_corpus, "spk02", "test")[0]
        assert main(["identify", "--registry", str(enrolled), "--backend", backend, probe]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3 and lines[-1] == "decision: spk02"
        assert lines[0].startswith("spk02\t")
        float(lines[1].split("\t")[1])

    def test_tight_threshold_rejects(self, enrolled, small_corpus, capsys):
        probe = wavs_of(small_corpus, "spk01", "test")[0]
        assert main(["identify", "--registry", str(enrolled), "--backend", "vq", "--threshold", "0", probe]) == 3
        assert capsys.readouterr().out.strip().endswith("decision: unknown")

    def test_missing_registry(self, tmp_path, small_corpus):
        probe = wavs_of(small_corpus, "spk01", "test")[0]
        assert main(["identify", "--registry", str(tmp_path / "none.bin"), probe]) == 2

    def test_corrupt_registry(self, enrolled, small_corpus, capsys):
        data = bytearray(enrolled.read_bytes())
        data[40] ^= 0xFF
        enrolled.write_bytes(bytes(data))
        assert main(["identify", "--registry", str(enrolled), wavs_of(small_corpus, "spk01", "test")[0]]) == 2
        assert "checksum" in capsys.readouterr().err


class TestUsage:
    def test_usage_errors_exit_1(self, capsys):
        for argv in ([], ["bogus"], ["identify"], ["identify", "--registry", "r", "--backend", "svm", "x.wav"]):
            with pytest.raises(SystemExit) as exc:
                main(argv)
            assert exc.value.code == 1

    def test_bad_config_exit_1(self, tmp_path, small_corpus):
        conf = tmp_path / "bad.conf"
        conf.write_text("colour = blue\n")
        assert main(["evaluate", "--config", str(conf), str(small_corpus)]) == 1


class TestEvaluate:
    def test_vq_k_sweep(self, small_corpus, tmp_path):
        out = tmp_path / "vq.csv"
        assert main(["evaluate", str(small_corpus), "--backend", "vq", "--k", "8,16,32", "--csv", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["k_or_m"] for r in rows] == ["8", "16", "32"]
        assert all(r["backend"] == "vq" and r["iterations"] == "100" for r in rows)

    def test_gmm_iter_sweep(self, small_corpus, tmp_path):
        out = tmp_path / "gmm.csv"
        argv = ["evaluate", str(small_corpus), "--backend", "gmm", "--m", "4", "--iters", "6,8,10", "--csv", str(out)]
        assert main(argv) == 0
        rows = list(csv.DictReader(out.open()))
        assert [(r["k_or_m"], r["iterations"]) for r in rows] == [("4", "6"), ("4", "8"), ("4", "10")]

    def test_csv_header_and_recount(self, small_corpus):
        report = evaluate(small_corpus, make_grid(["vq", "gmm"], [4], [2], [5]), EngineConfig())
        text = report.to_csv()
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        for row, parsed in zip(report.rows, csv.DictReader(io.StringIO(text))):
            assert int(parsed["trials"]) == len(row.decisions) == 3
            assert int(parsed["correct"]) == sum(t.decision == t.speaker_id for t in row.decisions)
            assert float(parsed["identification_rate"]) == pytest.approx(100 * row.correct / row.trials, abs=5e-5)
            assert parsed["test_seconds"] == "2.00" and parsed["train_seconds"] == "8.00"

    def test_train_cap(self, small_corpus):
        rows = evaluate(small_corpus, make_grid(["gmm"], [], [2], [4], [3.0, 5.5]), EngineConfig()).rows
        assert [r.train_seconds for r in rows] == [3.0, 5.5]

    def test_single_speaker_is_perfect(self, tmp_path):
        m = synth_corpus(tmp_path, 1, 3, seed=1, settings=SynthSettings(utterance_seconds=1.0))
        rows = evaluate(m, make_grid(["vq", "gmm"], [4], [2], [3]), EngineConfig()).rows
        assert [r.identification_rate for r in rows] == [100.0, 100.0]

    def test_manifest_errors(self, tmp_path, small_corpus):
        bad = tmp_path / "m.tsv"
        bad.write_text("spk01\tdev\ta.wav\n")
        with pytest.raises(ValueError, match="split"):
            read_manifest(bad)
        bad.write_text("spk01\ttrain\n")
        with pytest.raises(ValueError, match="3 tab-separated"):
            read_manifest(bad)
        bad.write_text(f"spk01\ttrain\t{tmp_path / 'gone.wav'}\n")
        assert main(["evaluate", str(bad)]) == 2
        only_train = tmp_path / "t.tsv"
        only_train.write_text("".join(f"spk01\ttrain\t{w}\n" for w in wavs_of(small_corpus, "spk01")))
        with pytest.raises(ValueError, match="no test utterances"):
            Corpus(only_train, EngineConfig())


class TestSynthCorpus:
    def test_default_shape(self, tmp_path):
        assert main(["synth-corpus", str(tmp_path), "--seconds", "0.5", "--seed", "3"]) == 0
        entries = read_manifest(tmp_path / "manifest.tsv")
        assert len(list(tmp_path.glob("*.wav"))) == 80
        assert sum(e.split == "train" for e in entries) == 64
        assert sum(e.split == "test" for e in entries) == 16
        assert len({e.speaker_id for e in entries}) == 8

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        s = SynthSettings(utterance_seconds=0.5)
        synth_corpus(a, 2, 3, seed=9, settings=s)
        synth_corpus(b, 2, 3, seed=9, settings=s)
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        assert all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
        synth_corpus(tmp_path / "c", 2, 3, seed=10, settings=s)
        assert (a / "spk01_001.wav").read_bytes() != (tmp_path / "c" / "spk01_001.wav").read_bytes()

    def test_one_utterance(self, tmp_path):
        m = synth_corpus(tmp_path, 1, 1, settings=SynthSettings(utterance_seconds=0.5))
        assert [e.split for e in read_manifest(m)] == ["train"]
        assert n_test_utterances(10) == 2 and n_test_utterances(2) == 1


class TestInspect:
    def test_listing_and_json(self, enrolled, tmp_path, capsys):
        out = tmp_path / "r.json"
        assert main(["inspect", "--registry", str(enrolled), "--json", str(out)]) == 0
        text = capsys.readouterr().out
        assert "2 speakers" in text and "codebook=K=8" in text and "gmm=M=2" in text
        assert [s["name"] for s in json.loads(out.read_text())["speakers"]] == ["spk01", "spk02"]

    def test_missing(self, tmp_path):
        assert main(["inspect", "--registry", str(tmp_path / "x.bin")]) == 2


class TestConfig:
    def test_parse_and_dump(self, tmp_path):
        cfg = parse_config("vq_k = 32\ngmm_m = 5  # comment\nframe_len_ms = 20\n")
        assert (cfg.vq_k, cfg.gmm_m, cfg.mfcc.frame_len_ms) == (32, 5, 20.0)
        p = tmp_path / "c.conf"
        p.write_text(dump_config(cfg))
        assert load_config(p) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("colour = blue\n")

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            parse_config("vq_k = 0\n")
        with pytest.raises(ValueError):
            parse_config("n_coeffs = 30\n")

    def test_cli_flags_override_file(self, tmp_path, small_corpus):
        conf = tmp_path / "c.conf"
        conf.write_text("vq_k = 4\ngmm_m = 3\n")
        reg = tmp_path / "r.bin"
        files = wavs_of(small_corpus, "spk01")[:1]
        assert main(["enroll", "--config", str(conf), "--registry", str(reg), "--k", "6", "spk01", *files]) == 0
        rec = load_registry(reg)["spk01"]
        assert rec.codebook.k == 6 and rec.gmm.m == 3
