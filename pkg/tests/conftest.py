import io
import time

import numpy as np
import pytest
from hypothesis import settings

from voxid.config import EngineConfig
from voxid.cli import cmd_synth_corpus
from voxid.corpus import MANIFEST_NAME
from voxid.evaluate import Corpus

settings.register_profile("ci", derandomize=True, print_blob=True)
settings.load_profile("ci")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class BuiltCorpus:
    """The seed-42 acceptance corpus plus the wall time spent building it."""

    def __init__(self, root):
        t0 = time.perf_counter()
        cmd_synth_corpus(root, 8, 10, 42, 8.0, out=io.StringIO())
        self.manifest = root / MANIFEST_NAME
        self.synth_seconds = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.corpus = Corpus(self.manifest, EngineConfig(seed=42))
        self.corpus.warm()
        self.load_seconds = time.perf_counter() - t0

    @property
    def build_seconds(self):
        return self.synth_seconds + self.load_seconds


@pytest.fixture(scope="session")
def corpus42(tmp_path_factory):
    return BuiltCorpus(tmp_path_factory.mktemp("corpus42"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}")
