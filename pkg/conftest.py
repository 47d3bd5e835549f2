"""
Shared pytest fixtures for nuggetprobe
Everything here runs on the mock judge; no network access is needed.
"""

import threading
import time
from pathlib import Path

import pytest

from config import ExperimentConfig
from database.verdict_cache import VerdictCache
from fixture import gen_fixture, load_roundup_fixture, write_fixture
from judge import Judge, MockBackend, PromptLibrary
from pipeline import run_pipeline

PROMPT_DIR = Path(__file__).parent / 'prompts'


@pytest.fixture(scope='session')
def prompt_library():
    return PromptLibrary(PROMPT_DIR)


@pytest.fixture
def mock_judge(prompt_library):
    """Mock judge with an in-memory verdict cache"""
    return Judge(MockBackend(), prompt_library, cache=VerdictCache(), include_citation_context=True, concurrency=1)


class CountingBackend(MockBackend):
    """Mock judge that records the peak number of calls in flight at once"""

    def __init__(self):
        super().__init__()
        self.lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0

    def respond(self, template, bindings, payload):
        with self.lock:
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
        try:
            time.sleep(0.001)
            return super().respond(template, bindings, payload)
        finally:
            with self.lock:
                self.in_flight -= 1


@pytest.fixture
def counting_backend():
    return CountingBackend()


@pytest.fixture
def sentence_only_judge(prompt_library):
    """Mock judge that matches nuggets on the sentence alone"""
    return Judge(MockBackend(), prompt_library, include_citation_context=False)


@pytest.fixture(scope='session')
def synthetic():
    """(corpus, topics, gold banks) for seed 7, 3 topics, 30 documents"""
    return gen_fixture(seed=7, n_topics=3, n_docs=30)


@pytest.fixture(scope='session')
def roundup():
    return load_roundup_fixture()


@pytest.fixture
def fixture_files(tmp_path, synthetic):
    """The synthetic collection written to disk: {'corpus', 'topics', 'nuggets'} -> path"""
    corpus, topics, banks = synthetic
    return write_fixture(tmp_path / 'collection', corpus, topics, banks)


@pytest.fixture
def make_config():
    """Factory for mock-judge experiment configs that never touch the on-disk cache"""
    def factory(**overrides) -> ExperimentConfig:
        values = {
            'judge': 'mock',
            'cache_path': None,
            'prompt_dir': str(PROMPT_DIR),
            'concurrency': 1,
            'max_nuggets': 10,
            'depth': 20,
            'seed': 7,
            'include_citation_context': True,
        }
        if overrides.get('variant', '').startswith('gold') and 'nuggets' not in overrides:
            values['nuggets'] = 'gold_nuggets.json'
        values.update(overrides)
        return ExperimentConfig(**values)
    return factory


@pytest.fixture
def generate_run(prompt_library, synthetic, make_config):
    """Run the pipeline on the synthetic collection for one variant and length"""
    corpus, topics, banks = synthetic

    def factory(variant: str = 'base', length: str = 'short', judge: Judge = None, **overrides):
        judge = judge or Judge(MockBackend(), prompt_library, cache=VerdictCache())
        config = make_config(variant=variant, length=length, **overrides)
        run, results = run_pipeline(judge, topics, corpus, config, gold_banks=banks)
        assert all(r.status == 'ok' for r in results), [r.error for r in results]
        return run
    return factory
