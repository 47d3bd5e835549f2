#!/usr/bin/env python3
"""Tests for prompt templates, judge backends, verdicts and the verdict cache"""

import json
import logging
import os
import shutil
from pathlib import Path

import pytest
import requests

from collection import Nugget
from database.verdict_cache import VerdictCache, generate_verdict_key
from errors import BackendError, ConfigError, TemplateError, TransportError, VerdictParseError
from judge import (
    CITATION_SUPPORT, NUGGET_MATCH, TEMPLATE_NAMES,
    HttpBackend, Judge, MockBackend, PromptLibrary, PromptTemplate,
    build_judge, create_backend, parse_yes_no, render_messages, render_prompt,
)

PROMPT_DIR = Path(__file__).parent / 'prompts'

JOHNSON = Nugget(id='335-G6', question='How much did the court order Bayer to pay Dewayne Johnson?',
                 answers=('$289 million',))


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

def test_render_prompt_substitutes_placeholders():
    template = PromptTemplate(name='t', body='Q: {{question}} A: {{ answers }}')
    assert render_prompt(template, {'question': 'Who?', 'answers': 'Bayer'}) == 'Q: Who? A: Bayer'


def test_render_prompt_unbound_placeholder():
    template = PromptTemplate(name='t', body='{{question}} {{context}}')
    with pytest.raises(TemplateError) as excinfo:
        render_prompt(template, {'question': 'q'})
    assert excinfo.value.placeholder == 'context'


def test_render_prompt_does_not_reexpand_values():
    template = PromptTemplate(name='t', body='{{sentence}}')
    assert render_prompt(template, {'sentence': 'literal {{question}}'}) == 'literal {{question}}'


def test_render_messages_includes_system_message():
    template = PromptTemplate(name='t', body='{{x}}', system_message='You judge {{x}}.')
    messages = render_messages(template, {'x': 'y'})
    assert messages == [{'role': 'system', 'content': 'You judge y.'}, {'role': 'user', 'content': 'y'}]


def test_prompt_library_loads_all_templates(prompt_library):
    expected = {
        'nugget_ideation': {'title', 'problem_statement', 'background', 'documents', 'max_nuggets'},
        'sentence_extraction': {'question', 'answers', 'document'},
        'nugget_match': {'question', 'answers', 'sentence', 'context'},
        'citation_support': {'sentence', 'document'},
    }
    for name in TEMPLATE_NAMES:
        template = prompt_library.get(name)
        assert template.system_message
        assert set(template.placeholders) == expected[name]


def test_prompt_library_missing_template(tmp_path):
    with pytest.raises(ConfigError):
        PromptLibrary(tmp_path).get(NUGGET_MATCH)


def test_template_hash_tracks_body():
    a = PromptTemplate(name='t', body='one')
    b = PromptTemplate(name='t', body='two')
    assert a.template_hash != b.template_hash
    assert a.template_hash == PromptTemplate(name='t', body='one').template_hash


# ---------------------------------------------------------------------------
# Verdict parsing and mock rules
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('raw, decision', [
    ('yes', True), ('Yes.', True), ('  YES, the sentence answers it', True),
    ('no', False), ('No - nothing relevant', False), ('\nno\n', False),
])
def test_parse_yes_no(raw, decision):
    assert parse_yes_no(raw) is decision


@pytest.mark.parametrize('raw', ['', 'maybe', 'yesterday', 'The answer is yes'])
def test_parse_yes_no_rejects_other_output(raw):
    with pytest.raises(VerdictParseError) as excinfo:
        parse_yes_no(raw)
    assert excinfo.value.raw_response == raw


def test_mock_nugget_match_on_sentence(mock_judge):
    verdict = mock_judge.nugget_match('A jury ordered Bayer to pay Dewayne Johnson $289 million.', [], JOHNSON)
    assert verdict.decision is True
    assert verdict.backend_id == 'mock:rules-v1'


def test_mock_nugget_match_uses_context(mock_judge, roundup):
    corpus, _, _ = roundup
    sentence = 'A California jury ruled against Bayer.'
    assert not mock_judge.nugget_match(sentence, [], JOHNSON).decision
    assert mock_judge.nugget_match(sentence, [corpus.text_of('rt-002')], JOHNSON).decision


def test_mock_nugget_match_any_answer(mock_judge):
    nugget = Nugget(id='g3', question='What do the Roundup lawsuits allege?', answers=('non-Hodgkin lymphoma', 'cancer'))
    assert mock_judge.nugget_match('Plaintiffs say it causes cancer.', [], nugget).decision
    assert mock_judge.nugget_match('Plaintiffs blame NON HODGKIN lymphoma.', [], nugget).decision
    assert not mock_judge.nugget_match('Plaintiffs blame the weather.', [], nugget).decision


def test_mock_citation_support(mock_judge, roundup):
    corpus, _, _ = roundup
    sentence = ('Bayer has lost three Roundup cases where the complainant alleged that Glyphosate, '
                'a carcinogenic ingredient, was contained in Roundup.')
    assert mock_judge.citation_support(sentence, corpus.text_of('rt-002')).decision
    assert not mock_judge.citation_support(sentence, corpus.text_of('rt-007')).decision


def test_mock_citation_support_without_content_words(mock_judge):
    assert not mock_judge.citation_support('It was that.', 'It was that.').decision


def test_mock_citation_support_threshold(mock_judge):
    # two of four content words present
    assert mock_judge.citation_support('alpha bravo charlie delta', 'alpha bravo').decision
    assert not mock_judge.citation_support('alpha bravo charlie delta', 'alpha').decision


def test_mock_rejects_unknown_template():
    with pytest.raises(BackendError):
        MockBackend().respond(PromptTemplate(name='other', body=''), {}, {})


# ---------------------------------------------------------------------------
# Verdict cache
# ---------------------------------------------------------------------------

def test_cached_verdict_is_returned_on_second_call(mock_judge):
    first = mock_judge.nugget_match('Bayer paid $289 million.', [], JOHNSON)
    second = mock_judge.nugget_match('Bayer paid $289 million.', [], JOHNSON)

    assert first.from_cache is False
    assert second.from_cache is True
    assert second.decision == first.decision
    assert second.raw_response == first.raw_response
    assert mock_judge.cache.get_stats() == {'verdicts': 1, 'hits': 1, 'misses': 1}


def test_cache_key_ignores_nugget_id(mock_judge):
    renamed = Nugget(id='gold-335-G6', question=JOHNSON.question, answers=JOHNSON.answers)
    mock_judge.nugget_match('Bayer paid $289 million.', [], JOHNSON)
    assert mock_judge.nugget_match('Bayer paid $289 million.', [], renamed).from_cache


def test_cache_key_covers_every_input(mock_judge):
    mock_judge.citation_support('Bayer paid.', 'Bayer paid.')
    assert not mock_judge.citation_support('Bayer paid.', 'Bayer paid again.').from_cache
    assert not mock_judge.citation_support('Bayer paid!', 'Bayer paid.').from_cache


def test_cache_persists_across_instances(tmp_path, prompt_library):
    path = tmp_path / 'cache' / 'verdicts.jsonl'
    judge = Judge(MockBackend(), prompt_library, cache=VerdictCache(path))
    judge.citation_support('Bayer paid.', 'Bayer paid.')

    reopened = Judge(MockBackend(), prompt_library, cache=VerdictCache(path))
    assert len(reopened.cache) == 1
    assert reopened.citation_support('Bayer paid.', 'Bayer paid.').from_cache


def test_template_edit_invalidates_cache(tmp_path):
    prompt_dir = tmp_path / 'prompts'
    shutil.copytree(PROMPT_DIR, prompt_dir)
    cache = VerdictCache(tmp_path / 'verdicts.jsonl')

    Judge(MockBackend(), PromptLibrary(prompt_dir), cache=cache).citation_support('Bayer paid.', 'Bayer paid.')
    (prompt_dir / f"{CITATION_SUPPORT}.txt").write_text('Sentence: {{sentence}}\nDocument: {{document}}\nyes or no?')

    edited = Judge(MockBackend(), PromptLibrary(prompt_dir), cache=cache)
    assert not edited.citation_support('Bayer paid.', 'Bayer paid.').from_cache
    assert len(cache) == 2


def test_corrupt_cache_is_rebuilt(tmp_path, caplog):
    path = tmp_path / 'verdicts.jsonl'
    path.write_text('{"key": "k", "decision": true}\nnot json\n')

    with caplog.at_level(logging.WARNING):
        cache = VerdictCache(path)
    assert len(cache) == 0
    assert path.read_text() == ''
    assert any('corrupt' in record.message for record in caplog.records)


def test_generate_verdict_key():
    key = generate_verdict_key('mock:rules-v1', NUGGET_MATCH, 'abc', '["x"]')
    assert key == generate_verdict_key('mock:rules-v1', NUGGET_MATCH, 'abc', '["x"]')
    assert key != generate_verdict_key('http:llama', NUGGET_MATCH, 'abc', '["x"]')
    assert len(key) == 64


# ---------------------------------------------------------------------------
# HTTP backend (requests monkeypatched)
# ---------------------------------------------------------------------------

class FakeResponse:
    def __init__(self, status_code=200, content='yes', body=None):
        self.status_code = status_code
        self._body = body if body is not None else {'choices': [{'message': {'content': content}}]}
        self.text = json.dumps(self._body)

    def json(self):
        return self._body


def _http_judge(prompt_library, responses, calls):
    backend = HttpBackend('test-model', endpoint='http://judge.local/v1/chat/completions', api_key='secret',
                          max_retries=3, backoff_seconds=0, seed=7)
    replies = iter(responses)

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append({'url': url, 'json': json, 'headers': headers})
        reply = next(replies)
        if isinstance(reply, Exception):
            raise reply
        return reply

    backend.session.post = fake_post
    return Judge(backend, prompt_library)


def test_http_backend_request_and_reply(prompt_library):
    calls = []
    judge = _http_judge(prompt_library, [FakeResponse(content='Yes, it does.')], calls)
    verdict = judge.nugget_match('Bayer paid $289 million.', [], JOHNSON)

    assert verdict.decision is True
    assert verdict.backend_id == 'http:test-model'
    body = calls[0]['json']
    assert body['model'] == 'test-model'
    assert body['temperature'] == 0
    assert body['seed'] == 7
    assert body['messages'][0]['role'] == 'system'
    assert JOHNSON.question in body['messages'][-1]['content']
    assert calls[0]['headers']['Authorization'] == 'Bearer secret'


def test_http_backend_retries_transient_failures(prompt_library):
    calls = []
    judge = _http_judge(prompt_library, [
        FakeResponse(status_code=503),
        requests.ConnectionError('reset'),
        FakeResponse(content='no'),
    ], calls)

    assert judge.citation_support('Bayer paid.', 'Corn prices rose.').decision is False
    assert len(calls) == 3


def test_http_backend_gives_up_after_max_retries(prompt_library):
    calls = []
    judge = _http_judge(prompt_library, [FakeResponse(status_code=429)] * 3, calls)
    with pytest.raises(TransportError):
        judge.citation_support('Bayer paid.', 'Bayer paid.')
    assert len(calls) == 3


def test_http_backend_does_not_retry_client_errors(prompt_library):
    calls = []
    judge = _http_judge(prompt_library, [FakeResponse(status_code=400)], calls)
    with pytest.raises(BackendError) as excinfo:
        judge.citation_support('Bayer paid.', 'Bayer paid.')
    assert not isinstance(excinfo.value, TransportError)
    assert len(calls) == 1


def test_http_backend_unparseable_verdict(prompt_library):
    judge = _http_judge(prompt_library, [FakeResponse(content='Perhaps.')], [])
    with pytest.raises(VerdictParseError) as excinfo:
        judge.citation_support('Bayer paid.', 'Bayer paid.')
    assert excinfo.value.raw_response == 'Perhaps.'
    assert excinfo.value.exit_code == 2


def test_http_backend_malformed_body(prompt_library):
    judge = _http_judge(prompt_library, [FakeResponse(body={'unexpected': True})], [])
    with pytest.raises(BackendError):
        judge.citation_support('Bayer paid.', 'Bayer paid.')


def test_http_backend_requires_endpoint():
    with pytest.raises(ConfigError):
        HttpBackend('m', endpoint='')


def test_create_backend_unknown_kind():
    with pytest.raises(ConfigError):
        create_backend('telepathy')


def test_build_judge_mock(tmp_path):
    judge = build_judge('mock', prompt_dir=str(PROMPT_DIR), cache_path=str(tmp_path / 'v.jsonl'),
                        include_citation_context=False, concurrency=3)
    assert judge.backend_id == 'mock:rules-v1'
    assert judge.cache is not None
    assert judge.include_citation_context is False
    assert judge.concurrency == 3


def test_map_preserves_input_order(prompt_library):
    judge = Judge(MockBackend(), prompt_library, concurrency=4)
    assert judge.map(lambda x: x * x, list(range(50))) == [x * x for x in range(50)]


@pytest.mark.skipif(not os.getenv('RAGE_LLM_ENDPOINT'), reason='RAGE_LLM_ENDPOINT not set')
def test_live_endpoint_answers_yes_or_no():
    judge = build_judge('http', prompt_dir=str(PROMPT_DIR), cache_path=None)
    verdict = judge.nugget_match('A jury ordered Bayer to pay Dewayne Johnson $289 million.', [], JOHNSON)
    assert isinstance(verdict.decision, bool)


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))
