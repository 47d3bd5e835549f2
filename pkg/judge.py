#!/usr/bin/env python3
"""
LLM judge for nuggetprobe
Prompt templates, chat-completion backends (mock / http / groq), the two
boolean verdicts (nugget match, citation support) and verdict caching
"""

import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar, Union

import requests
from pydantic import BaseModel, ConfigDict

from collection import Corpus, Nugget
from config import Config
from database.verdict_cache import VerdictCache, generate_verdict_key
from errors import BackendError, ConfigError, TemplateError, TransportError, VerdictParseError
from textutil import STOPWORDS, contains_phrase, content_words, normalize, split_sentences, tokenize

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

NUGGET_IDEATION = 'nugget_ideation'
SENTENCE_EXTRACTION = 'sentence_extraction'
NUGGET_MATCH = 'nugget_match'
CITATION_SUPPORT = 'citation_support'
TEMPLATE_NAMES = (NUGGET_IDEATION, SENTENCE_EXTRACTION, NUGGET_MATCH, CITATION_SUPPORT)

CITATION_SUPPORT_THRESHOLD = 0.5
IDEATION_QUESTION = "What is reported about {term}?"
HEDGE_PREFIX = "Sources indicate that "

_PLACEHOLDER = re.compile(r'\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}')
_YES_NO = re.compile(r'^(yes|no)\b', re.IGNORECASE)


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    body: str
    system_message: Optional[str] = None

    @property
    def placeholders(self) -> List[str]:
        found = _PLACEHOLDER.findall(self.body) + _PLACEHOLDER.findall(self.system_message or '')
        return list(dict.fromkeys(found))

    @property
    def template_hash(self) -> str:
        digest = hashlib.sha256(f"{self.body}\x00{self.system_message or ''}".encode('utf-8'))
        return digest.hexdigest()[:16]


def _substitute(text: str, bindings: Dict[str, str], template_name: str) -> str:
    def replace(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise TemplateError(f"Template {template_name!r} has unbound placeholder {{{{{name}}}}}", placeholder=name)
        return str(bindings[name])

    # single pass: substituted values are never re-expanded
    return _PLACEHOLDER.sub(replace, text)


def render_prompt(template: PromptTemplate, bindings: Dict[str, str]) -> str:
    """
    Substitute every {{placeholder}} of the template body

    Args:
        template: Prompt template
        bindings: placeholder -> value

    Returns:
        Rendered text
    """
    return _substitute(template.body, bindings, template.name)


def render_messages(template: PromptTemplate, bindings: Dict[str, str]) -> List[Dict[str, str]]:
    """Chat messages for a template: optional system message, then the user prompt"""
    messages = []
    if template.system_message:
        messages.append({'role': 'system', 'content': _substitute(template.system_message, bindings, template.name)})
    messages.append({'role': 'user', 'content': render_prompt(template, bindings)})
    return messages


class PromptLibrary:
    """Loads `<name>.txt` (+ optional `<name>.system.txt`) from a prompt directory"""

    def __init__(self, prompt_dir: Union[str, Path, None] = None):
        self.prompt_dir = Path(prompt_dir or Config.PROMPT_DIR)
        self._templates: Dict[str, PromptTemplate] = {}

    def get(self, name: str) -> PromptTemplate:
        if name not in self._templates:
            body_path = self.prompt_dir / f"{name}.txt"
            if not body_path.exists():
                raise ConfigError(f"Prompt template not found: {body_path}")
            system_path = self.prompt_dir / f"{name}.system.txt"
            system_message = system_path.read_text(encoding='utf-8') if system_path.exists() else None
            self._templates[name] = PromptTemplate(
                name=name,
                body=body_path.read_text(encoding='utf-8'),
                system_message=system_message,
            )
        return self._templates[name]


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class JudgeBackend:
    """
    One model behind the judge

    respond() receives the template, its bindings (for wire backends) and a
    structured payload (for the mock, which applies fixed rules instead of
    reading the prompt). It returns the raw model text.
    """

    kind = 'abstract'

    def __init__(self, model_name: str, temperature: float = 0.0, max_tokens: int = 512, seed: Optional[int] = None):
        self.model_name = model_name
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed

    @property
    def backend_id(self) -> str:
        return f"{self.kind}:{self.model_name}"

    def respond(self, template: PromptTemplate, bindings: Dict[str, str], payload: Dict[str, Any]) -> str:
        raise NotImplementedError


class MockBackend(JudgeBackend):
    """Deterministic rule-based stand-in for an LLM; a pure function of its inputs"""

    kind = 'mock'

    def __init__(self, model_name: str = 'rules-v1', **kwargs):
        super().__init__(model_name, **kwargs)

    def respond(self, template: PromptTemplate, bindings: Dict[str, str], payload: Dict[str, Any]) -> str:
        handlers = {
            NUGGET_MATCH: self._nugget_match,
            CITATION_SUPPORT: self._citation_support,
            NUGGET_IDEATION: self._ideate,
            SENTENCE_EXTRACTION: self._extract,
        }
        if template.name not in handlers:
            raise BackendError(f"Mock backend has no rule for template {template.name!r}")
        return handlers[template.name](payload)

    @staticmethod
    def _nugget_match(payload: Dict[str, Any]) -> str:
        haystack = ' '.join([payload['candidate_text']] + list(payload['context_texts']))
        return 'yes' if any(contains_phrase(haystack, answer) for answer in payload['answers']) else 'no'

    @staticmethod
    def _citation_support(payload: Dict[str, Any]) -> str:
        words = content_words(payload['sentence_text'])
        if not words:
            return 'no'
        doc_tokens = set(tokenize(payload['cited_doc_text']))
        present = sum(1 for word in words if word in doc_tokens)
        return 'yes' if present / len(words) >= CITATION_SUPPORT_THRESHOLD else 'no'

    @staticmethod
    def _ideate(payload: Dict[str, Any]) -> str:
        """Rank content terms by document frequency, then term frequency, then alphabetically"""
        excluded = set(payload['query_terms']) | set(tokenize(IDEATION_QUESTION.format(term='')))
        document_frequency: Dict[str, int] = {}
        term_frequency: Dict[str, int] = {}
        for text in payload['documents']:
            terms = [t for t in tokenize(text) if t not in STOPWORDS and t not in excluded]
            for term in terms:
                term_frequency[term] = term_frequency.get(term, 0) + 1
            for term in set(terms):
                document_frequency[term] = document_frequency.get(term, 0) + 1

        ranked = sorted(document_frequency, key=lambda t: (-document_frequency[t], -term_frequency[t], t))
        nuggets = [
            {'question': IDEATION_QUESTION.format(term=term), 'answers': [term]}
            for term in ranked[:payload['max_nuggets']]
        ]
        return json.dumps({'nuggets': nuggets})

    @staticmethod
    def _extract(payload: Dict[str, Any]) -> str:
        """Best sentence by answer hits plus question-term overlap"""
        answers = payload['answers']
        question_terms = set(content_words(payload['question']))

        best, best_score = None, 0
        for _, sentence in split_sentences(payload['document']):
            norm = normalize(sentence)
            tokens = set(norm.split())
            answer_hits = sum(1 for a in answers if normalize(a) and normalize(a) in norm)
            score = answer_hits + len(question_terms & tokens)
            if score > best_score:
                best, best_score = sentence, score
        if best is None:
            return json.dumps({'passage': None})

        norm_best = normalize(best)
        if any(normalize(a) and normalize(a) in norm_best for a in answers):
            sentence = best
        else:
            sentence = HEDGE_PREFIX + best[:1].lower() + best[1:]

        wanted = [t for a in answers for t in tokenize(a)] + content_words(payload['question'])
        sentence_tokens = set(tokenize(sentence))
        confidence = sum(1 for t in wanted if t in sentence_tokens) / len(wanted) if wanted else 0.0
        return json.dumps({'passage': best, 'sentence': sentence, 'confidence': confidence})


class HttpBackend(JudgeBackend):
    """Chat-completions endpoint over plain HTTP"""

    kind = 'http'

    def __init__(self, model_name: str, endpoint: str, api_key: Optional[str] = None,
                 timeout: int = 60, max_retries: int = 3, backoff_seconds: float = 2.0, **kwargs):
        super().__init__(model_name, **kwargs)
        if not endpoint:
            raise ConfigError("http backend requires an endpoint (RAGE_LLM_ENDPOINT)")
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max(1, max_retries)
        self.backoff_seconds = backoff_seconds
        self.session = requests.Session()

    def _post_once(self, body: Dict[str, Any]) -> str:
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = f"Bearer {self.api_key}"

        try:
            response = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"Request to {self.endpoint} failed: {e}")

        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"Endpoint returned HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise BackendError(f"Endpoint returned HTTP {response.status_code}: {response.text[:200]}")

        try:
            return response.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendError(f"Unexpected chat-completions response: {response.text[:200]}")

    def respond(self, template: PromptTemplate, bindings: Dict[str, str], payload: Dict[str, Any]) -> str:
        body = {
            'model': self.model_name,
            'messages': render_messages(template, bindings),
            'temperature': self.temperature,
            'max_tokens': self.max_tokens,
        }
        if self.seed is not None:
            body['seed'] = self.seed

        for attempt in range(1, self.max_retries + 1):
            try:
                return self._post_once(body)
            except TransportError as e:
                if attempt == self.max_retries:
                    logger.error(f"❌ {template.name}: giving up after {attempt} attempts: {e}")
                    raise
                wait = self.backoff_seconds * attempt
                logger.warning(f"🔁 {template.name}: attempt {attempt}/{self.max_retries} failed ({e}), retrying in {wait:.0f}s")
                time.sleep(wait)


class GroqBackend(JudgeBackend):
    """Chat completions through the Groq SDK"""

    kind = 'groq'

    def __init__(self, model_name: str, api_key: Optional[str] = None, max_retries: int = 3, **kwargs):
        super().__init__(model_name, **kwargs)
        api_key = api_key or Config.GROQ_API_KEY
        if not api_key:
            raise ConfigError("groq backend requires GROQ_API_KEY")
        from groq import Groq
        self.client = Groq(api_key=api_key, max_retries=max_retries)

    def respond(self, template: PromptTemplate, bindings: Dict[str, str], payload: Dict[str, Any]) -> str:
        import groq
        try:
            completion = self.client.chat.completions.create(
                messages=render_messages(template, bindings),
                model=self.model_name,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                seed=self.seed,
            )
        except (groq.APIConnectionError, groq.RateLimitError, groq.InternalServerError) as e:
            raise TransportError(f"Groq request failed: {e}")
        except groq.APIError as e:
            raise BackendError(f"Groq request failed: {e}")
        return completion.choices[0].message.content or ''


def create_backend(kind: str, model_name: Optional[str] = None, endpoint: Optional[str] = None,
                   max_tokens: Optional[int] = None, seed: Optional[int] = None) -> JudgeBackend:
    """Build a backend from its kind plus Config defaults"""
    max_tokens = max_tokens or Config.MAX_TOKENS
    seed = Config.SEED if seed is None else seed
    if kind == 'mock':
        return MockBackend(max_tokens=max_tokens, seed=seed)
    if kind == 'http':
        return HttpBackend(
            model_name=model_name or Config.LLM_MODEL,
            endpoint=endpoint or Config.LLM_ENDPOINT,
            api_key=Config.LLM_API_KEY,
            timeout=Config.TIMEOUT_SECONDS,
            max_retries=Config.MAX_RETRIES,
            max_tokens=max_tokens,
            seed=seed,
        )
    if kind == 'groq':
        return GroqBackend(model_name=model_name or Config.LLM_MODEL, max_retries=Config.MAX_RETRIES,
                           max_tokens=max_tokens, seed=seed)
    raise ConfigError(f"Unknown judge backend kind: {kind}")


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

class JudgeVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    decision: bool
    raw_response: str
    from_cache: bool = False
    backend_id: str


def parse_yes_no(raw_response: str) -> bool:
    """Leading yes/no (case-insensitive, after trimming); anything else is an error"""
    match = _YES_NO.match(raw_response.strip())
    if not match:
        raise VerdictParseError("Judge response does not start with yes or no", raw_response=raw_response)
    return match.group(1).lower() == 'yes'


def format_answers(answers: Sequence[str]) -> str:
    return '; '.join(answers)


def format_documents(texts: Sequence[str]) -> str:
    if not texts:
        return '(none)'
    return '\n\n'.join(f"[{i}] {text}" for i, text in enumerate(texts, start=1))


class Judge:
    """
    Backend handle plus the prompt templates it is driven with

    The same Judge object is shared by the evaluator and the probes, which is
    what lets a probe reproduce the evaluator's decisions exactly.
    """

    def __init__(self, backend: JudgeBackend, library: Optional[PromptLibrary] = None,
                 cache: Optional[VerdictCache] = None, include_citation_context: bool = True,
                 concurrency: int = 1):
        self.backend = backend
        self.library = library or PromptLibrary()
        self.cache = cache
        self.include_citation_context = include_citation_context
        self.concurrency = max(1, concurrency)
        # Shared by every pool that calls through this judge
        self._in_flight = threading.BoundedSemaphore(self.concurrency)

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def template(self, name: str) -> PromptTemplate:
        return self.library.get(name)

    def respond(self, template_name: str, bindings: Dict[str, str], payload: Dict[str, Any]) -> str:
        """Send one prompt to the backend; at most `concurrency` calls are in flight at once"""
        template = self.template(template_name)
        with self._in_flight:
            return self.backend.respond(template, bindings, payload)

    def context_texts(self, citations: Sequence[str], corpus: Corpus) -> List[str]:
        """Cited document texts handed to nugget_match (empty when the switch is off)"""
        if not self.include_citation_context:
            return []
        return [corpus.text_of(doc_id) for doc_id in citations]

    def nugget_match(self, candidate_text: str, context_texts: Sequence[str], nugget: Nugget) -> JudgeVerdict:
        op = cached(nugget_match, self.cache) if self.cache is not None else nugget_match
        return op(self, candidate_text, context_texts, nugget)

    def citation_support(self, sentence_text: str, cited_doc_text: str) -> JudgeVerdict:
        op = cached(citation_support, self.cache) if self.cache is not None else citation_support
        return op(self, sentence_text, cited_doc_text)

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Apply fn to items with bounded concurrency; results keep input order"""
        if self.concurrency == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.concurrency) as executor:
            return list(executor.map(fn, items))


def _verdict(judge: Judge, template_name: str, bindings: Dict[str, str], payload: Dict[str, Any]) -> JudgeVerdict:
    raw_response = judge.respond(template_name, bindings, payload)
    return JudgeVerdict(decision=parse_yes_no(raw_response), raw_response=raw_response,
                        from_cache=False, backend_id=judge.backend_id)


def nugget_match(judge: Judge, candidate_text: str, context_texts: Sequence[str], nugget: Nugget) -> JudgeVerdict:
    """
    Does the candidate text (together with its cited documents) give an answer to the nugget?

    Args:
        judge: Judge handle
        candidate_text: Report sentence or extracted passage
        context_texts: Cited document texts (may be empty)
        nugget: Nugget to look for

    Returns:
        JudgeVerdict
    """
    bindings = {
        'question': nugget.question,
        'answers': format_answers(nugget.answers),
        'sentence': candidate_text,
        'context': format_documents(context_texts),
    }
    payload = {'candidate_text': candidate_text, 'context_texts': list(context_texts), 'answers': list(nugget.answers)}
    return _verdict(judge, NUGGET_MATCH, bindings, payload)


nugget_match.template_name = NUGGET_MATCH


def citation_support(judge: Judge, sentence_text: str, cited_doc_text: str) -> JudgeVerdict:
    """Does the cited document support the sentence?"""
    bindings = {'sentence': sentence_text, 'document': cited_doc_text}
    payload = {'sentence_text': sentence_text, 'cited_doc_text': cited_doc_text}
    return _verdict(judge, CITATION_SUPPORT, bindings, payload)


citation_support.template_name = CITATION_SUPPORT


def _input_repr(value: Any):
    if isinstance(value, Nugget):
        # ids do not influence the decision
        return {'question': value.question, 'answers': list(value.answers)}
    if isinstance(value, (tuple, list)):
        return list(value)
    raise TypeError(f"Cannot key judge input of type {type(value).__name__}")


def cached(op: Callable[..., JudgeVerdict], cache: VerdictCache) -> Callable[..., JudgeVerdict]:
    """
    Wrap a verdict operation with the persistent cache

    Key = hash(backend id, template name + template hash, all input texts).
    A hit returns the stored verdict with from_cache=True.
    """
    template_name = op.template_name

    def wrapper(judge: Judge, *inputs) -> JudgeVerdict:
        template = judge.template(template_name)
        key = generate_verdict_key(
            judge.backend_id,
            template_name,
            template.template_hash,
            json.dumps(list(inputs), default=_input_repr, ensure_ascii=False, sort_keys=True),
        )
        record = cache.get(key)
        if record is not None:
            return JudgeVerdict(decision=record['decision'], raw_response=record['raw_response'],
                                from_cache=True, backend_id=record['backend_id'])

        verdict = op(judge, *inputs)
        cache.put(key, verdict.decision, verdict.raw_response, verdict.backend_id, template.template_hash)
        return verdict

    wrapper.template_name = template_name
    wrapper.__name__ = f"cached_{op.__name__}"
    return wrapper


def build_judge(kind: str = 'mock', model_name: Optional[str] = None, endpoint: Optional[str] = None,
                prompt_dir: Optional[str] = None, cache_path: Optional[str] = None,
                include_citation_context: Optional[bool] = None, concurrency: Optional[int] = None,
                max_tokens: Optional[int] = None, seed: Optional[int] = None) -> Judge:
    """Assemble a Judge from configuration values (Config supplies anything left None)"""
    backend = create_backend(kind, model_name=model_name, endpoint=endpoint, max_tokens=max_tokens, seed=seed)
    cache = VerdictCache(cache_path) if cache_path else None
    logger.info(f"✅ Judge ready: {backend.backend_id} (cache: {cache_path or 'off'})")
    return Judge(
        backend=backend,
        library=PromptLibrary(prompt_dir),
        cache=cache,
        include_citation_context=Config.INCLUDE_CITATION_CONTEXT if include_citation_context is None else include_citation_context,
        concurrency=concurrency or Config.CONCURRENCY,
    )
