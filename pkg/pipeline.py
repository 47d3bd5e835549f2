#!/usr/bin/env python3
"""
Report generation for nuggetprobe

    1. Nugget ideation  (or gold substitution)
    2. Retrieval        (BM25 or an external rank file)
    3. Sentence extraction, one candidate per (document, nugget)
    4. Optional probes over the candidates
    5. Selection and assembly under the length policy
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from collection import Corpus, NuggetBank, Origin, TopicRequest, build_nugget_bank
from config import ExperimentConfig
from errors import NuggetProbeError, ValidationError, VerdictParseError
from judge import NUGGET_IDEATION, SENTENCE_EXTRACTION, Judge, format_answers, format_documents
from probes import apply_candidate_probes, bank_overlap, gold_substitution
from report import LengthPolicy, Report, ReportSentence, Run, char_count, validate_report
from retrieval import BM25Index, RankedDoc, retrieve_bm25
from textutil import normalize, tokenize

logger = logging.getLogger(__name__)

_JSON_OBJECT = re.compile(r'\{.*\}', re.DOTALL)


class Candidate(BaseModel):
    """An extracted passage and the self-contained sentence restating it"""

    model_config = ConfigDict(frozen=True)

    nugget_id: str
    doc_id: str
    passage: str
    sentence: str = Field(min_length=1)
    confidence: float = Field(ge=0.0, le=1.0)
    offset: int = 0

    @property
    def citations(self) -> Tuple[str, ...]:
        return (self.doc_id,)


def _parse_json_reply(raw_response: str, what: str) -> dict:
    match = _JSON_OBJECT.search(raw_response or '')
    if not match:
        raise VerdictParseError(f"{what}: no JSON object in model output", raw_response=raw_response or '')
    try:
        data = json.loads(match.group(0))
    except json.JSONDecodeError:
        raise VerdictParseError(f"{what}: malformed JSON in model output", raw_response=raw_response)
    if not isinstance(data, dict):
        raise VerdictParseError(f"{what}: expected a JSON object", raw_response=raw_response)
    return data


def ideate_nuggets(judge: Judge, topic: TopicRequest, ranked_docs: List[RankedDoc], corpus: Corpus,
                   max_nuggets: int = 10) -> NuggetBank:
    """
    Generate a system nugget bank from the top retrieved documents

    Args:
        judge: Judge handle (its backend generates the nuggets)
        topic: Report request
        ranked_docs: Retrieved documents
        corpus: Document store
        max_nuggets: Upper bound on bank size

    Returns:
        NuggetBank with origin=system, questions unique after normalisation
    """
    if not ranked_docs:
        raise ValidationError(f"Topic {topic.id}: nugget ideation needs at least one retrieved document")

    texts = [corpus.text_of(d.doc_id) for d in ranked_docs]
    bindings = {
        'title': topic.title,
        'problem_statement': topic.problem_statement,
        'background': topic.background,
        'documents': format_documents(texts),
        'max_nuggets': str(max_nuggets),
    }
    payload = {'documents': texts, 'query_terms': tokenize(topic.query_text), 'max_nuggets': max_nuggets}
    data = _parse_json_reply(judge.respond(NUGGET_IDEATION, bindings, payload), 'nugget ideation')

    records, seen = [], set()
    for item in data.get('nuggets') or []:
        if not isinstance(item, dict):
            continue
        question = str(item.get('question') or '').strip()
        answers = [str(a).strip() for a in item.get('answers') or [] if str(a).strip()]
        key = normalize(question)
        if not key or not answers:
            logger.warning(f"⚠️ Topic {topic.id}: ignoring incomplete nugget {item!r}")
            continue
        if key in seen:
            continue
        seen.add(key)
        records.append({'id': f"{topic.id}-s{len(records) + 1:02d}", 'question': question, 'answers': answers})
        if len(records) == max_nuggets:
            break

    if not records:
        raise ValidationError(f"Topic {topic.id}: nugget ideation produced no nuggets")
    return build_nugget_bank(topic.id, records, Origin.SYSTEM)


def _extract_one(judge: Judge, corpus: Corpus, doc_id: str, nugget) -> Optional[Candidate]:
    text = corpus.text_of(doc_id)
    bindings = {'question': nugget.question, 'answers': format_answers(nugget.answers), 'document': text}
    payload = {'document': text, 'question': nugget.question, 'answers': list(nugget.answers)}
    data = _parse_json_reply(judge.respond(SENTENCE_EXTRACTION, bindings, payload), 'sentence extraction')

    passage = data.get('passage')
    if not passage:
        return None
    if not isinstance(passage, str):
        logger.warning(f"⚠️ Dropping non-text passage from {doc_id} (nugget {nugget.id}): {passage!r:.80}")
        return None
    offset = text.find(passage)
    if offset < 0:
        logger.warning(f"⚠️ Dropping passage not found verbatim in {doc_id} (nugget {nugget.id}): {passage[:80]!r}")
        return None

    sentence = str(data.get('sentence') or '').strip()
    if not sentence:
        logger.warning(f"⚠️ Dropping candidate with empty sentence ({doc_id}, nugget {nugget.id})")
        return None

    try:
        confidence = float(data.get('confidence', 0.0))
    except (TypeError, ValueError):
        confidence = 0.0
    confidence = min(1.0, max(0.0, confidence))

    return Candidate(nugget_id=nugget.id, doc_id=doc_id, passage=passage, sentence=sentence,
                     confidence=confidence, offset=offset)


def extract_candidates(judge: Judge, ranked_docs: List[RankedDoc], corpus: Corpus, bank: NuggetBank) -> List[Candidate]:
    """
    Extract at most one candidate per (document, nugget) pair

    Args:
        judge: Judge handle (its backend does the extraction)
        ranked_docs: Retrieved documents
        corpus: Document store
        bank: Nuggets to align documents to

    Returns:
        Candidates in (document rank, bank order)
    """
    if len(bank) == 0:
        raise ValidationError(f"Topic {bank.topic_id}: extraction needs a non-empty nugget bank")

    pairs = [(d.doc_id, nugget) for d in ranked_docs for nugget in bank.nuggets]
    results = judge.map(lambda pair: _extract_one(judge, corpus, pair[0], pair[1]), pairs)
    return [c for c in results if c is not None]


def assemble_report(candidates: List[Candidate], bank: NuggetBank, policy: LengthPolicy) -> Report:
    """
    Select sentences round-robin over the nugget bank

    Pass p (1..k) visits nuggets in bank order and offers each nugget's p-th
    best candidate. A candidate is skipped when its normalised sentence is
    already in the report or when it would push the report over budget.

    Args:
        candidates: Extracted candidates
        bank: Nugget bank fixing the visiting order
        policy: k and character budget

    Returns:
        Report whose character count never exceeds the budget
    """
    per_nugget: Dict[str, List[Candidate]] = {n.id: [] for n in bank.nuggets}
    for candidate in candidates:
        if candidate.nugget_id in per_nugget:
            per_nugget[candidate.nugget_id].append(candidate)
    for queue in per_nugget.values():
        queue.sort(key=lambda c: (-c.confidence, c.doc_id, c.offset))

    sentences: List[ReportSentence] = []
    seen = set()
    used = 0
    for p in range(policy.k):
        for nugget in bank.nuggets:
            queue = per_nugget[nugget.id]
            if p >= len(queue):
                continue
            candidate = queue[p]
            key = normalize(candidate.sentence)
            if key in seen or used + len(candidate.sentence) > policy.char_budget:
                continue
            seen.add(key)
            used += len(candidate.sentence)
            sentences.append(ReportSentence(
                text=candidate.sentence,
                citations=(candidate.doc_id,),
                source_nugget_id=candidate.nugget_id,
                passage=candidate.passage,
                confidence=candidate.confidence,
            ))

    report = Report(topic_id=bank.topic_id, length_class=policy.length_class, sentences=sentences)
    validate_report(report)
    return report


class TopicResult(BaseModel):
    topic_id: str
    status: str
    error: Optional[str] = None
    exit_code: int = 0
    nuggets: int = 0
    candidates: int = 0
    sentences: int = 0
    # Share of gold nuggets the ideated bank attests; set only for system banks with gold available
    bank_overlap: Optional[float] = None


def generate_report(judge: Judge, topic: TopicRequest, corpus: Corpus, ranked_docs: List[RankedDoc],
                    config: ExperimentConfig, gold_bank: Optional[NuggetBank] = None) -> Tuple[Report, TopicResult]:
    """Run the full pipeline for one topic"""
    overlap = None
    if config.nugget_source == 'gold':
        if gold_bank is None:
            raise ValidationError(f"Topic {topic.id}: no gold nuggets for gold substitution")
        bank = gold_substitution(gold_bank)
    else:
        bank = ideate_nuggets(judge, topic, ranked_docs, corpus, config.max_nuggets)
        if gold_bank is not None and len(gold_bank) > 0:
            overlap = bank_overlap(bank, gold_bank, judge)
            logger.info(f"📊 Topic {topic.id}: system bank attests {overlap:.0%} of the gold nuggets")

    candidates = extract_candidates(judge, ranked_docs, corpus, bank)
    filtered = apply_candidate_probes(candidates, bank, corpus, judge, config.effective_probes)
    report = assemble_report(filtered, bank, LengthPolicy.for_class(config.length))

    result = TopicResult(topic_id=topic.id, status='ok', nuggets=len(bank), candidates=len(filtered),
                         sentences=len(report.sentences), bank_overlap=overlap)
    logger.info(f"✅ Topic {topic.id}: {len(bank)} nuggets, {len(candidates)} candidates "
                f"({len(filtered)} after probes), {len(report.sentences)} sentences, {char_count(report)} chars")
    return report, result


def run_pipeline(judge: Judge, topics: List[TopicRequest], corpus: Corpus, config: ExperimentConfig,
                 gold_banks: Optional[Dict[str, NuggetBank]] = None,
                 rankings: Optional[Dict[str, List[RankedDoc]]] = None) -> Tuple[Run, List[TopicResult]]:
    """
    Generate a run over all topics

    A failing topic is recorded in the returned results and left out of the run.

    Args:
        judge: Judge handle
        topics: Report requests
        corpus: Document store
        config: Experiment configuration
        gold_banks: Gold banks (required for gold substitution)
        rankings: Precomputed rankings (rank-file retrieval); BM25 otherwise

    Returns:
        (Run, per-topic results in topic order)
    """
    gold_banks = gold_banks or {}
    index = BM25Index(corpus) if rankings is None else None

    def ranked_for(topic: TopicRequest) -> List[RankedDoc]:
        if rankings is None:
            ranked = retrieve_bm25(corpus, topic, config.depth, index=index)
            matching = [doc for doc in ranked if doc.score > 0]
            if len(matching) < len(ranked):
                logger.debug(f"Topic {topic.id}: skipping {len(ranked) - len(matching)} retrieved documents "
                             f"that share no query term")
            return matching
        ranked = []
        for doc in rankings.get(topic.id, [])[:config.depth]:
            if doc.doc_id in corpus:
                ranked.append(doc)
            else:
                logger.warning(f"⚠️ Topic {topic.id}: ranked document {doc.doc_id} is not in the corpus, skipping")
        return ranked

    def work(topic: TopicRequest):
        try:
            return generate_report(judge, topic, corpus, ranked_for(topic), config, gold_banks.get(topic.id))
        except NuggetProbeError as e:
            logger.error(f"❌ Topic {topic.id} failed: {e}")
            return None, TopicResult(topic_id=topic.id, status='failed', error=str(e), exit_code=e.exit_code)

    if config.concurrency > 1 and len(topics) > 1:
        with ThreadPoolExecutor(max_workers=config.concurrency) as executor:
            outcomes = list(executor.map(work, topics))
    else:
        outcomes = [work(topic) for topic in topics]

    reports = {report.topic_id: report for report, _ in outcomes if report is not None}
    run = Run(system_name=config.system_name, variant_label=config.variant_label, reports=reports)
    return run, [result for _, result in outcomes]
