#!/usr/bin/env python3
"""
Insider-knowledge probes for nuggetprobe

Filters that reuse the evaluator's own judge (backend + prompt templates)
to discard material the evaluator would not reward, plus substitution of
the gold nuggets for ideated ones. Filters work on pipeline candidates
before assembly or, via wrap_run, on any finished run.
"""

import logging
from typing import Dict, List, Optional, Sequence, TypeVar

from pydantic import BaseModel, ConfigDict, model_validator

from collection import Corpus, Nugget, NuggetBank, Origin
from errors import ConfigError, ValidationError
from judge import Judge
from report import Report, ReportSentence, Run, validate_report

logger = logging.getLogger(__name__)

Item = TypeVar('Item')

CITATION = 'citation'
COV_SENTENCE = 'cov-sentence'
COV_EXTRACT = 'cov-extract'
GOLD = 'gold'
FILTER_ORDER = (COV_EXTRACT, COV_SENTENCE, CITATION)
GOLD_ID_PREFIX = 'gold-'


class ProbeConfig(BaseModel):
    """Enabled probes and what they need to run"""

    model_config = ConfigDict(frozen=True)

    enabled: frozenset = frozenset()
    has_bank: bool = False
    has_corpus: bool = True

    @model_validator(mode='after')
    def _check_prerequisites(self):
        unknown = set(self.enabled) - {CITATION, COV_SENTENCE, COV_EXTRACT, GOLD}
        if unknown:
            raise ValueError(f"unknown probes: {', '.join(sorted(unknown))}")
        coverage = {COV_SENTENCE, COV_EXTRACT} & set(self.enabled)
        if coverage and not self.has_bank:
            raise ValueError(f"{', '.join(sorted(coverage))} needs a nugget bank")
        if CITATION in self.enabled and not self.has_corpus:
            raise ValueError("citation filter needs a corpus")
        return self

    @property
    def filters(self) -> List[str]:
        """Enabled filters in application order"""
        return [name for name in FILTER_ORDER if name in self.enabled]


def probe_config(names: Sequence[str], has_bank: bool, has_corpus: bool = True) -> ProbeConfig:
    try:
        return ProbeConfig(enabled=frozenset(names), has_bank=has_bank, has_corpus=has_corpus)
    except ValueError as e:
        raise ConfigError(f"Probe prerequisites not met: {e}")


def _text(item) -> str:
    return item.text if isinstance(item, ReportSentence) else item.sentence


def _passage(item) -> str:
    if isinstance(item, ReportSentence):
        return item.passage or item.text
    return item.passage


def citation_filter(items: List[Item], corpus: Corpus, judge: Judge) -> List[Item]:
    """
    Keep each citation only if the judge finds it supports its sentence

    Sentences left without a supported citation are removed. Works on
    report sentences and on pipeline candidates (one citation each).
    """
    def judge_item(item):
        sentence = _text(item)
        supported = tuple(
            doc_id for doc_id in item.citations
            if judge.citation_support(sentence, corpus.text_of(doc_id)).decision
        )
        if not supported:
            return None
        if isinstance(item, ReportSentence) and supported != item.citations:
            return item.model_copy(update={'citations': supported})
        return item

    kept = [item for item in judge.map(judge_item, items) if item is not None]
    logger.debug(f"Citation filter kept {len(kept)}/{len(items)}")
    return kept


def _covers_any(judge: Judge, text: str, context: List[str], bank: NuggetBank) -> bool:
    return any(judge.nugget_match(text, context, nugget).decision for nugget in bank.nuggets)


def cov_sentence_filter(items: List[Item], bank: NuggetBank, judge: Judge, corpus: Corpus) -> List[Item]:
    """Keep items whose sentence (with its cited documents) covers some nugget of the bank"""
    if len(bank) == 0:
        raise ValidationError("Coverage filter needs a non-empty nugget bank")

    def keep(item) -> bool:
        return _covers_any(judge, _text(item), judge.context_texts(item.citations, corpus), bank)

    flags = judge.map(keep, items)
    return [item for item, flag in zip(items, flags) if flag]


def cov_extract_filter(items: List[Item], bank: NuggetBank, judge: Judge) -> List[Item]:
    """Keep items whose extracted passage alone covers some nugget of the bank"""
    if len(bank) == 0:
        raise ValidationError("Coverage filter needs a non-empty nugget bank")

    flags = judge.map(lambda item: _covers_any(judge, _passage(item), [], bank), items)
    return [item for item, flag in zip(items, flags) if flag]


def gold_substitution(gold_bank: NuggetBank, prefix: str = GOLD_ID_PREFIX) -> NuggetBank:
    """
    Relabel a gold bank as the system bank, replacing nugget ideation

    Args:
        gold_bank: Gold nuggets (left untouched)
        prefix: Prepended to nugget ids

    Returns:
        System-origin copy with identical questions and answers
    """
    if len(gold_bank) == 0:
        raise ValidationError(f"Topic {gold_bank.topic_id}: gold bank is empty")

    nuggets = [
        Nugget(id=f"{prefix}{n.id}", question=n.question, answers=n.answers, origin=Origin.SYSTEM)
        for n in gold_bank.nuggets
    ]
    return NuggetBank(topic_id=gold_bank.topic_id, nuggets=nuggets, origin=Origin.SYSTEM)


def apply_candidate_probes(candidates: List[Item], bank: NuggetBank, corpus: Corpus, judge: Judge,
                           probes: Sequence[str]) -> List[Item]:
    """Apply enabled filters to extracted candidates: cov-extract, then cov-sentence, then citation"""
    config = probe_config(probes, has_bank=len(bank) > 0)
    for name in config.filters:
        before = len(candidates)
        if name == COV_EXTRACT:
            candidates = cov_extract_filter(candidates, bank, judge)
        elif name == COV_SENTENCE:
            candidates = cov_sentence_filter(candidates, bank, judge, corpus)
        else:
            candidates = citation_filter(candidates, corpus, judge)
        logger.info(f"🔎 {name} filter ({bank.topic_id}): {before} -> {len(candidates)} candidates")
    return candidates


def _label(variant_label: str, names: Sequence[str]) -> str:
    parts = variant_label.split('+')
    for name in names:
        if name not in parts:
            parts.append(name)
    return '+'.join(parts)


def wrap_run(run: Run, corpus: Corpus, judge: Judge, banks: Optional[Dict[str, NuggetBank]] = None,
             probes: Optional[Sequence[str]] = None) -> Run:
    """
    Adulterate a finished run (from any system) with the probe filters

    Args:
        run: Run to wrap
        corpus: Document store every citation must resolve against
        judge: The evaluator's judge
        banks: Nugget banks per topic; enables cov-sentence when given
        probes: Filters to apply; default citation (+ cov-sentence with banks)

    Returns:
        New run with filtered reports and the probe names appended to its variant label
    """
    if probes is None:
        probes = [CITATION] + ([COV_SENTENCE] if banks else [])
    config = probe_config([p for p in probes if p != GOLD], has_bank=bool(banks))

    if banks is not None and config.filters != [CITATION]:
        missing = sorted(t for t in run.reports if t not in banks)
        if missing:
            raise ValidationError(f"No nugget bank for topics: {', '.join(missing)}")

    reports: Dict[str, Report] = {}
    for topic_id, report in sorted(run.reports.items()):
        for sentence in report.sentences:
            for doc_id in sentence.citations:
                corpus.get(doc_id)

        sentences = list(report.sentences)
        for name in config.filters:
            if name == COV_EXTRACT:
                sentences = cov_extract_filter(sentences, banks[topic_id], judge)
            elif name == COV_SENTENCE:
                sentences = cov_sentence_filter(sentences, banks[topic_id], judge, corpus)
            else:
                sentences = citation_filter(sentences, corpus, judge)

        wrapped = report.model_copy(update={'sentences': tuple(sentences)})
        validate_report(wrapped)
        reports[topic_id] = wrapped
        logger.info(f"🔎 Wrapped topic {topic_id}: {len(report.sentences)} -> {len(sentences)} sentences")

    return Run(system_name=run.system_name, variant_label=_label(run.variant_label, config.filters), reports=reports)


def bank_overlap(system_bank: NuggetBank, gold_bank: NuggetBank, judge: Judge) -> float:
    """
    Fraction of gold nuggets that some system nugget attests

    A system nugget attests a gold nugget when its question and answers,
    read as one text, match the gold nugget under the judge.
    """
    if len(gold_bank) == 0:
        raise ValidationError(f"Topic {gold_bank.topic_id}: gold bank is empty")

    texts = [f"{n.question} {' '.join(n.answers)}" for n in system_bank.nuggets]
    hits = judge.map(lambda gold: any(judge.nugget_match(text, [], gold).decision for text in texts),
                     list(gold_bank.nuggets))
    return sum(hits) / len(gold_bank)
