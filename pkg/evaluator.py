#!/usr/bin/env python3
"""
Nugget-based report evaluation for nuggetprobe

Per sentence the judge decides which citations support it and which gold
nuggets it attests (reading the sentence together with its cited documents).
Four report-level metrics follow:

    nugget recall       distinct gold nuggets matched / gold bank size
    nugget density      distinct gold nuggets matched / sentences
    relevant sentences  sentences matching any gold nugget / sentences
    citation support    supported (sentence, citation) pairs / pairs
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from collection import Corpus, NuggetBank
from errors import BackendError, ParseError, ValidationError
from judge import Judge
from report import Report, ReportSentence, Run

logger = logging.getLogger(__name__)

METRICS = ('nugget_recall', 'nugget_density', 'relevant_sentences', 'citation_support')


class SentenceJudgment(BaseModel):
    index: int
    citations: Tuple[str, ...] = ()
    supported_citations: Tuple[str, ...] = ()
    matched_gold_nuggets: Tuple[str, ...] = ()


class TopicEval(BaseModel):
    topic_id: str
    nugget_recall: float = 0.0
    nugget_density: float = 0.0
    relevant_sentences: float = 0.0
    citation_support: Optional[float] = None
    citation_support_defined: bool = False

    gold_nuggets: int = 0
    matched_nuggets: int = 0
    sentences: int = 0
    relevant_count: int = 0
    citation_pairs: int = 0
    supported_pairs: int = 0
    has_report: bool = True
    judgments: List[SentenceJudgment] = Field(default_factory=list)

    def metric(self, name: str) -> Optional[float]:
        return getattr(self, name)


class RunEval(BaseModel):
    model_config = ConfigDict(extra='forbid')

    system: str
    variant: str
    topics: Dict[str, TopicEval] = Field(default_factory=dict)
    macro: Dict[str, Optional[float]] = Field(default_factory=dict)

    def per_topic(self, metric: str) -> Dict[str, Optional[float]]:
        return {topic_id: result.metric(metric) for topic_id, result in self.topics.items()}


def judge_sentence(judge: Judge, sentence: ReportSentence, corpus: Corpus, gold_bank: NuggetBank,
                   index: int = 0) -> SentenceJudgment:
    """
    Judge one sentence: citation support per citation, nugget match per gold nugget

    Args:
        judge: Judge handle
        sentence: Report sentence
        corpus: Document store (citations must resolve)
        gold_bank: Gold nuggets of the topic
        index: Sentence position, used in error messages

    Returns:
        SentenceJudgment
    """
    try:
        supported = tuple(
            doc_id for doc_id in sentence.citations
            if judge.citation_support(sentence.text, corpus.text_of(doc_id)).decision
        )
        context = judge.context_texts(sentence.citations, corpus)
        matched = tuple(
            nugget.id for nugget in gold_bank.nuggets
            if judge.nugget_match(sentence.text, context, nugget).decision
        )
    except BackendError as e:
        # Same error type, location prefixed
        e.sentence_index = index
        e.args = (f"Sentence {index} of topic {gold_bank.topic_id}: {e}",)
        raise

    return SentenceJudgment(index=index, citations=tuple(sentence.citations),
                            supported_citations=supported, matched_gold_nuggets=matched)


def eval_report(judge: Judge, report: Report, corpus: Corpus, gold_bank: NuggetBank) -> TopicEval:
    """
    Score one report against the topic's gold bank

    Args:
        judge: Judge handle
        report: Report to score
        corpus: Document store
        gold_bank: Non-empty gold bank

    Returns:
        TopicEval with the four metrics, their counts and per-sentence judgments
    """
    if len(gold_bank) == 0:
        raise ValidationError(f"Topic {report.topic_id}: gold bank is empty")

    indexed = list(enumerate(report.sentences))
    judgments = judge.map(lambda pair: judge_sentence(judge, pair[1], corpus, gold_bank, pair[0]), indexed)

    matched = set()
    for judgment in judgments:
        matched.update(judgment.matched_gold_nuggets)
    n_sentences = len(judgments)
    relevant = sum(1 for j in judgments if j.matched_gold_nuggets)
    pairs = sum(len(j.citations) for j in judgments)
    supported = sum(len(j.supported_citations) for j in judgments)

    return TopicEval(
        topic_id=report.topic_id,
        nugget_recall=len(matched) / len(gold_bank),
        nugget_density=len(matched) / n_sentences if n_sentences else 0.0,
        relevant_sentences=relevant / n_sentences if n_sentences else 0.0,
        citation_support=supported / pairs if pairs else None,
        citation_support_defined=pairs > 0,
        gold_nuggets=len(gold_bank),
        matched_nuggets=len(matched),
        sentences=n_sentences,
        relevant_count=relevant,
        citation_pairs=pairs,
        supported_pairs=supported,
        judgments=judgments,
    )


def macro_average(topic_evals: Dict[str, TopicEval]) -> Dict[str, Optional[float]]:
    """Mean of each metric over the topics where it is defined"""
    macro = {}
    for metric in METRICS:
        values = [t.metric(metric) for t in topic_evals.values() if t.metric(metric) is not None]
        macro[metric] = float(np.mean(values)) if values else None
    return macro


def eval_run(judge: Judge, run: Run, corpus: Corpus, gold_banks: Dict[str, NuggetBank]) -> RunEval:
    """
    Score every report of a run and macro-average over topics

    Every topic with a gold bank counts; a topic without a report scores 0
    on the nugget metrics and is left out of citation support.

    Args:
        judge: Judge handle
        run: Run to score
        corpus: Document store
        gold_banks: Gold bank per topic

    Returns:
        RunEval
    """
    unknown = sorted(t for t in run.reports if t not in gold_banks)
    if unknown:
        raise ValidationError(f"No gold nuggets for topics: {', '.join(unknown)}")

    topic_ids = sorted(gold_banks)
    present = [t for t in topic_ids if t in run.reports]
    scored = judge.map(lambda t: eval_report(judge, run.reports[t], corpus, gold_banks[t]), present)
    results = dict(zip(present, scored))

    topics: Dict[str, TopicEval] = {}
    for topic_id in topic_ids:
        if topic_id in results:
            topics[topic_id] = results[topic_id]
        else:
            logger.warning(f"⚠️ {run.system_name}: no report for topic {topic_id}, scoring 0")
            topics[topic_id] = TopicEval(topic_id=topic_id, gold_nuggets=len(gold_banks[topic_id]), has_report=False)

    run_eval = RunEval(system=run.system_name, variant=run.variant_label, topics=topics, macro=macro_average(topics))
    summary = ', '.join(f"{m}={v:.3f}" if v is not None else f"{m}=n/a" for m, v in run_eval.macro.items())
    logger.info(f"✅ Evaluated {run.system_name}/{run.variant_label}: {summary}")
    return run_eval


def serialize_eval(run_eval: RunEval) -> bytes:
    """Canonical eval.json bytes"""
    return (json.dumps(run_eval.model_dump(mode='json'), ensure_ascii=False, indent=2, sort_keys=True) + '\n').encode('utf-8')


def load_eval(path: Union[str, Path]) -> RunEval:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return RunEval.model_validate(json.load(f))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line_number=e.lineno, path=str(path))
    except ValueError as e:
        raise ValidationError(f"{path}: not an eval file ({e})")
