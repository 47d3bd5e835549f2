#!/usr/bin/env python3
"""
Reports and runs for nuggetprobe
Cited-sentence reports, the three length policies, run parsing and canonical serialization
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from errors import ParseError, ValidationError

logger = logging.getLogger(__name__)


class LengthClass(str, Enum):
    SHORT = 'short'
    MEDIUM = 'medium'
    LONG = 'long'


class LengthPolicy(BaseModel):
    """Sentences per nugget (k) and character budget of a length class"""

    model_config = ConfigDict(frozen=True)

    length_class: LengthClass
    k: int
    char_budget: int

    @classmethod
    def for_class(cls, length_class: Union['LengthClass', str]) -> 'LengthPolicy':
        return LENGTH_POLICIES[LengthClass(length_class)]


LENGTH_POLICIES: Dict[LengthClass, LengthPolicy] = {
    LengthClass.SHORT: LengthPolicy(length_class=LengthClass.SHORT, k=1, char_budget=2000),
    LengthClass.MEDIUM: LengthPolicy(length_class=LengthClass.MEDIUM, k=5, char_budget=10000),
    LengthClass.LONG: LengthPolicy(length_class=LengthClass.LONG, k=20, char_budget=1000000),
}


class ReportSentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str = Field(min_length=1)
    citations: Tuple[str, ...] = ()
    source_nugget_id: Optional[str] = None
    passage: Optional[str] = None
    confidence: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class Report(BaseModel):
    model_config = ConfigDict(frozen=True)

    topic_id: str
    length_class: LengthClass
    sentences: Tuple[ReportSentence, ...] = ()

    @property
    def policy(self) -> LengthPolicy:
        return LengthPolicy.for_class(self.length_class)


class Run(BaseModel):
    """One system's reports, at most one per topic"""

    model_config = ConfigDict(frozen=True)

    system_name: str
    variant_label: str = 'base'
    reports: Dict[str, Report] = Field(default_factory=dict)


def char_count(report: Report) -> int:
    """Unicode scalar count of all sentence texts; citations excluded"""
    return sum(len(sentence.text) for sentence in report.sentences)


def validate_report(report: Report):
    """Raise ValidationError if the report exceeds its length budget"""
    count = char_count(report)
    budget = report.policy.char_budget
    if count > budget:
        raise ValidationError(
            f"Report for topic {report.topic_id} has {count} characters, "
            f"over the {report.length_class.value} budget of {budget}"
        )


def run_from_dict(data: dict, source: str = 'run') -> Run:
    """Build and validate a Run from its JSON form"""
    if not isinstance(data, dict):
        raise ParseError("run must be a JSON object", path=source)

    reports: Dict[str, Report] = {}
    for index, record in enumerate(data.get('reports') or []):
        try:
            report = Report(**record)
        except PydanticValidationError as e:
            detail = '; '.join(
                f"{'.'.join(str(p) for p in err.get('loc', ()))}: {err.get('msg')}" for err in e.errors()
            )
            raise ParseError(f"report #{index}: {detail}", path=source)
        except TypeError:
            raise ParseError(f"report #{index} is not an object", path=source)
        if report.topic_id in reports:
            raise ValidationError(f"{source}: more than one report for topic {report.topic_id}")
        validate_report(report)
        reports[report.topic_id] = report

    system = data.get('system')
    if not system:
        raise ParseError("missing 'system' name", path=source)
    return Run(system_name=system, variant_label=data.get('variant') or 'base', reports=reports)


def parse_run(path: Union[str, Path]) -> Run:
    """
    Load run.json and check every report against its budget

    Args:
        path: Run file

    Returns:
        Validated Run
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Run file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line_number=e.lineno, path=str(path))

    run = run_from_dict(data, source=str(path))
    logger.info(f"📥 Loaded run {run.system_name}/{run.variant_label} with {len(run.reports)} reports")
    return run


def _sentence_to_dict(sentence: ReportSentence) -> dict:
    record = {'text': sentence.text, 'citations': list(sentence.citations)}
    if sentence.source_nugget_id is not None:
        record['source_nugget_id'] = sentence.source_nugget_id
    if sentence.passage is not None:
        record['passage'] = sentence.passage
    if sentence.confidence is not None:
        record['confidence'] = sentence.confidence
    return record


def run_to_dict(run: Run) -> dict:
    return {
        'system': run.system_name,
        'variant': run.variant_label,
        'reports': [
            {
                'topic_id': report.topic_id,
                'length_class': report.length_class.value,
                'sentences': [_sentence_to_dict(s) for s in report.sentences],
            }
            for _, report in sorted(run.reports.items())
        ],
    }


def serialize_run(run: Run) -> bytes:
    """Canonical JSON bytes: sorted keys, reports ordered by topic id"""
    return (json.dumps(run_to_dict(run), ensure_ascii=False, indent=2, sort_keys=True) + '\n').encode('utf-8')
