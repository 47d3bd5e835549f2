#!/usr/bin/env python3
"""
Test collection for nuggetprobe
Corpus documents, report requests (topics) and nugget banks: models, loaders, serializers
"""

import json
import logging
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from errors import ParseError, ValidationError

logger = logging.getLogger(__name__)


class Origin(str, Enum):
    SYSTEM = 'system'
    GOLD = 'gold'


class Document(BaseModel):
    """One corpus document; `translation` is preferred over `text` when present"""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    lang: str = 'en'
    text: str = Field(min_length=1)
    translation: Optional[str] = None

    @property
    def working_text(self) -> str:
        return self.translation if self.translation else self.text


class TopicRequest(BaseModel):
    """A report request: title, problem statement and requester background"""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    title: str = Field(min_length=1)
    problem_statement: str = ''
    background: str = ''

    @property
    def query_text(self) -> str:
        return f"{self.title} {self.problem_statement}".strip()


class Nugget(BaseModel):
    """A question with one or more acceptable answers"""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    question: str = Field(min_length=1)
    answers: Tuple[str, ...]
    origin: Origin = Origin.GOLD

    @field_validator('answers')
    @classmethod
    def _answers_are_an_ordered_set(cls, answers: Tuple[str, ...]) -> Tuple[str, ...]:
        if not answers:
            raise ValueError('answers must be non-empty')
        if any(not answer.strip() for answer in answers):
            raise ValueError('answers must not be blank')
        # ordered set: keep first occurrence
        return tuple(dict.fromkeys(answers))


class NuggetBank(BaseModel):
    """All nuggets of one topic, sharing one origin"""

    model_config = ConfigDict(frozen=True)

    topic_id: str
    nuggets: Tuple[Nugget, ...] = ()
    origin: Origin = Origin.GOLD

    @field_validator('nuggets')
    @classmethod
    def _unique_ids(cls, nuggets: Tuple[Nugget, ...]) -> Tuple[Nugget, ...]:
        seen = set()
        for nugget in nuggets:
            if nugget.id in seen:
                raise ValueError(f'duplicate nugget id {nugget.id!r}')
            seen.add(nugget.id)
        return nuggets

    @model_validator(mode='after')
    def _shared_origin(self):
        stray = [n.id for n in self.nuggets if n.origin != self.origin]
        if stray:
            raise ValueError(f"nuggets {stray} do not share bank origin {self.origin.value}")
        return self

    def __len__(self) -> int:
        return len(self.nuggets)

    def __iter__(self) -> Iterator[Nugget]:
        return iter(self.nuggets)

    def get(self, nugget_id: str) -> Optional[Nugget]:
        for nugget in self.nuggets:
            if nugget.id == nugget_id:
                return nugget
        return None


class Corpus:
    """Id-indexed, read-only document store"""

    def __init__(self, documents: Optional[List[Document]] = None):
        self._documents: Dict[str, Document] = {}
        for doc in documents or []:
            if doc.id in self._documents:
                raise ValidationError(f"Duplicate document id: {doc.id}")
            self._documents[doc.id] = doc

    def __len__(self) -> int:
        return len(self._documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._documents

    def __iter__(self) -> Iterator[Document]:
        return iter(self._documents.values())

    @property
    def ids(self) -> List[str]:
        return list(self._documents)

    def get(self, doc_id: str) -> Document:
        try:
            return self._documents[doc_id]
        except KeyError:
            raise ValidationError(f"Unknown document id: {doc_id}")

    def text_of(self, doc_id: str) -> str:
        """Text the pipeline and the judge operate on"""
        return self.get(doc_id).working_text


def atomic_write(path: Union[str, Path], data: Union[str, bytes]):
    """
    Write a file via temp file + rename so readers never see a partial file

    Args:
        path: Destination path (parent directories are created)
        data: Text (written as UTF-8) or bytes
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode('utf-8') if isinstance(data, str) else data

    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _describe(error: PydanticValidationError) -> str:
    parts = []
    for item in error.errors():
        where = '.'.join(str(p) for p in item.get('loc', ())) or 'record'
        parts.append(f"{where}: {item.get('msg')}")
    return '; '.join(parts)


def _read_json(path: Union[str, Path]):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"File not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line_number=e.lineno, path=str(path))


def load_corpus(path: Union[str, Path]) -> Corpus:
    """
    Load a line-delimited JSON corpus

    Args:
        path: corpus.jsonl, one {"id", "lang", "text", "translation"?} object per line

    Returns:
        Corpus indexed by document id
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Corpus file not found: {path}")

    documents = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"malformed JSON ({e.msg})", line_number=line_number, path=str(path))
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", line_number=line_number, path=str(path))
            try:
                documents.append(Document(**record))
            except PydanticValidationError as e:
                raise ParseError(_describe(e), line_number=line_number, path=str(path))

    corpus = Corpus(documents)
    logger.info(f"📥 Loaded {len(corpus)} documents from {path}")
    return corpus


def load_topics(path: Union[str, Path]) -> List[TopicRequest]:
    """Load topics.json, preserving file order"""
    data = _read_json(path)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array of topics")

    topics = []
    seen = set()
    for index, record in enumerate(data):
        if not isinstance(record, dict):
            raise ValidationError(f"{path}: topic #{index} is not an object")
        try:
            topic = TopicRequest(**record)
        except PydanticValidationError as e:
            raise ValidationError(f"{path}: topic #{index}: {_describe(e)}")
        if topic.id in seen:
            raise ValidationError(f"{path}: duplicate topic id {topic.id}")
        seen.add(topic.id)
        topics.append(topic)

    logger.info(f"📥 Loaded {len(topics)} topics from {path}")
    return topics


def build_nugget_bank(topic_id: str, records: List[dict], origin: Union[Origin, str]) -> NuggetBank:
    """Validate raw nugget records into a bank tagged with `origin`"""
    origin = Origin(origin)
    try:
        nuggets = [
            Nugget(id=r.get('id'), question=r.get('question'), answers=r.get('answers') or (), origin=origin)
            for r in records
        ]
        return NuggetBank(topic_id=topic_id, nuggets=nuggets, origin=origin)
    except PydanticValidationError as e:
        raise ValidationError(f"nugget bank for topic {topic_id}: {_describe(e)}")
    except (AttributeError, ValueError) as e:
        raise ValidationError(f"nugget bank for topic {topic_id}: {e}")


def load_nugget_bank(path: Union[str, Path], origin: Union[Origin, str] = Origin.GOLD) -> Dict[str, NuggetBank]:
    """
    Load nuggets.json: {"<topic_id>": [{"id", "question", "answers"}]}

    Args:
        path: Nugget bank file
        origin: Origin every loaded bank is tagged with

    Returns:
        topic_id -> NuggetBank
    """
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object keyed by topic id")

    banks = {}
    for topic_id, records in data.items():
        if not isinstance(records, list):
            raise ValidationError(f"{path}: nuggets for topic {topic_id} must be an array")
        banks[topic_id] = build_nugget_bank(topic_id, records, origin)

    logger.info(f"📥 Loaded {sum(len(b) for b in banks.values())} {Origin(origin).value} nuggets "
                f"for {len(banks)} topics from {path}")
    return banks


def save_corpus(corpus: Corpus, path: Union[str, Path]):
    lines = [
        json.dumps(doc.model_dump(exclude_none=True), ensure_ascii=False, sort_keys=True)
        for doc in corpus
    ]
    atomic_write(path, ''.join(line + '\n' for line in lines))


def save_topics(topics: List[TopicRequest], path: Union[str, Path]):
    records = [topic.model_dump() for topic in topics]
    atomic_write(path, json.dumps(records, ensure_ascii=False, indent=2, sort_keys=True) + '\n')


def nugget_banks_to_json(banks: Dict[str, NuggetBank]) -> dict:
    return {
        topic_id: [
            {'id': n.id, 'question': n.question, 'answers': list(n.answers)}
            for n in bank.nuggets
        ]
        for topic_id, bank in banks.items()
    }


def save_nugget_banks(banks: Dict[str, NuggetBank], path: Union[str, Path]):
    atomic_write(path, json.dumps(nugget_banks_to_json(banks), ensure_ascii=False, indent=2, sort_keys=True) + '\n')
