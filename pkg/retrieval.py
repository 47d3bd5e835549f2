#!/usr/bin/env python3
"""
Retrieval for nuggetprobe
Built-in BM25 ranking and ingestion of externally produced TREC run files
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict
from rank_bm25 import BM25Okapi

from collection import Corpus, TopicRequest
from config import Config
from errors import ParseError, ValidationError
from textutil import tokenize

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75


class RankedDoc(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str
    score: float
    rank: int


class BM25Index:
    """BM25 (k1=1.2, b=0.75) over the corpus working texts"""

    def __init__(self, corpus: Corpus):
        self.doc_ids = corpus.ids
        tokenized = [tokenize(corpus.text_of(doc_id)) for doc_id in self.doc_ids]
        self.bm25 = BM25Okapi(tokenized, k1=BM25_K1, b=BM25_B) if tokenized else None

    def search(self, query: str, depth: int) -> List[RankedDoc]:
        query_tokens = tokenize(query)
        if not query_tokens:
            raise ValidationError("Empty retrieval query")
        if self.bm25 is None:
            return []

        scores = self.bm25.get_scores(query_tokens)
        # Every document is ranked; zero scores trail the matches in doc id order
        hits = [(float(score), doc_id) for doc_id, score in zip(self.doc_ids, scores)]
        hits.sort(key=lambda hit: (-hit[0], hit[1]))
        return [RankedDoc(doc_id=doc_id, score=score, rank=rank)
                for rank, (score, doc_id) in enumerate(hits[:depth], start=1)]


def retrieve_bm25(corpus: Corpus, topic: TopicRequest, depth: int = 20,
                  index: Optional[BM25Index] = None) -> List[RankedDoc]:
    """
    Rank corpus documents for a topic

    Args:
        corpus: Document store
        topic: Query source (title + problem statement)
        depth: Maximum number of results
        index: Prebuilt index to reuse across topics

    Returns:
        Up to depth ranked documents, ties (zero scores included) broken by ascending doc id
    """
    index = index or BM25Index(corpus)
    ranked = index.search(topic.query_text, depth)
    logger.debug(f"BM25 topic {topic.id}: {len(ranked)} documents")
    return ranked


def ingest_rankfile(path: Union[str, Path], depth: int = Config.DEPTH) -> Dict[str, List[RankedDoc]]:
    """
    Read a 6-column TREC run file: topic Q0 docid rank score tag

    Args:
        path: Run file
        depth: Per-topic truncation depth

    Returns:
        topic_id -> ranked documents (ranks contiguous from 1)
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Rank file not found: {path}")

    rankings: Dict[str, List[RankedDoc]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            columns = line.split()
            if len(columns) != 6:
                raise ParseError(f"expected 6 columns, found {len(columns)}", line_number=line_number, path=str(path))
            topic_id, _, doc_id, rank_text, score_text, _ = columns
            try:
                rank, score = int(rank_text), float(score_text)
            except ValueError:
                raise ParseError("rank must be an integer and score a number", line_number=line_number, path=str(path))

            ranked = rankings.setdefault(topic_id, [])
            expected = len(ranked) + 1
            if rank != expected:
                raise ValidationError(
                    f"{path}:{line_number}: topic {topic_id} rank {rank} breaks the contiguous sequence (expected {expected})"
                )
            if ranked and score > ranked[-1].score:
                raise ValidationError(f"{path}:{line_number}: topic {topic_id} score increases with rank")
            ranked.append(RankedDoc(doc_id=doc_id, score=score, rank=rank))

    truncated = {topic_id: ranked[:depth] for topic_id, ranked in rankings.items()}
    logger.info(f"📥 Loaded rank file {path}: {len(truncated)} topics (depth {depth})")
    return truncated
