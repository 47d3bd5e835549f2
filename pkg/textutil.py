#!/usr/bin/env python3
"""
Text helpers shared by the judge, the pipeline and the evaluator
Normalisation, tokenisation, stopwords and sentence splitting
"""

import re
from typing import List, Tuple

# Fixed English stopword list used by the mock judge and mock generators
STOPWORDS = frozenset("""
a about above after again against all also am an and any are as at
be because been before being below between both but by
can could did do does doing down during each else ever few for from further
had has have having he her here hers herself him himself his how
i if in into is it its itself just me more most my myself
no nor not nothing now of off on once only or other our ours ourselves out over own
same she should so some such than that the their theirs them themselves then there
these they this those through to too under until up very
was we were what when where which while who whom why will with would
you your yours yourself yourselves
""".split())

_NON_ALNUM = re.compile(r'[\W_]+', re.UNICODE)
_SENTENCE_BOUNDARY = re.compile(r'(?<=[.!?])\s+')


def normalize(text: str) -> str:
    """
    Normalise text for matching: Unicode lowercase, non-alphanumerics to
    spaces, whitespace collapsed

    Args:
        text: Raw text

    Returns:
        Normalised text (possibly empty)
    """
    return ' '.join(_NON_ALNUM.sub(' ', text.casefold()).split())


def tokenize(text: str) -> List[str]:
    """Whitespace/punctuation tokens of the normalised text"""
    return normalize(text).split()


def content_words(text: str) -> List[str]:
    """Tokens with stopwords removed, in text order (duplicates kept)"""
    return [token for token in tokenize(text) if token not in STOPWORDS]


def contains_phrase(haystack: str, phrase: str) -> bool:
    """True if the normalised phrase is a substring of the normalised haystack"""
    needle = normalize(phrase)
    if not needle:
        return False
    return needle in normalize(haystack)


def split_sentences(text: str) -> List[Tuple[int, str]]:
    """
    Split text into sentences at terminal punctuation followed by whitespace

    Args:
        text: Document text

    Returns:
        List of (character offset, sentence) pairs; each sentence is a
        verbatim substring of text starting at its offset
    """
    spans = []
    start = 0
    pieces = []
    for match in _SENTENCE_BOUNDARY.finditer(text):
        pieces.append((start, text[start:match.start()]))
        start = match.end()
    pieces.append((start, text[start:]))

    for offset, piece in pieces:
        stripped = piece.strip()
        if not stripped:
            continue
        lead = len(piece) - len(piece.lstrip())
        spans.append((offset + lead, stripped))
    return spans
