#!/usr/bin/env python3
"""
Synthetic test collections for nuggetprobe

gen_fixture builds a desk-scale stand-in for a large news corpus. Per topic:
  - 10-15 gold nuggets, each attested by exactly one "fact" document
  - six distractor documents that mention the topic but state nothing
  - ten theme words, each shared by 2-4 fact documents
Unrelated noise documents pad the corpus up to the requested size.
All vocabulary is made of synthetic CVCVCV words, so every answer string
occurs only where the generator placed it.
"""

import logging
import random
from pathlib import Path
from typing import Dict, List, Tuple, Union

from collection import (
    Corpus, Document, NuggetBank, Origin, TopicRequest,
    build_nugget_bank, load_corpus, load_nugget_bank, load_topics,
    save_corpus, save_nugget_banks, save_topics,
)
from errors import ValidationError
from textutil import STOPWORDS, normalize

logger = logging.getLogger(__name__)

CONSONANTS = 'bdfgklmnprstvz'
VOWELS = 'aeiou'

N_THEMES = 10
N_DISTRACTORS = 6
MIN_GOLD, MAX_GOLD = 10, 15

PROBLEM_TEMPLATE = "Summarize developments concerning {title}."
BACKGROUND_TEMPLATE = "An analyst following {title} requires a concise briefing."
DISTRACTOR_TEMPLATE = "{t1}. Nothing more was reported."
QUESTION_TEMPLATE = "What is the {q1} of the {q2}?"

# Words used by templates elsewhere in the package; synthetic words must never hide inside them
_TEMPLATE_TEXT = (
    PROBLEM_TEMPLATE + BACKGROUND_TEMPLATE + DISTRACTOR_TEMPLATE + QUESTION_TEMPLATE
    + " It was and The of the was also Sources indicate that What is reported about"
)
_RESERVED = frozenset(normalize(_TEMPLATE_TEXT).split()) | STOPWORDS

ROUNDUP_DIR = Path(__file__).parent / 'fixtures' / 'roundup'


class WordSource:
    """Draws unique synthetic words from a seeded generator"""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used = set()

    def _acceptable(self, word: str) -> bool:
        if word in self.used or word in _RESERVED:
            return False
        return not any(word in reserved for reserved in _RESERVED)

    def draw(self) -> str:
        while True:
            word = ''.join(
                self.rng.choice(CONSONANTS) + self.rng.choice(VOWELS) for _ in range(3)
            )
            if self._acceptable(word):
                self.used.add(word)
                return word


def _theme_pair(g: int) -> Tuple[int, int]:
    # Facts 10+ reuse theme pairs in reverse order so every theme sentence stays unique
    if g < N_THEMES:
        return g % N_THEMES, (g + 3) % N_THEMES
    return (g + 3) % N_THEMES, g % N_THEMES


def _fact_text(t1: str, t2: str, q1: str, q2: str, answers: List[str], theme_a: str, theme_b: str) -> str:
    sentences = [f"{t1.capitalize()} {t2}.", f"The {q1} of the {q2} was {answers[0]}."]
    sentences += [f"The {q1} was also {answer}." for answer in answers[1:]]
    sentences.append(f"It was {theme_a} and {theme_b}.")
    return ' '.join(sentences)


def _gen_topic(words: WordSource, rng: random.Random, topic_id: str, answers_per_nugget: int):
    t1, t2 = words.draw(), words.draw()
    title = f"{t1} {t2}"
    topic = TopicRequest(
        id=topic_id,
        title=title,
        problem_statement=PROBLEM_TEMPLATE.format(title=title),
        background=BACKGROUND_TEMPLATE.format(title=title),
    )
    themes = [words.draw() for _ in range(N_THEMES)]
    n_gold = rng.randint(MIN_GOLD, MAX_GOLD)

    documents, nugget_records = [], []
    for g in range(n_gold):
        q1, q2 = words.draw(), words.draw()
        answers = [words.draw() for _ in range(answers_per_nugget)]
        first, second = _theme_pair(g)
        documents.append(Document(
            id=f"{topic_id}-doc{g:03d}",
            lang='en',
            text=_fact_text(t1, t2, q1, q2, answers, themes[first], themes[second]),
        ))
        nugget_records.append({
            'id': f"{topic_id}-n{g:02d}",
            'question': QUESTION_TEMPLATE.format(q1=q1, q2=q2),
            'answers': answers,
        })

    for d in range(N_DISTRACTORS):
        documents.append(Document(
            id=f"{topic_id}-doc{n_gold + d:03d}",
            lang='en',
            text=DISTRACTOR_TEMPLATE.format(t1=t1.capitalize()),
        ))

    bank = build_nugget_bank(topic_id, nugget_records, Origin.GOLD)
    return topic, documents, bank


def _noise_text(words: WordSource) -> str:
    w = [words.draw() for _ in range(5)]
    return f"{w[0].capitalize()} {w[1]} {w[2]}. The {w[3]} was {w[4]}."


def gen_fixture(seed: int = 7, n_topics: int = 3, n_docs: int = 30,
                answers_per_nugget: int = 1) -> Tuple[Corpus, List[TopicRequest], Dict[str, NuggetBank]]:
    """
    Generate a deterministic synthetic collection

    Args:
        seed: RNG seed; equal seeds give identical collections
        n_topics: Number of topics
        n_docs: Lower bound on corpus size (noise documents pad up to it)
        answers_per_nugget: Answers per gold nugget

    Returns:
        (corpus, topics, gold banks keyed by topic id)
    """
    for name, value in (('n_topics', n_topics), ('n_docs', n_docs), ('answers_per_nugget', answers_per_nugget)):
        if value < 1:
            raise ValidationError(f"{name} must be >= 1 (got {value})")

    rng = random.Random(seed)
    words = WordSource(rng)

    topics, documents, banks = [], [], {}
    for index in range(1, n_topics + 1):
        topic, topic_docs, bank = _gen_topic(words, rng, f"t{index:02d}", answers_per_nugget)
        topics.append(topic)
        documents.extend(topic_docs)
        banks[topic.id] = bank

    for index in range(max(0, n_docs - len(documents))):
        documents.append(Document(id=f"noise-{index:03d}", lang='en', text=_noise_text(words)))

    logger.info(f"✅ Generated fixture: {len(topics)} topics, {len(documents)} documents, "
                f"{sum(len(b) for b in banks.values())} gold nuggets (seed={seed})")
    return Corpus(documents), topics, banks


def write_fixture(out_dir: Union[str, Path], corpus: Corpus, topics: List[TopicRequest],
                  banks: Dict[str, NuggetBank]) -> Dict[str, Path]:
    """Write corpus.jsonl, topics.json and gold_nuggets.json into out_dir"""
    out_dir = Path(out_dir)
    paths = {
        'corpus': out_dir / 'corpus.jsonl',
        'topics': out_dir / 'topics.json',
        'nuggets': out_dir / 'gold_nuggets.json',
    }
    save_corpus(corpus, paths['corpus'])
    save_topics(topics, paths['topics'])
    save_nugget_banks(banks, paths['nuggets'])
    logger.info(f"📤 Fixture written to {out_dir}")
    return paths


def load_roundup_fixture() -> Tuple[Corpus, List[TopicRequest], Dict[str, NuggetBank]]:
    """The hand-written Roundup collection (topic 335) shipped with the package"""
    return (
        load_corpus(ROUNDUP_DIR / 'corpus.jsonl'),
        load_topics(ROUNDUP_DIR / 'topics.json'),
        load_nugget_bank(ROUNDUP_DIR / 'gold_nuggets.json', Origin.GOLD),
    )
