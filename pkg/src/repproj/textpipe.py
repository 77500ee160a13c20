"""Tokenization, vocabularies, fixed-grid encoding and corpus file I/O."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_SENTENCES = 30
DEFAULT_WORDS = 20
MIN_GROUP, MAX_GROUP = 15, 30

# a word keeps inner apostrophes ("c'est", "don't"); any other non-space,
# non-word character becomes its own token
_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token/id map with reserved ``PAD=0`` and ``UNK=1``."""

    def __init__(self, tokens: Sequence[str] = (), lang_tag: str = ""):
        self.lang_tag = lang_tag
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id = {}
        for tok in tokens:
            if tok in self.token_to_id or tok in (PAD_TOKEN, UNK_TOKEN):
                raise DataError(f"duplicate or reserved token in vocabulary: {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self.lang_tag == other.lang_tag
            and self.id_to_token == other.id_to_token
        )

    def __repr__(self):
        return f"Vocabulary(lang_tag={self.lang_tag!r}, size={len(self)})"

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.id_to_token[2:]

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path, lang_tag=""):
        text = Path(path).read_text(encoding="utf-8")
        return cls([t for t in text.split("\n") if t], lang_tag=lang_tag)


def build_vocab(corpus: Iterable[Iterable[str]], min_count=2, max_size=50000, lang_tag="") -> Vocabulary:
    """Frequency-ranked vocabulary over token streams.

    ``max_size`` counts the two reserved entries, so ``max_size=3`` leaves one
    slot for a real token.
    """
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    if max_size < 2:
        raise ConfigError("max_size must leave room for PAD and UNK")
    counts = Counter()
    for stream in corpus:
        counts.update(stream)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(ranked[: max_size - 2], lang_tag=lang_tag)


@dataclass
class EncodedReview:
    grid: np.ndarray
    label: int | None = None
    n_sentences: int = 0
    n_words: list = field(default_factory=list)


def encode_review(sentences: Sequence[Sequence[str]], vocab: Vocabulary, S=DEFAULT_SENTENCES, W=DEFAULT_WORDS, label=None):
    """Pad/truncate tokenized sentences to an ``S x W`` id grid, keeping prefixes."""
    if S < 1 or W < 1:
        raise ConfigError("grid dimensions must be >= 1")
    grid = np.full((S, W), PAD, dtype=np.int64)
    for i, sent in enumerate(sentences[:S]):
        ids = [vocab.encode(t) for t in sent[:W]]
        grid[i, : len(ids)] = ids
    return EncodedReview(grid, label, len(sentences), [len(s) for s in sentences])


def binarize_rating(stars) -> int | None:
    """1 for more than 3 stars, 0 for fewer, ``None`` (skip) for exactly 3."""
    if isinstance(stars, bool) or not isinstance(stars, (int, float)) or not 1 <= stars <= 5:
        raise DataError(f"star rating must be a number in [1, 5], got {stars!r}")
    if stars > 3:
        return 1
    if stars < 3:
        return 0
    return None


@dataclass
class ParallelParagraph:
    source_grid: np.ndarray
    target_grid: np.ndarray
    group_size: int


def _group_sizes(n, rng):
    sizes, used = [], 0
    while used < n:
        k = int(rng.integers(MIN_GROUP, MAX_GROUP + 1))
        sizes.append(min(k, n - used))
        used += k
    return sizes


def batch_pseudo_paragraphs(
    source: Sequence[Sequence[str]],
    target: Sequence[Sequence[str]],
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    rng,
    S=DEFAULT_SENTENCES,
    W=DEFAULT_WORDS,
    sizes: Sequence[int] | None = None,
) -> list[ParallelParagraph]:
    """Group contiguous aligned sentence pairs into pseudo paragraphs.

    Group sizes are drawn uniformly from [15, 30] unless ``sizes`` forces
    them. The final group holds whatever pairs remain. Each side is encoded
    independently; sentence alignment inside a group is not used.
    """
    if len(source) != len(target):
        raise DataError(f"parallel streams are misaligned: {len(source)} vs {len(target)} sentences")
    n = len(source)
    if sizes is None:
        sizes = _group_sizes(n, rng)
    elif sum(sizes) < n:
        sizes = list(sizes) + _group_sizes(n - sum(sizes), rng)
    out, start = [], 0
    for k in sizes:
        if start >= n:
            break
        stop = min(start + k, n)
        out.append(
            ParallelParagraph(
                encode_review(source[start:stop], source_vocab, S, W).grid,
                encode_review(target[start:stop], target_vocab, S, W).grid,
                stop - start,
            )
        )
        start = stop
    return out


@dataclass
class CorpusStats:
    review_count: int
    parallel_count: int
    source_vocab_size: int
    target_vocab_size: int
    positive_fraction: float


def corpus_stats(labels, parallel_count, source_vocab, target_vocab):
    labels = np.asarray(labels)
    pos = float(labels.mean()) if labels.size else 0.0
    return CorpusStats(int(labels.size), int(parallel_count), len(source_vocab), len(target_vocab), pos)


# ------------------------------------------------------------------ file I/O


@dataclass
class LabeledRecord:
    sentences: list  # list of token lists
    label: int
    id: int


def read_labeled(path) -> list[LabeledRecord]:
    """Read JSON-lines reviews; 3-star reviews are dropped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            has_stars, has_label = "stars" in obj, "label" in obj
            if has_stars == has_label:
                raise DataError(f"{path}:{lineno}: exactly one of 'stars' or 'label' is required")
            if has_stars:
                label = binarize_rating(obj["stars"])
                if label is None:
                    continue
            else:
                label = obj["label"]
                if label not in (0, 1) or isinstance(label, bool):
                    raise DataError(f"{path}:{lineno}: label must be 0 or 1")
            sents = obj.get("sentences")
            if not isinstance(sents, list) or not all(isinstance(s, str) for s in sents):
                raise DataError(f"{path}:{lineno}: 'sentences' must be a list of strings")
            records.append(LabeledRecord([tokenize(s) for s in sents], int(label), lineno - 1))
    return records


def write_labeled(path, reviews: Iterable[tuple[Sequence[str], int]]):
    with open(path, "w", encoding="utf-8") as fh:
        for sentences, label in reviews:
            fh.write(json.dumps({"label": int(label), "sentences": list(sentences)}, ensure_ascii=False) + "\n")


def read_parallel(source_path, target_path):
    """Two line-aligned text files -> two lists of token lists."""
    src = Path(source_path).read_text(encoding="utf-8").splitlines()
    tgt = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src) != len(tgt):
        raise DataError(f"parallel files differ in length: {len(src)} vs {len(tgt)} lines")
    return [tokenize(s) for s in src], [tokenize(t) for t in tgt]


def write_lines(path, lines: Iterable[str]):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def encode_records(records: Sequence[LabeledRecord], vocab, S=DEFAULT_SENTENCES, W=DEFAULT_WORDS):
    """Stack records into an ``(N, S, W)`` id array and a label vector."""
    grids = np.full((len(records), S, W), PAD, dtype=np.int64)
    for i, rec in enumerate(records):
        grids[i] = encode_review(rec.sentences, vocab, S, W).grid
    labels = np.array([r.label for r in records], dtype=np.int64)
    return grids, labels


def stack_paragraphs(paragraphs: Sequence[ParallelParagraph]):
    src = np.stack([p.source_grid for p in paragraphs])
    tgt = np.stack([p.target_grid for p in paragraphs])
    return src, tgt


def iter_token_streams(records: Iterable[LabeledRecord]) -> Iterator[list[str]]:
    for rec in records:
        for sent in rec.sentences:
            yield sent
