"""Synthetic bilingual sentiment corpora built from a word-substitution cipher.

The source "language" is a bag of pseudo-words split into positive, negative
and neutral classes. Reviews mix polarity words matching their label with
neutral filler. The target language is the word-for-word cipher image of the
source, optionally corrupted on the parallel side by replacing tokens with
random target words.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .textpipe import write_labeled, write_lines

POLARITIES = ("positive", "negative", "neutral")
_SOURCE_SYLLABLES = [c + v for c in "bdgklmnprstvz" for v in "aeiou"]
_TARGET_SYLLABLES = [c + v for c in "cfhjqwxy" for v in "aeiouy"]


@dataclass
class SynthSpec:
    vocab_size: int = 240
    n_positive: int = 24
    n_negative: int = 24
    min_sentences: int = 3
    max_sentences: int = 6
    min_words: int = 6
    max_words: int = 10
    polarity_rate: float = 0.2  # one polarity word per four neutral ones
    zipf: float = 0.5
    noise: float = 0.0
    n_labeled: int = 2000
    n_parallel: int = 3000
    n_test: int = 500
    seed: int = 0
    source_lang: str = "src"
    target_lang: str = "tgt"

    def __post_init__(self):
        if self.n_positive < 1 or self.n_negative < 1:
            raise ConfigError("need at least one positive and one negative word")
        if self.n_positive + self.n_negative >= self.vocab_size:
            raise ConfigError("polarity lexicons must leave room for neutral words")
        if not 0 <= self.noise < 1:
            raise ConfigError(f"noise must be in [0, 1), got {self.noise}")
        if not 0 < self.polarity_rate <= 1:
            raise ConfigError("polarity_rate must be in (0, 1]")
        if not 1 <= self.min_sentences <= self.max_sentences:
            raise ConfigError("need 1 <= min_sentences <= max_sentences")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        if min(self.n_labeled, self.n_parallel, self.n_test) < 1:
            raise ConfigError("corpus sizes must be positive")
        if self.zipf < 0:
            raise ConfigError("zipf exponent must be >= 0")
        if self.source_lang == self.target_lang:
            raise ConfigError("source and target language tags must differ")

    def replace(self, **kw):
        return SynthSpec(**{**asdict(self), **kw})


@dataclass(frozen=True)
class TruthEntry:
    source: str
    target: str
    polarity: str


@dataclass
class SynthCorpus:
    spec: SynthSpec
    labeled: list  # [(sentences, label)], source language
    source_test: list
    target_test: list
    parallel_source: list  # one sentence string per entry
    parallel_target: list
    truth: list  # [TruthEntry]

    @property
    def cipher(self):
        return {t.source: t.target for t in self.truth}

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_labeled(d / "labeled.jsonl", self.labeled)
        write_labeled(d / "source_test.jsonl", self.source_test)
        write_labeled(d / "target_test.jsonl", self.target_test)
        write_lines(d / "parallel.source.txt", self.parallel_source)
        write_lines(d / "parallel.target.txt", self.parallel_target)
        write_truth_map(d / "truth_map.tsv", self.truth)
        (d / "spec.json").write_text(json.dumps(asdict(self.spec), sort_keys=True, indent=1) + "\n")
        return sorted(p.name for p in d.iterdir())


def _pseudo_words(rng, n, syllables, taken=()):
    out, seen = [], set(taken)
    while len(out) < n:
        w = "".join(rng.choice(syllables, size=int(rng.integers(2, 4))))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class _Generator:
    def __init__(self, spec: SynthSpec, rng):
        self.spec = spec
        self.rng = rng
        words = _pseudo_words(rng, spec.vocab_size, _SOURCE_SYLLABLES)
        images = _pseudo_words(rng, spec.vocab_size, _TARGET_SYLLABLES)
        p, n = spec.n_positive, spec.n_negative
        self.classes = {"positive": words[:p], "negative": words[p : p + n], "neutral": words[p + n :]}
        self.weights = {k: self._zipf(len(v)) for k, v in self.classes.items()}
        self.cipher = dict(zip(words, images))
        self.target_words = images
        self.truth = [
            TruthEntry(w, self.cipher[w], cls) for cls in POLARITIES for w in self.classes[cls]
        ]

    def _zipf(self, n):
        w = 1.0 / np.arange(1, n + 1) ** self.spec.zipf
        return w / w.sum()

    def _draw(self, cls, size):
        return self.rng.choice(self.classes[cls], size=size, p=self.weights[cls])

    def sentence(self, label):
        s = self.spec
        length = int(self.rng.integers(s.min_words, s.max_words + 1))
        polar = self.rng.random(length) < s.polarity_rate
        cls = "positive" if label == 1 else "negative"
        pw = self._draw(cls, length)
        nw = self._draw("neutral", length)
        return [str(pw[i]) if polar[i] else str(nw[i]) for i in range(length)]

    def review(self, label):
        s = self.spec
        n = int(self.rng.integers(s.min_sentences, s.max_sentences + 1))
        return [self.sentence(label) for _ in range(n)]

    def balanced_labels(self, n):
        labels = np.array([i % 2 for i in range(n)])
        self.rng.shuffle(labels)
        return labels

    def corrupt(self, tokens):
        out = []
        for tok in tokens:
            image = self.cipher[tok]
            if self.spec.noise > 0 and self.rng.random() < self.spec.noise:
                # a confounder: any target word except the true image
                j = int(self.rng.integers(len(self.target_words) - 1))
                cand = self.target_words[j]
                image = self.target_words[-1] if cand == image else cand
            out.append(image)
        return out


def generate(spec: SynthSpec) -> SynthCorpus:
    rng = np.random.default_rng(spec.seed)
    g = _Generator(spec, rng)

    def reviews(n):
        return [(g.review(int(y)), int(y)) for y in g.balanced_labels(n)]

    labeled = reviews(spec.n_labeled)
    source_test = reviews(spec.n_test)
    target_test = [([[g.cipher[t] for t in s] for s in sents], y) for sents, y in reviews(spec.n_test)]

    par_src, par_tgt = [], []
    while len(par_src) < spec.n_parallel:
        for sent in g.review(int(rng.integers(2))):
            if len(par_src) == spec.n_parallel:
                break
            par_src.append(sent)
            par_tgt.append(g.corrupt(sent))

    def join(rs):
        return [([" ".join(s) for s in sents], y) for sents, y in rs]

    return SynthCorpus(
        spec,
        join(labeled),
        join(source_test),
        join(target_test),
        [" ".join(s) for s in par_src],
        [" ".join(s) for s in par_tgt],
        g.truth,
    )


def write_truth_map(path, truth):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["source_token", "target_token", "polarity"])
        for t in truth:
            w.writerow([t.source, t.target, t.polarity])


def read_truth_map(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0] != ["source_token", "target_token", "polarity"]:
        raise DataError(f"{path}: missing truth-map header")
    out = []
    for i, row in enumerate(rows[1:], 2):
        if len(row) != 3 or row[2] not in POLARITIES:
            raise DataError(f"{path}:{i}: malformed truth-map row")
        out.append(TruthEntry(*row))
    return out


# ------------------------------------------------------------ neighbor scoring


@dataclass
class NeighborRecovery:
    agreement: float
    exact: float
    prior: float  # expected agreement when neighbors are random
    n_queries: int


def score_neighbor_recovery(model, truth, top_k=10, word_budget=20, source_lang=None, target_lang=None):
    """How well target-side neighbors of polarity words share their polarity.

    Queries are the ``word_budget`` most frequent positive/negative source
    words (vocabulary ids are frequency ranked). For each query the
    polarity votes of its ``top_k`` target neighbors are counted, neutral
    neighbors abstaining; a query agrees when its own class wins. Ties, and
    queries with no polar neighbor in the top ``k``, are settled by the
    nearest polar target word overall.

    ``exact`` is the fraction of queries whose single nearest neighbor is the
    true cipher image. ``prior`` is the mean share of the query's class among
    polar target words, i.e. the agreement rate expected by chance.
    """
    from .evaluation import cosine_rank

    source_lang = source_lang or model.source_lang
    if target_lang is None:
        if not model.target_langs:
            raise ConfigError("model has no target-language embedding table")
        target_lang = model.target_langs[0]
    src_vocab, tgt_vocab = model.vocabs[source_lang], model.vocabs[target_lang]
    src_table = model.embedding(source_lang).data
    tgt_table = model.embedding(target_lang).data

    source_class = {t.source: t.polarity for t in truth}
    target_class = {t.target: t.polarity for t in truth}
    image = {t.source: t.target for t in truth}
    queries = [tok for tok in src_vocab.tokens if source_class.get(tok, "neutral") != "neutral"][:word_budget]
    if not queries:
        raise DataError("no polarity-bearing source words in the model vocabulary")

    cand_ids = np.arange(2, len(tgt_vocab))
    cand_cls = np.array([target_class.get(tgt_vocab.decode(i), "neutral") for i in cand_ids])
    n_polar = {c: int((cand_cls == c).sum()) for c in ("positive", "negative")}
    total_polar = n_polar["positive"] + n_polar["negative"]

    agree = exact = prior = 0.0
    for tok in queries:
        cls = source_class[tok]
        other = "negative" if cls == "positive" else "positive"
        order = cosine_rank(src_table[src_vocab.encode(tok)], tgt_table[cand_ids])
        ranked_cls = cand_cls[order]
        top = ranked_cls[:top_k]
        mine, theirs = int((top == cls).sum()), int((top == other).sum())
        if mine != theirs:
            agree += mine > theirs
        else:
            polar = ranked_cls[ranked_cls != "neutral"]
            agree += bool(polar.size) and polar[0] == cls
        exact += tgt_vocab.decode(int(cand_ids[order[0]])) == image[tok]
        prior += n_polar[cls] / total_polar if total_polar else 0.0
    n = len(queries)
    return NeighborRecovery(agree / n, exact / n, prior / n, n)
