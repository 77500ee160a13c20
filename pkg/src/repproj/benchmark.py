"""End-to-end transfer runs on the synthetic cipher corpora."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import EvalReport, evaluate
from .model import HierarchicalGRU, ModelConfig
from .synth import SynthCorpus, SynthSpec, generate
from .textpipe import batch_pseudo_paragraphs, build_vocab, encode_review, tokenize
from .transfer import LabeledData, ParallelData, TransferConfig, train_joint, train_labeled, train_two_stage

log = logging.getLogger(__name__)

MODES = ("joint", "two-stage", "labeled-only")

# Small enough for minute-scale CPU runs; the synthetic reviews have at most
# 6 sentences of at most 10 words.
DESK_MODEL = ModelConfig(embed_dim=16, sentence_dim=32, review_dim=32, max_sentences=8, max_words=10)


@dataclass
class PreparedData:
    corpus: SynthCorpus
    source_vocab: object
    target_vocab: object
    labeled: LabeledData
    parallel: ParallelData
    source_test: LabeledData
    target_test: LabeledData


def _tok(sentences):
    return [tokenize(s) for s in sentences]


def _encode(reviews, vocab, S, W):
    """``reviews`` holds ``(token-list sentences, label)`` pairs."""
    if not reviews:
        return LabeledData(np.zeros((0, S, W), dtype=np.int64), np.zeros(0, dtype=np.int64))
    grids = np.stack([encode_review(sents, vocab, S, W).grid for sents, _ in reviews])
    return LabeledData(grids, np.array([y for _, y in reviews], dtype=np.int64))


def build_training_vocabs(
    labeled, parallel_source, parallel_target, min_count=2, source_lang="src", target_lang="tgt", max_size=50000
):
    """Source vocabulary from labeled + parallel source text, target from parallel target text."""
    labeled_tokens = [t for sents, _ in labeled for t in sents]
    src = build_vocab(labeled_tokens + list(parallel_source), min_count, max_size, source_lang)
    tgt = build_vocab(parallel_target, min_count, max_size, target_lang)
    return src, tgt


def encode_training_data(labeled, parallel_source, parallel_target, source_vocab, target_vocab, S, W, seed=0):
    """Tokenized reviews and aligned sentences -> grids; pseudo paragraphs use ``seed``."""
    rng = np.random.default_rng(seed)
    paragraphs = batch_pseudo_paragraphs(parallel_source, parallel_target, source_vocab, target_vocab, rng, S, W)
    parallel = ParallelData(
        np.stack([p.source_grid for p in paragraphs]), np.stack([p.target_grid for p in paragraphs])
    )
    return _encode(labeled, source_vocab, S, W), parallel


def prepare(corpus: SynthCorpus, model_config: ModelConfig, seed=0, min_count=2) -> PreparedData:
    """Vocabularies from training text only, then fixed-grid encodings."""
    S, W = model_config.max_sentences, model_config.max_words
    spec = corpus.spec
    labeled = [(_tok(sents), y) for sents, y in corpus.labeled]
    par_src = _tok(corpus.parallel_source)
    par_tgt = _tok(corpus.parallel_target)
    src_vocab, tgt_vocab = build_training_vocabs(labeled, par_src, par_tgt, min_count, spec.source_lang, spec.target_lang)
    lab, parallel = encode_training_data(labeled, par_src, par_tgt, src_vocab, tgt_vocab, S, W, seed)
    return PreparedData(
        corpus,
        src_vocab,
        tgt_vocab,
        lab,
        parallel,
        _encode([(_tok(x), y) for x, y in corpus.source_test], src_vocab, S, W),
        _encode([(_tok(x), y) for x, y in corpus.target_test], tgt_vocab, S, W),
    )


@dataclass
class BenchResult:
    seed: int
    source_report: EvalReport
    target_report: EvalReport | None
    model: HierarchicalGRU = field(repr=False)
    log: list = field(repr=False)

    @property
    def source_accuracy(self):
        return self.source_report.accuracy

    @property
    def target_accuracy(self):
        return self.target_report.accuracy if self.target_report else float("nan")


@dataclass
class Benchmark:
    """Generate a corpus, train one regime, evaluate on both test sets.

    ``run(seed)`` regenerates the corpus with that seed and trains with it,
    so distinct seeds give independent replicates.
    """

    spec: SynthSpec = field(default_factory=SynthSpec)
    model: ModelConfig = field(default_factory=lambda: replace(DESK_MODEL))
    transfer: TransferConfig = field(default_factory=TransferConfig)
    mode: str = "joint"
    min_count: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def data(self, seed) -> PreparedData:
        return prepare(generate(self.spec.replace(seed=seed)), self.model, seed, self.min_count)

    def run(self, seed, embed_dim=None, encode_dim=None, data: PreparedData | None = None) -> BenchResult:
        cfg = self.model
        if embed_dim is not None:
            cfg = replace(cfg, embed_dim=embed_dim)
        if encode_dim is not None:
            cfg = replace(cfg, sentence_dim=encode_dim, review_dim=encode_dim)
        data = data or self.data(seed)
        spec = data.corpus.spec
        vocabs = {spec.source_lang: data.source_vocab, spec.target_lang: data.target_vocab}
        model = HierarchicalGRU(cfg, vocabs, spec.source_lang, seed=seed)
        tc = replace(self.transfer, seed=seed)
        if self.mode == "joint":
            model, losses = train_joint(data.labeled, data.parallel, tc, model)
        elif self.mode == "two-stage":
            model, losses = train_two_stage(data.labeled, data.parallel, tc, model)
        else:
            model, losses = train_labeled(data.labeled, tc, model)
        src = evaluate(model.view(spec.source_lang), data.source_test.grids, data.source_test.labels)
        tgt = evaluate(model.view(spec.target_lang), data.target_test.grids, data.target_test.labels)
        log.info("seed %d %s: source acc %.4f target acc %.4f", seed, self.mode, src.accuracy, tgt.accuracy)
        return BenchResult(seed, src, tgt, model, losses)
