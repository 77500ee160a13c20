"""scikit-learn style wrappers around the transfer pipeline.

A review is a list of sentence strings (a bare string counts as a
one-sentence review). Parallel data is a pair of equal-length lists of
aligned sentence strings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .benchmark import build_training_vocabs, encode_training_data
from .errors import ConfigError, DataError
from .model import HierarchicalGRU, ModelConfig
from .textpipe import build_vocab, encode_review, tokenize
from .transfer import LabeledData, TransferConfig, train_joint, train_labeled, train_two_stage

MODES = ("joint", "two-stage", "labeled-only")


def check_reviews(X, name="X"):
    """Validate a review collection -> list of lists of token lists."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise DataError(f"{name} must be a sequence of reviews")
    if len(X) == 0:
        raise DataError(f"{name} is empty")
    out = []
    for i, review in enumerate(X):
        if isinstance(review, str):
            review = [review]
        if not isinstance(review, (list, tuple)) or not all(isinstance(s, str) for s in review):
            raise DataError(f"{name}[{i}] must be a string or a list of sentence strings")
        out.append([tokenize(s) for s in review])
    return out


def check_binary_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise DataError(f"y must be 1-d with {n} entries, got shape {y.shape}")
    classes = np.unique(y)
    if len(classes) > 2:
        raise DataError(f"binary classifier got {len(classes)} classes")
    return classes, (y == classes[-1]).astype(np.int64) if len(classes) == 2 else np.zeros(n, dtype=np.int64)


def check_parallel(parallel):
    try:
        src, tgt = parallel
    except (TypeError, ValueError):
        raise DataError("parallel must be a (source_sentences, target_sentences) pair") from None
    if len(src) != len(tgt):
        raise DataError(f"parallel sides differ in length: {len(src)} vs {len(tgt)}")
    if len(src) == 0:
        raise DataError("parallel data is empty")
    return [tokenize(s) for s in src], [tokenize(t) for t in tgt]


class ReviewEncoder(TransformerMixin, BaseEstimator):
    """Reviews -> ``(N, max_sentences, max_words)`` token-id grids."""

    def __init__(self, max_sentences=30, max_words=20, min_count=2, max_vocab=50000, lang="src"):
        self.max_sentences = max_sentences
        self.max_words = max_words
        self.min_count = min_count
        self.max_vocab = max_vocab
        self.lang = lang

    def fit(self, X, y=None):
        reviews = check_reviews(X)
        self.vocab_ = build_vocab((s for r in reviews for s in r), self.min_count, self.max_vocab, self.lang)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        reviews = check_reviews(X)
        return np.stack([encode_review(r, self.vocab_, self.max_sentences, self.max_words).grid for r in reviews])


class RepresentationProjectionClassifier(ClassifierMixin, BaseEstimator):
    """Binary review classifier trained in a source language and usable in a
    target language through parallel text.

    ``fit(X, y, parallel=(src_sentences, tgt_sentences))`` trains with the
    chosen regime; ``predict(X, lang="tgt")`` classifies target-language
    reviews by swapping in the target embeddings.
    """

    def __init__(
        self,
        embed_dim=64,
        sentence_dim=256,
        review_dim=256,
        max_sentences=30,
        max_words=20,
        dropout=0.5,
        mode="joint",
        supervision_mode="representation",
        alpha=1.0,
        labeled_epochs=10,
        projection_epochs=10,
        pretrain_epochs=4,
        joint_epochs=12,
        batch_size=32,
        min_count=2,
        max_vocab=50000,
        source_lang="src",
        target_lang="tgt",
        random_state=0,
    ):
        self.embed_dim = embed_dim
        self.sentence_dim = sentence_dim
        self.review_dim = review_dim
        self.max_sentences = max_sentences
        self.max_words = max_words
        self.dropout = dropout
        self.mode = mode
        self.supervision_mode = supervision_mode
        self.alpha = alpha
        self.labeled_epochs = labeled_epochs
        self.projection_epochs = projection_epochs
        self.pretrain_epochs = pretrain_epochs
        self.joint_epochs = joint_epochs
        self.batch_size = batch_size
        self.min_count = min_count
        self.max_vocab = max_vocab
        self.source_lang = source_lang
        self.target_lang = target_lang
        self.random_state = random_state

    def _configs(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        seed = 0 if self.random_state is None else int(self.random_state)
        model = ModelConfig(
            self.embed_dim, self.sentence_dim, self.review_dim, self.max_sentences, self.max_words, 1, self.dropout
        )
        transfer = TransferConfig(
            alpha=self.alpha,
            labeled_epochs=self.labeled_epochs,
            projection_epochs=self.projection_epochs,
            pretrain_epochs=self.pretrain_epochs,
            joint_epochs=self.joint_epochs,
            batch_size=self.batch_size,
            seed=seed,
            supervision_mode=self.supervision_mode,
        )
        return model, transfer, seed

    def fit(self, X, y, parallel=None):
        mc, tc, seed = self._configs()
        reviews = check_reviews(X)
        self.classes_, labels = check_binary_labels(y, len(reviews))
        if parallel is None:
            if self.mode != "labeled-only":
                raise DataError(f"mode {self.mode!r} needs parallel data")
            par_src = par_tgt = []
        else:
            par_src, par_tgt = check_parallel(parallel)
        labeled = list(zip(reviews, labels))
        S, W = mc.max_sentences, mc.max_words
        if par_tgt:
            src_vocab, tgt_vocab = build_training_vocabs(
                labeled, par_src, par_tgt, self.min_count, self.source_lang, self.target_lang, self.max_vocab
            )
            vocabs = {self.source_lang: src_vocab, self.target_lang: tgt_vocab}
            lab, par = encode_training_data(labeled, par_src, par_tgt, src_vocab, tgt_vocab, S, W, seed)
        else:
            src_vocab = build_vocab((s for r in reviews for s in r), self.min_count, self.max_vocab, self.source_lang)
            vocabs = {self.source_lang: src_vocab}
            grids = np.stack([encode_review(r, src_vocab, S, W).grid for r in reviews])
            lab, par = LabeledData(grids, labels), None
        model = HierarchicalGRU(mc, vocabs, self.source_lang, seed=seed)
        if self.mode == "joint":
            model, self.loss_log_ = train_joint(lab, par, tc, model)
        elif self.mode == "two-stage":
            model, self.loss_log_ = train_two_stage(lab, par, tc, model)
        else:
            model, self.loss_log_ = train_labeled(lab, tc, model)
        self.model_ = model
        return self

    def _grids(self, X, lang):
        check_is_fitted(self, "model_")
        lang = lang or self.source_lang
        view = self.model_.view(lang)
        c = self.model_.config
        reviews = check_reviews(X)
        return view, np.stack([encode_review(r, view.vocab, c.max_sentences, c.max_words).grid for r in reviews])

    def predict_proba(self, X, lang=None):
        """Columns follow ``classes_``; ``lang`` picks the embedding table."""
        view, grids = self._grids(X, lang)
        p = view.predict_proba(grids).astype(np.float64)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, lang=None):
        p = self.predict_proba(X, lang)[:, 1]
        if len(self.classes_) == 1:
            return np.full(len(p), self.classes_[0])
        return self.classes_[(p > 0.5).astype(int)]

    def transform(self, X, lang=None):
        """Task representations, one row per review."""
        view, grids = self._grids(X, lang)
        return view.encode(grids).data.astype(np.float64)
