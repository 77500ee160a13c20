"""Losses and training loops for cross-lingual transfer.

A source-language classifier is trained on labeled reviews. Target-language
embeddings are then fitted on parallel text so that the shared encoder
produces the same task representation for both sides of each pair
(representation projection), or so that the target side reproduces the
source side's hard predicted label (label projection).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .model import HierarchicalGRU, ModelView, save_checkpoint

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7
SUPERVISION_MODES = ("representation", "label")
_LABELED_STREAM, _PARALLEL_STREAM = 1, 2


@dataclass
class TransferConfig:
    alpha: float = 1.0
    labeled_epochs: int = 10
    projection_epochs: int = 10
    pretrain_epochs: int = 4
    joint_epochs: int = 12
    labeled_only_epochs: int | None = None
    batch_size: int = 32
    seed: int = 0
    supervision_mode: str = "representation"
    lr: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        for name in ("labeled_epochs", "projection_epochs", "pretrain_epochs", "joint_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.labeled_only_epochs is not None and self.labeled_only_epochs < 0:
            raise ConfigError("labeled_only_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.supervision_mode not in SUPERVISION_MODES:
            raise ConfigError(f"supervision_mode must be one of {SUPERVISION_MODES}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.decay < 1:
            raise ConfigError("decay must be in [0, 1)")

    @property
    def control_epochs(self):
        """Epochs for labeled-only training; defaults to the joint schedule length."""
        if self.labeled_only_epochs is not None:
            return self.labeled_only_epochs
        return self.pretrain_epochs + self.joint_epochs


@dataclass
class LossBreakdown:
    epoch: int
    step: int
    labeled_loss: float
    projection_loss: float
    alpha: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.labeled_loss + self.alpha * self.projection_loss


@dataclass
class LabeledData:
    grids: np.ndarray  # (N, S, W) token ids
    labels: np.ndarray  # (N,) in {0, 1}

    def __len__(self):
        return len(self.labels)


@dataclass
class ParallelData:
    source: np.ndarray  # (M, S, W)
    target: np.ndarray  # (M, S, W)

    def __len__(self):
        return len(self.source)


# ---------------------------------------------------------------------- losses


def binary_cross_entropy(prob, labels):
    """Summed cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = nc.clip(prob, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = np.asarray(labels, dtype=p.dtype)
    return -nc.sum(y * nc.log(p) + (1.0 - y) * nc.log(1.0 - p))


def labeled_loss(model: HierarchicalGRU, grids, labels, lang=None, training=False, rng=None):
    return binary_cross_entropy(model.forward(grids, lang, training, rng), labels)


def representation_mse(rep_source, rep_target):
    """Sum over pairs of the per-dimension mean squared difference."""
    diff = nc.as_tensor(rep_source) - nc.as_tensor(rep_target)
    if diff.ndim == 1:
        diff = nc.reshape(diff, (1, -1))
    return nc.sum(nc.square(diff)) * (1.0 / diff.shape[1])


def _twin_rngs(rng, training):
    # both sides of a pair get the same dropout masks
    if not training or rng is None:
        return None, None
    seed = int(rng.integers(2**63))
    return np.random.default_rng(seed), np.random.default_rng(seed)


def _check_langs(model, source_lang, target_lang):
    model.embedding(source_lang)
    model.embedding(target_lang)


def projection_loss(model, source_grids, target_grids, source_lang, target_lang, training=False, rng=None):
    _check_langs(model, source_lang, target_lang)
    rs, rt = _twin_rngs(rng, training)
    rep_s = model.encode(source_grids, source_lang, training, rs)
    rep_t = model.encode(target_grids, target_lang, training, rt)
    return representation_mse(rep_s, rep_t)


def pseudo_labels(prob):
    """Hard labels from source-side probabilities; exactly 0.5 maps to 0."""
    return (np.asarray(prob) > 0.5).astype(np.int64)


def label_projection_loss(model, source_grids, target_grids, source_lang, target_lang, training=False, rng=None):
    _check_langs(model, source_lang, target_lang)
    source_prob = nc.detach(model.forward(source_grids, source_lang, training=False)).data
    return binary_cross_entropy(model.forward(target_grids, target_lang, training, rng), pseudo_labels(source_prob))


def _unlabeled_loss_fn(config) -> Callable:
    return projection_loss if config.supervision_mode == "representation" else label_projection_loss


# -------------------------------------------------------------------- training


def _epoch_rng(seed, stream, epoch):
    return np.random.default_rng([seed, stream, epoch])


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


class _Run:
    def __init__(self, model, config: TransferConfig):
        self.model = model
        self.config = config
        self.log: list[LossBreakdown] = []
        self.step = 0

    def _update(self, slots):
        c = self.config
        nc.rmsprop_step(slots, c.lr, c.decay, c.eps)

    def labeled_epoch(self, data: LabeledData, epoch, slots):
        rng = _epoch_rng(self.config.seed, _LABELED_STREAM, epoch)
        order = rng.permutation(len(data))
        for idx in _batches(order, self.config.batch_size):
            loss, _ = nc.forward_backward(
                lambda: labeled_loss(self.model, data.grids[idx], data.labels[idx], training=True, rng=rng), slots
            )
            self._update(slots)
            self._record(epoch, loss, 0.0, 0.0)

    def projection_epoch(self, data: ParallelData, epoch, slots, source_lang, target_lang):
        rng = _epoch_rng(self.config.seed, _PARALLEL_STREAM, epoch)
        order = rng.permutation(len(data))
        fn = _unlabeled_loss_fn(self.config)
        for idx in _batches(order, self.config.batch_size):
            loss, _ = nc.forward_backward(
                lambda: fn(self.model, data.source[idx], data.target[idx], source_lang, target_lang, True, rng),
                slots,
            )
            self._update(slots)
            self._record(epoch, 0.0, loss, 1.0)

    def joint_epoch(self, labeled: LabeledData, parallel: ParallelData, epoch, slots, source_lang, target_lang):
        c = self.config
        lrng = _epoch_rng(c.seed, _LABELED_STREAM, epoch)
        prng = _epoch_rng(c.seed, _PARALLEL_STREAM, epoch)
        order = lrng.permutation(len(labeled))
        porder, pos = prng.permutation(len(parallel)), 0
        fn = _unlabeled_loss_fn(c)
        for idx in _batches(order, c.batch_size):
            if pos >= len(porder):
                porder, pos = prng.permutation(len(parallel)), 0
            pidx = porder[pos : pos + c.batch_size]
            pos += c.batch_size
            parts = {}

            def graph():
                lab = labeled_loss(self.model, labeled.grids[idx], labeled.labels[idx], training=True, rng=lrng)
                parts["labeled"], parts["projection"] = float(lab.data), 0.0
                if c.alpha == 0:
                    # the term would contribute exact zeros; skipping it keeps the log equal to labeled-only training
                    return lab
                proj = fn(self.model, parallel.source[pidx], parallel.target[pidx], source_lang, target_lang, True, prng)
                parts["projection"] = float(proj.data)
                return lab + proj * c.alpha

            nc.forward_backward(graph, slots)
            self._update(slots)
            self._record(epoch, parts["labeled"], parts["projection"], c.alpha)

    def _record(self, epoch, lab, proj, alpha):
        self.log.append(LossBreakdown(epoch, self.step, lab, proj, alpha))
        self.step += 1

    def epoch_summary(self, epoch):
        rows = [r for r in self.log if r.epoch == epoch]
        if rows:
            log.info(
                "epoch %d: labeled %.4f projection %.4f total %.4f",
                epoch,
                np.mean([r.labeled_loss for r in rows]),
                np.mean([r.projection_loss for r in rows]),
                np.mean([r.total for r in rows]),
            )


def _require(labeled=None, parallel=None):
    if labeled is not None and len(labeled) == 0:
        raise ConfigError("labeled dataset is empty")
    if parallel is not None and len(parallel) == 0:
        raise ConfigError("parallel dataset is empty")


def _target_lang(model, target_lang):
    if target_lang is None:
        if len(model.target_langs) != 1:
            raise ConfigError("model must hold exactly one target language, or name it explicitly")
        target_lang = model.target_langs[0]
    model.embedding(target_lang)
    return target_lang


def train_labeled(labeled: LabeledData, config: TransferConfig, model: HierarchicalGRU, epochs=None):
    """Source-only training; the control run for the transfer regimes."""
    _require(labeled)
    run = _Run(model, config)
    slots = [model.embedding(model.source_lang)] + model.shared_slots()
    for epoch in range(config.control_epochs if epochs is None else epochs):
        run.labeled_epoch(labeled, epoch, slots)
        run.epoch_summary(epoch)
    return model, run.log


def train_two_stage(
    labeled: LabeledData,
    parallel: ParallelData,
    config: TransferConfig,
    model: HierarchicalGRU,
    target_lang=None,
    stage1_path=None,
):
    """Fit the source model, freeze it, then fit only the target embeddings.

    If ``stage1_path`` is given the model is checkpointed between stages.
    """
    _require(labeled, parallel)
    target_lang = _target_lang(model, target_lang)
    source_lang = model.source_lang
    run = _Run(model, config)
    stage1 = [model.embedding(source_lang)] + model.shared_slots()
    for epoch in range(config.labeled_epochs):
        run.labeled_epoch(labeled, epoch, stage1)
        run.epoch_summary(epoch)
    if stage1_path is not None:
        save_checkpoint(model, stage1_path)

    for s in stage1:
        s.freeze()
    try:
        target = [model.embedding(target_lang)]
        for e in range(config.projection_epochs):
            epoch = config.labeled_epochs + e
            run.projection_epoch(parallel, epoch, target, source_lang, target_lang)
            run.epoch_summary(epoch)
    finally:
        for s in stage1:
            s.freeze(False)
    return model, run.log


def train_joint(
    labeled: LabeledData,
    parallel: ParallelData,
    config: TransferConfig,
    model: HierarchicalGRU,
    target_lang=None,
):
    """Labeled-only pretraining, then combined updates on ``L_labeled + alpha * L_parallel``."""
    _require(labeled, parallel)
    target_lang = _target_lang(model, target_lang)
    source_lang = model.source_lang
    run = _Run(model, config)
    pre = [model.embedding(source_lang)] + model.shared_slots()
    for epoch in range(config.pretrain_epochs):
        run.labeled_epoch(labeled, epoch, pre)
        run.epoch_summary(epoch)
    slots = [model.embedding(source_lang), model.embedding(target_lang)] + model.shared_slots()
    for e in range(config.joint_epochs):
        epoch = config.pretrain_epochs + e
        run.joint_epoch(labeled, parallel, epoch, slots, source_lang, target_lang)
        run.epoch_summary(epoch)
    return model, run.log


def swap_embeddings(model: HierarchicalGRU, lang) -> ModelView:
    """Inference view using ``lang``'s embeddings with the shared encoder and output layer."""
    return model.view(lang)


# ------------------------------------------------------------------------ logs

LOG_COLUMNS = ("epoch", "step", "labeled_loss", "projection_loss", "total")


def write_loss_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([r.epoch, r.step, repr(r.labeled_loss), repr(r.projection_loss), repr(r.total)])


def read_loss_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (int(v) if k in ("epoch", "step") else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)
        ]


def epoch_means(records):
    out = {}
    for r in records:
        out.setdefault(r.epoch, []).append(r)
    return {
        e: (
            float(np.mean([r.labeled_loss for r in rs])),
            float(np.mean([r.projection_loss for r in rs])),
            float(np.mean([r.total for r in rs])),
        )
        for e, rs in out.items()
    }
