"""Classification metrics, Fisher's exact test, score interpolation,
cross-lingual nearest neighbors and the model-size sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError, ReprojError

log = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, predicted, labels):
        predicted, labels = np.asarray(predicted).astype(int), np.asarray(labels).astype(int)
        if predicted.shape != labels.shape:
            raise DataError("predictions and labels differ in length")
        if labels.size == 0:
            raise DataError("cannot evaluate on an empty test set")
        return cls(
            int(((predicted == 1) & (labels == 1)).sum()),
            int(((predicted == 1) & (labels == 0)).sum()),
            int(((predicted == 0) & (labels == 0)).sum()),
            int(((predicted == 0) & (labels == 1)).sum()),
        )

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self):
        d = self.tp + self.fp
        return float(Fraction(self.tp, d)) if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return float(Fraction(self.tp, d)) if d else 0.0

    @property
    def f1(self):
        # 2tp / (2tp + fp + fn) is the harmonic mean of precision and recall
        d = 2 * self.tp + self.fp + self.fn
        return float(Fraction(2 * self.tp, d)) if d else 0.0

    @property
    def accuracy(self):
        return float(Fraction(self.tp + self.tn, self.total)) if self.total else 0.0

    def as_dict(self):
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }

    def __str__(self):
        return (
            f"precision {self.precision:.3f}  recall {self.recall:.3f}  "
            f"F1 {self.f1:.3f}  accuracy {100 * self.accuracy:.1f}%  (n={self.total})"
        )


def f1_score(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(view, grids, labels) -> EvalReport:
    """Score a model view (or anything with ``predict_proba(grids)``) on labeled grids."""
    if len(labels) == 0:
        raise DataError("cannot evaluate on an empty test set")
    prob = view.predict_proba(grids)
    return EvalReport.from_predictions(prob > THRESHOLD, labels)


def write_report_csv(report: EvalReport, path):
    d = report.as_dict()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(d.keys())
        w.writerow(d.values())


# -------------------------------------------------------------- Fisher's test


def _table_prob_numerators(row1, row2, col1):
    """Numerators ``C(row1, a) * C(row2, col1 - a)`` for every feasible top-left cell ``a``."""
    lo, hi = max(0, col1 - row2), min(row1, col1)
    return lo, [math.comb(row1, a) * math.comb(row2, col1 - a) for a in range(lo, hi + 1)]


def fisher_exact(a, b, c, d) -> float:
    """Two-sided p-value for the table ``[[a, b], [c, d]]``.

    Sums the hypergeometric probabilities of every table with the observed
    margins that is no more likely than the observed one. Integer binomials
    keep the comparison exact.
    """
    cells = (a, b, c, d)
    if any(int(x) != x or x < 0 for x in cells):
        raise DataError("contingency counts must be nonnegative integers")
    a, b, c, d = (int(x) for x in cells)
    n = a + b + c + d
    if n == 0:
        raise DataError("Fisher's exact test is undefined for an all-zero table")
    row1, row2, col1 = a + b, c + d, a + c
    lo, nums = _table_prob_numerators(row1, row2, col1)
    observed = nums[a - lo]
    tail = sum(x for x in nums if x <= observed)
    return min(1.0, float(Fraction(tail, math.comb(n, col1))))


# -------------------------------------------------------------- interpolation


@dataclass
class Interpolation:
    weight: float  # weight on model A
    dev_accuracy: float
    predictions: np.ndarray | None = None
    probabilities: np.ndarray | None = None


LAMBDA_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


def interpolate(dev_a, dev_b, dev_labels, test_a=None, test_b=None) -> Interpolation:
    """Pick ``lambda`` in {0, 0.01, ..., 1} maximizing dev accuracy of
    ``lambda * p_a + (1 - lambda) * p_b``; ties go to the smaller ``lambda``."""
    dev_a, dev_b, y = np.asarray(dev_a, float), np.asarray(dev_b, float), np.asarray(dev_labels)
    if not (len(dev_a) == len(dev_b) == len(y)):
        raise DataError("dev score lists and labels must have the same length")
    if len(y) == 0:
        raise DataError("empty dev set")
    best, best_acc = 0.0, -1.0
    for lam in LAMBDA_GRID:
        acc = np.mean(((lam * dev_a + (1 - lam) * dev_b) > THRESHOLD) == y)
        if acc > best_acc:
            best, best_acc = float(lam), float(acc)
    result = Interpolation(best, best_acc)
    if test_a is not None or test_b is not None:
        test_a, test_b = np.asarray(test_a, float), np.asarray(test_b, float)
        if len(test_a) != len(test_b):
            raise DataError("test score lists must have the same length")
        result.probabilities = best * test_a + (1 - best) * test_b
        result.predictions = (result.probabilities > THRESHOLD).astype(int)
    return result


def read_scores(path):
    """JSON-lines ``{"id": int, "p_positive": float}`` -> probabilities ordered by id."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                idx, p = obj["id"], float(obj["p_positive"])
            except (ValueError, KeyError, TypeError):
                raise DataError(f"{path}:{lineno}: expected {{\"id\": int, \"p_positive\": float}}") from None
            if not isinstance(idx, int) or not 0 <= p <= 1:
                raise DataError(f"{path}:{lineno}: bad id or probability")
            if idx in rows:
                raise DataError(f"{path}:{lineno}: duplicate id {idx}")
            rows[idx] = p
    ids = sorted(rows)
    return np.array(ids, dtype=int), np.array([rows[i] for i in ids])


def write_scores(path, probabilities, ids=None):
    ids = range(len(probabilities)) if ids is None else ids
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in zip(ids, probabilities):
            fh.write(json.dumps({"id": int(i), "p_positive": float(p)}) + "\n")


# ------------------------------------------------------------------ neighbors


@dataclass
class NeighborList:
    query: str
    lang: str
    neighbors: list  # [(token, cosine)]


def cosine_scores(query_vec, table):
    q = np.asarray(query_vec, dtype=np.float64)
    t = np.asarray(table, dtype=np.float64)
    norms = np.linalg.norm(t, axis=1) * np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (t @ q) / norms
    return np.clip(np.where(norms > 0, s, 0.0), -1.0, 1.0)


def cosine_rank(query_vec, table):
    """Row indices of ``table`` by decreasing cosine similarity (stable on ties)."""
    return np.argsort(-cosine_scores(query_vec, table), kind="stable")


def neighbors(query, source_vocab, source_table, target_vocab, target_table, k=10) -> NeighborList:
    if k < 1:
        raise DataError("k must be >= 1")
    if query not in source_vocab:
        raise DataError(f"query token {query!r} is not in the source vocabulary")
    cand = np.asarray(target_table)[2:]
    scores = cosine_scores(np.asarray(source_table)[source_vocab.encode(query)], cand)
    order = np.argsort(-scores, kind="stable")[:k]
    return NeighborList(
        query,
        source_vocab.lang_tag,
        [(target_vocab.decode(int(i) + 2), float(scores[i])) for i in order],
    )


# ---------------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("embed_dim", "encode_dim", "runs", "mean_acc", "std_acc", "status")


@dataclass
class SweepCell:
    embed_dim: int
    encode_dim: int
    accuracies: list
    status: str = "ok"

    @property
    def mean(self):
        return float(np.mean(self.accuracies)) if self.accuracies and self.status == "ok" else float("nan")

    @property
    def std(self):
        return float(np.std(self.accuracies)) if self.accuracies and self.status == "ok" else float("nan")


def size_sweep(embed_dims, encode_dims, runs, benchmark, seed=0, csv_path=None):
    """Train and evaluate ``benchmark`` for every (embedding, encoding) size.

    ``benchmark.run(seed, embed_dim=..., encode_dim=...)`` must return an
    object with a ``target_accuracy`` attribute. Run ``r`` of every cell uses
    seed ``seed + r``. A failing cell is logged, marked and skipped.
    """
    if runs < 1:
        raise DataError("runs must be >= 1")
    cells = []
    for d in embed_dims:
        for h in encode_dims:
            cell = SweepCell(int(d), int(h), [])
            try:
                for r in range(runs):
                    res = benchmark.run(seed + r, embed_dim=int(d), encode_dim=int(h))
                    cell.accuracies.append(float(res.target_accuracy))
            except (ReprojError, FloatingPointError) as exc:
                log.warning("sweep cell embed=%d encode=%d failed: %s", d, h, exc)
                cell.status = f"failed: {type(exc).__name__}"
            cells.append(cell)
            log.info("sweep embed=%d encode=%d mean acc %.4f", d, h, cell.mean)
    if csv_path is not None:
        write_sweep_csv(cells, runs, csv_path)
    return cells


def write_sweep_csv(cells, runs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for c in cells:
            w.writerow([c.embed_dim, c.encode_dim, runs, repr(c.mean), repr(c.std), c.status])
