"""Hierarchical GRU sentiment classifier with per-language embedding tables.

Word embeddings (one table per language) feed a sentence-level GRU; the final
sentence states feed a review-level GRU whose final state is the task
representation. A single sigmoid unit (or a K-way normalized layer) sits on
top. Everything except the embedding tables is shared across languages.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import (
    CheckpointHeaderError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from .numcore import ParamSlot, Tensor
from .textpipe import Vocabulary

EMBED_INIT = 0.05


@dataclass
class ModelConfig:
    embed_dim: int = 64
    sentence_dim: int = 256
    review_dim: int = 256
    max_sentences: int = 30
    max_words: int = 20
    n_outputs: int = 1
    dropout: float = 0.5

    def __post_init__(self):
        for name in ("embed_dim", "sentence_dim", "review_dim", "max_sentences", "max_words", "n_outputs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class GRUParams:
    """Fused gate parameters, gate order ``[z | r | candidate]``.

    ``W`` is ``(in, 3h)``, ``U_zr`` is ``(h, 2h)``, ``U_h`` is ``(h, h)`` and
    ``b`` is ``(3h,)``.
    """

    def __init__(self, prefix, input_dim, hidden_dim, rng=None, arrays=None):
        self.prefix = prefix
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        h = hidden_dim
        if arrays is None:
            arrays = {
                "W": np.concatenate([glorot(rng, input_dim, h) for _ in range(3)], axis=1),
                "U_zr": np.concatenate([glorot(rng, h, h) for _ in range(2)], axis=1),
                "U_h": glorot(rng, h, h),
                "b": np.zeros(3 * h),
            }
        self.W = ParamSlot.from_array(f"{prefix}.W", arrays["W"])
        self.U_zr = ParamSlot.from_array(f"{prefix}.U_zr", arrays["U_zr"])
        self.U_h = ParamSlot.from_array(f"{prefix}.U_h", arrays["U_h"])
        self.b = ParamSlot.from_array(f"{prefix}.b", arrays["b"])

    @classmethod
    def from_gates(cls, prefix, W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h):
        """Build from per-gate matrices (``W_*`` are ``(in, h)``)."""
        W_z = np.asarray(W_z)
        arrays = {
            "W": np.concatenate([W_z, W_r, W_h], axis=1),
            "U_zr": np.concatenate([U_z, U_r], axis=1),
            "U_h": np.asarray(U_h),
            "b": np.concatenate([b_z, b_r, b_h]),
        }
        return cls(prefix, W_z.shape[0], W_z.shape[1], arrays=arrays)

    def slots(self):
        return [self.W, self.U_zr, self.U_h, self.b]


def _gru_recur(xproj, h_prev, p: GRUParams):
    h = p.hidden_dim
    zr = nc.sigmoid(xproj[:, : 2 * h] + h_prev @ p.U_zr.value)
    z, r = zr[:, :h], zr[:, h:]
    cand = nc.tanh(xproj[:, 2 * h :] + (r * h_prev) @ p.U_h.value)
    return h_prev + z * (cand - h_prev)


def gru_step(x_t, h_prev, params: GRUParams) -> Tensor:
    """One GRU update; ``h_t = (1 - z) * h_prev + z * candidate``."""
    x_t, h_prev = nc.as_tensor(x_t), nc.as_tensor(h_prev)
    if x_t.ndim == 1:
        return gru_step(nc.reshape(x_t, (1, -1)), nc.reshape(h_prev, (1, -1)), params)[0]
    return _gru_recur(x_t @ params.W.value + params.b.value, h_prev, params)


def run_gru(inputs, params: GRUParams):
    """Run over ``inputs`` of shape ``(T, N, in)`` from a zero state; return the last state."""
    T, N, _ = inputs.shape
    xproj = nc.reshape(nc.reshape(inputs, (T * N, -1)) @ params.W.value + params.b.value, (T, N, -1))
    h = nc.Tensor(np.zeros((N, params.hidden_dim), dtype=xproj.dtype))
    for t in range(T):
        h = _gru_recur(xproj[t], h, params)
    return h


def predict_k(r, weights, bias):
    """Normalized exponential outputs: ``exp(w_k.r + b_k) / sum_j exp(w_j.r + b_j)``."""
    r = nc.as_tensor(r)
    squeeze = r.ndim == 1
    if squeeze:
        r = nc.reshape(r, (1, -1))
    logits = r @ nc.as_tensor(weights) + nc.as_tensor(bias)
    # shifting by a constant leaves the ratio unchanged
    shift = logits.data.max(axis=1, keepdims=True)
    e = nc.exp(logits - shift)
    out = e / nc.sum(e, axis=1, keepdims=True)
    return out[0] if squeeze else out


def predict_binary(r, weights, bias):
    """Probability of the positive class, ``sigmoid(w.r + b)``."""
    r = nc.as_tensor(r)
    squeeze = r.ndim == 1
    if squeeze:
        r = nc.reshape(r, (1, -1))
    w = nc.as_tensor(weights)
    if w.ndim == 1:
        w = nc.reshape(w, (-1, 1))
    p = nc.sigmoid(r @ w + nc.as_tensor(bias))
    return p[0, 0] if squeeze else nc.reshape(p, (-1,))


class HierarchicalGRU:
    """Shared encoder and prediction layer plus one embedding table per language."""

    def __init__(self, config: ModelConfig, vocabs: dict, source_lang: str, seed=0, _arrays=None):
        self.config = config
        self.source_lang = source_lang
        if source_lang not in vocabs:
            raise ConfigError(f"no vocabulary for source language {source_lang!r}")
        self.vocabs = dict(vocabs)
        rng = np.random.default_rng(seed)
        c = config
        a = _arrays or {}
        self.embeddings = {}
        for lang, vocab in self.vocabs.items():
            name = f"embed.{lang}"
            arr = a.get(name)
            if arr is None:
                arr = rng.uniform(-EMBED_INIT, EMBED_INIT, size=(len(vocab), c.embed_dim))
            self.embeddings[lang] = ParamSlot.from_array(name, arr)
        self.sentence_gru = GRUParams(
            "sentence_gru", c.embed_dim, c.sentence_dim, rng, _sub(a, "sentence_gru")
        )
        self.review_gru = GRUParams("review_gru", c.sentence_dim, c.review_dim, rng, _sub(a, "review_gru"))
        k = c.n_outputs
        self.pred_w = ParamSlot.from_array(
            "pred.w", a.get("pred.w", glorot(rng, c.review_dim, k))
        )
        self.pred_b = ParamSlot.from_array("pred.b", a.get("pred.b", np.zeros(k)))

    # ------------------------------------------------------------ parameters

    @property
    def languages(self):
        return list(self.embeddings)

    @property
    def target_langs(self):
        return [lang for lang in self.embeddings if lang != self.source_lang]

    def encoder_slots(self):
        return self.sentence_gru.slots() + self.review_gru.slots()

    def prediction_slots(self):
        return [self.pred_w, self.pred_b]

    def shared_slots(self):
        return self.encoder_slots() + self.prediction_slots()

    def slots(self):
        return list(self.embeddings.values()) + self.shared_slots()

    def named_arrays(self):
        return {s.name: s.data for s in self.slots()}

    def embedding(self, lang) -> ParamSlot:
        try:
            return self.embeddings[lang]
        except KeyError:
            raise ConfigError(f"model has no embedding table for language {lang!r}") from None

    def add_language(self, lang, vocab: Vocabulary, seed=0):
        if lang in self.embeddings:
            raise ConfigError(f"language {lang!r} already present")
        rng = np.random.default_rng(seed)
        self.vocabs[lang] = vocab
        self.embeddings[lang] = ParamSlot.from_array(
            f"embed.{lang}", rng.uniform(-EMBED_INIT, EMBED_INIT, size=(len(vocab), self.config.embed_dim))
        )

    # --------------------------------------------------------------- forward

    def encode(self, grids, lang=None, training=False, rng=None) -> Tensor:
        """Task representations ``(B, review_dim)`` for id grids ``(B, S, W)``."""
        grids = np.asarray(grids)
        if grids.ndim == 2:
            grids = grids[None]
        table = self.embedding(lang or self.source_lang).value
        B, S, W = grids.shape
        c = self.config
        # time-major word ids: (W, B*S)
        words = grids.reshape(B * S, W).T
        emb = nc.embedding(table, words)
        sent = run_gru(emb, self.sentence_gru)
        sent = nc.dropout(sent, c.dropout, training, rng)
        sent = nc.reshape(sent, (B, S, c.sentence_dim))
        rep = run_gru(nc.transpose(sent, (1, 0, 2)), self.review_gru)
        return nc.dropout(rep, c.dropout, training, rng)

    def predict_from_rep(self, rep):
        if self.config.n_outputs == 1:
            return predict_binary(rep, self.pred_w.value, self.pred_b.value)
        return predict_k(rep, self.pred_w.value, self.pred_b.value)

    def forward(self, grids, lang=None, training=False, rng=None) -> Tensor:
        return self.predict_from_rep(self.encode(grids, lang, training, rng))

    def predict_proba(self, grids, lang=None, batch_size=256) -> np.ndarray:
        grids = np.asarray(grids)
        out = []
        for i in range(0, len(grids), batch_size):
            out.append(self.forward(grids[i : i + batch_size], lang).data)
        if not out:
            return np.zeros(0)
        return np.concatenate(out)

    def view(self, lang):
        self.embedding(lang)
        return ModelView(self, lang)


class ModelView:
    """A model bound to one language's embeddings; shares everything else."""

    def __init__(self, model: HierarchicalGRU, lang: str):
        self.model = model
        self.lang = lang

    @property
    def embedding(self):
        return self.model.embeddings[self.lang]

    @property
    def vocab(self):
        return self.model.vocabs[self.lang]

    @property
    def sentence_gru(self):
        return self.model.sentence_gru

    @property
    def review_gru(self):
        return self.model.review_gru

    @property
    def prediction(self):
        return self.model.pred_w, self.model.pred_b

    def encode(self, grids, training=False, rng=None):
        return self.model.encode(grids, self.lang, training, rng)

    def forward(self, grids, training=False, rng=None):
        return self.model.forward(grids, self.lang, training, rng)

    def predict_proba(self, grids, batch_size=256):
        return self.model.predict_proba(grids, self.lang, batch_size)


def _sub(arrays, prefix):
    keys = [k for k in arrays if k.startswith(prefix + ".")]
    if not keys:
        return None
    return {k[len(prefix) + 1 :]: arrays[k] for k in keys}


# ----------------------------------------------------------------- checkpoint

MAGIC = b"RPRJCKPT"
FORMAT_VERSION = 1


def _pack_str(buf, s):
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def checkpoint_bytes(model: HierarchicalGRU) -> bytes:
    langs = model.languages
    vocab_buf = io.BytesIO()
    for lang in langs:
        _pack_str(vocab_buf, lang)
        tokens = model.vocabs[lang].tokens
        vocab_buf.write(struct.pack("<I", len(tokens)))
        for tok in tokens:
            _pack_str(vocab_buf, tok)
    vocab_bytes = vocab_buf.getvalue()

    entries, payload, offset = [], [], 0
    for slot in model.slots():
        raw = np.ascontiguousarray(slot.data, dtype="<f4").tobytes()
        entries.append({"name": slot.name, "shape": list(slot.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(model.config),
        "source_lang": model.source_lang,
        "languages": langs,
        "vocab_bytes": len(vocab_bytes),
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hbytes)), hbytes, vocab_bytes] + payload
    )


def save_checkpoint(model, path):
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> HierarchicalGRU:
    return checkpoint_from_bytes(Path(path).read_bytes())


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what):
        return self.take(self.u32(what), what).decode("utf-8")


def checkpoint_from_bytes(data: bytes) -> HierarchicalGRU:
    rd = _Reader(data)
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CheckpointHeaderError("not a checkpoint file (bad magic bytes)")
    rd.pos = len(MAGIC)
    version = rd.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    hlen = struct.unpack("<Q", rd.take(8, "header length"))[0]
    try:
        header = json.loads(rd.take(hlen, "header").decode("utf-8"))
        config = ModelConfig(**header["config"])
        langs, source_lang = header["languages"], header["source_lang"]
        entries, vocab_len = header["tensors"], header["vocab_bytes"]
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointTruncatedError):
            raise
        raise CheckpointHeaderError(f"malformed checkpoint header: {exc}") from None

    vstart = rd.pos
    vocabs = {}
    for _ in langs:
        lang = rd.string("vocabulary")
        n = rd.u32("vocabulary")
        vocabs[lang] = Vocabulary([rd.string("vocabulary") for _ in range(n)], lang_tag=lang)
    if list(vocabs) != langs or rd.pos - vstart != vocab_len:
        raise CheckpointHeaderError("vocabulary section does not match header")

    base = rd.pos
    arrays = {}
    for e in entries:
        shape = tuple(e["shape"])
        if int(np.prod(shape)) * 4 != e["nbytes"]:
            raise CheckpointShapeError(f"tensor {e['name']}: shape {shape} inconsistent with {e['nbytes']} bytes")
        rd.pos = base + e["offset"]
        raw = rd.take(e["nbytes"], f"tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    _check_shapes(config, vocabs, arrays)
    with nc.precision(np.float32):
        return HierarchicalGRU(config, vocabs, source_lang, _arrays=arrays)


def _check_shapes(c: ModelConfig, vocabs, arrays):
    d, h, dt, k = c.embed_dim, c.sentence_dim, c.review_dim, c.n_outputs
    expected = {f"embed.{lang}": (len(v), d) for lang, v in vocabs.items()}
    for prefix, i, o in (("sentence_gru", d, h), ("review_gru", h, dt)):
        expected.update(
            {f"{prefix}.W": (i, 3 * o), f"{prefix}.U_zr": (o, 2 * o), f"{prefix}.U_h": (o, o), f"{prefix}.b": (3 * o,)}
        )
    expected.update({"pred.w": (dt, k), "pred.b": (k,)})
    if set(expected) != set(arrays):
        missing = sorted(set(expected) ^ set(arrays))
        raise CheckpointShapeError(f"checkpoint tensors do not match config: {missing}")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointShapeError(f"tensor {name} has shape {arrays[name].shape}, expected {shape}")
