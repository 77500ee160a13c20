import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repproj.errors import ConfigError, DataError
from repproj.textpipe import (
    PAD,
    UNK,
    Vocabulary,
    batch_pseudo_paragraphs,
    binarize_rating,
    build_vocab,
    encode_review,
    read_labeled,
    read_parallel,
    tokenize,
)


@pytest.mark.parametrize(
    "text, tokens",
    [
        ("Great book!", ["great", "book", "!"]),
        ("", []),
        ("C'est bon.", ["c'est", "bon", "."]),
        ("  Don't   stop,now ", ["don't", "stop", ",", "now"]),
        ("'quoted'", ["'", "quoted", "'"]),
    ],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_build_vocab_threshold():
    corpus = [["a"] * 5 + ["b"] * 2 + ["c"]]
    v = build_vocab(corpus, min_count=2)
    assert v.id_to_token == ["<pad>", "<unk>", "a", "b"]


def test_build_vocab_truncation_counts_reserved():
    corpus = [["a"] * 5 + ["b"] * 2 + ["c"]]
    v = build_vocab(corpus, min_count=1, max_size=3)
    assert v.id_to_token == ["<pad>", "<unk>", "a"]


def test_build_vocab_lexicographic_tiebreak():
    v = build_vocab([["y", "x", "y", "x"]], min_count=1)
    assert v.tokens == ["x", "y"]


def test_build_vocab_errors():
    with pytest.raises(DataError):
        build_vocab([], min_count=1)
    with pytest.raises(ConfigError):
        build_vocab([["a"]], min_count=0)


@given(st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), min_size=1, max_size=40))
def test_vocab_round_trip(tokens):
    v = build_vocab([tokens], min_count=1)
    for i in range(len(v)):
        assert v.encode(v.decode(i)) == i or i in (PAD, UNK)
    for tok in set(tokens):
        assert v.decode(v.encode(tok)) == tok
    assert sorted(v.token_to_id.values()) == list(range(2, len(v)))


def test_vocab_file_round_trip(tmp_path):
    v = Vocabulary(["x", "y", "c'est"], lang_tag="fr")
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines() == ["x", "y", "c'est"]
    assert Vocabulary.load(tmp_path / "v.txt", "fr") == v


def test_encode_review_padding():
    v = Vocabulary(["a", "b"])
    r = encode_review([["a"], ["b", "a"]], v, S=30, W=20)
    assert r.grid.shape == (30, 20)
    assert (r.grid[2:] == PAD).all()
    assert list(r.grid[1, :3]) == [3, 2, PAD]


def test_encode_review_truncation_keeps_prefix():
    v = Vocabulary([f"w{i}" for i in range(40)])
    sent = [f"w{i}" for i in range(35)]
    r = encode_review([sent] * 40, v, S=30, W=20)
    assert list(r.grid[0]) == [v.encode(f"w{i}") for i in range(20)]
    assert r.n_sentences == 40


def test_encode_review_oov_is_unk():
    assert encode_review([["never-seen"]], Vocabulary(["a"]), 1, 1).grid[0, 0] == UNK


@pytest.mark.parametrize("stars, label", [(5, 1), (4, 1), (2, 0), (1, 0), (3, None), (4.5, 1), (2.5, 0)])
def test_binarize_rating(stars, label):
    assert binarize_rating(stars) == label


@pytest.mark.parametrize("stars", [0, 6, "5", None, True])
def test_binarize_rating_rejects(stars):
    with pytest.raises(DataError):
        binarize_rating(stars)


def _pairs(n):
    return [[f"s{i}"] for i in range(n)], [[f"t{i}"] for i in range(n)]


def _vocabs(n):
    return Vocabulary([f"s{i}" for i in range(n)]), Vocabulary([f"t{i}" for i in range(n)])


def test_batch_forced_sizes():
    src, tgt = _pairs(45)
    vs, vt = _vocabs(45)
    paras = batch_pseudo_paragraphs(src, tgt, vs, vt, np.random.default_rng(0), S=30, W=2, sizes=[20, 25])
    assert [p.group_size for p in paras] == [20, 25]
    assert paras[1].source_grid[0, 0] == vs.encode("s20")
    assert paras[1].target_grid[24, 0] == vt.encode("t44")


@given(st.integers(1, 400), st.integers(0, 2**31))
def test_batch_partitions_stream(n, seed):
    src, tgt = _pairs(n)
    vs, vt = _vocabs(n)
    paras = batch_pseudo_paragraphs(src, tgt, vs, vt, np.random.default_rng(seed), S=30, W=1)
    assert sum(p.group_size for p in paras) == n
    assert all(15 <= p.group_size <= 30 for p in paras[:-1])
    assert 1 <= paras[-1].group_size <= 30
    assert all(p.source_grid.shape == p.target_grid.shape == (30, 1) for p in paras)
    # contiguous and ordered
    firsts = [vs.decode(int(p.source_grid[0, 0])) for p in paras]
    starts = np.cumsum([0] + [p.group_size for p in paras[:-1]])
    assert firsts == [f"s{i}" for i in starts]


def test_batch_full_groups_within_size_range():
    src, tgt = _pairs(3000)
    vs, vt = _vocabs(3000)
    paras = batch_pseudo_paragraphs(src, tgt, vs, vt, np.random.default_rng(1), S=2, W=1)
    sizes = [p.group_size for p in paras[:-1]]
    assert min(sizes) >= 15 and max(sizes) <= 30
    assert {15, 30} <= set(sizes)  # both ends are reachable


def test_batch_deterministic():
    src, tgt = _pairs(100)
    vs, vt = _vocabs(100)
    a = batch_pseudo_paragraphs(src, tgt, vs, vt, np.random.default_rng(9), S=3, W=1)
    b = batch_pseudo_paragraphs(src, tgt, vs, vt, np.random.default_rng(9), S=3, W=1)
    assert [p.group_size for p in a] == [p.group_size for p in b]
    assert all((x.source_grid == y.source_grid).all() for x, y in zip(a, b))


def test_batch_misaligned():
    vs, vt = _vocabs(3)
    with pytest.raises(DataError):
        batch_pseudo_paragraphs([["a"]], [], vs, vt, np.random.default_rng(0))


def test_read_labeled(tmp_path):
    p = tmp_path / "r.jsonl"
    rows = [
        {"stars": 5, "sentences": ["Great book!", "Loved it."]},
        {"stars": 3, "sentences": ["Meh."]},
        {"label": 0, "sentences": ["Bad."]},
    ]
    p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    recs = read_labeled(p)
    assert [r.label for r in recs] == [1, 0]
    assert recs[0].sentences[0] == ["great", "book", "!"]


@pytest.mark.parametrize(
    "row",
    [
        {"stars": 5, "label": 1, "sentences": []},
        {"sentences": ["x"]},
        {"label": 2, "sentences": ["x"]},
        {"stars": 9, "sentences": ["x"]},
        {"label": 1, "sentences": "not a list"},
    ],
)
def test_read_labeled_rejects(tmp_path, row):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps(row) + "\n")
    with pytest.raises(DataError):
        read_labeled(p)


def test_read_parallel(tmp_path):
    (tmp_path / "a").write_text("Hello world.\nBye\n")
    (tmp_path / "b").write_text("Bonjour le monde.\nSalut\n")
    src, tgt = read_parallel(tmp_path / "a", tmp_path / "b")
    assert src == [["hello", "world", "."], ["bye"]]
    assert tgt[1] == ["salut"]
    (tmp_path / "b").write_text("only one\n")
    with pytest.raises(DataError):
        read_parallel(tmp_path / "a", tmp_path / "b")
