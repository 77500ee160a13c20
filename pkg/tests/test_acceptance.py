"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. The training-based
criteria take several minutes in total on one CPU core.
"""

import csv
import json
import math
import struct
import time
from dataclasses import replace

import numpy as np
import pytest

from repproj import numcore as nc
from repproj.benchmark import DESK_MODEL, Benchmark
from repproj.cli import main as cli_main
from repproj.evaluation import f1_score, fisher_exact, size_sweep
from repproj.model import HierarchicalGRU, ModelConfig, checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint
from repproj.synth import SynthSpec, generate, score_neighbor_recovery
from repproj.textpipe import Vocabulary
from repproj.transfer import (
    TransferConfig,
    binary_cross_entropy,
    label_projection_loss,
    labeled_loss,
    projection_loss,
    pseudo_labels,
    train_joint,
    train_labeled,
    train_two_stage,
)

SEEDS = range(5)


def verdict(capsys, n, title, ok, detail):
    line = f"criterion {n:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def joint_runs():
    """Joint training on the default noise-free benchmark, seeds 0-4."""
    bench = Benchmark()
    out = {}
    for seed in SEEDS:
        t = time.perf_counter()
        res = bench.run(seed)
        out[seed] = (res, time.perf_counter() - t)
    return out


# ----------------------------------------------------------------------------


def test_criterion_01_gradient_check(capsys):
    t = time.perf_counter()
    vocabs = {lang: Vocabulary([f"{lang}{i}" for i in range(18)], lang) for lang in ("src", "tgt")}
    with nc.precision(np.float64):
        m = HierarchicalGRU(ModelConfig(8, 8, 8, 3, 4), vocabs, "src", seed=0)
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 20, size=(2, 3, 4)), rng.integers(0, 20, size=(2, 3, 4))
    y = np.array([1, 0])
    src_slots = [m.embedding("src")] + m.shared_slots()
    tgt_slots = [m.embedding("tgt")] + m.shared_slots()
    with nc.precision(np.float64):
        pseudo = pseudo_labels(m.predict_proba(a, "src"))
        _, full = nc.forward_backward(lambda: label_projection_loss(m, a, b, "src", "tgt"), tgt_slots)
        _, branch = nc.forward_backward(lambda: binary_cross_entropy(m.forward(b, "tgt"), pseudo), tgt_slots)
    same = all(np.array_equal(full[k], branch[k]) for k in full)
    reports = {
        "labeled": nc.gradient_check(lambda: labeled_loss(m, a, y), src_slots),
        "projection": nc.gradient_check(lambda: projection_loss(m, a, b, "src", "tgt"), m.slots()),
        # label projection differentiates only the target branch; the pseudo-labels are constants
        "label-projection": nc.gradient_check(lambda: binary_cross_entropy(m.forward(b, "tgt"), pseudo), tgt_slots),
    }
    elapsed = time.perf_counter() - t
    worst = max(r.max_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and worst < 1e-4 and elapsed < 60 and same
    detail = ", ".join(f"{k} max rel err {r.max_error:.2e}" for k, r in reports.items()) + f"; {elapsed:.1f}s"
    verdict(capsys, 1, "gradient correctness", ok, detail)


def test_criterion_02_metric_fidelity(capsys):
    got = [f1_score(0.796, 0.816), f1_score(0.909, 0.830)]
    ok = abs(got[0] - 0.806) <= 0.0005 and abs(got[1] - 0.868) <= 0.0005
    verdict(capsys, 2, "F1 from reported precision/recall", ok, f"{got[0]:.4f} (want 0.806), {got[1]:.4f} (want 0.868)")


def _tensor_slices(blob):
    hlen = struct.unpack("<Q", blob[12:20])[0]
    header = json.loads(blob[20 : 20 + hlen])
    base = 20 + hlen + header["vocab_bytes"]
    return {e["name"]: blob[base + e["offset"] : base + e["offset"] + e["nbytes"]] for e in header["tensors"]}


def test_criterion_03_freeze_invariant(capsys, tmp_path):
    bench = Benchmark(mode="two-stage")
    data = bench.data(0)
    model = HierarchicalGRU(DESK_MODEL, {"src": data.source_vocab, "tgt": data.target_vocab}, "src", seed=0)
    stage1 = tmp_path / "stage1.ckpt"
    model, _ = train_two_stage(data.labeled, data.parallel, TransferConfig(), model, stage1_path=stage1)
    before, after = _tensor_slices(stage1.read_bytes()), _tensor_slices(checkpoint_bytes(model))
    frozen = [n for n in before if n != "embed.tgt"]
    mismatched = [n for n in frozen if before[n] != after[n]]
    moved = before["embed.tgt"] != after["embed.tgt"]
    ok = not mismatched and moved
    verdict(capsys, 3, "freeze invariant", ok, f"{len(frozen) - len(mismatched)}/{len(frozen)} frozen tensors byte-identical; target table updated={moved}")


def test_criterion_04_mixing_degeneracy(capsys):
    bench = Benchmark()
    data = bench.data(0)
    vocabs = {"src": data.source_vocab, "tgt": data.target_vocab}
    cfg = TransferConfig(alpha=0.0)
    _, joint = train_joint(data.labeled, data.parallel, cfg, HierarchicalGRU(DESK_MODEL, vocabs, "src", seed=0))
    _, control = train_labeled(data.labeled, cfg, HierarchicalGRU(DESK_MODEL, vocabs, "src", seed=0))

    def key(r):
        return (r.epoch, r.step, struct.pack("<3d", r.labeled_loss, r.projection_loss, r.total))

    same = len(joint) == len(control) and all(key(a) == key(b) for a, b in zip(joint, control))
    verdict(capsys, 4, "alpha=0 joint equals labeled-only", same, f"{len(joint)} vs {len(control)} logged steps, bitwise equal={same}")


def test_criterion_05_transfer_efficacy(capsys, joint_runs):
    src = [joint_runs[s][0].source_accuracy for s in SEEDS]
    tgt = [joint_runs[s][0].target_accuracy for s in SEEDS]
    slowest = max(t for _, t in joint_runs.values())
    ms, mt = float(np.mean(src)), float(np.mean(tgt))
    ok = ms >= 0.95 and mt >= ms - 0.05 and slowest < 300
    detail = f"mean source {ms:.4f}, mean target {mt:.4f} (need >= {ms - 0.05:.4f}); slowest run {slowest:.0f}s; per seed target {[round(x, 3) for x in tgt]}"
    verdict(capsys, 5, "synthetic transfer efficacy", ok, detail)


def test_criterion_06_soft_beats_hard(capsys):
    spec = SynthSpec(noise=0.1)
    soft = Benchmark(spec=spec, transfer=TransferConfig(supervision_mode="representation"))
    hard = Benchmark(spec=spec, transfer=TransferConfig(supervision_mode="label"))
    rep, lab = [], []
    for seed in SEEDS:
        data = soft.data(seed)  # same corpus for the paired runs
        rep.append(soft.run(seed, data=data).target_accuracy)
        lab.append(hard.run(seed, data=data).target_accuracy)
    diffs = np.array(rep) - np.array(lab)
    wins = int((diffs >= 0).sum())
    ok = np.mean(rep) >= np.mean(lab) and wins >= 4
    detail = f"representation {np.mean(rep):.4f} vs label {np.mean(lab):.4f}; nonnegative in {wins}/5; diffs {[round(float(d), 3) for d in diffs]}"
    verdict(capsys, 6, "representation beats label projection under noise", ok, detail)


def test_criterion_07_neighbor_semantics(capsys, joint_runs):
    rates = [score_neighbor_recovery(joint_runs[s][0].model, _truth(s), top_k=10, word_budget=20) for s in SEEDS]
    agreement = float(np.mean([r.agreement for r in rates]))

    # random-embedding control on the seed-0 vocabularies
    model = joint_runs[0][0].model
    truth = _truth(0)
    rng = np.random.default_rng(123)
    control, priors = [], []
    for _ in range(200):
        m = HierarchicalGRU(model.config, model.vocabs, model.source_lang, seed=0)
        for lang in m.languages:
            table = m.embedding(lang).data
            table[...] = rng.normal(size=table.shape)
        r = score_neighbor_recovery(m, truth, top_k=10, word_budget=20)
        control.append(r.agreement)
        priors.append(r.prior)
    prior = float(np.mean(priors))
    mean_c = float(np.mean(control))
    se = float(np.std(control, ddof=1) / math.sqrt(len(control)))
    ok = agreement >= 0.8 and abs(mean_c - prior) <= 3 * se
    detail = (
        f"trained agreement {agreement:.3f} (per seed {[round(r.agreement, 2) for r in rates]}); "
        f"random control {mean_c:.3f} vs prior {prior:.3f}, 3 sigma = {3 * se:.3f}"
    )
    verdict(capsys, 7, "neighbor polarity agreement", ok, detail)


def _truth(seed):
    return generate(SynthSpec(seed=seed)).truth


def _fisher_enumeration(a, b, c, d):
    """Two-sided p by listing every table with the observed margins, in floats."""
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    probs = {}
    for x in range(max(0, c1 - r2), min(r1, c1) + 1):
        probs[x] = math.comb(r1, x) * math.comb(r2, c1 - x) / math.comb(n, c1)
    cut = probs[a] * (1 + 1e-7)
    return min(1.0, sum(p for p in probs.values() if p <= cut))


def test_criterion_08_fisher_exact(capsys):
    worst, count = 0.0, 0
    for r1 in range(21):
        for r2 in range(21):
            for c1 in range(min(20, r1 + r2) + 1):
                if r1 + r2 == 0 or r1 + r2 - c1 > 20:
                    continue
                for a in range(max(0, c1 - r2), min(r1, c1) + 1):
                    t = (a, r1 - a, c1 - a, r2 - c1 + a)
                    worst = max(worst, abs(fisher_exact(*t) - _fisher_enumeration(*t)))
                    count += 1
    tea = fisher_exact(3, 1, 1, 3)
    ok = worst < 1e-9 and tea == 34 / 70
    verdict(capsys, 8, "Fisher exact test", ok, f"{count} tables, max |diff| {worst:.1e}; [[3,1],[1,3]] -> {tea!r} (34/70 = {34 / 70!r})")


def test_criterion_09_checkpoint_round_trip(capsys, joint_runs, tmp_path):
    model = joint_runs[0][0].model
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(model, first)
    loaded = load_checkpoint(first)
    save_checkpoint(loaded, second)
    same_bytes = first.read_bytes() == second.read_bytes()
    vocabs_ok = all(loaded.vocabs[lang] == model.vocabs[lang] for lang in ("src", "tgt"))
    tables_ok = all(np.array_equal(loaded.embedding(lang).data, model.embedding(lang).data) for lang in ("src", "tgt"))
    again = checkpoint_bytes(checkpoint_from_bytes(second.read_bytes())) == second.read_bytes()
    ok = same_bytes and vocabs_ok and tables_ok and again
    verdict(capsys, 9, "checkpoint round trip", ok, f"{first.stat().st_size} bytes, identical={same_bytes}, vocabularies={vocabs_ok}, tables={tables_ok}")


def _pipeline(root):
    corpus, run, ev = root / "corpus", root / "run", root / "eval"
    assert cli_main(["gen-synth", "--out", str(corpus), "--seed", "11"]) == 0
    dims = ["--embed-dim", "16", "--sentence-dim", "32", "--review-dim", "32", "--max-sentences", "8", "--max-words", "10"]
    assert cli_main(["train", "--data", str(corpus), "--out", str(run), "--mode", "joint", "--seed", "11", *dims]) == 0
    for test, lang in (("source_test.jsonl", "src"), ("target_test.jsonl", "tgt")):
        assert cli_main(["evaluate", "--checkpoint", str(run / "model.ckpt"), "--test", str(corpus / test), "--lang", lang, "--out", str(ev)]) == 0
    acc = {lang: float(next(csv.DictReader(open(ev / f"report.{lang}.csv")))["accuracy"]) for lang in ("src", "tgt")}
    return acc, (run / "loss.csv").read_bytes()


def test_criterion_10_determinism(capsys, tmp_path):
    acc_a, loss_a = _pipeline(tmp_path / "a")
    acc_b, loss_b = _pipeline(tmp_path / "b")
    ok = acc_a == acc_b and loss_a == loss_b
    verdict(capsys, 10, "pipeline determinism", ok, f"accuracies {acc_a} vs {acc_b}; loss CSVs identical={loss_a == loss_b} ({len(loss_a)} bytes)")


def test_criterion_11_size_sweep(capsys, tmp_path):
    spec = SynthSpec(n_labeled=600, n_parallel=1200, n_test=200)
    bench = Benchmark(spec=spec, model=replace(DESK_MODEL))
    path = tmp_path / "sweep.csv"
    t = time.perf_counter()
    cells = size_sweep([16, 32], [32, 64], 3, bench, seed=0, csv_path=path)
    elapsed = time.perf_counter() - t
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    header_ok = list(rows[0].keys()) == ["embed_dim", "encode_dim", "runs", "mean_acc", "std_acc", "status"] if rows else False
    grid_ok = [(int(r["embed_dim"]), int(r["encode_dim"])) for r in rows] == [(16, 32), (16, 64), (32, 32), (32, 64)]
    means_ok = all(
        r["status"] == "ok" and int(r["runs"]) == 3 and len(c.accuracies) == 3
        and abs(float(r["mean_acc"]) - math.fsum(c.accuracies) / 3) <= 1e-12
        for r, c in zip(rows, cells)
    )
    ok = header_ok and grid_ok and means_ok and elapsed < 1800
    detail = f"{len(rows)} rows in {elapsed:.0f}s; means {[round(float(r['mean_acc']), 3) for r in rows]}"
    verdict(capsys, 11, "size-sweep integration", ok, detail)
