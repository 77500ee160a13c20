"""Command-line entry point: ``repproj <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files), 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .benchmark import Benchmark, build_training_vocabs, encode_training_data
from .errors import ConfigError, DataError, NumericError, ReprojError
from .evaluation import EvalReport, interpolate, neighbors, read_scores, size_sweep, write_report_csv, write_scores
from .model import HierarchicalGRU, ModelConfig, load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate
from .textpipe import Vocabulary, build_vocab, encode_records, read_labeled, read_parallel, tokenize
from .transfer import TransferConfig, train_joint, train_labeled, train_two_stage, write_loss_csv

log = logging.getLogger("repproj")

OUTPUT_ROOT_ENV = "REPPROJ_OUTPUT_ROOT"
MODES = ("joint", "two-stage", "labeled-only")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args, command) -> Path:
    d = Path(args.out) if args.out else output_root() / command
    d.mkdir(parents=True, exist_ok=True)
    return d


# ------------------------------------------------------------------ run config


@dataclass
class RunConfig:
    """Everything ``train`` needs; defaults are the full-size training setup."""

    # model
    embed_dim: int = 64
    sentence_dim: int = 256
    review_dim: int = 256
    max_sentences: int = 30
    max_words: int = 20
    dropout: float = 0.5
    # training
    mode: str = "joint"
    supervision_mode: str = "representation"
    alpha: float = 1.0
    labeled_epochs: int = 10
    projection_epochs: int = 10
    pretrain_epochs: int = 4
    joint_epochs: int = 12
    labeled_only_epochs: int | None = None
    batch_size: int = 32
    seed: int = 0
    lr: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8
    # data
    data: str | None = None
    labeled: str | None = None
    parallel_source: str | None = None
    parallel_target: str | None = None
    source_vocab: str | None = None
    target_vocab: str | None = None
    min_count: int = 2
    max_vocab: int = 50000
    source_lang: str = "src"
    target_lang: str = "tgt"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            self.embed_dim, self.sentence_dim, self.review_dim, self.max_sentences, self.max_words, 1, self.dropout
        )

    def transfer_config(self) -> TransferConfig:
        names = {f.name for f in fields(TransferConfig)}
        return TransferConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.min_count < 1 or self.max_vocab < 3:
            raise ConfigError("need min_count >= 1 and max_vocab >= 3")
        if self.source_lang == self.target_lang:
            raise ConfigError("source and target language tags must differ")
        self.model_config()
        self.transfer_config()
        return self

    def paths(self):
        d = Path(self.data) if self.data else None

        def pick(value, default):
            if value:
                return Path(value)
            if d is None:
                raise ConfigError(f"no path for {default}: pass --data or the file explicitly")
            return d / default

        return (
            pick(self.labeled, "labeled.jsonl"),
            pick(self.parallel_source, "parallel.source.txt"),
            pick(self.parallel_target, "parallel.target.txt"),
        )


def _coerce(name, raw: str):
    f = {f.name: f for f in fields(RunConfig)}[name]
    kind = str(f.type)
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.split()[0]}, got {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_run_config(config_file=None, overrides=None) -> RunConfig:
    values = read_config_file(config_file) if config_file else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values).validate()


# -------------------------------------------------------------------- commands


def cmd_gen_synth(args):
    spec_args = {f.name: getattr(args, f.name) for f in fields(SynthSpec) if getattr(args, f.name, None) is not None}
    spec = SynthSpec(**spec_args)
    out = _out_dir(args, "synth")
    corpus = generate(spec)
    names = corpus.write(out)
    _write_json(out / "manifest.json", {"command": "gen-synth", "spec": asdict(spec), "files": {n: sha256(out / n) for n in names}})
    print(f"wrote {len(names)} files to {out}")
    return 0


def cmd_build_vocab(args):
    streams = []
    for path in args.input:
        if str(path).endswith(".jsonl"):
            streams.extend(s for rec in read_labeled(path) for s in rec.sentences)
        else:
            try:
                streams.extend(tokenize(line) for line in Path(path).read_text(encoding="utf-8").splitlines())
            except OSError as exc:
                raise DataError(f"cannot read {path}: {exc.strerror}") from None
    vocab = build_vocab(streams, min_count=args.min_count, max_size=args.max_size, lang_tag=args.lang)
    out = _out_dir(args, "vocab")
    path = out / f"vocab.{args.lang}.txt"
    vocab.save(path)
    print(f"{len(vocab)} entries (including PAD/UNK) -> {path}")
    return 0


def _train_overrides(args):
    return {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}


def cmd_train(args):
    run = resolve_run_config(args.config, _train_overrides(args))
    lab_path, src_path, tgt_path = run.paths()
    records = read_labeled(lab_path)
    labeled = [(r.sentences, r.label) for r in records]
    par_src, par_tgt = read_parallel(src_path, tgt_path)
    inputs = {"labeled": lab_path, "parallel_source": src_path, "parallel_target": tgt_path}

    if run.source_vocab or run.target_vocab:
        if not (run.source_vocab and run.target_vocab):
            raise ConfigError("give both source_vocab and target_vocab, or neither")
        src_vocab = Vocabulary.load(run.source_vocab, run.source_lang)
        tgt_vocab = Vocabulary.load(run.target_vocab, run.target_lang)
        inputs.update(source_vocab=Path(run.source_vocab), target_vocab=Path(run.target_vocab))
    else:
        src_vocab, tgt_vocab = build_training_vocabs(
            labeled, par_src, par_tgt, run.min_count, run.source_lang, run.target_lang, run.max_vocab
        )

    mc = run.model_config()
    lab_data, par_data = encode_training_data(
        labeled, par_src, par_tgt, src_vocab, tgt_vocab, mc.max_sentences, mc.max_words, run.seed
    )
    tc = run.transfer_config()
    model = HierarchicalGRU(mc, {run.source_lang: src_vocab, run.target_lang: tgt_vocab}, run.source_lang, seed=run.seed)
    out = _out_dir(args, "train")
    extra = {}
    log.info("training %s (%s) on %d reviews, %d pseudo paragraphs", run.mode, run.supervision_mode, len(lab_data), len(par_data))
    if run.mode == "joint":
        model, losses = train_joint(lab_data, par_data, tc, model)
    elif run.mode == "two-stage":
        model, losses = train_two_stage(lab_data, par_data, tc, model, stage1_path=out / "stage1.ckpt")
        extra["freeze_boundary_epoch"] = tc.labeled_epochs
        extra["stage1_checkpoint"] = "stage1.ckpt"
    else:
        model, losses = train_labeled(lab_data, tc, model)

    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(losses, out / "loss.csv")
    src_vocab.save(out / f"vocab.{run.source_lang}.txt")
    tgt_vocab.save(out / f"vocab.{run.target_lang}.txt")
    outputs = ["model.ckpt", "loss.csv"] + (["stage1.ckpt"] if "stage1_checkpoint" in extra else [])
    manifest = {
        "command": "train",
        "config": asdict(run),
        "seed": run.seed,
        "inputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in inputs.items()},
        "outputs": {n: sha256(out / n) for n in outputs},
        "steps": len(losses),
        **extra,
    }
    _write_json(out / "manifest.json", manifest)
    final = losses[-1] if losses else None
    print(f"{run.mode}: {len(losses)} steps; checkpoint {out / 'model.ckpt'}")
    if final is not None:
        print(f"last step: labeled {final.labeled_loss:.4f} projection {final.projection_loss:.4f} total {final.total:.4f}")
    return 0


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    lang = args.lang or model.source_lang
    view = model.view(lang)
    if args.vocab:
        if Vocabulary.load(args.vocab, lang) != view.vocab:
            raise DataError(f"{args.vocab} does not match the {lang!r} vocabulary stored in the checkpoint")
    records = read_labeled(args.test)
    if not records:
        raise DataError(f"{args.test}: no labeled reviews")
    c = model.config
    grids, labels = encode_records(records, view.vocab, c.max_sentences, c.max_words)
    prob = view.predict_proba(grids)
    report = EvalReport.from_predictions(prob > 0.5, labels)
    out = _out_dir(args, "evaluate")
    write_report_csv(report, out / f"report.{lang}.csv")
    write_scores(out / f"scores.{lang}.jsonl", prob, ids=[r.id for r in records])
    print(f"[{lang}] {report}")
    return 0


def cmd_neighbors(args):
    model = load_checkpoint(args.checkpoint)
    src = args.source_lang or model.source_lang
    if args.target_lang:
        tgt = args.target_lang
    elif len(model.target_langs) == 1:
        tgt = model.target_langs[0]
    else:
        raise ConfigError("checkpoint holds several target languages; pass --target-lang")
    src_table, tgt_table = model.embedding(src).data, model.embedding(tgt).data
    sv, tv = model.vocabs[src], model.vocabs[tgt]
    out = _out_dir(args, "neighbors")
    rows = ["query\trank\tneighbor\tcosine"]
    for q in args.query:
        res = neighbors(q, sv, src_table, tv, tgt_table, k=args.k)
        rows += [f"{q}\t{i}\t{tok}\t{sim:.6f}" for i, (tok, sim) in enumerate(res.neighbors, 1)]
    (out / "neighbors.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print("\n".join(rows))
    return 0


def _aligned(scores_path, labeled_path=None):
    ids, p = read_scores(scores_path)
    if labeled_path is None:
        return ids, p, None
    recs = read_labeled(labeled_path)
    by_id = {r.id: r.label for r in recs}
    missing = [int(i) for i in ids if i not in by_id]
    if missing or len(ids) != len(by_id):
        raise DataError(f"ids in {scores_path} do not match the reviews in {labeled_path}")
    return ids, p, np.array([by_id[int(i)] for i in ids])


def cmd_interpolate(args):
    ids_a, dev_a, y = _aligned(args.dev_a, args.dev_labels)
    ids_b, dev_b, _ = _aligned(args.dev_b)
    if not np.array_equal(ids_a, ids_b):
        raise DataError("dev score files cover different ids")
    test_a = test_b = test_ids = None
    if args.test_a or args.test_b:
        if not (args.test_a and args.test_b):
            raise ConfigError("give both --test-a and --test-b")
        test_ids, test_a, _ = _aligned(args.test_a)
        ids_tb, test_b, _ = _aligned(args.test_b)
        if not np.array_equal(test_ids, ids_tb):
            raise DataError("test score files cover different ids")
    res = interpolate(dev_a, dev_b, y, test_a, test_b)
    header = f"# lambda={res.weight:.2f} dev_accuracy={res.dev_accuracy:.6f}"
    print(header)
    out = _out_dir(args, "interpolate")
    lines = [header, "id\tp_positive\tprediction"]
    if res.probabilities is not None:
        lines += [f"{i}\t{p!r}\t{int(c)}" for i, p, c in zip(test_ids, res.probabilities, res.predictions)]
        if args.test_labels:
            _, _, ty = _aligned(args.test_a, args.test_labels)
            rep = EvalReport.from_predictions(res.predictions, ty)
            print(f"test: {rep}")
            write_report_csv(rep, out / "report.csv")
    (out / "interpolated.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args):
    spec = SynthSpec(
        n_labeled=args.n_labeled, n_parallel=args.n_parallel, n_test=args.n_test, noise=args.noise
    )
    model = ModelConfig(
        embed_dim=16, sentence_dim=32, review_dim=32, max_sentences=args.max_sentences, max_words=args.max_words
    )
    transfer = TransferConfig(
        alpha=args.alpha, pretrain_epochs=args.pretrain_epochs, joint_epochs=args.joint_epochs,
        labeled_epochs=args.labeled_epochs, projection_epochs=args.projection_epochs,
    )
    bench = Benchmark(spec, model, transfer, mode=args.mode)
    out = _out_dir(args, "sweep")
    cells = size_sweep(args.embed_dims, args.encode_dims, args.runs, bench, seed=args.seed, csv_path=out / "sweep.csv")
    print("embed_dim\tencode_dim\tmean_acc\tstd_acc\tstatus")
    for c in cells:
        print(f"{c.embed_dim}\t{c.encode_dim}\t{c.mean:.4f}\t{c.std:.4f}\t{c.status}")
    return 0


# ---------------------------------------------------------------------- parser


def _add_train_flags(p):
    p.add_argument("--config", help="key=value file; flags override its values")
    g = p.add_argument_group("data")
    g.add_argument("--data", help="directory with labeled.jsonl and parallel.{source,target}.txt")
    g.add_argument("--labeled")
    g.add_argument("--parallel-source")
    g.add_argument("--parallel-target")
    g.add_argument("--source-vocab")
    g.add_argument("--target-vocab")
    g.add_argument("--source-lang")
    g.add_argument("--target-lang")
    g.add_argument("--min-count", type=int)
    g.add_argument("--max-vocab", type=int)
    g = p.add_argument_group("model")
    for name in ("embed-dim", "sentence-dim", "review-dim", "max-sentences", "max-words"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--dropout", type=float)
    g = p.add_argument_group("training")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--supervision", dest="supervision_mode", choices=("representation", "label"))
    g.add_argument("--alpha", type=float)
    for name in ("labeled-epochs", "projection-epochs", "pretrain-epochs", "joint-epochs", "labeled-only-epochs", "batch-size", "seed"):
        g.add_argument(f"--{name}", type=int)
    for name in ("lr", "decay", "eps"):
        g.add_argument(f"--{name}", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="repproj", description="Cross-lingual transfer by representation projection.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>, root defaults to ./runs)")
        p.set_defaults(fn=fn)
        return p

    p = command("gen-synth", cmd_gen_synth, "generate a synthetic cipher corpus")
    defaults = SynthSpec()
    for f in fields(SynthSpec):
        kind = type(getattr(defaults, f.name))
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)

    p = command("build-vocab", cmd_build_vocab, "build a vocabulary file from text or JSON-lines reviews")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-size", type=int, default=50000)

    p = command("train", cmd_train, "train a model (joint, two-stage or labeled-only)")
    _add_train_flags(p)

    p = command("evaluate", cmd_evaluate, "evaluate a checkpoint on a labeled test file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--lang", help="embedding table to use (default: the source language)")
    p.add_argument("--vocab", help="vocabulary file that must match the checkpoint's")

    p = command("neighbors", cmd_neighbors, "nearest target words to source query words")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", nargs="+", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--source-lang")
    p.add_argument("--target-lang")

    p = command("interpolate", cmd_interpolate, "blend two models' scores with a dev-tuned weight")
    p.add_argument("--dev-a", required=True)
    p.add_argument("--dev-b", required=True)
    p.add_argument("--dev-labels", required=True, help="labeled JSON-lines file the dev scores refer to")
    p.add_argument("--test-a")
    p.add_argument("--test-b")
    p.add_argument("--test-labels")

    p = command("sweep", cmd_sweep, "target accuracy over embedding and encoder sizes")
    p.add_argument("--embed-dims", type=int, nargs="+", default=[16, 32])
    p.add_argument("--encode-dims", type=int, nargs="+", default=[32, 64])
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=MODES, default="joint")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--n-labeled", type=int, default=2000)
    p.add_argument("--n-parallel", type=int, default=3000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--max-sentences", type=int, default=8)
    p.add_argument("--max-words", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--pretrain-epochs", type=int, default=4)
    p.add_argument("--joint-epochs", type=int, default=12)
    p.add_argument("--labeled-epochs", type=int, default=10)
    p.add_argument("--projection-epochs", type=int, default=10)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.fn(args)
    except ReprojError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
