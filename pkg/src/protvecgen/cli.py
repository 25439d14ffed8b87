"""Command-line orchestration of the train/featurize/evaluate workflow.

Subcommands: synth, prepare, train-svg, featurize, train-head,
train-mlda, train-hybrid, predict, eval, sweep. Every stage reads the
flat config file, stamps its outputs with the config hash, and skips
work whose output already carries the current hash, so reruns are
byte-wise no-ops. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import featurize as feat_mod
from . import heads as heads_mod
from . import metrics as metrics_mod
from . import mlda as mlda_mod
from . import protsvg
from .config import ConfigError, load_config
from .container import ContainerError, read_container, write_container
from .corpus import CorpusError, ParseError
from .kernel import KernelError
from .segmenter import SegmentationError, segment_sequence

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERIC_ERROR = 3


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config-derived plumbing


def _workpath(cfg, name):
    os.makedirs(cfg.get("workdir"), exist_ok=True)
    return os.path.join(cfg.get("workdir"), name)


def _default_data_paths(cfg):
    fasta = cfg.get("fasta") or _workpath(cfg, "corpus.fasta")
    anns = cfg.get("annotations") or _workpath(cfg, "corpus.tsv")
    manifest = cfg.get("manifest") or _workpath(cfg, "manifest.json")
    return fasta, anns, manifest


def _prepared(cfg):
    """Filtered + split corpus, recomputed deterministically from config."""
    fasta, anns, _ = _default_data_paths(cfg)
    records = corpus_mod.load_corpus(fasta, anns)
    corpus = corpus_mod.filter_corpus(records, cfg.get_int("min_annotations"))
    fractions = (cfg.get_float("split_train"), cfg.get_float("split_validation"),
                 cfg.get_float("split_test"))
    return corpus_mod.split_corpus(corpus, fractions, cfg.get_int("seed"))


def _split_records(corpus, split):
    return corpus.subset(split)


def _segments_of(records, size, stride):
    segments = []
    for rec in records:
        segments.extend(segment_sequence(rec.sequence, size, stride,
                                         parent_id=rec.id, labels=rec.labels))
    return segments


def _svg_hyperparams(cfg, size):
    return protsvg.SvgHyperparams(
        segment_size=size, nmer=cfg.get_int("nmer"),
        embed_size=cfg.get_int("embed_size"),
        hidden_size=cfg.get_int("hidden_size"),
        dropout=cfg.get_float("dropout"), epochs=cfg.get_int("svg_epochs"),
        batch_size=cfg.get_int("svg_batch_size"),
        learning_rate=cfg.get_float("learning_rate"),
        vocab_min_count=cfg.get_int("vocab_min_count"),
        seed=cfg.get_int("seed"))


def _is_current(path, magic, cfg):
    """True if `path` exists and was produced under the current config."""
    if not os.path.exists(path):
        return False
    try:
        header, _ = read_container(path, magic)
    except (ContainerError, OSError):
        return False
    return header.get("config_hash") == cfg.hash()


def _feature_path(cfg, split, name):
    return _workpath(cfg, f"features_{split}_{name}.fvec")


def _labels_for_ids(corpus, ids):
    by_id = {r.id: r for r in corpus.records}
    return np.array([corpus.vocabulary.one_hot(by_id[i].labels) for i in ids])


# ---------------------------------------------------------------------------
# Stages


def cmd_synth(cfg, args):
    spec = corpus_mod.SynthSpec(
        label_count=cfg.get_int("synth_labels"),
        motif_length=cfg.get_int("synth_motif_length"),
        motifs_per_label=cfg.get_int("synth_motifs_per_label"),
        labels_per_protein=(cfg.get_int("synth_labels_min"),
                            cfg.get_int("synth_labels_max")),
        length_min=cfg.get_int("synth_length_min"),
        length_max=cfg.get_int("synth_length_max"),
        noise_rate=cfg.get_float("synth_noise"),
        record_count=cfg.get_int("synth_records"),
        seed=cfg.get_int("seed"))
    corpus, manifest = corpus_mod.generate_synthetic(spec)
    fasta, anns, manifest_path = _default_data_paths(cfg)
    corpus_mod.write_fasta(corpus.records, fasta)
    corpus_mod.write_annotations(corpus.records, anns)
    corpus_mod.write_manifest(manifest, manifest_path)
    print(f"synth: {len(corpus.records)} records, "
          f"{corpus.vocabulary.size} GO terms -> {fasta}")
    return 0


def cmd_prepare(cfg, args):
    corpus = _prepared(cfg)
    path = _workpath(cfg, "splits.tsv")
    with open(path, "w") as fh:
        for rec, split in zip(corpus.records, corpus.splits):
            fh.write(f"{rec.id}\t{split}\n")
    counts = {s: corpus.splits.count(s) for s in
              (corpus_mod.SPLIT_TRAIN, corpus_mod.SPLIT_VALIDATION,
               corpus_mod.SPLIT_TEST)}
    print(f"prepare: {len(corpus.records)} records, "
          f"{corpus.vocabulary.size} GO terms, splits {counts} -> {path}")
    return 0


def cmd_train_svg(cfg, args):
    sizes = [args.segment_size] if args.segment_size else cfg.get_int_list("segment_sizes")
    nmer = cfg.get_int("nmer")
    for size in sizes:
        if size < nmer:
            raise UsageError(
                f"segment size {size} below n-mer size {nmer}")
    corpus = _prepared(cfg)
    stride = cfg.get_int("stride")
    for size in sizes:
        path = _workpath(cfg, f"svg_{size}.model")
        if _is_current(path, protsvg.MODEL_MAGIC, cfg):
            print(f"train-svg: {path} up to date, skipping")
            continue
        train_segs = _segments_of(corpus.subset("train"), size, stride)
        val_segs = _segments_of(corpus.subset("validation"), size, stride)
        model = protsvg.train_svg(train_segs, _svg_hyperparams(cfg, size),
                                  corpus.vocabulary, val_segs,
                                  log=lambda msg: print(f"  [{size}] {msg}"))
        protsvg.save_model(model, path, config_hash=cfg.hash())
        print(f"train-svg: size {size} -> {path}")
    return 0


def cmd_featurize(cfg, args):
    corpus = _prepared(cfg)
    sizes = sorted(cfg.get_int_list("segment_sizes"))
    models = []
    for size in sizes:
        path = _workpath(cfg, f"svg_{size}.model")
        if not os.path.exists(path):
            raise UsageError(f"missing model {path}; run train-svg first")
        models.append(protsvg.load_model(path))
    for split in (corpus_mod.SPLIT_TRAIN, corpus_mod.SPLIT_VALIDATION,
                  corpus_mod.SPLIT_TEST):
        records = _split_records(corpus, split)
        if not records:
            continue
        for model in models:
            size = model.hyperparams.segment_size
            path = _feature_path(cfg, split, f"s{size}")
            if not _is_current(path, feat_mod.FEATURE_MAGIC, cfg):
                feat_mod.featurize_corpus([model], records, path,
                                          config_hash=cfg.hash())
                print(f"featurize: {split} size {size} -> {path}")
        if len(models) > 1:
            path = _feature_path(cfg, split, "plus")
            if not _is_current(path, feat_mod.FEATURE_MAGIC, cfg):
                feat_mod.featurize_corpus(models, records, path,
                                          config_hash=cfg.hash())
                print(f"featurize: {split} multi-size -> {path}")
    return 0


def _head_hyperparams(cfg):
    return heads_mod.HeadHyperparams(
        hidden_size=cfg.get_int("head_hidden"),
        epochs=cfg.get_int("head_epochs"),
        batch_size=cfg.get_int("head_batch_size"),
        learning_rate=cfg.get_float("learning_rate"),
        seed=cfg.get_int("seed"))


def cmd_train_head(cfg, args):
    name = args.features
    corpus = _prepared(cfg)
    X_train, train_ids = feat_mod.load_features(
        _feature_path(cfg, "train", name))
    X_val, val_ids = feat_mod.load_features(
        _feature_path(cfg, "validation", name))
    Y_train = _labels_for_ids(corpus, train_ids)
    Y_val = _labels_for_ids(corpus, val_ids)

    net = heads_mod.train_nn_head(X_train, Y_train, _head_hyperparams(cfg),
                                  validation=(X_val, Y_val))
    train_post = heads_mod.head_posteriors(net, X_train)
    bank = heads_mod.train_go_thresholds(train_post, Y_train,
                                         corpus.vocabulary.terms)

    val_sets = heads_mod.predict_sets(heads_mod.head_posteriors(net, X_val), bank)
    by_id = {r.id: r for r in corpus.records}
    report = metrics_mod.compute_metrics(
        [(by_id[i].labels, z) for i, z in zip(val_ids, val_sets)])
    path = _workpath(cfg, f"head_{name}.model")
    heads_mod.save_head(net, bank, path, config_hash=cfg.hash())
    _write_sidecar(path + ".meta.json",
                   {"validation_avg_f1": report.avg_f1, "features": name})
    print(f"train-head: {name} (validation avg-F1 {report.avg_f1:.4f}) -> {path}")
    return 0


def _write_sidecar(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train_mlda(cfg, args):
    corpus = _prepared(cfg)
    train = corpus.subset("train")
    tfidf = mlda_mod.tfidf_fit(train, n=cfg.get_int("tfidf_nmer"),
                               max_terms=cfg.get_int("tfidf_max_terms"))
    X_train = mlda_mod.tfidf_matrix(tfidf, train)
    model = mlda_mod.mlda_fit(X_train, corpus.label_matrix(train))
    path = _workpath(cfg, "mlda.model")
    mlda_mod.save_mlda(tfidf, model, path, config_hash=cfg.hash())
    for split in (corpus_mod.SPLIT_TRAIN, corpus_mod.SPLIT_VALIDATION,
                  corpus_mod.SPLIT_TEST):
        records = _split_records(corpus, split)
        if not records:
            continue
        X = mlda_mod.mlda_transform(model, mlda_mod.tfidf_matrix(tfidf, records))
        feat_mod.save_features(X, [r.id for r in records],
                               _feature_path(cfg, split, "mlda"), [],
                               config_hash=cfg.hash())
    print(f"train-mlda: projection {model.projection.shape} -> {path}")
    return 0


HYBRID_KIND = "hybrid-combiner"


def cmd_train_hybrid(cfg, args):
    corpus = _prepared(cfg)
    f1 = {}
    for name in ("plus", "mlda"):
        meta_path = _workpath(cfg, f"head_{name}.model.meta.json")
        if not os.path.exists(meta_path):
            raise UsageError(f"missing {meta_path}; run train-head --features {name}")
        with open(meta_path) as fh:
            f1[name] = json.load(fh)["validation_avg_f1"]
    alpha = heads_mod.compute_alpha(f1["plus"], f1["mlda"])

    val_post = {}
    for name in ("plus", "mlda"):
        net, _, _ = heads_mod.load_head(_workpath(cfg, f"head_{name}.model"))
        X, ids = feat_mod.load_features(_feature_path(cfg, "validation", name))
        val_post[name] = (heads_mod.head_posteriors(net, X), ids)
    if val_post["plus"][1] != val_post["mlda"][1]:
        raise CorpusError("validation feature files disagree on record ids")
    combined = heads_mod.hybrid_combine(val_post["plus"][0],
                                        val_post["mlda"][0], alpha)
    Y_val = _labels_for_ids(corpus, val_post["plus"][1])
    bank = heads_mod.train_go_thresholds(combined, Y_val,
                                         corpus.vocabulary.terms)
    path = _workpath(cfg, "hybrid.model")
    header = {"kind": HYBRID_KIND, "alpha": alpha,
              "terms": list(bank.terms),
              "directions": [r.direction for r in bank.rules],
              "config_hash": cfg.hash()}
    arrays = {"thresholds": np.array([r.threshold for r in bank.rules]),
              "margins": np.array([r.margin for r in bank.rules])}
    write_container(path, heads_mod.HEAD_MAGIC, header, arrays)
    print(f"train-hybrid: alpha {alpha:.4f} -> {path}")
    return 0


def _load_hybrid(path):
    header, arrays = read_container(path, heads_mod.HEAD_MAGIC)
    rules = tuple(heads_mod.ThresholdRule(d, float(t), float(m))
                  for d, t, m in zip(header["directions"],
                                     arrays["thresholds"], arrays["margins"]))
    return header["alpha"], heads_mod.GoThresholdBank(
        tuple(header["terms"]), rules)


def _predicted_sets(cfg, head_name, split):
    """Predicted GO sets + record ids for one head over one split."""
    if head_name == "hybrid":
        alpha, bank = _load_hybrid(_workpath(cfg, "hybrid.model"))
        posts = {}
        ids = None
        for name in ("plus", "mlda"):
            net, _, _ = heads_mod.load_head(_workpath(cfg, f"head_{name}.model"))
            X, feat_ids = feat_mod.load_features(_feature_path(cfg, split, name))
            posts[name] = heads_mod.head_posteriors(net, X)
            if ids is not None and feat_ids != ids:
                raise CorpusError("feature files disagree on record ids")
            ids = feat_ids
        combined = heads_mod.hybrid_combine(posts["plus"], posts["mlda"], alpha)
        return heads_mod.predict_sets(combined, bank), ids
    net, bank, _ = heads_mod.load_head(_workpath(cfg, f"head_{head_name}.model"))
    X, ids = feat_mod.load_features(_feature_path(cfg, split, head_name))
    return heads_mod.predict_sets(heads_mod.head_posteriors(net, X), bank), ids


def cmd_predict(cfg, args):
    sets, ids = _predicted_sets(cfg, args.head, args.split)
    out = args.out or _workpath(cfg, f"predictions_{args.head}_{args.split}.tsv")
    with open(out, "w") as fh:
        for rec_id, z in zip(ids, sets):
            fh.write(f"{rec_id}\t{','.join(sorted(z))}\n")
    print(f"predict: {len(ids)} records -> {out}")
    return 0


def _read_predictions(path):
    sets = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ParseError(f"{path} line {line_no}: expected 'id<TAB>terms'")
            rec_id, terms = line.split("\t", 1)
            sets[rec_id] = {t for t in terms.split(",") if t}
    return sets


def cmd_eval(cfg, args):
    corpus = _prepared(cfg)
    predictions = _read_predictions(args.predictions)
    by_id = {r.id: r for r in corpus.records}
    missing = [i for i in predictions if i not in by_id]
    if missing:
        raise CorpusError(f"prediction for unknown record {missing[0]!r}")
    pairs = []
    lengths = []
    for rec_id, z in predictions.items():
        pairs.append((by_id[rec_id].labels, z))
        lengths.append(len(by_id[rec_id].sequence))
    edges = cfg.get_int_list("bucket_edges")
    report = metrics_mod.bucketize(pairs, lengths, edges)
    out = args.out or (os.path.splitext(args.predictions)[0] + ".report.json")
    with open(out, "w") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_table())
    print(f"eval: report -> {out}")
    return 0


def cmd_sweep(cfg, args):
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes \
        else cfg.get_int_list("segment_sizes")
    corpus = _prepared(cfg)
    stride = cfg.get_int("stride")
    by_id = {r.id: r for r in corpus.records}
    rows = []
    for size in sizes:
        if size < cfg.get_int("nmer"):
            raise UsageError(f"segment size {size} below n-mer size")
        model_path = _workpath(cfg, f"svg_{size}.model")
        if _is_current(model_path, protsvg.MODEL_MAGIC, cfg):
            model = protsvg.load_model(model_path)
        else:
            train_segs = _segments_of(corpus.subset("train"), size, stride)
            val_segs = _segments_of(corpus.subset("validation"), size, stride)
            model = protsvg.train_svg(train_segs, _svg_hyperparams(cfg, size),
                                      corpus.vocabulary, val_segs)
            protsvg.save_model(model, model_path, config_hash=cfg.hash())
        feats = {}
        for split in ("train", "validation", "test"):
            records = corpus.subset(split)
            feats[split] = (feat_mod.featurize_corpus([model], records)[0],
                            [r.id for r in records])
        Y_train = _labels_for_ids(corpus, feats["train"][1])
        net = heads_mod.train_nn_head(
            feats["train"][0], Y_train, _head_hyperparams(cfg),
            validation=(feats["validation"][0],
                        _labels_for_ids(corpus, feats["validation"][1])))
        bank = heads_mod.train_go_thresholds(
            heads_mod.head_posteriors(net, feats["train"][0]), Y_train,
            corpus.vocabulary.terms)
        sets = heads_mod.predict_sets(
            heads_mod.head_posteriors(net, feats["test"][0]), bank)
        report = metrics_mod.compute_metrics(
            [(by_id[i].labels, z) for i, z in zip(feats["test"][1], sets)])
        rows.append((size, report))
        print(f"sweep: size {size} test avg-F1 {report.avg_f1:.4f}")
    print(f"{'size':>6}  {'precision':>9}  {'recall':>9}  {'f1':>9}")
    for size, rep in rows:
        print(f"{size:>6}  {rep.avg_precision:>9.4f}  {rep.avg_recall:>9.4f}  "
              f"{rep.avg_f1:>9.4f}")
    return 0


# ---------------------------------------------------------------------------
# Dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="protvecgen",
                     description="Segment-based protein function prediction")
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (also env PVG_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth")
    sub.add_parser("prepare")
    p = sub.add_parser("train-svg")
    p.add_argument("--segment-size", type=int, default=None)
    sub.add_parser("featurize")
    p = sub.add_parser("train-head")
    p.add_argument("--features", default="plus",
                   help="feature set name: plus, s<SIZE>, or mlda")
    sub.add_parser("train-mlda")
    sub.add_parser("train-hybrid")
    p = sub.add_parser("predict")
    p.add_argument("--head", default="hybrid")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p = sub.add_parser("eval")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default=None)
    p = sub.add_parser("sweep")
    p.add_argument("--sizes", default=None, help="comma-separated segment sizes")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train-svg": cmd_train_svg,
    "featurize": cmd_featurize,
    "train-head": cmd_train_head,
    "train-mlda": cmd_train_mlda,
    "train-hybrid": cmd_train_hybrid,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def _thread_cap(args):
    cap = args.threads
    if cap is None and os.environ.get("PVG_THREADS"):
        cap = int(os.environ["PVG_THREADS"])
    if cap is not None and cap >= 1:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(cap)


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _thread_cap(args)
        overrides = {"seed": str(args.seed)} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (protsvg.SvgError,) as exc:
        # segment-size and hyperparameter validation are usage errors;
        # divergence is numeric
        code = NUMERIC_ERROR if "diverged" in str(exc) else USAGE_ERROR
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (CorpusError, ParseError, ContainerError, SegmentationError,
            feat_mod.FeaturizeError, heads_mod.HeadError, mlda_mod.MldaError,
            metrics_mod.MetricsError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except KernelError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
