"""Command-line interface.

Subcommands: ingest, vocab, train, grid, extract, synth-brain, decode,
stats, select, probe, report, pipeline. Exit codes: 0 success, 2 validation
error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

import numpy as np

from . import corpus as corpus_mod
from .decode import DEFAULT_LAMBDA_GRID, nested_cv_decode
from .model import (
    GuidanceSpec,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    vocab_fingerprint,
)
from .pipeline import ConfigError, PipelineConfig, StageError, run_pipeline
from .probes import (
    evaluate_probe,
    read_pairs_tsv,
    read_tags_tsv,
    score_pairs,
    train_linear_probe,
)
from .reprs import (
    ReprMatrix,
    extract_sentence_reprs,
    extract_word_reprs,
    robin_hood_index,
)
from .stats import PairedScores, bonferroni, paired_bootstrap, wilcoxon_signed_rank
from .synth import SynthBrainSpec, gen_brain
from .train import GridSpec, TrainConfig, run_grid, train_mlm
from .wordpieces import Vocab, build_vocab

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


class ValidationError(ValueError):
    pass


def _load_graphs(path, fmt=None):
    if fmt is None:
        ext = os.path.splitext(path)[1].lstrip(".").lower()
        fmt = {"conllu": "conllu", "sdp": "sdp", "json": "hier-json",
               "jsonl": "jsonl"}.get(ext)
        if fmt is None:
            raise ValidationError(f"cannot infer format from extension: {path}")
    if fmt == "jsonl":
        return corpus_mod.read_jsonl(path)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if fmt == "conllu":
        return corpus_mod.parse_conllu(text)
    if fmt == "sdp":
        return corpus_mod.parse_sdp(text)
    if fmt == "hier-json":
        return [corpus_mod.bilexical_approximate(corpus_mod.parse_hier_json(text))]
    raise ValidationError(f"unsupported format {fmt!r}")


def _load_matrix(path):
    return ReprMatrix.load_csv(path) if path.endswith(".csv") else ReprMatrix.load(path)


def _parse_ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip() != "")


# --- subcommand implementations -------------------------------------------

def cmd_ingest(args):
    try:
        graphs = _load_graphs(args.input, args.format)
    except corpus_mod.ParseError as exc:
        raise ValidationError(f"{args.input}: {exc}") from exc
    corpus_mod.write_jsonl(graphs, args.output)
    label_counts = Counter(label for g in graphs for _, _, label in g.edges)
    print(f"sentences: {len(graphs)}")
    print(f"edges: {sum(label_counts.values())}")
    for label, count in sorted(label_counts.items()):
        print(f"  {label}: {count}")
    return EXIT_OK


def cmd_vocab(args):
    graphs = _load_graphs(args.corpus)
    sentences = [" ".join(g.forms()) for g in graphs]
    vocab = build_vocab(sentences, args.size)
    vocab.save(args.output)
    print(f"vocab: {len(vocab)} pieces -> {args.output}")
    return EXIT_OK


def _model_config_from_args(args, vocab):
    return ModelConfig(
        n_layers=args.model_layers,
        n_heads=args.model_heads,
        d_model=args.d_model,
        d_ff=args.d_ff,
        vocab_size=len(vocab),
        max_len=args.max_len,
    )


def _add_model_flags(sub):
    sub.add_argument("--model-layers", type=int, default=2)
    sub.add_argument("--model-heads", type=int, default=2)
    sub.add_argument("--d-model", type=int, default=32)
    sub.add_argument("--d-ff", type=int, default=64)
    sub.add_argument("--max-len", type=int, default=32)


def cmd_train(args):
    graphs = _load_graphs(args.corpus)
    if args.formalism:
        graphs = [g for g in graphs if g.formalism == args.formalism]
        if not graphs:
            raise ValidationError(f"no sentences with formalism {args.formalism!r}")
    vocab = Vocab.load(args.vocab)
    model_cfg = _model_config_from_args(args, vocab)
    guidance = None
    if args.layers > 0 and args.heads:
        guidance = GuidanceSpec(
            n_layers=args.layers,
            head_indices=_parse_ints(args.heads),
            alpha=args.alpha,
        )
    tcfg = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        guidance=guidance,
    )
    params, history = train_mlm(graphs, vocab, model_cfg, tcfg)
    save_checkpoint(args.output, params, model_cfg,
                    vocab_fingerprint(vocab), step=args.steps)
    print(f"checkpoint -> {args.output}")
    print(f"final losses: total {history['total'][-1]:.4f} "
          f"mlm {history['mlm'][-1]:.4f} guidance {history['guidance'][-1]:.4f}")
    return EXIT_OK


def cmd_grid(args):
    graphs = _load_graphs(args.corpus)
    vocab = Vocab.load(args.vocab)
    model_cfg = _model_config_from_args(args, vocab)
    head_sets = tuple(_parse_ints(part) for part in args.head_sets.split(";"))
    grid = GridSpec(
        layer_counts=_parse_ints(args.layer_counts),
        head_index_sets=head_sets,
        runs_per_setting=args.runs,
    )
    base = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
    )
    manifests = run_grid(grid, graphs, vocab, model_cfg, base,
                         args.out_dir, alpha=args.alpha, jobs=args.jobs)
    failures = sum(1 for m in manifests if "error" in m)
    print(f"grid complete: {len(manifests)} runs, {failures} failures")
    return EXIT_OK


def cmd_extract(args):
    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    graphs = _load_graphs(args.corpus)
    if args.level == "word":
        mat = extract_word_reprs(graphs, params, model_cfg, vocab)
    else:
        mat = extract_sentence_reprs(graphs, params, model_cfg, vocab)
    mat.save(args.output)
    if args.csv:
        mat.save_csv(args.csv)
    print(f"representations: {mat.n} x {mat.dim} -> {args.output}")
    return EXIT_OK


def cmd_synth_brain(args):
    source = _load_matrix(args.reprs)
    brain = gen_brain(SynthBrainSpec(
        source=source, d_b=args.d_b, sigma=args.sigma, seed=args.seed,
        sigma_is_relative=args.relative_sigma,
    ))
    brain.save(args.output)
    print(f"brain: {brain.n} x {brain.dim} -> {args.output}")
    return EXIT_OK


def cmd_decode(args):
    brain = _load_matrix(args.brain)
    reps = _load_matrix(args.reprs)
    if args.pca_threshold is not None:
        from .decode import pca_fit_transform

        pca = pca_fit_transform(brain.data,
                                variance_threshold=args.pca_threshold,
                                max_dims=args.pca_max_dims)
        brain = ReprMatrix(data=pca.reduced, labels=brain.labels)
        print(f"pca: brain reduced to {brain.dim} dims"
              + (" (capped)" if pca.capped else ""))
    grid = ([float(x) for x in args.lambda_grid.split(",")]
            if args.lambda_grid else DEFAULT_LAMBDA_GRID)
    report = nested_cv_decode(
        brain, reps, lambda_grid=grid,
        outer_folds=args.outer, inner_folds=args.inner, seed=args.seed,
    )
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    if args.scores_csv:
        report.write_scores_csv(args.scores_csv)
    print(report.to_json())
    return EXIT_OK


def _read_score_csv(path):
    import csv

    scores = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        try:
            col = header.index("pearson")
        except ValueError:
            col = len(header) - 1
        for parts in reader:
            if len(parts) > col and parts[col]:
                scores.append(float(parts[col]))
    return np.array(scores)


def cmd_stats(args):
    a = _read_score_csv(args.scores_a)
    b = _read_score_csv(args.scores_b)
    if a.shape != b.shape:
        raise ValidationError("score files have different lengths")
    result = paired_bootstrap(PairedScores(a=a, b=b), iters=args.iters, seed=args.seed)
    doc = {
        "comparison": f"{args.scores_a} > {args.scores_b}",
        "n": int(a.size),
        "iters": args.iters,
        "p_raw": result.p_value,
        "p_bonferroni": bonferroni(result.p_value, args.comparisons),
        "comparisons": args.comparisons,
        "direction": "A > B",
    }
    if args.by_subject_a and args.by_subject_b:
        sa = _read_score_csv(args.by_subject_a)
        sb = _read_score_csv(args.by_subject_b)
        if sa.shape != sb.shape:
            raise ValidationError("by-subject files have different lengths")
        w = wilcoxon_signed_rank(sa - sb)
        doc["m_subjects"] = int(sa.size)
        doc["wilcoxon_p"] = w
        doc["wilcoxon_p_bonferroni"] = bonferroni(w, args.comparisons)
    print(json.dumps(doc, indent=2, sort_keys=True))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    if args.means_csv:
        import csv

        with open(args.means_csv, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "mean_a", "mean_b"])
            for i, (ma, mb) in enumerate(result.iteration_means):
                writer.writerow([i, repr(float(ma)), repr(float(mb))])
    return EXIT_OK


def cmd_select(args):
    names = args.names.split(",") if args.names else [
        os.path.basename(p) for p in args.reprs
    ]
    if len(names) != len(args.reprs):
        raise ValidationError("--names count must match --reprs count")
    candidates = [(name, _load_matrix(path))
                  for name, path in zip(names, args.reprs)]
    scores = {name: robin_hood_index(mat, k=args.k, metric=args.metric)
              for name, mat in candidates}
    best = min(scores.items(), key=lambda kv: (kv[1], names.index(kv[0])))[0]
    print(json.dumps({"hubness": scores, "selected": best,
                      "k": args.k, "metric": args.metric},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_probe(args):
    if args.kind == "pairs":
        params, model_cfg, _ = load_checkpoint(args.checkpoint)
        vocab = Vocab.load(args.vocab)
        pairs = read_pairs_tsv(args.pairs)
        result = score_pairs(params, model_cfg, vocab, pairs)
        doc = {"overall_accuracy": result["overall_accuracy"],
               "by_category": result["by_category"]}
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    # tag probe over precomputed representations
    train_mat = _load_matrix(args.train_features)
    test_mat = _load_matrix(args.test_features)
    train_rows = read_tags_tsv(args.train_tags)
    test_rows = read_tags_tsv(args.test_tags)

    def gather(rows, mat):
        index = {label: i for i, label in enumerate(mat.labels)}
        feats, tags = [], []
        for sid, widx, tag in rows:
            key = f"{sid}:{widx}"
            matches = [l for l in index if l.startswith(key + ":") or l == key]
            if not matches:
                raise ValidationError(f"no representation for {key}")
            feats.append(mat.data[index[matches[0]]])
            tags.append(tag)
        return np.array(feats), tags

    X_train, y_train = gather(train_rows, train_mat)
    X_test, y_test = gather(test_rows, test_mat)
    probe = train_linear_probe(X_train, y_train, l2_strength=args.l2)
    ev = evaluate_probe(probe, X_test, y_test)
    print(json.dumps({"macro_f1": ev.macro_f1, "accuracy": ev.accuracy,
                      "per_class": ev.per_class}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args):
    run = args.run_dir
    summary_path = os.path.join(run, "summary.json")
    if not os.path.isdir(run):
        raise ValidationError(f"no run directory: {run}")
    if not os.path.exists(summary_path):
        missing = [p for p in ("summary.json", "effective_config.json")
                   if not os.path.exists(os.path.join(run, p))]
        raise ValidationError(f"incomplete run; missing: {', '.join(missing)}")
    with open(summary_path, encoding="utf-8") as f:
        summary = json.load(f)
    models = summary.get("models", {})
    stats = summary.get("stats", {})
    word_level = any("content_pearson" in m for m in models.values())
    cols = ["model", "pearson_r", "mean_rank", "median_rank", "hubness",
            "perplexity", "pair_acc", "p_bonferroni"]
    if word_level:
        cols[2:2] = ["content_r", "function_r"]
    rows = []
    for name in sorted(models):
        m = models[name]
        stat = stats.get(f"{name}_vs_baseline", {})
        row = [
            name,
            _fmt(m.get("mean_pearson")),
            _fmt(m.get("mean_rank"), 2),
            _fmt(m.get("median_rank"), 2),
            _fmt(m.get("hubness")),
            _fmt(m.get("pseudo_perplexity"), 2),
            _fmt(m.get("pair_accuracy")),
            _fmt(stat.get("p_bonferroni")) if stat else "absent",
        ]
        if word_level:
            row[2:2] = [_fmt(m.get("content_pearson")),
                        _fmt(m.get("function_pearson"))]
        rows.append(row)
    widths = [max(len(c), *(len(r[i]) for r in rows)) if rows else len(c)
              for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return EXIT_OK


def _fmt(value, digits=4):
    if value is None:
        return "absent"
    return f"{value:.{digits}f}"


def cmd_pipeline(args):
    overrides = {}
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        config = PipelineConfig.from_file(args.config, overrides)
    else:
        config = PipelineConfig.from_dict({}, overrides or {"out_dir": "run"})
    run_pipeline(config)
    return EXIT_OK


# --- argument parser -------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="neuroalign",
        description="Guided-attention MLM fine-tuning with brain-decoding "
                    "evaluation, statistics, and probes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a corpus file to JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["conllu", "sdp", "hier-json", "jsonl"])
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("vocab", help="build a wordpiece vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="fine-tune one model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--formalism", default=None)
    p.add_argument("--layers", type=int, default=0,
                   help="supervised layer count (0 = no guidance)")
    p.add_argument("--heads", default="", help="comma-separated head indices")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run the layers x heads guidance grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--layer-counts", required=True, help="e.g. 1,2")
    p.add_argument("--head-sets", required=True, help="e.g. '0;0,1'")
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1,
                   help="max parallel training processes")
    _add_model_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("extract", help="extract pooled representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--level", choices=["sentence", "word"], default="sentence")
    p.add_argument("--output", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth-brain", help="synthesize brain-like recordings")
    p.add_argument("--reprs", required=True)
    p.add_argument("--d-b", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--relative-sigma", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth_brain)

    p = sub.add_parser("decode", help="ridge decoding with nested CV")
    p.add_argument("--brain", required=True)
    p.add_argument("--reprs", required=True)
    p.add_argument("--outer", type=int, default=12)
    p.add_argument("--inner", type=int, default=5)
    p.add_argument("--lambda-grid", default=None,
                   help="comma-separated values; default log grid 1e-3..1e3")
    p.add_argument("--pca-threshold", type=float, default=None,
                   help="reduce the brain matrix by PCA to this variance "
                        "fraction before decoding")
    p.add_argument("--pca-max-dims", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--scores-csv", default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("stats", help="paired bootstrap between two score files")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--comparisons", type=int, default=3)
    p.add_argument("--by-subject-a", default=None,
                   help="per-subject mean scores for the exact Wilcoxon test")
    p.add_argument("--by-subject-b", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.add_argument("--means-csv", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("select", help="pick the lowest-hubness model")
    p.add_argument("--reprs", nargs="+", required=True)
    p.add_argument("--names", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("probe", help="minimal-pair or semantic-tag probing")
    p.add_argument("--kind", choices=["pairs", "tags"], required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--pairs")
    p.add_argument("--train-features")
    p.add_argument("--train-tags")
    p.add_argument("--test-features")
    p.add_argument("--test-tags")
    p.add_argument("--l2", type=float, default=1e-3)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="render tables for a completed run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run the full pipeline")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError, corpus_mod.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
