"""End-to-end pipeline: corpus -> vocab -> train -> extract -> brain ->
decode -> stats -> probes -> summary.

Every effective setting is re-serialized into the run directory and all
randomness flows from the config seed, so a rerun with the same config
produces a byte-identical summary. Stage failures raise StageError with the
stage name; artifacts written so far are left in place.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import corpus as corpus_mod
from .corpus import split_content_function
from .decode import DEFAULT_LAMBDA_GRID, nested_cv_decode, pca_fit_transform
from .model import (
    GuidanceSpec,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    vocab_fingerprint,
)
from .probes import score_pairs, write_pairs_tsv
from .reprs import (
    ReprMatrix,
    extract_sentence_reprs,
    extract_word_reprs,
    pseudo_perplexity,
    robin_hood_index,
)
from .stats import PairedScores, bonferroni, paired_bootstrap
from .synth import GrammarSpec, SynthBrainSpec, gen_brain, gen_corpus
from .train import TrainConfig, corpus_hash, train_mlm
from .wordpieces import build_vocab

SEED_ENV_VAR = "NEUROALIGN_SEED"


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    out_dir: str
    seed: int = 0
    # corpus: synthetic by default, or {"path": ..., "format": ...}
    corpus: dict = field(default_factory=lambda: {
        "synthetic": True, "n_train": 400, "n_heldout": 100,
        "attractor_frac": 0.5, "transitive_frac": 0.5,
    })
    vocab_size: int = 96
    model: dict = field(default_factory=lambda: {
        "n_layers": 2, "n_heads": 2, "d_model": 32, "d_ff": 64, "max_len": 24,
    })
    train: dict = field(default_factory=lambda: {
        "steps": 1500, "batch_size": 8, "learning_rate": 1e-3,
    })
    guidance: dict = field(default_factory=lambda: {
        "n_layers": 2, "head_indices": [0, 1], "alpha": 0.1,
    })
    brain: dict = field(default_factory=lambda: {
        "synthetic": True, "d_b": 48, "sigma": 0.5, "source": "guided",
    })
    decode: dict = field(default_factory=lambda: {
        "outer_folds": 12, "inner_folds": 5, "level": "sentence",
        "lambda_grid": [float(x) for x in DEFAULT_LAMBDA_GRID],
    })
    stats: dict = field(default_factory=lambda: {"iters": 5000, "comparisons": 1})

    @classmethod
    def from_file(cls, path, overrides=None):
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from None
        return cls.from_dict(doc, overrides)

    @classmethod
    def from_dict(cls, doc, overrides=None):
        cfg = cls(out_dir=doc.get("out_dir", "run"))
        for key in ("seed", "vocab_size", "out_dir"):
            if key in doc:
                setattr(cfg, key, doc[key])
        for key in ("corpus", "model", "train", "guidance", "brain", "decode", "stats"):
            if key in doc:
                getattr(cfg, key).update(doc[key])
        for key, value in (overrides or {}).items():
            if value is not None:
                setattr(cfg, key, value)
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            try:
                cfg.seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None
        cfg.validate()
        return cfg

    def validate(self):
        if not self.corpus.get("synthetic"):
            path = self.corpus.get("path")
            if not path:
                raise ConfigError("corpus needs 'synthetic': true or a 'path'")
            if not os.path.exists(path):
                raise ConfigError(f"corpus path does not exist: {path}")
            if self.corpus.get("format") not in ("conllu", "sdp", "jsonl"):
                raise ConfigError("corpus format must be conllu, sdp, or jsonl")
        if not self.brain.get("synthetic"):
            path = self.brain.get("path")
            if not path:
                raise ConfigError("brain needs 'synthetic': true or a 'path'")
            if not os.path.exists(path):
                raise ConfigError(f"brain path does not exist: {path}")
        try:
            self.model_config()
            self.guidance_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, vocab_size=None):
        return ModelConfig(vocab_size=vocab_size or 1, **self.model)

    def guidance_spec(self):
        return GuidanceSpec(
            n_layers=self.guidance.get("n_layers", 1),
            head_indices=tuple(self.guidance.get("head_indices", [0])),
            alpha=self.guidance.get("alpha", 0.1),
        )

    def to_dict(self):
        return asdict(self)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _word_level_split(graphs):
    """Word-repr labels partitioned into content and function sets; None when
    any token lacks a UPOS tag."""
    content, function = set(), set()
    for i, g in enumerate(graphs):
        sid = g.sent_id or f"s{i}"
        try:
            content_idx, _ = split_content_function(g.tokens)
        except ValueError:
            return None
        for tok in g.tokens:
            label = f"{sid}:{tok.index}:{tok.form}"
            (content if tok.index in content_idx else function).add(label)
    return content, function


def _load_corpus_file(path, fmt):
    if fmt == "jsonl":
        return corpus_mod.read_jsonl(path)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if fmt == "conllu":
        return corpus_mod.parse_conllu(text)
    if fmt == "sdp":
        return corpus_mod.parse_sdp(text)
    raise ConfigError(f"unknown corpus format {fmt!r}")


def run_pipeline(config: PipelineConfig, log=print) -> dict:
    """Execute all stages; returns the summary dict (also written to
    summary.json in the run directory)."""
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "effective_config.json"), config.to_dict())
    summary = {"seed": config.seed, "models": {}, "stats": {}, "inputs": {}}

    # --- corpus ---
    stage = "corpus"
    try:
        cdir = os.path.join(out, "corpus")
        os.makedirs(cdir, exist_ok=True)
        if config.corpus.get("synthetic"):
            n_train = int(config.corpus.get("n_train", 400))
            n_heldout = int(config.corpus.get("n_heldout", 100))
            spec = GrammarSpec(
                seed=config.seed,
                attractor_frac=float(config.corpus.get("attractor_frac", 0.5)),
                transitive_frac=float(config.corpus.get("transitive_frac", 0.5)),
            )
            items = gen_corpus(spec, n_train + n_heldout)
            train_graphs = [g for g, _ in items[:n_train]]
            held_graphs = [g for g, _ in items[n_train:]]
            held_pairs = [p for _, p in items[n_train:]]
            with open(os.path.join(cdir, "train.conllu"), "w", encoding="utf-8") as f:
                f.write(corpus_mod.serialize_conllu(train_graphs))
            with open(os.path.join(cdir, "heldout.conllu"), "w", encoding="utf-8") as f:
                f.write(corpus_mod.serialize_conllu(held_graphs))
            write_pairs_tsv([p for _, p in items[:n_train]],
                            os.path.join(cdir, "train_pairs.tsv"))
            write_pairs_tsv(held_pairs, os.path.join(cdir, "heldout_pairs.tsv"))
        else:
            graphs = _load_corpus_file(config.corpus["path"], config.corpus["format"])
            n_heldout = int(config.corpus.get("n_heldout", max(1, len(graphs) // 5)))
            if n_heldout >= len(graphs):
                raise ValueError("heldout split leaves no training sentences")
            train_graphs = graphs[:-n_heldout]
            held_graphs = graphs[-n_heldout:]
            held_pairs = None
            summary["inputs"]["corpus_file"] = _file_hash(config.corpus["path"])
        corpus_mod.write_jsonl(train_graphs, os.path.join(cdir, "train.jsonl"))
        corpus_mod.write_jsonl(held_graphs, os.path.join(cdir, "heldout.jsonl"))
        summary["inputs"]["train_corpus_hash"] = corpus_hash(train_graphs)
        summary["inputs"]["heldout_corpus_hash"] = corpus_hash(held_graphs)
        log(f"[corpus] {len(train_graphs)} train / {len(held_graphs)} heldout sentences")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- vocab ---
    stage = "vocab"
    try:
        sentences = [" ".join(g.forms()) for g in train_graphs]
        vocab = build_vocab(sentences, config.vocab_size)
        vocab.save(os.path.join(out, "vocab.txt"))
        summary["inputs"]["vocab_size"] = len(vocab)
        log(f"[vocab] {len(vocab)} pieces")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- train ---
    stage = "train"
    try:
        mdir = os.path.join(out, "models")
        os.makedirs(mdir, exist_ok=True)
        model_cfg = ModelConfig(vocab_size=len(vocab), **config.model)
        spec = config.guidance_spec()
        model_paths = {}
        vhash = vocab_fingerprint(vocab)
        for name, guidance in (("baseline", None), ("guided", spec)):
            tcfg = TrainConfig(seed=config.seed, guidance=guidance, **config.train)
            params, history = train_mlm(train_graphs, vocab, model_cfg, tcfg)
            ckpt = os.path.join(mdir, f"{name}.bin")
            save_checkpoint(ckpt, params, model_cfg, vhash, step=tcfg.steps)
            _write_json(os.path.join(mdir, f"{name}_history.json"), history)
            _write_json(
                os.path.join(mdir, f"{name}_manifest.json"),
                {
                    "name": name,
                    "seed": tcfg.seed,
                    "steps": tcfg.steps,
                    "guidance": guidance.to_dict() if guidance else None,
                    "checkpoint": ckpt,
                    "corpus_hash": summary["inputs"]["train_corpus_hash"],
                    "final_losses": {
                        "total": history["total"][-1],
                        "mlm": history["mlm"][-1],
                        "guidance": history["guidance"][-1],
                    },
                },
            )
            model_paths[name] = ckpt
            summary["models"][name] = {
                "final_mlm_loss": history["mlm"][-1],
                "final_guidance_loss": history["guidance"][-1],
            }
            log(f"[train] {name}: final mlm {history['mlm'][-1]:.4f}")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- extract ---
    stage = "extract"
    try:
        rdir = os.path.join(out, "reprs")
        os.makedirs(rdir, exist_ok=True)
        level = config.decode.get("level", "sentence")
        reprs = {}
        for name, ckpt in model_paths.items():
            params, cfg_loaded, _ = load_checkpoint(ckpt)
            if level == "word":
                mat = extract_word_reprs(held_graphs, params, cfg_loaded, vocab)
            else:
                mat = extract_sentence_reprs(held_graphs, params, cfg_loaded, vocab)
            mat.save(os.path.join(rdir, f"{name}.bin"))
            reprs[name] = mat
            summary["models"][name]["hubness"] = robin_hood_index(mat, k=10)
            summary["models"][name]["pseudo_perplexity"] = pseudo_perplexity(
                params, cfg_loaded, vocab, [g.forms() for g in held_graphs]
            )
            log(f"[extract] {name}: {mat.n}x{mat.dim}, "
                f"hubness {summary['models'][name]['hubness']:.4f}")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- brain ---
    stage = "brain"
    try:
        bdir = os.path.join(out, "brain")
        os.makedirs(bdir, exist_ok=True)
        if config.brain.get("synthetic"):
            source = config.brain.get("source", "guided")
            if source not in reprs:
                raise ValueError(f"unknown brain source model {source!r}")
            brain = gen_brain(
                SynthBrainSpec(
                    source=reprs[source],
                    d_b=int(config.brain.get("d_b", 48)),
                    sigma=float(config.brain.get("sigma", 0.5)),
                    seed=config.seed,
                    sigma_is_relative=True,
                )
            )
            summary["inputs"]["brain"] = {
                "synthetic": True, "source": source,
                "d_b": brain.dim, "sigma": config.brain.get("sigma", 0.5),
            }
        else:
            path = config.brain["path"]
            brain = (
                ReprMatrix.load_csv(path) if path.endswith(".csv")
                else ReprMatrix.load(path)
            )
            summary["inputs"]["brain"] = {"synthetic": False, "hash": _file_hash(path)}
            threshold = config.brain.get("pca_threshold")
            if threshold is not None:
                pca = pca_fit_transform(
                    brain.data,
                    variance_threshold=float(threshold),
                    max_dims=config.brain.get("pca_max_dims"),
                )
                brain = ReprMatrix(data=pca.reduced, labels=brain.labels)
                summary["inputs"]["brain"]["pca_dims"] = brain.dim
                summary["inputs"]["brain"]["pca_capped"] = pca.capped
        brain.save(os.path.join(bdir, "brain.bin"))
        log(f"[brain] {brain.n}x{brain.dim}")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- decode ---
    stage = "decode"
    try:
        ddir = os.path.join(out, "decode")
        os.makedirs(ddir, exist_ok=True)
        word_split = _word_level_split(held_graphs) if level == "word" else None
        reports = {}
        for name, mat in reprs.items():
            report = nested_cv_decode(
                brain,
                mat,
                lambda_grid=config.decode.get("lambda_grid", DEFAULT_LAMBDA_GRID),
                outer_folds=int(config.decode.get("outer_folds", 12)),
                inner_folds=int(config.decode.get("inner_folds", 5)),
                seed=config.seed,
            )
            with open(os.path.join(ddir, f"{name}_report.json"), "w",
                      encoding="utf-8") as f:
                f.write(report.to_json() + "\n")
            report.write_scores_csv(os.path.join(ddir, f"{name}_scores.csv"))
            reports[name] = report
            summary["models"][name].update(report.summary)
            if word_split is not None:
                content_set, function_set = word_split
                r = report.pearson
                for split_name, keys in (("content", content_set),
                                         ("function", function_set)):
                    rows = [i for i, lab in enumerate(report.labels)
                            if lab in keys and not np.isnan(r[i])]
                    summary["models"][name][f"{split_name}_pearson"] = (
                        float(np.mean(r[rows])) if rows else None
                    )
            log(f"[decode] {name}: mean r {report.summary['mean_pearson']:.4f}, "
                f"mean rank {report.summary['mean_rank']:.2f}")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- stats ---
    stage = "stats"
    try:
        sdir = os.path.join(out, "stats")
        os.makedirs(sdir, exist_ok=True)
        guided_names = [n for n in reports if n != "baseline"]
        comparisons = int(config.stats.get("comparisons") or max(1, len(guided_names)))
        for name in guided_names:
            ra = reports[name].pearson
            rb = reports["baseline"].pearson
            keep = ~(np.isnan(ra) | np.isnan(rb))
            result = paired_bootstrap(
                PairedScores(a=ra[keep], b=rb[keep]),
                iters=int(config.stats.get("iters", 5000)),
                seed=config.seed,
            )
            corrected = bonferroni(result.p_value, comparisons)
            doc = {
                "comparison": f"{name} > baseline",
                "n": int(keep.sum()),
                "iters": int(config.stats.get("iters", 5000)),
                "p_raw": result.p_value,
                "p_bonferroni": corrected,
                "comparisons": comparisons,
                "direction": f"{name} > baseline",
            }
            _write_json(os.path.join(sdir, f"{name}_vs_baseline.json"), doc)
            summary["stats"][f"{name}_vs_baseline"] = doc
            log(f"[stats] {name} vs baseline: p={result.p_value:.4f} "
                f"(bonferroni x{comparisons}: {corrected:.4f})")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    # --- probes ---
    stage = "probes"
    try:
        if config.corpus.get("synthetic"):
            pdir = os.path.join(out, "probes")
            os.makedirs(pdir, exist_ok=True)
            for name, ckpt in model_paths.items():
                params, cfg_loaded, _ = load_checkpoint(ckpt)
                result = score_pairs(params, cfg_loaded, vocab, held_pairs)
                doc = {
                    "overall_accuracy": result["overall_accuracy"],
                    "by_category": {
                        cat: {k: v for k, v in s.items()}
                        for cat, s in result["by_category"].items()
                    },
                }
                _write_json(os.path.join(pdir, f"{name}_pairs.json"), doc)
                summary["models"][name]["pair_accuracy"] = result["overall_accuracy"]
                log(f"[probes] {name}: accuracy {result['overall_accuracy']}")
    except Exception as exc:
        raise StageError(stage, exc) from exc

    _write_json(os.path.join(out, "summary.json"), summary)
    log(f"[done] {os.path.join(out, 'summary.json')}")
    return summary
