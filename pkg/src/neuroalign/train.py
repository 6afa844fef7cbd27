"""MLM masking, the Adam fine-tuning loop, and the guidance grid runner."""

from __future__ import annotations

import hashlib
import json
import os
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    GuidanceSpec,
    ModelConfig,
    backward,
    forward,
    guidance_loss,
    init_params,
    mlm_loss,
    save_checkpoint,
    vocab_fingerprint,
)
from .wordpieces import MASK_ID, N_SPECIALS, build_adjacency, tokenize_sentence

__all__ = [
    "MaskingPolicy",
    "TrainConfig",
    "GridSpec",
    "TrainingDiverged",
    "mask_tokens",
    "prepare_examples",
    "train_mlm",
    "plan_settings",
    "run_grid",
]

RUN_PAIR_SEED_OFFSET = 1000


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        self.step = step
        super().__init__(f"non-finite loss {value!r} at step {step}")


@dataclass(frozen=True)
class MaskingPolicy:
    mask_prob: float = 0.15
    replace_mask_frac: float = 0.8
    replace_random_frac: float = 0.1
    keep_frac: float = 0.1
    whole_word: bool = True

    def __post_init__(self):
        for name in ("mask_prob", "replace_mask_frac", "replace_random_frac", "keep_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")
        total = self.replace_mask_frac + self.replace_random_frac + self.keep_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"corruption fractions sum to {total}, expected 1")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 8
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    seed: int = 0
    guidance: GuidanceSpec | None = None
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def mask_tokens(alignment, policy: MaskingPolicy, rng, vocab_size: int):
    """Corrupt a tokenized sentence for MLM.

    Returns (input_ids, targets) where targets maps each corrupted piece
    position to its original id. With whole-word masking every piece of a
    selected word shares the corruption type. If sampling selects nothing,
    one word (or piece) is forced so the step always has a target.
    """
    ids = np.array(alignment.piece_ids, dtype=np.int64)
    if alignment.n_words == 0:
        raise ValueError("sentence has no maskable words")
    targets: dict[int, int] = {}

    def corrupt(positions):
        u = rng.random()
        for pos in positions:
            targets[pos] = int(ids[pos])
        if u < policy.replace_mask_frac:
            for pos in positions:
                ids[pos] = MASK_ID
        elif u < policy.replace_mask_frac + policy.replace_random_frac:
            for pos in positions:
                ids[pos] = int(rng.integers(N_SPECIALS, vocab_size))
        # else: keep original ids, still predicted

    if policy.whole_word:
        words = sorted(alignment.word_spans)
        draws = rng.random(len(words))
        selected = [w for w, u in zip(words, draws) if u < policy.mask_prob]
        if not selected:
            selected = [words[int(rng.integers(len(words)))]]
        for w in selected:
            s, e = alignment.span(w)
            corrupt(list(range(s, e)))
    else:
        positions = [p for s, e in alignment.word_spans.values() for p in range(s, e)]
        positions.sort()
        draws = rng.random(len(positions))
        selected = [p for p, u in zip(positions, draws) if u < policy.mask_prob]
        if not selected:
            selected = [positions[int(rng.integers(len(positions)))]]
        for p in selected:
            corrupt([p])
    return ids, targets


def prepare_examples(graphs, vocab, config: ModelConfig, need_adjacency: bool,
                     intra_word: bool = False):
    """Tokenize and (optionally) build adjacency targets for each sentence.

    Sentences over max_len are skipped so adjacency never refers to clipped
    positions; returns (examples, n_skipped).
    """
    examples = []
    skipped = 0
    for g in graphs:
        if not g.tokens:
            skipped += 1
            continue
        alignment = tokenize_sentence(g.forms(), vocab)
        if alignment.n_pieces > config.max_len:
            skipped += 1
            continue
        adj = build_adjacency(g, alignment, intra_word) if need_adjacency else None
        examples.append((alignment, adj))
    return examples, skipped


def _lr_at(step, config: TrainConfig):
    warmup = max(1, int(round(config.warmup_frac * config.steps)))
    if step < warmup:
        return config.learning_rate * (step + 1) / warmup
    return config.learning_rate


def train_mlm(graphs, vocab, model_config: ModelConfig, train_config: TrainConfig):
    """Fine-tune from a fresh init; returns (params, history).

    history holds per-step total/mlm/guidance losses. Deterministic given
    the seed: batches, masking, and gradient accumulation order are all
    driven by one PCG64 stream in a fixed order.
    """
    spec = train_config.guidance
    if spec is not None:
        spec.check_against(model_config)
    examples, skipped = prepare_examples(
        graphs, vocab, model_config, need_adjacency=spec is not None
    )
    if not examples:
        raise ValueError("no usable sentences (all empty or over max_len)")

    params = init_params(model_config, train_config.seed)
    mstate = {k: np.zeros_like(v) for k, v in params.items()}
    vstate = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    b1, b2 = train_config.adam_beta1, train_config.adam_beta2
    adam_eps = train_config.adam_eps
    history = {"step": [], "total": [], "mlm": [], "guidance": []}

    guidance_active = (
        spec is not None and spec.n_layers > 0 and len(spec.head_indices) > 0
    )

    for step in range(train_config.steps):
        batch_idx = rng.integers(0, len(examples), size=train_config.batch_size)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        step_mlm = 0.0
        step_guid = 0.0
        for i in batch_idx:
            alignment, adj = examples[int(i)]
            input_ids, targets = mask_tokens(
                alignment, train_config.masking, rng, model_config.vocab_size
            )
            trace = forward(input_ids, params, model_config)
            step_mlm += mlm_loss(trace, targets)
            if guidance_active:
                step_guid += guidance_loss(trace, adj, spec, model_config)
            use_spec = spec if (guidance_active and spec.alpha > 0) else None
            g = backward(
                trace, params, model_config, targets,
                adj if use_spec is not None else None, use_spec,
            )
            for k in grads:
                grads[k] += g[k]

        n = float(train_config.batch_size)
        step_mlm /= n
        step_guid /= n
        alpha = spec.alpha if spec is not None else 0.0
        step_total = step_mlm + alpha * step_guid
        if not np.isfinite(step_total):
            raise TrainingDiverged(step, step_total)
        history["step"].append(step)
        history["total"].append(step_total)
        history["mlm"].append(step_mlm)
        history["guidance"].append(step_guid)

        lr = _lr_at(step, train_config)
        t = step + 1
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for k in params:
            g = grads[k] / n
            mstate[k] = b1 * mstate[k] + (1 - b1) * g
            vstate[k] = b2 * vstate[k] + (1 - b2) * g * g
            update = (mstate[k] / bc1) / (np.sqrt(vstate[k] / bc2) + adam_eps)
            if train_config.weight_decay > 0 and params[k].ndim >= 2:
                update = update + train_config.weight_decay * params[k]
            params[k] -= lr * update

    return params, history


# ---------------------------------------------------------------------------
# Grid runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    layer_counts: tuple[int, ...]
    head_index_sets: tuple[tuple[int, ...], ...]
    runs_per_setting: int = 2

    def __post_init__(self):
        if not self.layer_counts or not self.head_index_sets:
            raise ValueError("grid lists must be non-empty")
        if self.runs_per_setting < 1:
            raise ValueError("runs_per_setting must be >= 1")

    @property
    def n_settings(self):
        return len(self.layer_counts) * len(self.head_index_sets)


def plan_settings(grid: GridSpec):
    """Enumerate (layer_count, head_indices) settings in grid order."""
    return [
        (lc, tuple(hs))
        for lc in grid.layer_counts
        for hs in grid.head_index_sets
    ]


def _atomic_write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def corpus_hash(graphs) -> str:
    from .corpus import graph_to_dict

    h = hashlib.sha256()
    for g in graphs:
        h.update(json.dumps(graph_to_dict(g), sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _grid_one_run(task):
    """Train one (setting, run) pair; returns its manifest. Top level so
    process pools can pickle it."""
    (lc, heads, r, seed, alpha, graphs, vocab, model_config, base_train,
     out_dir, chash, vhash) = task
    tag = f"L{lc}_H{'-'.join(map(str, heads))}_r{r}"
    spec = GuidanceSpec(n_layers=lc, head_indices=heads, alpha=alpha)
    cfg = replace(base_train, seed=seed, guidance=spec)
    manifest = {
        "setting": {"layers": lc, "heads": list(heads), "alpha": alpha},
        "run": r,
        "seed": seed,
        "steps": cfg.steps,
        "corpus_hash": chash,
        "vocab_hash": vhash,
    }
    try:
        params, history = train_mlm(graphs, vocab, model_config, cfg)
        ckpt = os.path.join(out_dir, f"ckpt_{tag}.bin")
        save_checkpoint(ckpt, params, model_config, vhash, step=cfg.steps)
        manifest["checkpoint"] = ckpt
        manifest["final_losses"] = {
            "total": history["total"][-1],
            "mlm": history["mlm"][-1],
            "guidance": history["guidance"][-1],
        }
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["traceback"] = traceback.format_exc()
    manifest_path = os.path.join(out_dir, f"manifest_{tag}.json")
    _atomic_write_json(manifest_path, manifest)
    manifest["path"] = manifest_path
    return manifest


def run_grid(grid: GridSpec, graphs, vocab, model_config: ModelConfig,
             base_train: TrainConfig, out_dir, alpha: float = 0.1,
             jobs: int = 1, log=print):
    """Train every (setting, run) pair; one checkpoint + manifest each.

    Individual failures are recorded in the manifest and the grid moves on.
    Run r of a setting uses seed base_seed + r * 1000. With jobs > 1, runs
    execute in a process pool (each run is internally deterministic and
    manifest writes are atomic); results come back in grid order either way.
    """
    os.makedirs(out_dir, exist_ok=True)
    settings = plan_settings(grid)
    total_runs = len(settings) * grid.runs_per_setting
    log(
        f"grid plan: {grid.n_settings} settings "
        f"({len(grid.layer_counts)} layer counts x "
        f"{len(grid.head_index_sets)} head sets), "
        f"{grid.runs_per_setting} runs each, {total_runs} runs total"
    )
    chash = corpus_hash(graphs)
    vhash = vocab_fingerprint(vocab)
    tasks = [
        (lc, heads, r, base_train.seed + r * RUN_PAIR_SEED_OFFSET, alpha,
         graphs, vocab, model_config, base_train, str(out_dir), chash, vhash)
        for lc, heads in settings
        for r in range(grid.runs_per_setting)
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            manifests = list(pool.map(_grid_one_run, tasks))
    else:
        manifests = [_grid_one_run(t) for t in tasks]
    return manifests
