"""Masking policy, training loop, grid runner."""

import numpy as np
import pytest

from neuroalign.model import GuidanceSpec, ModelConfig, load_checkpoint
from neuroalign.synth import GrammarSpec, gen_corpus
from neuroalign.train import (
    GridSpec,
    MaskingPolicy,
    TrainConfig,
    mask_tokens,
    plan_settings,
    prepare_examples,
    run_grid,
    train_mlm,
)
from neuroalign.wordpieces import MASK_ID, build_vocab, tokenize_sentence


@pytest.fixture(scope="module")
def corpus():
    items = gen_corpus(GrammarSpec(seed=5), 50)
    graphs = [g for g, _ in items]
    vocab = build_vocab([" ".join(g.forms()) for g in graphs], 80)
    return graphs, vocab


def small_config(vocab):
    return ModelConfig(n_layers=1, n_heads=2, d_model=16, d_ff=32,
                       vocab_size=len(vocab), max_len=24)


class TestMaskingPolicy:
    def test_fraction_validation(self):
        with pytest.raises(ValueError, match="sum"):
            MaskingPolicy(replace_mask_frac=0.5, replace_random_frac=0.5,
                          keep_frac=0.5)

    def test_prob_range(self):
        with pytest.raises(ValueError):
            MaskingPolicy(mask_prob=1.5)


class TestMaskTokens:
    def alignment(self, vocab):
        return tokenize_sentence(["the", "dog", "runs"], vocab)

    def test_mask_everything(self, corpus):
        _, vocab = corpus
        a = self.alignment(vocab)
        policy = MaskingPolicy(mask_prob=1.0, replace_mask_frac=1.0,
                               replace_random_frac=0.0, keep_frac=0.0)
        rng = np.random.default_rng(0)
        ids, targets = mask_tokens(a, policy, rng, len(vocab))
        interior = range(1, a.n_pieces - 1)
        assert all(ids[p] == MASK_ID for p in interior)
        assert set(targets) == set(interior)

    def test_zero_prob_forces_one_word(self, corpus):
        _, vocab = corpus
        a = self.alignment(vocab)
        policy = MaskingPolicy(mask_prob=0.0)
        rng = np.random.default_rng(1)
        _, targets = mask_tokens(a, policy, rng, len(vocab))
        spans = [a.span(w) for w in a.word_spans]
        matching = [s for s in spans if set(range(*s)) == set(targets)]
        assert len(matching) == 1

    def test_fixed_seed_reproducible(self, corpus):
        _, vocab = corpus
        a = self.alignment(vocab)
        policy = MaskingPolicy()
        r1 = mask_tokens(a, policy, np.random.default_rng(7), len(vocab))
        r2 = mask_tokens(a, policy, np.random.default_rng(7), len(vocab))
        assert np.array_equal(r1[0], r2[0]) and r1[1] == r2[1]

    def test_specials_never_corrupted(self, corpus):
        _, vocab = corpus
        a = self.alignment(vocab)
        rng = np.random.default_rng(3)
        for _ in range(20):
            ids, targets = mask_tokens(
                a, MaskingPolicy(mask_prob=0.9), rng, len(vocab)
            )
            assert 0 not in targets and a.n_pieces - 1 not in targets
            assert ids[0] == a.piece_ids[0]
            assert ids[-1] == a.piece_ids[-1]

    def test_whole_word_shares_fate(self):
        from neuroalign.wordpieces import SPECIALS, Vocab

        pieces = {sp: i for i, sp in enumerate(SPECIALS)}
        for piece in ("the", "##dog"):
            pieces[piece] = len(pieces)
        vocab = Vocab(pieces=pieces)
        a = tokenize_sentence(["thedog"], vocab)
        s, e = a.span(1)
        assert e - s == 2
        rng = np.random.default_rng(4)
        policy = MaskingPolicy(mask_prob=1.0)
        for _ in range(10):
            ids, targets = mask_tokens(a, policy, rng, len(vocab))
            kinds = set()
            for p in range(s, e):
                assert p in targets
                if ids[p] == MASK_ID:
                    kinds.add("mask")
                elif ids[p] == a.piece_ids[p]:
                    kinds.add("keep")
                else:
                    kinds.add("random")
            assert len(kinds - {"random"}) <= 1

    def test_targets_only_at_corrupted_positions(self, corpus):
        _, vocab = corpus
        a = self.alignment(vocab)
        rng = np.random.default_rng(5)
        ids, targets = mask_tokens(a, MaskingPolicy(), rng, len(vocab))
        for pos, orig in targets.items():
            assert orig == a.piece_ids[pos]


class TestTrainMlm:
    def test_loss_decreases(self, corpus):
        graphs, vocab = corpus
        cfg = small_config(vocab)
        tcfg = TrainConfig(steps=200, batch_size=4, learning_rate=1e-3, seed=0)
        _, history = train_mlm(graphs, vocab, cfg, tcfg)
        assert history["mlm"][-1] < history["mlm"][0]

    def test_alpha_zero_matches_pure_mlm(self, corpus):
        graphs, vocab = corpus
        cfg = small_config(vocab)
        spec = GuidanceSpec(n_layers=1, head_indices=(0,), alpha=0.0)
        p1, h1 = train_mlm(graphs, vocab, cfg,
                           TrainConfig(steps=20, batch_size=2, seed=3,
                                       guidance=spec))
        p2, h2 = train_mlm(graphs, vocab, cfg,
                           TrainConfig(steps=20, batch_size=2, seed=3,
                                       guidance=None))
        for k in p1:
            np.testing.assert_array_equal(p1[k], p2[k])
        assert h1["mlm"] == h2["mlm"]
        assert any(g > 0 for g in h1["guidance"])  # logged though inert

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError, match="steps"):
            TrainConfig(steps=0)

    def test_bitwise_reproducible(self, corpus):
        graphs, vocab = corpus
        cfg = small_config(vocab)
        spec = GuidanceSpec(n_layers=1, head_indices=(0,), alpha=0.1)
        tcfg = TrainConfig(steps=15, batch_size=2, seed=9, guidance=spec)
        p1, h1 = train_mlm(graphs, vocab, cfg, tcfg)
        p2, h2 = train_mlm(graphs, vocab, cfg, tcfg)
        for k in p1:
            np.testing.assert_array_equal(p1[k], p2[k])
        assert h1 == h2

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_divergence_aborts_with_step(self, corpus):
        from neuroalign.train import TrainingDiverged

        graphs, vocab = corpus
        cfg = ModelConfig(n_layers=1, n_heads=1, d_model=8, d_ff=8,
                          vocab_size=len(vocab), max_len=24)
        with pytest.raises(TrainingDiverged, match="at step"):
            train_mlm(graphs, vocab, cfg,
                      TrainConfig(steps=100, batch_size=2,
                                  learning_rate=1e9, warmup_frac=0.0, seed=0))

    def test_long_sentences_skipped(self, corpus):
        graphs, vocab = corpus
        tight = ModelConfig(n_layers=1, n_heads=1, d_model=8, d_ff=8,
                            vocab_size=len(vocab), max_len=6)
        examples, skipped = prepare_examples(graphs, vocab, tight,
                                             need_adjacency=False)
        assert skipped > 0
        assert all(a.n_pieces <= 6 for a, _ in examples)

    def test_guided_attention_mass_trend(self, corpus):
        """Attention mass on gold-adjacent pairs grows during guided training."""
        from neuroalign.model import forward

        graphs, vocab = corpus
        cfg = small_config(vocab)
        spec = GuidanceSpec(n_layers=1, head_indices=(0,), alpha=0.1)

        def mass(params):
            examples, _ = prepare_examples(graphs[:20], vocab, cfg, True)
            vals = []
            for alignment, adj in examples:
                trace = forward(np.array(alignment.piece_ids), params, cfg)
                pm = trace.pair_mask().astype(bool)
                A = adj.bits.astype(bool)
                probs = trace.attention[0][0]
                for i in np.nonzero(pm)[0]:
                    if A[i].any():
                        vals.append(probs[i][A[i]].sum())
            return float(np.mean(vals))

        checkpoints = []
        for steps in (40, 120, 280, 600):
            params, _ = train_mlm(
                graphs, vocab, cfg,
                TrainConfig(steps=steps, batch_size=4, learning_rate=1e-3,
                            seed=1, guidance=spec),
            )
            checkpoints.append(mass(params))
        diffs = np.diff(checkpoints)
        assert (diffs > 0).mean() >= 0.9  # allow rare stochastic dips
        assert checkpoints[-1] > checkpoints[0]


class TestGrid:
    def test_plan_cartesian_count(self):
        grid = GridSpec(layer_counts=(1, 2), head_index_sets=((0,), (0, 1)),
                        runs_per_setting=1)
        assert len(plan_settings(grid)) == 4

    def test_paper_scale_plan(self):
        grid = GridSpec(
            layer_counts=tuple(range(1, 25)),
            head_index_sets=tuple(
                tuple(range(m)) for m in (1, 3, 5, 7, 9, 11, 12)
            ),
            runs_per_setting=2,
        )
        assert grid.n_settings == 168

    def test_run_pair_seed_offset(self, corpus, tmp_path):
        graphs, vocab = corpus
        cfg = small_config(vocab)
        grid = GridSpec(layer_counts=(1,), head_index_sets=((0,),),
                        runs_per_setting=2)
        base = TrainConfig(steps=3, batch_size=2, seed=100)
        manifests = run_grid(grid, graphs, vocab, cfg, base, tmp_path,
                             log=lambda *_: None)
        assert [m["seed"] for m in manifests] == [100, 1100]
        for m in manifests:
            assert "error" not in m
            params, _, header = load_checkpoint(m["checkpoint"])
            assert header["step"] == 3

    def test_failure_recorded_grid_continues(self, corpus, tmp_path):
        graphs, vocab = corpus
        cfg = small_config(vocab)
        # head index 5 is invalid for a 2-head model -> first setting fails
        grid = GridSpec(layer_counts=(1,), head_index_sets=((5,), (0,)),
                        runs_per_setting=1)
        base = TrainConfig(steps=2, batch_size=2, seed=0)
        manifests = run_grid(grid, graphs, vocab, cfg, base, tmp_path,
                             log=lambda *_: None)
        assert "error" in manifests[0]
        assert "error" not in manifests[1]
