"""Synthetic grammar corpus and brain-like recordings."""

import numpy as np
import pytest

from neuroalign.corpus import parse_conllu, serialize_conllu
from neuroalign.decode import nested_cv_decode
from neuroalign.reprs import ReprMatrix
from neuroalign.synth import GrammarSpec, SynthBrainSpec, gen_brain, gen_corpus


class TestGenCorpus:
    def test_simple_template_edges(self):
        spec = GrammarSpec(seed=0, attractor_frac=0.0, transitive_frac=0.0)
        graph, pair = gen_corpus(spec, 1)[0]
        forms = graph.forms()
        assert forms[0] == "the"
        assert len(forms) == 3
        labels = {label for _, _, label in graph.edges}
        assert labels == {"det", "nsubj"}
        assert pair.category == "sva_simple"

    def test_attractor_template_edges(self):
        spec = GrammarSpec(seed=1, attractor_frac=1.0, transitive_frac=0.0)
        graph, pair = gen_corpus(spec, 1)[0]
        labels = sorted(label for _, _, label in graph.edges)
        assert labels == ["case", "det", "det", "nmod", "nsubj"]
        assert pair.category == "sva_attractor"
        assert len(graph.forms()) == 6

    def test_deterministic(self):
        a = gen_corpus(GrammarSpec(seed=7), 20)
        b = gen_corpus(GrammarSpec(seed=7), 20)
        assert a == b

    def test_zero_rejected(self):
        with pytest.raises(ValueError, match="n must be"):
            gen_corpus(GrammarSpec(seed=0), 0)

    def test_pairs_differ_only_in_verb(self):
        items = gen_corpus(GrammarSpec(seed=3), 50)
        lex = GrammarSpec(seed=3).lexicon
        verb_forms = {f for pair in lex.verbs_intrans + lex.verbs_trans
                      for f in pair}
        for graph, pair in items:
            sentence = list(pair.prefix) + [pair.good] + list(pair.suffix)
            assert sentence == graph.forms()
            assert pair.good in verb_forms and pair.bad in verb_forms
            assert pair.good != pair.bad
            # the two targets are the two inflections of one verb
            assert any(
                {pair.good, pair.bad} == set(vp)
                for vp in lex.verbs_intrans + lex.verbs_trans
            )

    def test_verb_agrees_with_subject(self):
        lex = GrammarSpec(seed=0).lexicon
        singular_nouns = {sg for sg, _ in lex.nouns}
        singular_verbs = {sg for sg, _ in lex.verbs_intrans + lex.verbs_trans}
        for graph, pair in gen_corpus(GrammarSpec(seed=5), 60):
            verb_i = graph.tops[0]
            subj_i = next(d for h, d, label in graph.edges
                          if h == verb_i and label == "nsubj")
            subj = graph.tokens[subj_i - 1].form
            verb = graph.tokens[verb_i - 1].form
            assert (subj in singular_nouns) == (verb in singular_verbs)

    def test_emitted_conllu_parses_back(self):
        items = gen_corpus(GrammarSpec(seed=2), 10)
        graphs = [g for g, _ in items]
        text = serialize_conllu(graphs)
        assert parse_conllu(text) == graphs

    def test_upos_tags_present(self):
        for graph, _ in gen_corpus(GrammarSpec(seed=4), 10):
            assert all(t.upos is not None for t in graph.tokens)


class TestGenBrain:
    def source(self, seed=0, n=200, d=16):
        rng = np.random.default_rng(seed)
        return ReprMatrix(data=rng.normal(size=(n, d)),
                          labels=[f"s{i}" for i in range(n)])

    def test_noiseless_exactly_decodable(self):
        src = self.source()
        brain = gen_brain(SynthBrainSpec(source=src, d_b=32, sigma=0.0, seed=0))
        # least squares back to the source leaves ~zero residual
        G, *_ = np.linalg.lstsq(brain.data, src.data, rcond=None)
        resid = np.linalg.norm(brain.data @ G - src.data)
        assert resid / np.linalg.norm(src.data) < 1e-8

    def test_noiseless_nested_cv_recovery(self):
        src = self.source()
        brain = gen_brain(SynthBrainSpec(source=src, d_b=32, sigma=0.0, seed=1))
        report = nested_cv_decode(brain, src, seed=0)
        assert report.summary["mean_pearson"] >= 0.999

    def test_huge_noise_kills_signal(self):
        src = self.source(n=150)
        signal = gen_brain(SynthBrainSpec(source=src, d_b=24, sigma=0.0, seed=2))
        scale = float(signal.data.std())
        noisy = gen_brain(SynthBrainSpec(source=src, d_b=24,
                                         sigma=1e3 * scale, seed=2))
        report = nested_cv_decode(noisy, src, seed=0)
        assert abs(report.summary["mean_pearson"]) < 0.1

    def test_deterministic(self):
        src = self.source()
        b1 = gen_brain(SynthBrainSpec(source=src, d_b=8, sigma=0.3, seed=9))
        b2 = gen_brain(SynthBrainSpec(source=src, d_b=8, sigma=0.3, seed=9))
        np.testing.assert_array_equal(b1.data, b2.data)

    def test_labels_copied(self):
        src = self.source(n=5)
        brain = gen_brain(SynthBrainSpec(source=src, d_b=4, sigma=0.1, seed=0))
        assert brain.labels == src.labels

    def test_relative_sigma_scales_noise(self):
        src = self.source()
        b0 = gen_brain(SynthBrainSpec(source=src, d_b=16, sigma=0.0, seed=3))
        b1 = gen_brain(SynthBrainSpec(source=src, d_b=16, sigma=1.0, seed=3,
                                      sigma_is_relative=True))
        noise = b1.data - b0.data
        assert noise.std() == pytest.approx(b0.data.std(), rel=0.05)

    def test_validation(self):
        src = self.source(n=3)
        with pytest.raises(ValueError):
            SynthBrainSpec(source=src, d_b=0, sigma=0.1)
        with pytest.raises(ValueError):
            SynthBrainSpec(source=src, d_b=4, sigma=-0.1)
