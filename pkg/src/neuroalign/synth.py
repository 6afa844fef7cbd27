"""Synthetic data so the whole pipeline is checkable without external corpora.

The grammar emits subject-verb(-object) sentences with optional attractor
prepositional phrases, gold dependency edges, and one subject-verb-agreement
minimal pair per sentence. Brain-like recordings are a seeded linear
projection of model representations plus Gaussian noise, so the decoding
direction has a known linear solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SentenceGraph, Token
from .probes import MinimalPair
from .reprs import ReprMatrix

__all__ = [
    "Lexicon",
    "GrammarSpec",
    "SynthBrainSpec",
    "gen_corpus",
    "gen_brain",
]


@dataclass(frozen=True)
class Lexicon:
    # (singular, plural) noun and verb forms
    nouns: tuple = (
        ("dog", "dogs"),
        ("cat", "cats"),
        ("bird", "birds"),
        ("horse", "horses"),
        ("fox", "foxes"),
        ("cow", "cows"),
        ("pig", "pigs"),
        ("duck", "ducks"),
    )
    verbs_intrans: tuple = (
        ("runs", "run"),
        ("jumps", "jump"),
        ("sleeps", "sleep"),
        ("walks", "walk"),
        ("sings", "sing"),
    )
    verbs_trans: tuple = (
        ("sees", "see"),
        ("chases", "chase"),
        ("likes", "like"),
        ("follows", "follow"),
    )
    preps: tuple = ("near", "behind", "beside")
    det: str = "the"


@dataclass(frozen=True)
class GrammarSpec:
    seed: int = 0
    attractor_frac: float = 0.5
    transitive_frac: float = 0.5
    lexicon: Lexicon = field(default_factory=Lexicon)

    def __post_init__(self):
        if not 0.0 <= self.attractor_frac <= 1.0:
            raise ValueError("attractor_frac must be in [0,1]")
        if not 0.0 <= self.transitive_frac <= 1.0:
            raise ValueError("transitive_frac must be in [0,1]")


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def gen_corpus(spec: GrammarSpec, n: int):
    """Generate n sentences; returns list of (SentenceGraph, MinimalPair).

    Each sentence carries gold edges (det, nsubj, obj, case, nmod) and a
    minimal pair that flips exactly the verb's number inflection; attractor
    phrases put a distractor noun of independent number between subject and
    verb.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    lex = spec.lexicon
    out = []
    for i in range(n):
        subj_num = int(rng.integers(2))  # 0 = singular, 1 = plural
        subj = _pick(rng, lex.nouns)[subj_num]
        attractor = rng.random() < spec.attractor_frac
        transitive = rng.random() < spec.transitive_frac
        verb_pair = _pick(rng, lex.verbs_trans if transitive else lex.verbs_intrans)
        verb_good, verb_bad = verb_pair[subj_num], verb_pair[1 - subj_num]

        words: list[tuple[str, str]] = [(lex.det, "DET"), (subj, "NOUN")]
        edges = []
        subj_i = 2
        edges.append((subj_i, subj_i - 1, "det"))
        if attractor:
            prep = _pick(rng, lex.preps)
            attr_num = int(rng.integers(2))
            attr = _pick(rng, lex.nouns)[attr_num]
            words += [(prep, "ADP"), (lex.det, "DET"), (attr, "NOUN")]
            prep_i, attr_det_i, attr_i = 3, 4, 5
            edges.append((attr_i, prep_i, "case"))
            edges.append((attr_i, attr_det_i, "det"))
            edges.append((subj_i, attr_i, "nmod"))
        verb_i = len(words) + 1
        words.append((verb_good, "VERB"))
        edges.append((verb_i, subj_i, "nsubj"))
        if transitive:
            obj_num = int(rng.integers(2))
            obj = _pick(rng, lex.nouns)[obj_num]
            words += [(lex.det, "DET"), (obj, "NOUN")]
            obj_i = len(words)
            edges.append((obj_i, obj_i - 1, "det"))
            edges.append((verb_i, obj_i, "obj"))

        tokens = tuple(
            Token(index=j + 1, form=form, upos=upos)
            for j, (form, upos) in enumerate(words)
        )
        graph = SentenceGraph(
            tokens=tokens,
            edges=frozenset(edges),
            formalism="ud",
            tops=(verb_i,),
            sent_id=f"synth{i}",
        )
        pair = MinimalPair(
            prefix=tuple(form for form, _ in words[: verb_i - 1]),
            good=verb_good,
            bad=verb_bad,
            suffix=tuple(form for form, _ in words[verb_i:]),
            category="sva_attractor" if attractor else "sva_simple",
        )
        out.append((graph, pair))
    return out


@dataclass(frozen=True)
class SynthBrainSpec:
    source: ReprMatrix
    d_b: int
    sigma: float
    seed: int = 0
    # relative: noise std is sigma times the std of the noiseless signal
    sigma_is_relative: bool = False

    def __post_init__(self):
        if self.d_b < 1:
            raise ValueError("d_b must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def gen_brain(spec: SynthBrainSpec) -> ReprMatrix:
    """B = D M + noise with M a seeded random d_H x d_B map (entries scaled
    by 1/sqrt(d_H)) and i.i.d. Gaussian noise of scale sigma."""
    D = spec.source.data
    if D.shape[0] == 0:
        raise ValueError("source matrix is empty")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    d_h = D.shape[1]
    M = rng.standard_normal((d_h, spec.d_b)) / np.sqrt(d_h)
    signal = D @ M
    sigma = spec.sigma * float(signal.std()) if spec.sigma_is_relative else spec.sigma
    noise = sigma * rng.standard_normal((D.shape[0], spec.d_b))
    return ReprMatrix(data=signal + noise, labels=spec.source.labels)
