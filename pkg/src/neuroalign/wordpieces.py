"""Wordpiece tokenization, word/piece alignment, and adjacency targets.

A small greedy longest-match-first subword tokenizer with the usual five
special tokens, plus construction of the symmetric piece-level adjacency
matrix that the attention guidance trains against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PAD", "UNK", "CLS", "SEP", "MASK",
    "PAD_ID", "UNK_ID", "CLS_ID", "SEP_ID", "MASK_ID",
    "SPECIALS", "N_SPECIALS",
    "Vocab", "PieceAlignment", "AdjacencyMatrix",
    "build_vocab", "tokenize_sentence", "build_adjacency",
]

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
N_SPECIALS = len(SPECIALS)

CONT = "##"


@dataclass(frozen=True)
class Vocab:
    """Piece-string -> dense id map; ids 0..4 are the special tokens."""

    pieces: dict[str, int]

    def __post_init__(self):
        for i, sp in enumerate(SPECIALS):
            if self.pieces.get(sp) != i:
                raise ValueError(f"special {sp} must have id {i}")
        ids = sorted(self.pieces.values())
        if ids != list(range(len(self.pieces))):
            raise ValueError("piece ids must be dense in [0, len)")

    def __len__(self):
        return len(self.pieces)

    def __contains__(self, piece):
        return piece in self.pieces

    def id_of(self, piece):
        return self.pieces[piece]

    def id_to_piece(self):
        inv = [None] * len(self.pieces)
        for p, i in self.pieces.items():
            inv[i] = p
        return inv

    def save(self, path):
        # one piece per line, line number == id; bit-exact LF endings
        inv = self.id_to_piece()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for p in inv:
                f.write(p + "\n")

    @classmethod
    def load(cls, path):
        pieces = {}
        with open(path, encoding="utf-8") as f:
            for i, line in enumerate(f):
                pieces[line.rstrip("\n")] = i
        return cls(pieces)


@dataclass(frozen=True)
class PieceAlignment:
    """Piece ids with [CLS]/[SEP] framing and per-word piece spans.

    ``word_spans[w]`` is the half-open 0-based range of piece positions for
    1-based word ``w``; spans are contiguous, ordered, and cover positions
    1..P-2.
    """

    piece_ids: tuple[int, ...]
    word_spans: dict[int, tuple[int, int]]

    @property
    def n_pieces(self):
        return len(self.piece_ids)

    @property
    def n_words(self):
        return len(self.word_spans)

    def span(self, word_index):
        if word_index not in self.word_spans:
            raise KeyError(f"no word {word_index} in alignment")
        return self.word_spans[word_index]


@dataclass
class AdjacencyMatrix:
    """P x P binary symmetric connectivity target with a zero diagonal."""

    bits: np.ndarray

    @property
    def size(self):
        return self.bits.shape[0]

    def to_pairs(self):
        rows, cols = np.nonzero(self.bits)
        return [[int(r), int(c)] for r, c in zip(rows, cols)]

    def to_json(self):
        return json.dumps({"size": self.size, "pairs": self.to_pairs()})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        bits = np.zeros((doc["size"], doc["size"]), dtype=np.uint8)
        for r, c in doc["pairs"]:
            bits[r, c] = 1
        return cls(bits=bits)


def build_vocab(corpus, target_size: int) -> Vocab:
    """Greedy frequency-based vocabulary over lowercased sentences.

    Selection order: the five specials, every observed single character,
    most frequent whole words, then most frequent ``##``-suffix fragments,
    stopping at ``target_size``. Deterministic given corpus order (frequency
    ties break lexicographically).
    """
    char_set = set()
    word_freq: dict[str, int] = {}
    frag_freq: dict[str, int] = {}
    n_words = 0
    for sentence in corpus:
        words = sentence.split() if isinstance(sentence, str) else sentence
        for word in words:
            word = word.lower()
            n_words += 1
            char_set.update(word)
            word_freq[word] = word_freq.get(word, 0) + 1
            for i in range(1, len(word)):
                frag = CONT + word[i:]
                frag_freq[frag] = frag_freq.get(frag, 0) + 1

    min_size = N_SPECIALS + len(char_set)
    if target_size < min_size:
        raise ValueError(
            f"target_size {target_size} below alphabet + specials ({min_size})"
        )
    if n_words == 0 and target_size > N_SPECIALS:
        raise ValueError("empty corpus cannot fill a vocab beyond the specials")

    pieces = {sp: i for i, sp in enumerate(SPECIALS)}
    for ch in sorted(char_set):
        pieces[ch] = len(pieces)

    by_freq = sorted(word_freq.items(), key=lambda kv: (-kv[1], kv[0]))
    for word, _ in by_freq:
        if len(pieces) >= target_size:
            break
        if word not in pieces:
            pieces[word] = len(pieces)

    by_freq = sorted(frag_freq.items(), key=lambda kv: (-kv[1], kv[0]))
    for frag, _ in by_freq:
        if len(pieces) >= target_size:
            break
        if frag not in pieces:
            pieces[frag] = len(pieces)

    return Vocab(pieces=pieces)


def tokenize_sentence(words, vocab: Vocab) -> PieceAlignment:
    """Greedy longest-match-first segmentation with [CLS]/[SEP] framing.

    A word with any unmatchable residue collapses to a single [UNK] piece.
    """
    ids = [CLS_ID]
    spans = {}
    for w, word in enumerate(words, start=1):
        word = word.lower()
        start = len(ids)
        word_ids = []
        pos = 0
        ok = len(word) > 0
        while pos < len(word):
            end = len(word)
            match = None
            while end > pos:
                cand = word[pos:end]
                if pos > 0:
                    cand = CONT + cand
                if cand in vocab:
                    match = cand
                    break
                end -= 1
            if match is None:
                ok = False
                break
            word_ids.append(vocab.id_of(match))
            pos = end
        if ok:
            ids.extend(word_ids)
        else:
            ids.append(UNK_ID)
        spans[w] = (start, len(ids))
    ids.append(SEP_ID)
    return PieceAlignment(piece_ids=tuple(ids), word_spans=spans)


def build_adjacency(
    graph, alignment: PieceAlignment, intra_word: bool = False
) -> AdjacencyMatrix:
    """Expand word-level edges to all piece pairs, symmetrized.

    Rows/columns of special positions stay zero, as does the diagonal. With
    ``intra_word``, pieces of the same multi-piece word are also connected.
    """
    if graph.n_tokens != alignment.n_words:
        raise ValueError(
            f"graph has {graph.n_tokens} words but alignment has "
            f"{alignment.n_words}"
        )
    P = alignment.n_pieces
    bits = np.zeros((P, P), dtype=np.uint8)
    for head, dep, _ in graph.edges:
        hs, he = alignment.span(head)
        ds, de = alignment.span(dep)
        bits[hs:he, ds:de] = 1
        bits[ds:de, hs:he] = 1
    if intra_word:
        for w in alignment.word_spans:
            s, e = alignment.span(w)
            if e - s > 1:
                bits[s:e, s:e] = 1
    np.fill_diagonal(bits, 0)
    return AdjacencyMatrix(bits=bits)
