"""Graph-annotated corpus ingestion.

Readers for CoNLL-U dependency treebanks and SDP 2015 bilexical semantic
graphs, plus a head-percolation conversion that flattens hierarchical
(constituency-like) graphs into bilexical form. All readers produce
:class:`SentenceGraph` values, the common currency of the rest of the
pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

__all__ = [
    "Token",
    "SentenceGraph",
    "HierEdge",
    "HierGraph",
    "ParseError",
    "CONTENT_UPOS",
    "DEFAULT_PRIORITY",
    "parse_conllu",
    "serialize_conllu",
    "parse_sdp",
    "parse_hier_json",
    "bilexical_approximate",
    "split_content_function",
    "graph_to_dict",
    "graph_from_dict",
    "write_jsonl",
    "read_jsonl",
]

# Universal POS tags treated as content words; everything else is function.
CONTENT_UPOS = frozenset({"ADJ", "ADV", "NOUN", "PROPN", "VERB", "X", "NUM"})

# Head-percolation priority for hierarchical categories: predicates and
# centers first, minor/function categories last. Configurable per call.
DEFAULT_PRIORITY = (
    "P", "S", "C", "H", "A", "D", "E", "R", "F", "L", "N", "G", "Q", "T", "U",
)

REMOTE_SUFFIX = "*remote"


class ParseError(ValueError):
    """Malformed input; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Token:
    """One word of a sentence; ``index`` is 1-based."""

    index: int
    form: str
    upos: str | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if not self.form:
            raise ValueError("token form must be non-empty")


@dataclass(frozen=True)
class SentenceGraph:
    """Tokens plus bilexical (head -> dependent, label) edges.

    ``tops`` marks root/TOP tokens (SDP top predicates, UD roots); they are
    metadata, not edges.
    """

    tokens: tuple[Token, ...]
    edges: frozenset[tuple[int, int, str]]
    formalism: str = "other"
    tops: tuple[int, ...] = ()
    sent_id: str | None = None

    def __post_init__(self):
        n = len(self.tokens)
        for head, dep, label in self.edges:
            if not (1 <= head <= n and 1 <= dep <= n):
                raise ValueError(
                    f"edge ({head},{dep},{label!r}) out of token range 1..{n}"
                )
            if head == dep:
                raise ValueError(f"self-loop edge on token {head}")

    @property
    def n_tokens(self):
        return len(self.tokens)

    def forms(self):
        return [t.form for t in self.tokens]


@dataclass(frozen=True)
class HierEdge:
    parent: str
    child: str
    category: str
    remote: bool = False


@dataclass(frozen=True)
class HierGraph:
    """Hierarchical graph: internal units over anchored terminal units.

    ``anchors`` maps leaf unit ids to 1-based word indices; primary
    (non-remote) edges must form a tree over the units.
    """

    units: tuple[str, ...]
    edges: tuple[HierEdge, ...]
    anchors: dict[str, int]
    tokens: tuple[Token, ...]

    def validate(self):
        unit_set = set(self.units)
        if len(unit_set) != len(self.units):
            raise ValueError("duplicate unit ids")
        for e in self.edges:
            if e.parent not in unit_set or e.child not in unit_set:
                raise ValueError(f"edge {e} references unknown unit")
        primary = [e for e in self.edges if not e.remote]
        children = {}
        for e in primary:
            if e.child in children:
                raise ValueError(f"unit {e.child!r} has two primary parents")
            children[e.child] = e.parent
        roots = [u for u in self.units if u not in children]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {roots}")
        # primary edges form a tree: |edges| == |units| - 1 and acyclic
        if len(primary) != len(self.units) - 1:
            raise ValueError("primary edges do not form a tree")
        seen_words = {}
        for unit, word in self.anchors.items():
            if unit not in unit_set:
                raise ValueError(f"anchor on unknown unit {unit!r}")
            if word in seen_words:
                raise ValueError(f"word {word} anchored by two terminals")
            seen_words[word] = unit
        for i in range(1, len(self.tokens) + 1):
            if i not in seen_words:
                raise ValueError(f"word {i} has no anchoring terminal")
        return roots[0]


# ---------------------------------------------------------------------------
# CoNLL-U
# ---------------------------------------------------------------------------

def parse_conllu(text: str) -> list[SentenceGraph]:
    """Parse CoNLL-U text into one SentenceGraph per sentence.

    Multiword-token ranges (``1-2``) and empty nodes (``1.1``) are skipped;
    only the basic HEAD/DEPREL layer is read. HEAD == 0 marks the root and
    produces a ``tops`` entry instead of an edge.
    """
    sentences = []
    tokens: list[Token] = []
    edges: list[tuple[int, int, str]] = []
    tops: list[int] = []
    sent_id = None

    def flush():
        nonlocal tokens, edges, tops, sent_id
        if tokens:
            sentences.append(
                SentenceGraph(
                    tokens=tuple(tokens),
                    edges=frozenset(edges),
                    formalism="ud",
                    tops=tuple(tops),
                    sent_id=sent_id,
                )
            )
        tokens, edges, tops, sent_id = [], [], [], None

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            if line.startswith("# sent_id"):
                sent_id = line.split("=", 1)[-1].strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"expected 10 columns, got {len(cols)}", line=lineno)
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range or empty node
        try:
            index = int(tok_id)
        except ValueError:
            raise ParseError(f"non-integer token id {tok_id!r}", line=lineno) from None
        upos = cols[3] if cols[3] != "_" else None
        tokens.append(Token(index=index, form=cols[1], upos=upos))
        try:
            head = int(cols[6])
        except ValueError:
            raise ParseError(f"non-integer HEAD {cols[6]!r}", line=lineno) from None
        if head == 0:
            tops.append(index)
        elif head > 0:
            edges.append((head, index, cols[7]))
        else:
            raise ParseError(f"negative HEAD {head}", line=lineno)
    flush()
    return sentences


def serialize_conllu(graphs: list[SentenceGraph]) -> str:
    """Render graphs back to CoNLL-U (basic columns only)."""
    blocks = []
    for g in graphs:
        head_of = {}
        label_of = {}
        for head, dep, label in g.edges:
            head_of[dep] = head
            label_of[dep] = label
        for top in g.tops:
            head_of[top] = 0
            label_of[top] = "root"
        lines = []
        if g.sent_id is not None:
            lines.append(f"# sent_id = {g.sent_id}")
        for tok in g.tokens:
            head = head_of.get(tok.index, 0)
            label = label_of.get(tok.index, "root" if head == 0 else "dep")
            lines.append(
                "\t".join(
                    [
                        str(tok.index),
                        tok.form,
                        "_",
                        tok.upos or "_",
                        "_",
                        "_",
                        str(head),
                        label,
                        "_",
                        "_",
                    ]
                )
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# ---------------------------------------------------------------------------
# SDP 2015
# ---------------------------------------------------------------------------

def parse_sdp(text: str) -> list[SentenceGraph]:
    """Parse SDP 2015 format (id, form, lemma, pos, top, pred, frame, args*).

    One argument column per '+'-marked predicate; cell values other than
    ``_`` produce an edge (predicate word -> argument word, role label).
    """
    sentences = []
    block: list[tuple[int, list[str]]] = []

    def flush():
        nonlocal block
        if block:
            sentences.append(_parse_sdp_block(block))
        block = []

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        block.append((lineno, line.split("\t")))
    flush()
    return sentences


def _parse_sdp_block(block: list[tuple[int, list[str]]]) -> SentenceGraph:
    tokens = []
    tops = []
    pred_rows = []  # word indices of '+' predicates, in order
    for lineno, cols in block:
        if len(cols) < 7:
            raise ParseError(f"expected >= 7 columns, got {len(cols)}", line=lineno)
        try:
            index = int(cols[0])
        except ValueError:
            raise ParseError(f"non-integer token id {cols[0]!r}", line=lineno) from None
        tokens.append(Token(index=index, form=cols[1], upos=None))
        if cols[4] == "+":
            tops.append(index)
        if cols[5] == "+":
            pred_rows.append(index)

    n_preds = len(pred_rows)
    edges = []
    for lineno, cols in block:
        args = cols[7:]
        if len(args) != n_preds:
            raise ParseError(
                f"{len(args)} argument columns but {n_preds} predicates",
                line=lineno,
            )
        dep = int(cols[0])
        for j, cell in enumerate(args):
            if cell != "_":
                edges.append((pred_rows[j], dep, cell))
    return SentenceGraph(
        tokens=tuple(tokens),
        edges=frozenset(edges),
        formalism="dm",
        tops=tuple(tops),
    )


# ---------------------------------------------------------------------------
# Hierarchical graphs and bilexical approximation
# ---------------------------------------------------------------------------

def parse_hier_json(text: str) -> HierGraph:
    """Read a hierarchical graph from its JSON document form.

    Schema: ``{"units": [...], "edges": [{"parent", "child", "category",
    "remote"?}], "anchors": {unitId: wordIndex}, "tokens": [...]}`` where
    tokens are strings or ``{"form", "upos"?}`` objects.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    for key in ("units", "edges", "anchors", "tokens"):
        if key not in doc:
            raise ParseError(f"missing key {key!r}")
    tokens = []
    for i, t in enumerate(doc["tokens"], start=1):
        if isinstance(t, str):
            tokens.append(Token(index=i, form=t))
        else:
            tokens.append(Token(index=i, form=t["form"], upos=t.get("upos")))
    edges = tuple(
        HierEdge(
            parent=str(e["parent"]),
            child=str(e["child"]),
            category=str(e["category"]),
            remote=bool(e.get("remote", False)),
        )
        for e in doc["edges"]
    )
    anchors = {str(u): int(w) for u, w in doc["anchors"].items()}
    g = HierGraph(
        units=tuple(str(u) for u in doc["units"]),
        edges=edges,
        anchors=anchors,
        tokens=tuple(tokens),
    )
    g.validate()
    return g


def bilexical_approximate(
    g: HierGraph,
    priority=DEFAULT_PRIORITY,
    keep_remote: bool = True,
) -> SentenceGraph:
    """Flatten a hierarchical graph to word-to-word edges by head percolation.

    Each unit's head terminal is the head of its child whose edge category
    ranks earliest in ``priority`` (ties: leftmost head word wins). Every
    non-head child then contributes an edge (parent head -> child head,
    category); remote edges do the same with a ``*remote`` label suffix.
    """
    root = g.validate()
    rank = {cat: i for i, cat in enumerate(priority)}
    primary_children: dict[str, list[HierEdge]] = {u: [] for u in g.units}
    for e in g.edges:
        if not e.remote:
            primary_children[e.parent].append(e)
    for e in g.edges:
        if e.category not in rank:
            raise ValueError(
                f"category {e.category!r} missing from the priority list"
            )

    head_word: dict[str, int] = {}

    def percolate(unit: str) -> int:
        if unit in head_word:
            return head_word[unit]
        kids = primary_children[unit]
        if not kids:
            if unit not in g.anchors:
                raise ValueError(f"unit {unit!r} has no children and no anchoring")
            head_word[unit] = g.anchors[unit]
            return head_word[unit]
        best = min(kids, key=lambda e: (rank[e.category], percolate(e.child)))
        head_word[unit] = percolate(best.child)
        return head_word[unit]

    percolate(root)
    for u in g.units:
        percolate(u)

    edges = set()
    for unit in g.units:
        kids = primary_children[unit]
        if not kids:
            continue
        h = head_word[unit]
        for e in kids:
            c = head_word[e.child]
            if c != h:
                edges.add((h, c, e.category))
    if keep_remote:
        for e in g.edges:
            if e.remote:
                h = head_word[e.parent]
                c = head_word[e.child]
                if c != h:
                    edges.add((h, c, e.category + REMOTE_SUFFIX))

    return SentenceGraph(
        tokens=g.tokens,
        edges=frozenset(edges),
        formalism="ucca-bilexical",
    )


# ---------------------------------------------------------------------------
# Content/function split
# ---------------------------------------------------------------------------

def split_content_function(tokens) -> tuple[set[int], set[int]]:
    """Partition token indices into content and function words by UPOS."""
    content, function = set(), set()
    for tok in tokens:
        if tok.upos is None:
            raise ValueError(f"token {tok.index} ({tok.form!r}) has no upos tag")
        if tok.upos in CONTENT_UPOS:
            content.add(tok.index)
        else:
            function.add(tok.index)
    return content, function


# ---------------------------------------------------------------------------
# Normalized JSONL
# ---------------------------------------------------------------------------

def graph_to_dict(g: SentenceGraph) -> dict:
    d = {
        "tokens": [
            {"index": t.index, "form": t.form, "upos": t.upos} for t in g.tokens
        ],
        "edges": sorted([h, dep, label] for h, dep, label in g.edges),
        "formalism": g.formalism,
        "tops": list(g.tops),
    }
    if g.sent_id is not None:
        d["sent_id"] = g.sent_id
    return d


def graph_from_dict(d: dict) -> SentenceGraph:
    return SentenceGraph(
        tokens=tuple(
            Token(index=t["index"], form=t["form"], upos=t.get("upos"))
            for t in d["tokens"]
        ),
        edges=frozenset((e[0], e[1], e[2]) for e in d["edges"]),
        formalism=d.get("formalism", "other"),
        tops=tuple(d.get("tops", ())),
        sent_id=d.get("sent_id"),
    )


def write_jsonl(graphs, path):
    with open(path, "w", encoding="utf-8") as f:
        for g in graphs:
            f.write(json.dumps(graph_to_dict(g), sort_keys=True) + "\n")


def read_jsonl(path) -> list[SentenceGraph]:
    graphs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                graphs.append(graph_from_dict(json.loads(line)))
    return graphs
