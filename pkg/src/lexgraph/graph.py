"""Typed graph over sentences, lemmas, difficulty classes and domains.

Node features are dense per-type matrices; each relation is a compressed
sparse adjacency (src-major CSR with sorted rows). Reverse relations are
materialized for every forward relation except the symmetric co-occurrence
one so that messages can reach sentence nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .ingest import (
    CLASS_LABELS,
    DOMAIN_LABELS,
    POS_TAGS,
    DataError,
    EmbeddingTable,
    LemmaProvider,
    LexiconEntry,
    SentenceRecord,
    lemmatize_sentence,
    lexicon_by_lemma,
    sentence_features,
)

SPLIT_NAMES = ("train", "dev", "test")


class NodeType(str, Enum):
    SENTENCE = "sentence"
    LEMMA = "lemma"
    CLASS = "class"
    DOMAIN = "domain"


@dataclass(frozen=True)
class Relation:
    src: NodeType
    name: str
    dst: NodeType


HAS_LEMMA = Relation(NodeType.SENTENCE, "has_lemma", NodeType.LEMMA)
OCCUR_WITH = Relation(NodeType.LEMMA, "occur_with", NodeType.LEMMA)
IN_CLASS = Relation(NodeType.SENTENCE, "in_class", NodeType.CLASS)
IN_DOMAIN = Relation(NodeType.SENTENCE, "in_domain", NodeType.DOMAIN)
REV_HAS_LEMMA = Relation(NodeType.LEMMA, "rev_has_lemma", NodeType.SENTENCE)
REV_IN_CLASS = Relation(NodeType.CLASS, "rev_in_class", NodeType.SENTENCE)
REV_IN_DOMAIN = Relation(NodeType.DOMAIN, "rev_in_domain", NodeType.SENTENCE)

FORWARD_RELATIONS = (HAS_LEMMA, OCCUR_WITH, IN_CLASS, IN_DOMAIN)
REVERSE_OF = {HAS_LEMMA: REV_HAS_LEMMA, IN_CLASS: REV_IN_CLASS, IN_DOMAIN: REV_IN_DOMAIN}
# Canonical ordering; message accumulation iterates relations in this order.
ALL_RELATIONS = (HAS_LEMMA, OCCUR_WITH, IN_CLASS, IN_DOMAIN,
                 REV_HAS_LEMMA, REV_IN_CLASS, REV_IN_DOMAIN)
RELATION_BY_NAME = {r.name: r for r in ALL_RELATIONS}


class Csr:
    """Src-major compressed sparse adjacency with sorted, deduplicated rows."""

    def __init__(self, offsets: np.ndarray, indices: np.ndarray,
                 n_src: int, n_dst: int):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.n_src = n_src
        self.n_dst = n_dst
        self.validate()

    def validate(self):
        if self.offsets.shape != (self.n_src + 1,):
            raise DataError(f"offsets length {len(self.offsets)} != n_src+1")
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.indices):
            raise DataError("offsets do not span the index array")
        if np.any(np.diff(self.offsets) < 0):
            raise DataError("offsets not non-decreasing")
        if len(self.indices) and (self.indices.min() < 0
                                  or self.indices.max() >= self.n_dst):
            raise DataError("dst index out of range")
        for row in range(self.n_src):
            seg = self.indices[self.offsets[row]:self.offsets[row + 1]]
            if np.any(np.diff(seg) <= 0):
                raise DataError(f"row {row} not strictly sorted")

    @classmethod
    def from_pairs(cls, pairs, n_src: int, n_dst: int) -> "Csr":
        """Build from (src, dst) pairs; duplicates collapse to one edge."""
        uniq = sorted(set(pairs))
        src = np.array([p[0] for p in uniq], dtype=np.int64)
        dst = np.array([p[1] for p in uniq], dtype=np.int64)
        counts = np.bincount(src, minlength=n_src) if len(uniq) else np.zeros(n_src, dtype=np.int64)
        offsets = np.zeros(n_src + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(offsets, dst, n_src, n_dst)

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    def neighbors(self, node: int) -> np.ndarray:
        if not 0 <= node < self.n_src:
            raise IndexError(f"node {node} out of range [0, {self.n_src})")
        return self.indices[self.offsets[node]:self.offsets[node + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def pairs(self):
        """All (src, dst) edges in row-major order."""
        src = np.repeat(np.arange(self.n_src), self.out_degrees())
        return list(zip(src.tolist(), self.indices.tolist()))

    def transpose(self) -> "Csr":
        return Csr.from_pairs([(d, s) for s, d in self.pairs()],
                              self.n_dst, self.n_src)


@dataclass
class GraphConfig:
    """Construction knobs; the defaults build the full seven-relation graph."""

    min_cooccur: int = 1
    drop_in_class: bool = False
    drop_in_domain: bool = False
    forward_edges_only: bool = False

    def __post_init__(self):
        if self.min_cooccur < 1:
            raise ValueError("min_cooccur must be >= 1")


@dataclass
class HeteroGraph:
    features: dict[NodeType, np.ndarray]
    adj: dict[Relation, Csr]
    adj_t: dict[Relation, Csr]  # dst-major mirrors used by mean aggregation
    sentence_ids: list[str]
    sentence_index: dict[str, int]
    lemma_keys: list[str]
    lemma_index: dict[str, int]
    doc_ids: list[str]
    gold_levels: np.ndarray  # int64 per sentence, 0 = unlabeled
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    embedding_dim: int = 0

    def n_nodes(self, ntype: NodeType) -> int:
        return self.features[ntype].shape[0]

    def input_widths(self) -> dict[str, int]:
        return {t.value: self.features[t].shape[1] for t in NodeType}


def neighbors(graph: HeteroGraph, relation: Relation, node: int) -> np.ndarray:
    """Sorted dst indices for `node` on the src side of `relation`."""
    if relation not in graph.adj:
        raise KeyError(f"relation {relation.name} not in graph")
    return graph.adj[relation].neighbors(node)


def cooccurrence_edges(lemma_sets: list[set[int]], min_count: int = 1) -> list[tuple[int, int]]:
    """Symmetric lemma pairs co-occurring in >= min_count sentences.

    Counts are over distinct-per-sentence lemma sets; both directions are
    emitted, self-pairs never.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[tuple[int, int], int] = {}
    for lemmas in lemma_sets:
        ordered = sorted(lemmas)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                counts[(a, b)] = counts.get((a, b), 0) + 1
    edges = []
    for (a, b), c in counts.items():
        if c >= min_count:
            edges.append((a, b))
            edges.append((b, a))
    return edges


def build_graph(corpus: list[SentenceRecord], lexicon: list[LexiconEntry],
                embeddings: EmbeddingTable, provider: LemmaProvider,
                config: GraphConfig | None = None,
                split: Mapping[str, str] | None = None) -> HeteroGraph:
    """Assemble the typed graph from parsed inputs.

    Node indices follow first appearance over the ordered corpus (sentences
    by file order, lemmas by first occurrence); class and domain nodes use
    the closed label-set order. Lemmas missing from the lexicon keep zero
    lexicon features so connectivity is preserved.
    """
    config = config or GraphConfig()
    lex_index = lexicon_by_lemma(lexicon)

    sentence_ids = [r.sentence_id for r in corpus]
    sentence_index = {sid: i for i, sid in enumerate(sentence_ids)}

    lemma_keys: list[str] = []
    lemma_index: dict[str, int] = {}
    lemma_pos: dict[str, str] = {}
    sent_lemma_pairs: list[tuple[int, int]] = []
    sent_lemma_sets: list[set[int]] = []
    featrows: list[np.ndarray] = []

    for si, record in enumerate(corpus):
        lemmas = lemmatize_sentence(record.text, provider)
        distinct: set[int] = set()
        for lemma, pos in lemmas:
            li = lemma_index.get(lemma)
            if li is None:
                li = len(lemma_keys)
                lemma_index[lemma] = li
                lemma_keys.append(lemma)
                lemma_pos[lemma] = pos
            distinct.add(li)
        sent_lemma_sets.append(distinct)
        sent_lemma_pairs.extend((si, li) for li in sorted(distinct))

        vec = embeddings.vectors.get(record.sentence_id)
        if vec is None:
            raise DataError(f"no embedding for sentence_id {record.sentence_id!r}")
        if len(vec) != embeddings.dim:
            raise DataError(f"embedding width mismatch for {record.sentence_id!r}")
        featrows.append(np.concatenate([vec, sentence_features(record, lemmas, lex_index)]))

    n_sent, n_lemma = len(corpus), len(lemma_keys)
    sent_feats = (np.stack(featrows) if featrows
                  else np.zeros((0, embeddings.dim + 5)))

    pos_slot = {tag: i for i, tag in enumerate(POS_TAGS)}
    lemma_feats = np.zeros((n_lemma, 2 + len(POS_TAGS)))
    for lemma, li in lemma_index.items():
        entry = lex_index.get(lemma)
        if entry is not None:
            lemma_feats[li, 0] = entry.avg_readability
            lemma_feats[li, 1] = np.log1p(entry.frequency)
        lemma_feats[li, 2 + pos_slot[lemma_pos[lemma]]] = 1.0

    class_feats = np.eye(len(CLASS_LABELS))
    domain_feats = np.eye(len(DOMAIN_LABELS))

    class_slot = {c: i for i, c in enumerate(CLASS_LABELS)}
    domain_slot = {d: i for i, d in enumerate(DOMAIN_LABELS)}

    adj: dict[Relation, Csr] = {}
    adj[HAS_LEMMA] = Csr.from_pairs(sent_lemma_pairs, n_sent, n_lemma)
    adj[OCCUR_WITH] = Csr.from_pairs(
        cooccurrence_edges(sent_lemma_sets, config.min_cooccur), n_lemma, n_lemma)
    if not config.drop_in_class:
        adj[IN_CLASS] = Csr.from_pairs(
            [(i, class_slot[r.class_label]) for i, r in enumerate(corpus)],
            n_sent, len(CLASS_LABELS))
    if not config.drop_in_domain:
        adj[IN_DOMAIN] = Csr.from_pairs(
            [(i, domain_slot[r.domain_label]) for i, r in enumerate(corpus)],
            n_sent, len(DOMAIN_LABELS))
    if not config.forward_edges_only:
        for fwd, rev in REVERSE_OF.items():
            if fwd in adj:
                adj[rev] = adj[fwd].transpose()

    gold = np.array([r.gold_level or 0 for r in corpus], dtype=np.int64)
    masks = _build_masks(corpus, gold, split)

    return HeteroGraph(
        features={NodeType.SENTENCE: sent_feats, NodeType.LEMMA: lemma_feats,
                  NodeType.CLASS: class_feats, NodeType.DOMAIN: domain_feats},
        adj=adj,
        adj_t={rel: csr.transpose() for rel, csr in adj.items()},
        sentence_ids=sentence_ids,
        sentence_index=sentence_index,
        lemma_keys=lemma_keys,
        lemma_index=lemma_index,
        doc_ids=[r.doc_id for r in corpus],
        gold_levels=gold,
        masks=masks,
        embedding_dim=embeddings.dim,
    )


def _build_masks(corpus, gold, split) -> dict[str, np.ndarray]:
    n = len(corpus)
    masks = {name: np.zeros(n, dtype=bool) for name in SPLIT_NAMES}
    if split is None:
        return masks
    for i, record in enumerate(corpus):
        assignment = split.get(record.doc_id)
        if assignment is None:
            if gold[i] > 0:
                raise DataError(
                    f"labeled doc {record.doc_id!r} missing from the split assignment"
                )
            continue
        if assignment not in SPLIT_NAMES:
            raise DataError(f"unknown split {assignment!r} for doc {record.doc_id!r}")
        if gold[i] > 0:
            masks[assignment][i] = True
    return masks


def summarize_graph(graph: HeteroGraph) -> str:
    lines = []
    for ntype in NodeType:
        lines.append(f"nodes\t{ntype.value}\t{graph.n_nodes(ntype)}")
    for rel in ALL_RELATIONS:
        if rel in graph.adj:
            lines.append(f"edges\t{rel.name}\t{graph.adj[rel].n_edges}")
    return "\n".join(lines) + "\n"


def dump_graph(graph: HeteroGraph, out_dir) -> list[Path]:
    """Write the text summary and one human-readable edge TSV per relation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = {
        NodeType.SENTENCE: graph.sentence_ids,
        NodeType.LEMMA: graph.lemma_keys,
        NodeType.CLASS: list(CLASS_LABELS),
        NodeType.DOMAIN: list(DOMAIN_LABELS),
    }
    written = []
    summary = out_dir / "graph_summary.txt"
    summary.write_text(summarize_graph(graph), encoding="utf-8")
    written.append(summary)
    for rel in ALL_RELATIONS:
        if rel not in graph.adj:
            continue
        path = out_dir / f"edges_{rel.name}.tsv"
        rows = ["src\tdst"]
        rows.extend(f"{names[rel.src][s]}\t{names[rel.dst][d]}"
                    for s, d in graph.adj[rel].pairs())
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
    return written
