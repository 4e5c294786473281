"""Deterministic synthetic dataset generator.

The planted signal makes the fixture learnable end to end: a sentence's
gold level is encoded both in which lemmas it uses (vocabulary difficulty
tracks the level) and in its embedding (one noisy direction per level), so
a correct model can overfit the training split and generalize across the
doc-level splits. Same seed, same bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import CLASS_LABELS, DOMAIN_LABELS, POS_TAGS
from .metrics import NUM_LEVELS

FIXTURE_FILES = ("lexicon.tsv", "corpus.tsv", "embeddings.tsv",
                 "encoder_probs.tsv", "splits.tsv")

# Fatha mark; repeated after a base letter to plant diacritic counts.
_BASE_LETTER = "ب"
_FATHA = "َ"


def _class_for_level(level: int) -> str:
    if level <= 6:
        return CLASS_LABELS[0]
    if level <= 13:
        return CLASS_LABELS[1]
    return CLASS_LABELS[2]


def make_fixture(out_dir, seed: int = 42, n_docs: int = 50,
                 sentences_per_doc: int = 4, vocab_size: int = 120,
                 embedding_dim: int = 64,
                 encoder_accuracy: float = 0.7) -> dict[str, Path]:
    """Write lexicon, corpus, embeddings, encoder probabilities and a
    doc-level split file; returns the path of each."""
    if min(n_docs, sentences_per_doc, vocab_size, embedding_dim) < 1:
        raise ValueError("all sizes must be >= 1")
    if not 0.0 <= encoder_accuracy <= 1.0:
        raise ValueError("encoder_accuracy must be in [0, 1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # Graded vocabulary: difficulty sweeps 1..19 across the vocab.
    lemmas = [f"w{i:03d}" for i in range(vocab_size)]
    difficulty = np.array([1 + (i * NUM_LEVELS) // vocab_size for i in range(vocab_size)])
    freqs = rng.integers(1, 1000, size=vocab_size)
    pos_cycle = [POS_TAGS[i % 6] for i in range(vocab_size)]  # noun..prep

    lex_lines = ["# readability-range: 1 19", "lemma\tpos\tavg_readability\tfreq"]
    for i, lemma in enumerate(lemmas):
        lex_lines.append(f"{lemma}\t{pos_cycle[i]}\t{difficulty[i]:.1f}\t{freqs[i]}")

    directions = rng.normal(size=(NUM_LEVELS, embedding_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    corpus_lines = ["doc_id\tsentence_id\tlevel\tclass\tdomain\ttext"]
    emb_lines = [f"dim={embedding_dim}"]
    prob_lines = []
    split_lines = ["doc_id\tsplit"]

    for d in range(n_docs):
        doc_id = f"doc{d:03d}"
        base = 1 + (d * NUM_LEVELS) // n_docs
        domain = DOMAIN_LABELS[rng.integers(0, len(DOMAIN_LABELS))]
        # 70/15/15 doc-level split, interleaved so every level reaches dev.
        slot = d % 20
        split = "train" if slot < 14 else ("dev" if slot < 17 else "test")
        split_lines.append(f"{doc_id}\t{split}")
        for s in range(sentences_per_doc):
            sid = f"{doc_id}_s{s:02d}"
            level = int(np.clip(base + rng.integers(-1, 2), 1, NUM_LEVELS))
            pool = [lemmas[i] for i in range(vocab_size)
                    if abs(difficulty[i] - level) <= 1]
            count = min(int(rng.integers(4, 8)), len(pool))
            tokens = list(rng.choice(pool, size=count, replace=False))
            tokens[-1] += "."  # punctuation to strip
            tokens.append(_BASE_LETTER + _FATHA * (1 + level % 3))
            text = " ".join(tokens)
            corpus_lines.append(
                f"{doc_id}\t{sid}\t{level}\t{_class_for_level(level)}\t{domain}\t{text}"
            )

            emb = directions[level - 1] + rng.normal(size=embedding_dim) * 0.05
            emb_lines.append(sid + "\t" + "\t".join(f"{v:.8f}" for v in emb))

            if rng.random() < encoder_accuracy:
                peak = level
            else:
                offset = 2 if rng.integers(0, 2) else -2
                peak = int(np.clip(level + offset, 1, NUM_LEVELS))
            dist = np.full(NUM_LEVELS, 0.4 / (NUM_LEVELS - 1))
            dist[peak - 1] = 0.6
            dist /= dist.sum()
            prob_lines.append(sid + "\t" + "\t".join(f"{p:.12f}" for p in dist))

    contents = {
        "lexicon.tsv": lex_lines,
        "corpus.tsv": corpus_lines,
        "embeddings.tsv": emb_lines,
        "encoder_probs.tsv": prob_lines,
        "splits.tsv": split_lines,
    }
    paths = {}
    for name, lines in contents.items():
        path = out_dir / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[name] = path
    return paths
