"""Parsers for the tabular inputs plus per-sentence linguistic features.

All inputs are UTF-8 TSV with literal tab separators and LF line endings;
lines starting with `#` are comments. Parsing is total: a file either
yields a validated structure or raises `DataError` with the line number.
"""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import NUM_LEVELS

log = logging.getLogger(__name__)

CLASS_LABELS = ("Foundational", "Advanced", "Specialized")
DOMAIN_LABELS = ("Arts&Humanities", "STEM", "SocialSciences")

# Closed POS tag set shared by the lexicon, the lemma provider and the
# lemma-node one-hot. "unk" is the identity-fallback tag.
POS_TAGS = ("noun", "verb", "adj", "adv", "pron", "prep", "conj",
            "part", "num", "det", "punc", "unk")
UNKNOWN_POS = "unk"

# Arabic short vowels and gemination/sukun marks counted as diacritics.
# Superscript alef (U+0670) is deliberately excluded.
DIACRITIC_LO = 0x064B
DIACRITIC_HI = 0x0652

LEXICON_HEADER = ("lemma", "pos", "avg_readability", "freq")
CORPUS_HEADER = ("doc_id", "sentence_id", "level", "class", "domain", "text")
RANGE_DIRECTIVE = "# readability-range:"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class LexiconEntry:
    lemma: str
    pos: str
    avg_readability: float
    frequency: float


@dataclass(frozen=True)
class SentenceRecord:
    doc_id: str
    sentence_id: str
    text: str
    gold_level: int | None  # 1..19, None for unlabeled inference input
    class_label: str
    domain_label: str


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]


class LemmaProvider:
    """Deterministic token -> (lemma, pos) lookup with identity fallback.

    Stands in for a real morphological analyzer; analyzer output can be
    exported into the same `token<TAB>lemma<TAB>pos` table format.
    """

    def __init__(self, table: dict[str, tuple[str, str]] | None = None):
        self.table = dict(table or {})

    @classmethod
    def identity(cls) -> "LemmaProvider":
        return cls({})

    @classmethod
    def from_file(cls, path) -> "LemmaProvider":
        table: dict[str, tuple[str, str]] = {}
        for lineno, parts in _iter_rows(path, ("token", "lemma", "pos")):
            token, lemma, pos = parts
            if token in table:
                raise DataError(f"{path}:{lineno}: duplicate token {token!r}")
            table[token] = (lemma, _check_pos(pos, path, lineno))
        return cls(table)

    def lookup(self, token: str) -> tuple[str, str]:
        hit = self.table.get(token)
        if hit is not None:
            return hit
        return token, UNKNOWN_POS


def _read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return text.splitlines()


def _iter_rows(path, header: tuple[str, ...]):
    """Yield (lineno, fields) rows after validating the column header."""
    lines = _read_lines(path)
    rows = []
    header_seen = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if not header_seen:
            if tuple(parts) != header:
                raise DataError(
                    f"{path}:{lineno}: expected header {list(header)}, got {parts}"
                )
            header_seen = True
            continue
        if len(parts) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}"
            )
        rows.append((lineno, parts))
    if not header_seen:
        raise DataError(f"{path}: empty file (no header)")
    return rows


def _check_pos(pos: str, path, lineno: int) -> str:
    tag = pos.strip().lower()
    if tag not in POS_TAGS:
        raise DataError(f"{path}:{lineno}: unknown POS tag {pos!r}")
    return tag


def _parse_range_directive(path) -> tuple[float, float] | None:
    """Optional `# readability-range: lo hi` declared above the header."""
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.startswith(RANGE_DIRECTIVE):
            continue
        fields = line[len(RANGE_DIRECTIVE):].split()
        try:
            lo, hi = (float(f) for f in fields)
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed readability-range") from None
        if lo > hi:
            raise DataError(f"{path}:{lineno}: readability-range lo > hi")
        return lo, hi
    return None


def load_lexicon(path) -> list[LexiconEntry]:
    """Parse the graded lexicon.

    Duplicate (lemma, pos) keys keep the highest-frequency row; the number
    of dropped rows is logged as a warning.
    """
    bounds = _parse_range_directive(path)
    rows = _iter_rows(path, LEXICON_HEADER)
    if not rows:
        raise DataError(f"{path}: lexicon has no data rows")
    best: dict[tuple[str, str], LexiconEntry] = {}
    order: list[tuple[str, str]] = []
    dropped = 0
    for lineno, parts in rows:
        lemma, pos, avg_s, freq_s = parts
        if not lemma:
            raise DataError(f"{path}:{lineno}: empty lemma")
        pos = _check_pos(pos, path, lineno)
        try:
            avg = float(avg_s)
            freq = float(freq_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric avg_readability/freq") from None
        if not (np.isfinite(avg) and np.isfinite(freq)):
            raise DataError(f"{path}:{lineno}: non-finite avg_readability/freq")
        if freq < 0:
            raise DataError(f"{path}:{lineno}: negative frequency")
        if bounds and not (bounds[0] <= avg <= bounds[1]):
            raise DataError(
                f"{path}:{lineno}: avg_readability {avg} outside declared "
                f"range [{bounds[0]}, {bounds[1]}]"
            )
        key = (lemma, pos)
        if key in best:
            dropped += 1
            if freq > best[key].frequency:
                best[key] = LexiconEntry(lemma, pos, avg, freq)
        else:
            order.append(key)
            best[key] = LexiconEntry(lemma, pos, avg, freq)
    if dropped:
        log.warning("%s: dropped %d duplicate (lemma, pos) rows", path, dropped)
    return [best[key] for key in order]


def lexicon_by_lemma(entries: list[LexiconEntry]) -> dict[str, LexiconEntry]:
    """Best lexicon entry per lemma string (highest frequency wins).

    Matching is keyed on the lemma alone so identity-fallback pipelines
    (which cannot recover POS) still hit the lexicon.
    """
    index: dict[str, LexiconEntry] = {}
    for entry in entries:
        cur = index.get(entry.lemma)
        if cur is None or entry.frequency > cur.frequency:
            index[entry.lemma] = entry
    return index


def load_corpus(path) -> list[SentenceRecord]:
    """Parse annotated sentences in file order, validating labels."""
    records = []
    seen: set[str] = set()
    for lineno, parts in _iter_rows(path, CORPUS_HEADER):
        doc_id, sentence_id, level_s, class_label, domain_label, text = parts
        if not sentence_id:
            raise DataError(f"{path}:{lineno}: empty sentence_id")
        if sentence_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate sentence_id {sentence_id!r}")
        seen.add(sentence_id)
        if level_s == "":
            level = None
        else:
            try:
                level = int(level_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer level {level_s!r}") from None
            if not 1 <= level <= NUM_LEVELS:
                raise DataError(
                    f"{path}:{lineno}: level {level} outside [1, {NUM_LEVELS}]"
                )
        if class_label not in CLASS_LABELS:
            raise DataError(f"{path}:{lineno}: unknown class label {class_label!r}")
        if domain_label not in DOMAIN_LABELS:
            raise DataError(f"{path}:{lineno}: unknown domain label {domain_label!r}")
        records.append(SentenceRecord(doc_id, sentence_id, text, level,
                                      class_label, domain_label))
    return records


def load_embeddings(path) -> EmbeddingTable:
    """Parse `dim=<N>` header then `sentence_id<TAB>f1..fN` rows."""
    lines = _read_lines(path)
    dim = None
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if dim is None:
            if not line.startswith("dim="):
                raise DataError(f"{path}:{lineno}: expected 'dim=<N>' header")
            try:
                dim = int(line[4:])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed dim header") from None
            if dim < 1:
                raise DataError(f"{path}:{lineno}: dim must be >= 1")
            continue
        parts = line.split("\t")
        if len(parts) != dim + 1:
            raise DataError(
                f"{path}:{lineno}: expected {dim + 1} columns, got {len(parts)}"
            )
        sid = parts[0]
        if sid in vectors:
            raise DataError(f"{path}:{lineno}: duplicate sentence_id {sid!r}")
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}:{lineno}: non-finite embedding value")
        vectors[sid] = vec
    if dim is None:
        raise DataError(f"{path}: empty embeddings file")
    return EmbeddingTable(dim=dim, vectors=vectors)


def load_encoder_probs(path) -> dict[str, np.ndarray]:
    """Parse `sentence_id<TAB>p1..p19` rows into 19-way distributions."""
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != NUM_LEVELS + 1:
            raise DataError(
                f"{path}:{lineno}: expected {NUM_LEVELS + 1} columns, got {len(parts)}"
            )
        sid = parts[0]
        if sid in table:
            raise DataError(f"{path}:{lineno}: duplicate sentence_id {sid!r}")
        try:
            dist = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric probability") from None
        if dist.min() < 0:
            raise DataError(f"{path}:{lineno}: negative probability")
        if abs(dist.sum() - 1.0) > 1e-6:
            raise DataError(f"{path}:{lineno}: probabilities sum to {dist.sum():.8f}")
        table[sid] = dist
    return table


def count_diacritics(text: str) -> int:
    """Number of codepoints in the diacritic range U+064B..U+0652."""
    return sum(1 for ch in text if DIACRITIC_LO <= ord(ch) <= DIACRITIC_HI)


def _strip_punct(token: str) -> str:
    """Trim leading/trailing punctuation (Unicode category P*)."""
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def lemmatize_sentence(text: str, provider: LemmaProvider) -> list[tuple[str, str]]:
    """Whitespace tokens, punctuation-stripped, mapped through the provider.

    Tokens that are pure punctuation vanish; order is preserved and
    duplicates are retained.
    """
    pairs = []
    for token in text.split():
        stripped = _strip_punct(token)
        if stripped:
            pairs.append(provider.lookup(stripped))
    return pairs


def sentence_features(record: SentenceRecord, lemmas: list[tuple[str, str]],
                      lexicon: dict[str, LexiconEntry]) -> np.ndarray:
    """Fixed 5-feature vector:

    [token_count, diacritic_count, mean matched avg_readability,
     max matched avg_readability, out-of-lexicon rate].

    Mean/max are 0 when nothing matches; the OOV rate is 1 in that case
    (including the empty sentence).
    """
    matched = [lexicon[lemma].avg_readability for lemma, _ in lemmas if lemma in lexicon]
    n = len(lemmas)
    mean_r = float(np.mean(matched)) if matched else 0.0
    max_r = float(np.max(matched)) if matched else 0.0
    oov = 1.0 - len(matched) / n if n else 1.0
    return np.array([float(n), float(count_diacritics(record.text)),
                     mean_r, max_r, oov], dtype=np.float64)
