"""Ordinal evaluation: QWK, exact / within-1 accuracy, mean level distance,
and collapsed-granularity accuracies over coarser level bands.

Level vectors are 1-based integers in [1, K]. `qwk` returns the kappa as a
fraction in (-inf, 1]; `MetricReport` stores it (and the accuracies) as
percentages for report tables, mirroring how shared-task scores are quoted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUM_LEVELS = 19

# Contiguous near-equal bands, larger bands first. Editable TSV copies live
# in data/collapse/; official shared-task maps can be dropped in instead.
_DEFAULT_BAND_SIZES = {7: (3, 3, 3, 3, 3, 2, 2), 5: (4, 4, 4, 4, 3), 3: (7, 6, 6)}


class MetricError(ValueError):
    """Invalid metric input (length mismatch, out-of-range level, bad map)."""


def _as_levels(gold, pred, k: int):
    g = np.asarray(gold, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if g.ndim != 1 or p.ndim != 1 or g.shape != p.shape:
        raise MetricError(f"gold/pred shapes differ: {g.shape} vs {p.shape}")
    if g.size == 0:
        raise MetricError("empty level vectors")
    for name, v in (("gold", g), ("pred", p)):
        if v.min() < 1 or v.max() > k:
            raise MetricError(f"{name} levels outside [1, {k}]")
    return g, p


def confusion_matrix(gold, pred, k: int = NUM_LEVELS) -> np.ndarray:
    """K x K counts with gold on rows and predictions on columns."""
    g, p = _as_levels(gold, pred, k)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (g - 1, p - 1), 1)
    return counts


def qwk(gold, pred, k: int = NUM_LEVELS) -> float:
    """Quadratic weighted kappa over levels in [1, k].

    kappa = 1 - sum(w*O) / sum(w*E) with w[i,j] = (i-j)^2/(k-1)^2, O the
    confusion counts and E the outer product of the marginals scaled to the
    item total. A zero denominator (all items in one class on both sides)
    yields 1 when O is purely diagonal and 0 otherwise.
    """
    observed = confusion_matrix(gold, pred, k)
    n = observed.sum()
    idx = np.arange(k, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    denom = float((weights * expected).sum())
    if denom == 0.0:
        return 1.0 if np.trace(observed) == n else 0.0
    return 1.0 - float((weights * observed).sum()) / denom


def accuracy(gold, pred, k: int = NUM_LEVELS) -> float:
    """Exact match rate as a percentage."""
    g, p = _as_levels(gold, pred, k)
    return float((g == p).mean() * 100.0)


def accuracy_within_1(gold, pred, k: int = NUM_LEVELS) -> float:
    """Share of predictions within one level of gold, as a percentage."""
    g, p = _as_levels(gold, pred, k)
    return float((np.abs(g - p) <= 1).mean() * 100.0)


def mean_abs_distance(gold, pred, k: int = NUM_LEVELS) -> float:
    """Mean absolute level distance |gold - pred| (not a percentage)."""
    g, p = _as_levels(gold, pred, k)
    return float(np.abs(g - p).mean())


@dataclass(frozen=True)
class LevelCollapseMap:
    """Monotone surjective map from fine levels [1, k] onto [1, m] bands."""

    coarse: tuple[int, ...]  # coarse[i] = band of fine level i+1

    def __post_init__(self):
        c = self.coarse
        if not c:
            raise MetricError("empty collapse map")
        m = max(c)
        if c[0] != 1:
            raise MetricError("collapse map must send level 1 to band 1")
        for i in range(1, len(c)):
            if c[i] < c[i - 1]:
                raise MetricError(
                    f"collapse map not monotone at fine level {i + 1}: "
                    f"{c[i - 1]} then {c[i]}"
                )
            if c[i] > c[i - 1] + 1:
                raise MetricError(f"collapse map skips band {c[i - 1] + 1}")
        if set(c) != set(range(1, m + 1)):
            raise MetricError("collapse map is not surjective")

    @property
    def k(self) -> int:
        return len(self.coarse)

    @property
    def m(self) -> int:
        return max(self.coarse)

    def apply(self, levels) -> np.ndarray:
        v = np.asarray(levels, dtype=np.int64)
        if v.size and (v.min() < 1 or v.max() > self.k):
            raise MetricError(f"levels outside [1, {self.k}]")
        table = np.asarray(self.coarse, dtype=np.int64)
        return table[v - 1]


def identity_collapse_map(k: int = NUM_LEVELS) -> LevelCollapseMap:
    return LevelCollapseMap(tuple(range(1, k + 1)))


def default_collapse_map(m: int, k: int = NUM_LEVELS) -> LevelCollapseMap:
    """Built-in contiguous band map for m in {7, 5, 3} (k = 19)."""
    if k != NUM_LEVELS or m not in _DEFAULT_BAND_SIZES:
        raise MetricError(f"no default collapse map for {k} -> {m}")
    coarse = []
    for band, size in enumerate(_DEFAULT_BAND_SIZES[m], start=1):
        coarse.extend([band] * size)
    return LevelCollapseMap(tuple(coarse))


def collapsed_accuracy(gold, pred, cmap: LevelCollapseMap) -> float:
    """Exact-match percentage after mapping both sides through `cmap`."""
    g, p = _as_levels(gold, pred, cmap.k)
    return float((cmap.apply(g) == cmap.apply(p)).mean() * 100.0)


def load_collapse_map(path, k: int = NUM_LEVELS) -> LevelCollapseMap:
    """Parse a `fine<TAB>coarse` TSV covering every level in [1, k]."""
    seen: dict[int, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts == ["fine", "coarse"]:
            continue
        if len(parts) != 2:
            raise MetricError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            fine, coarse = int(parts[0]), int(parts[1])
        except ValueError:
            raise MetricError(f"{path}:{lineno}: non-integer entry") from None
        if not 1 <= fine <= k:
            raise MetricError(f"{path}:{lineno}: fine level {fine} outside [1, {k}]")
        if fine in seen:
            raise MetricError(f"{path}:{lineno}: duplicate fine level {fine}")
        seen[fine] = coarse
    missing = [lv for lv in range(1, k + 1) if lv not in seen]
    if missing:
        raise MetricError(f"{path}: collapse map missing fine level {missing[0]}")
    return LevelCollapseMap(tuple(seen[lv] for lv in range(1, k + 1)))


@dataclass(frozen=True)
class MetricReport:
    """One results row: percentages throughout except `dist` (level MAE)."""

    qwk: float
    acc: float
    acc_pm1: float
    dist: float
    acc7: float
    acc5: float
    acc3: float

    FIELDS = ("qwk", "acc", "acc_pm1", "dist", "acc7", "acc5", "acc3")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}


def metric_report(gold, pred, k: int = NUM_LEVELS,
                  maps: dict[int, LevelCollapseMap] | None = None) -> MetricReport:
    """Full ordinal metric suite for one prediction set."""
    maps = maps or {}
    collapsed = {}
    for m in (7, 5, 3):
        cmap = maps.get(m, default_collapse_map(m, k) if k == NUM_LEVELS else None)
        collapsed[m] = collapsed_accuracy(gold, pred, cmap) if cmap else float("nan")
    return MetricReport(
        qwk=qwk(gold, pred, k) * 100.0,
        acc=accuracy(gold, pred, k),
        acc_pm1=accuracy_within_1(gold, pred, k),
        dist=mean_abs_distance(gold, pred, k),
        acc7=collapsed[7],
        acc5=collapsed[5],
        acc3=collapsed[3],
    )


def format_report_tsv(rows: list[tuple[str, str, MetricReport]]) -> str:
    """Render (variant, task_level, report) rows as a deterministic TSV."""
    lines = ["variant\ttask_level\t" + "\t".join(MetricReport.FIELDS)]
    for variant, task, rep in rows:
        vals = "\t".join(f"{getattr(rep, f):.4f}" for f in MetricReport.FIELDS)
        lines.append(f"{variant}\t{task}\t{vals}")
    return "\n".join(lines) + "\n"
