"""Operator entry point.

Subcommands: make-fixture, build-graph, train, eval, predict, fuse.
Runs are driven by a line-based `key = value` config file; command-line
flags override config values. Exit codes: 0 success, 1 runtime failure,
2 configuration/validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, fusion, model as gnn
from .fixture import make_fixture
from .graph import GraphConfig, HeteroGraph, build_graph, dump_graph, summarize_graph
from .ingest import (
    DataError,
    LemmaProvider,
    load_corpus,
    load_embeddings,
    load_encoder_probs,
    load_lexicon,
)
from .metrics import (
    LevelCollapseMap,
    MetricReport,
    default_collapse_map,
    format_report_tsv,
    load_collapse_map,
    metric_report,
)
from .model import ModelConfig
from .numeric import ShapeError, softmax_rows
from .training import (
    ConfigError,
    SplitSpec,
    TrainConfig,
    load_splits,
    predict_levels,
    train,
    write_log,
)

# key -> (parser, default); None defaults mean "unset".
_PATH_KEYS = ("lexicon", "corpus", "embeddings", "encoder_probs", "provider",
              "splits", "collapse_7", "collapse_5", "collapse_3", "out_dir")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_SCHEMA: dict[str, tuple] = {
    **{k: (str, None) for k in _PATH_KEYS},
    "hidden_dim": (int, 128),
    "num_layers": (int, 4),
    "neighbor_cap": (int, None),
    "seed": (int, 0),
    "disable_self_term": (_parse_bool, False),
    "combine": (str, "sum"),
    "min_cooccur": (int, 1),
    "drop_in_class": (_parse_bool, False),
    "drop_in_domain": (_parse_bool, False),
    "forward_edges_only": (_parse_bool, False),
    "lr": (float, 1e-3),
    "max_epochs": (int, 300),
    "patience": (int, 30),
    "eval_every": (int, 1),
    "alpha": (float, None),
}


@dataclass
class RunConfig:
    """Resolved run settings plus the raw snapshot used for the manifest."""

    values: dict = field(default_factory=dict)
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def path(self, key: str, required: bool = False) -> Path | None:
        value = self.values.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config key {key!r} is required")
            return None
        return (self.base_dir / value).resolve() if not Path(value).is_absolute() \
            else Path(value)

    def model_config(self, relations: tuple[str, ...]) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.hidden_dim, num_layers=self.num_layers,
            relations=relations, neighbor_cap=self.neighbor_cap,
            seed=self.seed, disable_self_term=self.disable_self_term,
            combine=self.combine,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, max_epochs=self.max_epochs,
                           patience=self.patience, seed=self.seed,
                           eval_every=self.eval_every)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(min_cooccur=self.min_cooccur,
                           drop_in_class=self.drop_in_class,
                           drop_in_domain=self.drop_in_domain,
                           forward_edges_only=self.forward_edges_only)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    raw = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        caster = _SCHEMA[key][0]
        try:
            values[key] = caster(value) if value != "" else None
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
        raw[key] = value
    return RunConfig(values=values, base_dir=path.parent.resolve(), raw=raw)


def _apply_overrides(config: RunConfig, args) -> None:
    for key in _SCHEMA:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            config.values[key] = value
            config.raw[key] = str(value)


def _require_files(config: RunConfig, keys) -> dict[str, Path]:
    paths = {}
    for key in keys:
        p = config.path(key, required=True)
        if not p.exists():
            raise ConfigError(f"{key} file not found: {p}")
        paths[key] = p
    return paths


def _optional_file(config: RunConfig, key: str) -> Path | None:
    p = config.path(key)
    if p is not None and not p.exists():
        raise ConfigError(f"{key} file not found: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _load_inputs(config: RunConfig):
    paths = _require_files(config, ("lexicon", "corpus", "embeddings"))
    lexicon = load_lexicon(paths["lexicon"])
    corpus = load_corpus(paths["corpus"])
    embeddings = load_embeddings(paths["embeddings"])
    provider_path = _optional_file(config, "provider")
    provider = (LemmaProvider.from_file(provider_path) if provider_path
                else LemmaProvider.identity())
    return lexicon, corpus, embeddings, provider


def _build(config: RunConfig, split: SplitSpec | None) -> HeteroGraph:
    lexicon, corpus, embeddings, provider = _load_inputs(config)
    return build_graph(corpus, lexicon, embeddings, provider,
                       config.graph_config(),
                       split.doc_to_split if split else None)


def _collapse_maps(config: RunConfig) -> dict[int, LevelCollapseMap]:
    maps = {}
    for m in (7, 5, 3):
        p = _optional_file(config, f"collapse_{m}")
        maps[m] = load_collapse_map(p) if p else default_collapse_map(m)
    return maps


def _out_dir(config: RunConfig) -> Path:
    out = config.path("out_dir", required=True)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input_hashes(config: RunConfig) -> dict[str, str]:
    hashes = {}
    for key in ("lexicon", "corpus", "embeddings", "encoder_probs",
                "provider", "splits"):
        p = config.path(key)
        if p is not None and p.exists():
            hashes[key] = _sha256(p)
    return hashes


def write_manifest(out_dir: Path, config: RunConfig, alpha: float | None,
                   checkpoint: Path | None) -> Path:
    manifest = {
        "artifact_version": __version__,
        "config": dict(sorted(config.raw.items())),
        "seed": config.seed,
        "alpha": alpha,
        "checkpoint_sha256": _sha256(checkpoint) if checkpoint else None,
        "input_hashes": _input_hashes(config),
    }
    path = out_dir / "manifest.json"
    _atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _read_manifest_alpha(out_dir: Path) -> float | None:
    path = out_dir / "manifest.json"
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8")).get("alpha")


def _resolve_alpha(config: RunConfig, out_dir: Path) -> float | None:
    if config.alpha is not None:
        return config.alpha
    return _read_manifest_alpha(out_dir)


# ----------------------------------------------------------------- commands


def cmd_make_fixture(args) -> int:
    if min(args.docs, args.sentences_per_doc, args.vocab, args.embedding_dim) < 1:
        raise ConfigError("fixture sizes must all be >= 1")
    out = Path(args.out)
    paths = make_fixture(out, seed=args.seed, n_docs=args.docs,
                         sentences_per_doc=args.sentences_per_doc,
                         vocab_size=args.vocab,
                         embedding_dim=args.embedding_dim,
                         encoder_accuracy=args.encoder_accuracy)
    print(f"fixture: {len(paths)} files in {out} "
          f"({args.docs} docs x {args.sentences_per_doc} sentences, seed {args.seed})")
    for name in sorted(paths):
        print(f"{_sha256(paths[name])}  {name}")
    return 0


def cmd_build_graph(args) -> int:
    config = load_run_config(args.config)
    _apply_overrides(config, args)
    split_path = _optional_file(config, "splits")
    split = load_splits(split_path) if split_path else None
    graph = _build(config, split)
    out = _out_dir(config)
    dump_graph(graph, out)
    sys.stdout.write(summarize_graph(graph))
    return 0


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    _apply_overrides(config, args)
    _require_files(config, ("splits",))
    split = load_splits(config.path("splits"))
    graph = _build(config, split)
    relations = tuple(r.name for r in graph.adj)
    result = train(graph, config.model_config(relations), config.train_config())

    out = _out_dir(config)
    best_path = out / "best.ckpt"
    gnn.save_checkpoint(best_path, result.best_params)
    gnn.save_checkpoint(out / "last.ckpt", result.last_params)
    write_log(result.log_rows, out / "train_log.tsv")
    write_manifest(out, config, config.alpha, best_path)
    print(f"trained {len(result.log_rows)} epochs; "
          f"best dev QWK {result.best_dev_qwk:.4f} at epoch {result.best_epoch}")
    return 0


def _doc_level_report(graph: HeteroGraph, mask: np.ndarray,
                      levels: np.ndarray, maps) -> tuple[MetricReport, list]:
    idx = np.flatnonzero(mask)
    doc_ids = [graph.doc_ids[i] for i in idx]
    sids = [graph.sentence_ids[i] for i in idx]
    doc_pred = fusion.aggregate_document(doc_ids, sids, levels[idx].tolist())
    doc_gold = fusion.aggregate_document(doc_ids, sids,
                                         graph.gold_levels[idx].tolist())
    gold = [d.level for d in doc_gold]
    pred = [d.level for d in doc_pred]
    return metric_report(gold, pred, maps=maps), doc_pred


def _sentence_probs(config: RunConfig, graph: HeteroGraph,
                    params: gnn.ModelParams, out: Path):
    """(variant, per-sentence dists) — fused when encoder probs + alpha exist."""
    logits, _ = gnn.forward(graph, params)
    probs = softmax_rows(logits)
    enc_path = _optional_file(config, "encoder_probs")
    if enc_path is None:
        return "GNN Only", probs
    alpha = _resolve_alpha(config, out)
    if alpha is None:
        raise ConfigError("fusion requested (encoder_probs set) but no alpha: "
                          "pass --alpha, set it in the config, or run `fuse` first")
    enc = load_encoder_probs(enc_path)
    missing = [sid for sid in graph.sentence_ids if sid not in enc]
    if missing:
        raise DataError("encoder probabilities missing for: "
                        + ", ".join(missing[:10]))
    fused = np.stack([
        fusion.late_fuse(probs[i], enc[sid], alpha)
        for i, sid in enumerate(graph.sentence_ids)
    ])
    return "Late Fusion", fused


def _mask_for_split(graph: HeteroGraph, name: str) -> np.ndarray:
    mask = graph.masks.get(name)
    if mask is None or not mask.any():
        raise ConfigError(f"split {name!r} selects no labeled sentences")
    return mask


def cmd_eval(args) -> int:
    config = load_run_config(args.config)
    _apply_overrides(config, args)
    out = _out_dir(config)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "best.ckpt"
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    params = gnn.load_checkpoint(ckpt_path)
    _require_files(config, ("splits",))
    split = load_splits(config.path("splits"))
    graph = _build(config, split)
    gnn.check_compatible(params, graph)

    mask = _mask_for_split(graph, args.split)
    maps = _collapse_maps(config)
    variant, dists = _sentence_probs(config, graph, params, out)
    levels = np.argmax(dists, axis=1).astype(np.int64) + 1

    sent_report = metric_report(graph.gold_levels[mask], levels[mask], maps=maps)
    doc_report, _ = _doc_level_report(graph, mask, levels, maps)

    slug = "fused" if variant == "Late Fusion" else "gnn"
    sent_tsv = format_report_tsv([(variant, "sentence", sent_report)])
    doc_tsv = format_report_tsv([(variant, "document", doc_report)])
    _atomic_write_text(out / f"metrics_{args.split}_{slug}_sentence.tsv", sent_tsv)
    _atomic_write_text(out / f"metrics_{args.split}_{slug}_document.tsv", doc_tsv)
    _atomic_write_text(
        out / f"metrics_{args.split}_{slug}.json",
        json.dumps({"variant": variant, "split": args.split,
                    "sentence": sent_report.as_dict(),
                    "document": doc_report.as_dict()},
                   sort_keys=True, indent=2) + "\n")
    sys.stdout.write(sent_tsv + doc_tsv)
    return 0


def cmd_predict(args) -> int:
    config = load_run_config(args.config)
    _apply_overrides(config, args)
    out = _out_dir(config)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "best.ckpt"
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    params = gnn.load_checkpoint(ckpt_path)
    split_path = _optional_file(config, "splits")
    split = load_splits(split_path) if split_path else None
    graph = _build(config, split)
    gnn.check_compatible(params, graph)

    variant, dists = _sentence_probs(config, graph, params, out)
    if args.split == "all":
        idx = np.arange(len(graph.sentence_ids))
    else:
        idx = np.flatnonzero(_mask_for_split(graph, args.split))
    levels = np.argmax(dists, axis=1).astype(np.int64) + 1
    sids = [graph.sentence_ids[i] for i in idx]
    doc_ids = [graph.doc_ids[i] for i in idx]

    scope = args.split
    fusion.write_predictions(out / f"predictions_{scope}.tsv", sids,
                             levels[idx], dists[idx])
    fusion.write_prob_table(out / f"probs_{scope}.tsv", sids, dists[idx])
    docs = fusion.aggregate_document(doc_ids, sids, levels[idx].tolist())
    fusion.write_doc_predictions(out / f"doc_predictions_{scope}.tsv", docs)
    print(f"{variant}: wrote {len(sids)} sentence and {len(docs)} document "
          f"predictions to {out}")
    return 0


def cmd_fuse(args) -> int:
    config = load_run_config(args.config)
    _apply_overrides(config, args)
    out = _out_dir(config)
    gnn_path = Path(args.gnn_probs)
    if not gnn_path.exists():
        raise ConfigError(f"gnn probability file not found: {gnn_path}")
    enc_path = (Path(args.encoder_probs) if args.encoder_probs
                else _optional_file(config, "encoder_probs"))
    if enc_path is None or not enc_path.exists():
        raise ConfigError("encoder_probs file required for fusion")
    corpus = load_corpus(_require_files(config, ("corpus",))["corpus"])
    split_path = _optional_file(config, "splits")
    gold_docs = None
    if split_path is not None:
        spec = load_splits(split_path)
        gold_docs = {doc for doc, name in spec.doc_to_split.items()
                     if name == args.split}
    gold = {r.sentence_id: r.gold_level for r in corpus
            if r.gold_level is not None
            and (gold_docs is None or r.doc_id in gold_docs)}
    if not gold:
        raise ConfigError(f"no gold sentences for split {args.split!r}")

    gnn_probs = load_encoder_probs(gnn_path)  # same wire format
    enc_probs = load_encoder_probs(enc_path)
    grid = [round(args.grid_step * i, 10)
            for i in range(int(round(1.0 / args.grid_step)) + 1)]
    best_alpha, curve = fusion.tune_alpha(gnn_probs, enc_probs, gold, grid)

    fusion.write_alpha_curve(out / "alpha_curve.tsv", curve)
    best_qwk = max(score for _, score in curve)
    _atomic_write_text(out / "fusion.json",
                       json.dumps({"alpha": best_alpha, "dev_qwk": best_qwk,
                                   "grid_step": args.grid_step},
                                  sort_keys=True, indent=2) + "\n")
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest["alpha"] = best_alpha
        _atomic_write_text(manifest_path,
                           json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"best alpha {best_alpha:.2f} (dev QWK {best_qwk:.6f}) over "
          f"{len(curve)} grid points")
    return 0


# ------------------------------------------------------------------ parser


def _add_config_arg(p):
    p.add_argument("--config", required=True, help="key = value run config file")


def _add_override_args(p):
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--neighbor-cap", dest="neighbor_cap", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--min-cooccur", dest="min_cooccur", type=int)
    p.add_argument("--combine", choices=["sum", "mean"])
    p.add_argument("--encoder-probs", dest="encoder_probs")
    p.add_argument("--drop-in-class", dest="drop_in_class", action="store_true", default=None)
    p.add_argument("--drop-in-domain", dest="drop_in_domain", action="store_true", default=None)
    p.add_argument("--forward-edges-only", dest="forward_edges_only",
                   action="store_true", default=None)
    p.add_argument("--disable-self-term", dest="disable_self_term",
                   action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexgraph",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixture", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--docs", type=int, default=50)
    p.add_argument("--sentences-per-doc", dest="sentences_per_doc", type=int, default=4)
    p.add_argument("--vocab", type=int, default=120)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int, default=64)
    p.add_argument("--encoder-accuracy", dest="encoder_accuracy", type=float, default=0.7)
    p.set_defaults(func=cmd_make_fixture)

    p = sub.add_parser("build-graph", help="build and dump the graph")
    _add_config_arg(p)
    _add_override_args(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the graph classifier")
    _add_config_arg(p)
    _add_override_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_config_arg(p)
    _add_override_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-sentence and per-document predictions")
    _add_config_arg(p)
    _add_override_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "dev", "test", "all"], default="all")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="grid-search the fusion weight on dev QWK")
    _add_config_arg(p)
    _add_override_args(p)
    p.add_argument("--gnn-probs", dest="gnn_probs", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.add_argument("--grid-step", dest="grid_step", type=float, default=0.05)
    p.set_defaults(func=cmd_fuse)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
