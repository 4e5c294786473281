"""Hetero-SAGE classifier over the typed graph.

Per-type input projection into the hidden dimension, a stack of message
passing layers (per-relation mean aggregation plus a learnable self term,
ReLU, residual + layer norm), and a two-layer MLP head emitting 19-way
logits for sentence nodes. The backward pass is the exact hand-derived
reverse of the forward computation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numeric
from .graph import (
    ALL_RELATIONS,
    RELATION_BY_NAME,
    Csr,
    HeteroGraph,
    NodeType,
    Relation,
)
from .metrics import NUM_LEVELS
from .numeric import (
    LayerNormCache,
    ParamDict,
    ShapeError,
    layer_norm_backward,
    layer_norm_forward,
    matmul,
    relu_backward,
    relu_forward,
)

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"LEXGRAPH-CKPT v1\n"


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 128
    num_layers: int = 4
    relations: tuple[str, ...] = tuple(r.name for r in ALL_RELATIONS)
    neighbor_cap: int | None = None
    seed: int = 0
    disable_self_term: bool = False
    combine: str = "sum"  # how per-relation messages merge: "sum" or "mean"

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("hidden_dim and num_layers must be >= 1")
        if self.combine not in ("sum", "mean"):
            raise ValueError(f"unknown combine mode {self.combine!r}")
        for name in self.relations:
            if name not in RELATION_BY_NAME:
                raise ValueError(f"unknown relation {name!r}")
        if self.neighbor_cap is not None and self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be >= 1 when set")


@dataclass
class ModelParams:
    config: ModelConfig
    input_widths: dict[str, int]
    tensors: ParamDict

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, dict(self.input_widths),
                           {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class LayerCache:
    pre_act: dict[NodeType, np.ndarray]
    rel_means: dict[Relation, np.ndarray]
    ln: dict[NodeType, LayerNormCache]


@dataclass
class ForwardTrace:
    h: list[dict[NodeType, np.ndarray]]  # h[0] .. h[L]
    layers: list[LayerCache]
    head_hidden: np.ndarray  # pre-activation of the head's hidden layer
    adjacency: dict[Relation, tuple[Csr, Csr]]  # (src-major, dst-major) used


def _param_schema(config: ModelConfig, input_widths: dict[str, int]):
    """Every tensor name with its shape, in a fixed declaration order."""
    h = config.hidden_dim
    schema: list[tuple[str, tuple[int, int]]] = []
    for ntype in NodeType:
        schema.append((f"in.{ntype.value}.W", (input_widths[ntype.value], h)))
        schema.append((f"in.{ntype.value}.b", (1, h)))
    for k in range(config.num_layers):
        for ntype in NodeType:
            schema.append((f"layer{k}.self.{ntype.value}.W", (h, h)))
        for name in config.relations:
            schema.append((f"layer{k}.rel.{name}.W", (h, h)))
        for ntype in NodeType:
            schema.append((f"layer{k}.ln.{ntype.value}.gamma", (1, h)))
            schema.append((f"layer{k}.ln.{ntype.value}.beta", (1, h)))
    schema.append(("head.W1", (h, h)))
    schema.append(("head.b1", (1, h)))
    schema.append(("head.W2", (h, NUM_LEVELS)))
    schema.append(("head.b2", (1, NUM_LEVELS)))
    return schema


def init_params(graph: HeteroGraph, config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights from one seeded generator; biases zero,
    layer-norm gamma one / beta zero."""
    rng = np.random.default_rng(config.seed)
    widths = graph.input_widths()
    tensors: ParamDict = {}
    for name, shape in _param_schema(config, widths):
        if name.endswith(".gamma"):
            tensors[name] = np.ones(shape)
        elif name.endswith(".b") or name.endswith((".b1", ".b2", ".beta")):
            tensors[name] = np.zeros(shape)
        else:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(config=config, input_widths=widths, tensors=tensors)


def _segment_sum(csr: Csr, values: np.ndarray) -> np.ndarray:
    """Row-wise sum of `values[csr.indices]` per CSR row (empty rows -> 0)."""
    out = np.zeros((csr.n_src, values.shape[1]))
    if csr.n_edges:
        counts = csr.out_degrees()
        nz = counts > 0
        starts = csr.offsets[:-1][nz]
        out[nz] = np.add.reduceat(values[csr.indices], starts, axis=0)
    return out


def _mean_in_messages(csr_t: Csr, h_src: np.ndarray) -> np.ndarray:
    """Per-dst mean of source states over in-edges (zero when isolated)."""
    sums = _segment_sum(csr_t, h_src)
    deg = csr_t.out_degrees()
    nz = deg > 0
    sums[nz] /= deg[nz, None]
    return sums


def project_inputs(graph: HeteroGraph, params: ModelParams) -> dict[NodeType, np.ndarray]:
    """h0[type] = x @ W_in[type] + b_in[type]; every type enters hidden_dim."""
    h0 = {}
    for ntype in NodeType:
        x = graph.features[ntype]
        w = params.tensors[f"in.{ntype.value}.W"]
        if x.shape[1] != w.shape[0]:
            raise ShapeError(
                f"{ntype.value}: feature width {x.shape[1]} != projection rows {w.shape[0]}"
            )
        h0[ntype] = matmul(x, w) + params.tensors[f"in.{ntype.value}.b"]
    return h0


def _active_adjacency(graph: HeteroGraph, config: ModelConfig,
                      rng: np.random.Generator | None):
    """Configured relations present in the graph, optionally capped.

    With a neighbor cap, each aggregating node keeps at most `cap` uniform
    in-neighbors; sampling is seeded so a fixed seed fixes the subgraph.
    """
    active: dict[Relation, tuple[Csr, Csr]] = {}
    cap = config.neighbor_cap
    if cap is not None and rng is None:
        rng = np.random.default_rng(config.seed)
    for name in config.relations:
        rel = RELATION_BY_NAME[name]
        if rel not in graph.adj:
            continue
        fwd, rev = graph.adj[rel], graph.adj_t[rel]
        if cap is not None and np.any(rev.out_degrees() > cap):
            pairs = []
            for v in range(rev.n_src):
                nbrs = rev.neighbors(v)
                if len(nbrs) > cap:
                    nbrs = rng.choice(nbrs, size=cap, replace=False)
                pairs.extend((v, int(u)) for u in nbrs)
            rev = Csr.from_pairs(pairs, rev.n_src, rev.n_dst)
            fwd = rev.transpose()
        active[rel] = (fwd, rev)
    return active


def sage_layer(k: int, h_prev: dict[NodeType, np.ndarray], graph: HeteroGraph,
               params: ModelParams,
               adjacency: dict[Relation, tuple[Csr, Csr]] | None = None):
    """One message-passing layer.

    For each node v of type t:
        m = W_self . h_prev[v] + combine over relations r with dst t of
            W_r . mean{ h_prev[u] : u -> v under r }
        h = LayerNorm(ReLU(m) + h_prev[v])
    Empty neighborhoods aggregate to the zero vector.
    """
    config = params.config
    if adjacency is None:
        adjacency = _active_adjacency(graph, config, None)
    pre_act: dict[NodeType, np.ndarray] = {}
    rel_means: dict[Relation, np.ndarray] = {}
    ln_caches: dict[NodeType, LayerNormCache] = {}
    h_new: dict[NodeType, np.ndarray] = {}
    for ntype in NodeType:
        hp = h_prev[ntype]
        if config.disable_self_term:
            m = np.zeros_like(hp)
        else:
            m = matmul(hp, params.tensors[f"layer{k}.self.{ntype.value}.W"])
        msg_total = np.zeros_like(hp)
        n_rel = 0
        for name in config.relations:
            rel = RELATION_BY_NAME[name]
            if rel.dst != ntype or rel not in adjacency:
                continue
            _, rev = adjacency[rel]
            mean_msg = _mean_in_messages(rev, h_prev[rel.src])
            rel_means[rel] = mean_msg
            msg_total += matmul(mean_msg, params.tensors[f"layer{k}.rel.{name}.W"])
            n_rel += 1
        if config.combine == "mean" and n_rel > 1:
            msg_total /= n_rel
        m = m + msg_total
        pre_act[ntype] = m
        activated = relu_forward(m)
        h_new[ntype], ln_caches[ntype] = layer_norm_forward(
            activated + hp,
            params.tensors[f"layer{k}.ln.{ntype.value}.gamma"],
            params.tensors[f"layer{k}.ln.{ntype.value}.beta"],
            eps=LN_EPS,
        )
    cache = LayerCache(pre_act=pre_act, rel_means=rel_means, ln=ln_caches)
    return h_new, cache


def forward(graph: HeteroGraph, params: ModelParams,
            config: ModelConfig | None = None,
            rng: np.random.Generator | None = None):
    """Full forward pass; returns (sentence logits, trace for backward)."""
    config = config or params.config
    adjacency = _active_adjacency(graph, config, rng)
    h = project_inputs(graph, params)
    hs = [h]
    layer_caches = []
    for k in range(config.num_layers):
        h, cache = sage_layer(k, h, graph, params, adjacency)
        hs.append(h)
        layer_caches.append(cache)
    sent = h[NodeType.SENTENCE]
    z1 = matmul(sent, params.tensors["head.W1"]) + params.tensors["head.b1"]
    logits = matmul(relu_forward(z1), params.tensors["head.W2"]) + params.tensors["head.b2"]
    trace = ForwardTrace(h=hs, layers=layer_caches, head_hidden=z1, adjacency=adjacency)
    return logits, trace


def backward(graph: HeteroGraph, params: ModelParams, trace: ForwardTrace,
             dlogits: np.ndarray) -> ParamDict:
    """Gradients of the loss for every parameter tensor."""
    config = params.config
    t = params.tensors
    grads = numeric.zeros_like_params(t)

    # Head MLP.
    h_sent = trace.h[-1][NodeType.SENTENCE]
    z1 = trace.head_hidden
    a1 = relu_forward(z1)
    grads["head.W2"] += matmul(a1.T, dlogits)
    grads["head.b2"] += dlogits.sum(axis=0, keepdims=True)
    dz1 = relu_backward(z1, matmul(dlogits, t["head.W2"].T))
    grads["head.W1"] += matmul(h_sent.T, dz1)
    grads["head.b1"] += dz1.sum(axis=0, keepdims=True)

    dh = {ntype: np.zeros_like(trace.h[-1][ntype]) for ntype in NodeType}
    dh[NodeType.SENTENCE] += matmul(dz1, t["head.W1"].T)

    for k in range(config.num_layers - 1, -1, -1):
        cache = trace.layers[k]
        h_prev = trace.h[k]
        dh_prev = {ntype: np.zeros_like(h_prev[ntype]) for ntype in NodeType}
        for ntype in NodeType:
            dres, dgamma, dbeta = layer_norm_backward(cache.ln[ntype], dh[ntype])
            grads[f"layer{k}.ln.{ntype.value}.gamma"] += dgamma[None, :]
            grads[f"layer{k}.ln.{ntype.value}.beta"] += dbeta[None, :]
            dh_prev[ntype] += dres  # residual branch
            dm = relu_backward(cache.pre_act[ntype], dres)
            if not config.disable_self_term:
                grads[f"layer{k}.self.{ntype.value}.W"] += matmul(h_prev[ntype].T, dm)
                dh_prev[ntype] += matmul(dm, t[f"layer{k}.self.{ntype.value}.W"].T)
            rels = [RELATION_BY_NAME[name] for name in config.relations
                    if RELATION_BY_NAME[name].dst == ntype
                    and RELATION_BY_NAME[name] in trace.adjacency]
            scale = 1.0 / len(rels) if (config.combine == "mean" and len(rels) > 1) else 1.0
            for rel in rels:
                dmsg = dm if scale == 1.0 else dm * scale
                mean_msg = cache.rel_means[rel]
                grads[f"layer{k}.rel.{rel.name}.W"] += matmul(mean_msg.T, dmsg)
                dmean = matmul(dmsg, t[f"layer{k}.rel.{rel.name}.W"].T)
                fwd, rev = trace.adjacency[rel]
                deg = rev.out_degrees()
                nz = deg > 0
                dmean_scaled = dmean.copy()
                dmean_scaled[nz] /= deg[nz, None]
                dmean_scaled[~nz] = 0.0
                dh_prev[rel.src] += _segment_sum(fwd, dmean_scaled)
        dh = dh_prev

    for ntype in NodeType:
        grads[f"in.{ntype.value}.W"] += matmul(graph.features[ntype].T, dh[ntype])
        grads[f"in.{ntype.value}.b"] += dh[ntype].sum(axis=0, keepdims=True)
    return grads


def save_checkpoint(path, params: ModelParams) -> None:
    """Versioned container: JSON header plus raw little-endian tensors.

    Round-trips bit-exactly; file bytes depend only on the contents.
    """
    names = sorted(params.tensors)
    header = {
        "config": asdict(params.config),
        "input_widths": dict(sorted(params.input_widths.items())),
        "tensors": {n: list(params.tensors[n].shape) for n in names},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in names:
            arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
            fh.write(arr.tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        cfg = header["config"]
        cfg["relations"] = tuple(cfg["relations"])
        config = ModelConfig(**cfg)
        tensors: ParamDict = {}
        for name, shape in header["tensors"].items():
            rows, cols = shape
            raw = fh.read(rows * cols * 8)
            if len(raw) != rows * cols * 8:
                raise ValueError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    return ModelParams(config=config, input_widths=header["input_widths"], tensors=tensors)


def check_compatible(params: ModelParams, graph: HeteroGraph) -> None:
    """Raise ShapeError when checkpoint widths do not match the graph."""
    widths = graph.input_widths()
    if widths != params.input_widths:
        raise ShapeError(
            f"checkpoint input widths {params.input_widths} != graph widths {widths}"
        )
