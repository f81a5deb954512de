"""Two-stream dynamic-graph network for blind point cloud quality scoring.

Per patch, each stream stacks (edge convolution, graph normalization) layers
with the kNN graph rebuilt from the geometry stream's embeddings after every
layer; the color stream reuses the geometry adjacency. Max+mean node pooling
yields one hidden vector per patch; the patch sequence of a partition is
fused by cross-attention (color queries against geometry keys/values),
refined by a self-attention transformer block, max-pooled and regressed to a
partition score. The cloud score is the mean over partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .knn import KnnGraph, knn_graph, rebuild_for_layer
from .partition import Patch, PreprocessConfig, normalize_cloud, partition_cloud
from .pcio import PointCloud

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    k: int = 6
    layer_dims: tuple[int, ...] = (64, 64, 128)
    embed_dim: int = 256          # width of the fused sequence (2x last layer dim)
    num_heads: int = 4
    ff_dim: int = 512
    regressor_hidden: int = 64

    def __post_init__(self):
        if self.k < 1:
            raise ShapeError("k must be >= 1")
        if not self.layer_dims:
            raise ShapeError("at least one edge-conv layer is required")
        if self.embed_dim != 2 * self.layer_dims[-1]:
            raise ShapeError(f"embed_dim must be 2 x last layer dim, got "
                             f"{self.embed_dim} vs 2x{self.layer_dims[-1]}")
        if self.embed_dim % self.num_heads != 0:
            raise ShapeError("embed_dim must be divisible by num_heads")

    def to_dict(self) -> dict:
        return {"k": self.k, "layer_dims": list(self.layer_dims),
                "embed_dim": self.embed_dim, "num_heads": self.num_heads,
                "ff_dim": self.ff_dim, "regressor_hidden": self.regressor_hidden}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(k=d["k"], layer_dims=tuple(d["layer_dims"]),
                           embed_dim=d["embed_dim"], num_heads=d["num_heads"],
                           ff_dim=d["ff_dim"], regressor_hidden=d["regressor_hidden"])


@dataclass
class EdgeConvParams:
    weight: Tensor  # (2*F_in, F_out)
    bias: Tensor    # (F_out,)
    leaky_slope: float = LEAKY_SLOPE


@dataclass
class GraphNormParams:
    alpha: Tensor
    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-5


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus the output projection."""

    wq: list[Tensor]  # each (C, C/h)
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor        # (C, C)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class StreamParams:
    layers: list[tuple[EdgeConvParams, GraphNormParams]] = field(default_factory=list)


@dataclass
class ModelParams:
    geometry: StreamParams
    color: StreamParams
    cross: AttentionParams
    self_attn: AttentionParams
    ln1: LayerNormParams
    ff: FeedForwardParams
    ln2: LayerNormParams
    reg_w1: Tensor
    reg_b1: Tensor
    reg_w2: Tensor
    reg_b2: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        """Stable name -> tensor mapping (checkpoint and optimizer order)."""
        out: dict[str, Tensor] = {}
        for stream_name, stream in (("geometry", self.geometry), ("color", self.color)):
            for i, (conv, norm) in enumerate(stream.layers):
                out[f"{stream_name}.layer{i}.weight"] = conv.weight
                out[f"{stream_name}.layer{i}.bias"] = conv.bias
                out[f"{stream_name}.layer{i}.alpha"] = norm.alpha
                out[f"{stream_name}.layer{i}.gamma"] = norm.gamma
                out[f"{stream_name}.layer{i}.beta"] = norm.beta
        for attn_name, attn in (("cross", self.cross), ("self", self.self_attn)):
            for hi in range(len(attn.wq)):
                out[f"{attn_name}.head{hi}.wq"] = attn.wq[hi]
                out[f"{attn_name}.head{hi}.wk"] = attn.wk[hi]
                out[f"{attn_name}.head{hi}.wv"] = attn.wv[hi]
            out[f"{attn_name}.wo"] = attn.wo
        out["block.ln1.gamma"] = self.ln1.gamma
        out["block.ln1.beta"] = self.ln1.beta
        out["block.ff.w1"] = self.ff.w1
        out["block.ff.b1"] = self.ff.b1
        out["block.ff.w2"] = self.ff.w2
        out["block.ff.b2"] = self.ff.b2
        out["block.ln2.gamma"] = self.ln2.gamma
        out["block.ln2.beta"] = self.ln2.beta
        out["regressor.w1"] = self.reg_w1
        out["regressor.b1"] = self.reg_b1
        out["regressor.w2"] = self.reg_w2
        out["regressor.b2"] = self.reg_b2
        return out

    def zero_grads(self) -> None:
        for t in self.named_tensors().values():
            t.grad = None


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, (fan_in, fan_out)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _ones(n: int) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded Glorot initialization; norm scales start at identity."""
    rng = np.random.default_rng(seed)

    def stream() -> StreamParams:
        layers = []
        f_in = 3
        for f_out in cfg.layer_dims:
            conv = EdgeConvParams(_glorot(rng, 2 * f_in, f_out), _zeros(f_out))
            norm = GraphNormParams(_ones(f_out), _ones(f_out), _zeros(f_out))
            layers.append((conv, norm))
            f_in = f_out
        return StreamParams(layers)

    def attention() -> AttentionParams:
        c, h = cfg.embed_dim, cfg.num_heads
        per_head = c // h
        return AttentionParams(
            wq=[_glorot(rng, c, per_head) for _ in range(h)],
            wk=[_glorot(rng, c, per_head) for _ in range(h)],
            wv=[_glorot(rng, c, per_head) for _ in range(h)],
            wo=_glorot(rng, c, c),
        )

    c = cfg.embed_dim
    return ModelParams(
        geometry=stream(),
        color=stream(),
        cross=attention(),
        self_attn=attention(),
        ln1=LayerNormParams(_ones(c), _zeros(c)),
        ff=FeedForwardParams(_glorot(rng, c, cfg.ff_dim), _zeros(cfg.ff_dim),
                             _glorot(rng, cfg.ff_dim, c), _zeros(c)),
        ln2=LayerNormParams(_ones(c), _zeros(c)),
        reg_w1=_glorot(rng, c, cfg.regressor_hidden),
        reg_b1=_zeros(cfg.regressor_hidden),
        reg_w2=_glorot(rng, cfg.regressor_hidden, 1),
        reg_b2=_zeros(1),
    )


# ---------------------------------------------------------------------------
# network blocks

def edge_conv(graph: KnnGraph, x: Tensor, params: EdgeConvParams) -> Tensor:
    """Edge convolution: out_i = max over out-edges of
    leaky_relu(concat(x_i, x_i - x_j) W + b); the self-loop contributes the
    (x_i, 0) edge term.

    Computed in factored form, concat(x_i, x_i - x_j) W =
    x_i (W_top + W_bot) - x_j W_bot, so the matmuls run on M node rows
    instead of M*(k+1) edge rows.
    """
    m, f_in = x.data.shape
    if graph.num_nodes != m:
        raise ShapeError(f"graph has {graph.num_nodes} nodes but features have {m} rows")
    if params.weight.data.shape[0] != 2 * f_in:
        raise ShapeError(f"edge weight expects {params.weight.data.shape[0] // 2} input "
                         f"channels, got {f_in}")
    f_out = params.weight.data.shape[1]
    w_top = ad.slice_rows(params.weight, 0, f_in)
    w_bot = ad.slice_rows(params.weight, f_in, 2 * f_in)
    self_term = ad.matmul(x, ad.add(w_top, w_bot))      # x_i (W_top + W_bot)
    neg_neighbor = ad.scale(ad.matmul(x, w_bot), -1.0)  # -x_j W_bot
    # max_j (a_i - b_j) = a_i + max_j (-b_j), and the channel-wise max
    # commutes exactly with the bias add and the monotone activation, so
    # only the gathered neighbor matrix lives at M*(k+1) rows
    gathered = ad.gather_rows(neg_neighbor, graph.neighbors.reshape(-1))
    best = ad.max_over_axis(ad.reshape(gathered, (m, graph.k + 1, f_out)), axis=1)
    return ad.leaky_relu(ad.add_bias(ad.add(self_term, best), params.bias),
                         params.leaky_slope)


def graph_norm(x: Tensor, params: GraphNormParams) -> Tensor:
    """Per-channel normalization over the nodes of one patch graph, with a
    learnable fraction alpha of the channel mean preserved in the shift."""
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ShapeError(f"graph_norm needs a non-empty node matrix, got {x.data.shape}")
    mean = ad.mean_over_axis(x, axis=0)
    centered = ad.add_bias(x, ad.scale(ad.mul(params.alpha, mean), -1.0))
    denom = ad.sqrt_eps(ad.var_over_axis(centered, axis=0), params.epsilon)
    normalized = ad.row_scale(centered, ad.reciprocal(denom))
    return ad.add_bias(ad.row_scale(normalized, params.gamma), params.beta)


def node_aggregate(x: Tensor) -> Tensor:
    """Concat of channel-wise max and mean over nodes: the 2F patch vector."""
    return ad.concat([ad.max_over_axis(x, axis=0), ad.mean_over_axis(x, axis=0)], axis=0)


def stream_forward(features: Tensor, params: StreamParams, cfg: ModelConfig,
                   graphs: list[KnnGraph] | None = None,
                   layer1_graph: KnnGraph | None = None) -> tuple[Tensor, list[KnnGraph]]:
    """Run one stream over a patch.

    With ``graphs=None`` (geometry) the layer-1 graph comes from the input
    coordinates and deeper graphs are rebuilt from each layer's embeddings;
    passing the geometry stream's graphs runs the color stream on the same
    adjacency. Graph construction sees only raw values, so no gradient flows
    through neighbor selection.
    """
    build = graphs is None
    if build:
        graphs = [layer1_graph if layer1_graph is not None
                  else knn_graph(features.data, cfg.k)]
    x = features
    for i, (conv, norm) in enumerate(params.layers):
        x = graph_norm(edge_conv(graphs[i], x, conv), norm)
        if build and i + 1 < len(params.layers):
            graphs.append(rebuild_for_layer(x.data, cfg.k))
    return node_aggregate(x), graphs


def _multi_head_attention(seq_q: Tensor, seq_kv: Tensor, params: AttentionParams,
                          embed_dim: int) -> Tensor:
    heads = []
    scaling = 1.0 / np.sqrt(embed_dim / len(params.wq))
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = ad.matmul(seq_q, wq)
        k = ad.matmul(seq_kv, wk)
        v = ad.matmul(seq_kv, wv)
        attn = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), scaling), axis=-1)
        heads.append(ad.matmul(attn, v))
    return ad.matmul(ad.concat(heads, axis=1), params.wo)


def cross_attention(hidden_xyz: Tensor, hidden_rgb: Tensor,
                    params: AttentionParams, cfg: ModelConfig) -> Tensor:
    """Fuse the streams: queries from color, keys and values from geometry."""
    if hidden_xyz.data.shape != hidden_rgb.data.shape:
        raise ShapeError(f"stream sequences differ: {hidden_xyz.data.shape} "
                         f"vs {hidden_rgb.data.shape}")
    return _multi_head_attention(hidden_rgb, hidden_xyz, params, cfg.embed_dim)


def _layer_norm(x: Tensor, params: LayerNormParams) -> Tensor:
    return ad.add_bias(ad.row_scale(ad.layer_norm_core(x), params.gamma), params.beta)


def transformer_block(x: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Self-attention and feed-forward sublayers, each with a residual
    connection followed by layer normalization."""
    y = _layer_norm(ad.add(x, _multi_head_attention(x, x, params.self_attn,
                                                    cfg.embed_dim)), params.ln1)
    hidden = ad.leaky_relu(ad.add_bias(ad.matmul(y, params.ff.w1), params.ff.b1),
                           LEAKY_SLOPE)
    ff = ad.add_bias(ad.matmul(hidden, params.ff.w2), params.ff.b2)
    return _layer_norm(ad.add(y, ff), params.ln2)


def graphs_aggregate(x: Tensor) -> Tensor:
    """Channel-wise max over the patch sequence: one vector per partition."""
    return ad.max_over_axis(x, axis=0)


def regress(v: Tensor, params: ModelParams) -> Tensor:
    """Shallow MLP from the partition vector to an unbounded scalar score."""
    row = ad.reshape(v, (1, v.data.shape[0]))
    h = ad.leaky_relu(ad.add_bias(ad.matmul(row, params.reg_w1), params.reg_b1),
                      LEAKY_SLOPE)
    out = ad.add_bias(ad.matmul(h, params.reg_w2), params.reg_b2)
    return ad.reshape(out, ())


# ---------------------------------------------------------------------------
# whole-cloud forward

def forward_partition(patches: list[Patch], params: ModelParams, cfg: ModelConfig,
                      layer1_graphs: list[KnnGraph] | None = None) -> Tensor:
    """Score one partition from its patch list."""
    rows_xyz, rows_rgb = [], []
    for pi, patch in enumerate(patches):
        g1 = layer1_graphs[pi] if layer1_graphs is not None else None
        h_xyz, graphs = stream_forward(Tensor(patch.positions), params.geometry,
                                       cfg, layer1_graph=g1)
        h_rgb, _ = stream_forward(Tensor(patch.colors), params.color, cfg,
                                  graphs=graphs)
        rows_xyz.append(ad.reshape(h_xyz, (1, cfg.embed_dim)))
        rows_rgb.append(ad.reshape(h_rgb, (1, cfg.embed_dim)))
    hidden_xyz = ad.concat(rows_xyz, axis=0)
    hidden_rgb = ad.concat(rows_rgb, axis=0)
    fused = cross_attention(hidden_xyz, hidden_rgb, params.cross, cfg)
    refined = transformer_block(fused, params, cfg)
    return regress(graphs_aggregate(refined), params)


def forward_patches(patch_lists: list[list[Patch]], params: ModelParams,
                    cfg: ModelConfig,
                    layer1_graphs: list[list[KnnGraph]] | None = None
                    ) -> tuple[Tensor, list[Tensor]]:
    """Forward over pre-extracted patches: (mean score, partition scores)."""
    scores = []
    for i, patches in enumerate(patch_lists):
        g1 = layer1_graphs[i] if layer1_graphs is not None else None
        scores.append(forward_partition(patches, params, cfg, layer1_graphs=g1))
    stacked = ad.concat([ad.reshape(s, (1,)) for s in scores], axis=0)
    return ad.mean_over_axis(stacked, axis=0), scores


def forward_pointcloud(pc: PointCloud, params: ModelParams, cfg: ModelConfig,
                       pre_cfg: PreprocessConfig) -> tuple[Tensor, list[Tensor]]:
    """Full pipeline: normalize, partition, score every partition, average."""
    patch_lists = partition_cloud(normalize_cloud(pc), pre_cfg)
    return forward_patches(patch_lists, params, cfg)


def predict(pc: PointCloud, params: ModelParams, cfg: ModelConfig,
            pre_cfg: PreprocessConfig) -> tuple[float, list[float]]:
    """Inference convenience: plain floats, no tape."""
    score, parts = forward_pointcloud(pc, params, cfg, pre_cfg)
    return score.item(), [s.item() for s in parts]
