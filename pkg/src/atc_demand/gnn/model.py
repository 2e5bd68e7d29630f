"""Two GATv2 layers with node- and graph-level quantile heads, with hand-written backward pass.

Attention for receiving node i over j in N(i) plus a self-loop (zero edge
features on self-loops)::

    e_ij   = att . LeakyReLU(W_s x_i + W_t x_j + W_e eps_ij)
    alpha  = softmax_j(e_ij)
    out_i  = sum_j alpha_ij W_t x_j + bias

Graphs in a mini-batch are packed into one disjoint union; directed edges are
sorted by receiver so segment reductions use ``np.add.reduceat``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DataError, NumericError

QUANTILES = (0.1, 0.5, 0.9)


@dataclass(frozen=True)
class ModelDims:
    node_dim: int = 16
    edge_dim: int = 2
    hidden: int = 64
    head_hidden: int = 32
    n_quantiles: int = 3
    negative_slope: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(d: ModelDims) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for layer, fan_in in (("gat1", d.node_dim), ("gat2", d.hidden)):
        shapes[f"{layer}.W_s"] = (d.hidden, fan_in)
        shapes[f"{layer}.W_t"] = (d.hidden, fan_in)
        shapes[f"{layer}.W_e"] = (d.hidden, d.edge_dim)
        shapes[f"{layer}.att"] = (d.hidden,)
        shapes[f"{layer}.bias"] = (d.hidden,)
    for head in ("node_head", "graph_head"):
        shapes[f"{head}.W1"] = (d.head_hidden, d.hidden)
        shapes[f"{head}.b1"] = (d.head_hidden,)
        shapes[f"{head}.W2"] = (d.n_quantiles, d.head_hidden)
        shapes[f"{head}.b2"] = (d.n_quantiles,)
    return shapes


@dataclass
class ModelParams:
    dims: ModelDims
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.dims)
        if list(self.tensors) != list(shapes):
            raise DataError("parameter blocks do not match the architecture")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise DataError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(dims: ModelDims, rng: np.random.Generator) -> ModelParams:
    """Weights and attention vectors ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero."""
    tensors = {}
    for name, shape in param_shapes(dims).items():
        if name.endswith((".bias", ".b1", ".b2")):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = shape[1] if len(shape) == 2 else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(dims, tensors)


class GraphBatch:
    """Disjoint union of graphs prepared for the forward/backward pass."""

    def __init__(self, graphs: Sequence, require_labels: bool = False):
        if not graphs:
            raise DataError("empty batch")
        sizes = np.array([g.n_nodes for g in graphs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.n_graphs = len(graphs)
        self.n_nodes = int(sizes.sum())
        self.graph_starts = offsets
        self.sizes = sizes
        self.x = np.vstack([g.node_features for g in graphs])
        edge_dim = graphs[0].edge_features.shape[1]

        recv, send, feats, source = [], [], [], []
        edge_off = 0
        for g, off in zip(graphs, offsets):
            idx = np.arange(g.n_nodes) + off
            recv.append(idx)
            send.append(idx)
            feats.append(np.zeros((g.n_nodes, edge_dim)))
            source.append(np.full(g.n_nodes, -1, dtype=np.int64))
            if g.n_edges:
                a = g.edges[:, 0] + off
                b = g.edges[:, 1] + off
                e = np.arange(g.n_edges) + edge_off
                recv += [a, b]
                send += [b, a]
                feats += [g.edge_features, g.edge_features]
                source += [e, e]
                edge_off += g.n_edges
        recv = np.concatenate(recv)
        send = np.concatenate(send)
        feats = np.vstack(feats)
        order = np.lexsort((send, recv))
        self.recv = recv[order]
        self.send = send[order]
        self.edge_features = feats[order]
        # index into the concatenated undirected edge lists, -1 for self-loops
        self.edge_source = np.concatenate(source)[order]
        self.n_edges = edge_off
        nodes = np.arange(self.n_nodes)
        self.recv_starts = np.searchsorted(self.recv, nodes)
        self.send_order = np.argsort(self.send, kind="stable")
        self.send_starts = np.searchsorted(self.send[self.send_order], nodes)

        self.y_node = self.y_graph = None
        if all(g.label_per_node is not None for g in graphs):
            self.y_node = np.concatenate([g.label_per_node for g in graphs])
            self.y_graph = np.array([float(g.label_total) for g in graphs])
        elif require_labels:
            raise DataError("training batch contains unlabeled graphs")

    def sum_by_receiver(self, m: np.ndarray) -> np.ndarray:
        return np.add.reduceat(m, self.recv_starts, axis=0)

    def sum_by_sender(self, m: np.ndarray) -> np.ndarray:
        return np.add.reduceat(m[self.send_order], self.send_starts, axis=0)

    def pool(self, h: np.ndarray) -> np.ndarray:
        return np.add.reduceat(h, self.graph_starts, axis=0)


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def gat_forward(p: ModelParams, layer: str, x: np.ndarray, batch: GraphBatch):
    """One GATv2 layer; returns (output, cache)."""
    W_s, W_t, W_e = p[f"{layer}.W_s"], p[f"{layer}.W_t"], p[f"{layer}.W_e"]
    att, bias = p[f"{layer}.att"], p[f"{layer}.bias"]
    s = x @ W_s.T
    t = x @ W_t.T
    z = s[batch.recv] + t[batch.send] + batch.edge_features @ W_e.T
    act = _leaky(z, p.dims.negative_slope)
    score = act @ att
    peak = np.maximum.reduceat(score, batch.recv_starts)
    ex = np.exp(score - peak[batch.recv])
    alpha = ex / np.add.reduceat(ex, batch.recv_starts)[batch.recv]
    out = batch.sum_by_receiver(alpha[:, None] * t[batch.send]) + bias
    return out, (x, t, z, act, alpha)


def gat_backward(p: ModelParams, layer: str, cache, d_out: np.ndarray, batch: GraphBatch,
                 grads: dict, need_input_grad: bool = True):
    x, t, z, act, alpha = cache
    W_s, W_t = p[f"{layer}.W_s"], p[f"{layer}.W_t"]
    att = p[f"{layer}.att"]
    grads[f"{layer}.bias"] = d_out.sum(axis=0)
    d_out_e = d_out[batch.recv]
    d_alpha = np.einsum("ij,ij->i", d_out_e, t[batch.send])
    d_t = batch.sum_by_sender(alpha[:, None] * d_out_e)
    weighted = np.add.reduceat(alpha * d_alpha, batch.recv_starts)
    d_score = alpha * (d_alpha - weighted[batch.recv])
    grads[f"{layer}.att"] = act.T @ d_score
    d_z = np.outer(d_score, att) * np.where(z > 0, 1.0, p.dims.negative_slope)
    d_s = batch.sum_by_receiver(d_z)
    d_t += batch.sum_by_sender(d_z)
    grads[f"{layer}.W_s"] = d_s.T @ x
    grads[f"{layer}.W_t"] = d_t.T @ x
    grads[f"{layer}.W_e"] = d_z.T @ batch.edge_features
    if need_input_grad:
        return d_s @ W_s + d_t @ W_t
    return None


def _head_forward(p: ModelParams, head: str, h: np.ndarray):
    u = h @ p[f"{head}.W1"].T + p[f"{head}.b1"]
    v = _elu(u)
    y = v @ p[f"{head}.W2"].T + p[f"{head}.b2"]
    return y, (h, u, v)


def _head_backward(p: ModelParams, head: str, cache, d_y: np.ndarray, grads: dict):
    h, u, v = cache
    grads[f"{head}.W2"] = d_y.T @ v
    grads[f"{head}.b2"] = d_y.sum(axis=0)
    d_u = (d_y @ p[f"{head}.W2"]) * _elu_grad(u)
    grads[f"{head}.W1"] = d_u.T @ h
    grads[f"{head}.b1"] = d_u.sum(axis=0)
    return d_u @ p[f"{head}.W1"]


def forward(p: ModelParams, batch: GraphBatch, keep_cache: bool = False):
    """Raw quantile outputs: (node n x 3, graph B x 3[, cache])."""
    if batch.x.shape[1] != p.dims.node_dim or batch.edge_features.shape[1] != p.dims.edge_dim:
        raise DataError(f"batch feature dims ({batch.x.shape[1]}, {batch.edge_features.shape[1]}) "
                        f"do not match model ({p.dims.node_dim}, {p.dims.edge_dim})")
    if not np.all(np.isfinite(batch.x)) or not np.all(np.isfinite(batch.edge_features)):
        raise NumericError("non-finite input features")
    a1, c1 = gat_forward(p, "gat1", batch.x, batch)
    h1 = _elu(a1)
    h2, c2 = gat_forward(p, "gat2", h1, batch)
    y_node, cn = _head_forward(p, "node_head", h2)
    pooled = batch.pool(h2)
    y_graph, cg = _head_forward(p, "graph_head", pooled)
    if keep_cache:
        return y_node, y_graph, (c1, a1, c2, cn, cg)
    return y_node, y_graph


def backward(p: ModelParams, batch: GraphBatch, cache, d_node: np.ndarray, d_graph: np.ndarray) -> dict:
    """Gradients of a scalar loss given its derivatives w.r.t. both heads' outputs."""
    c1, a1, c2, cn, cg = cache
    grads: dict[str, np.ndarray] = {}
    d_h2 = _head_backward(p, "node_head", cn, d_node, grads)
    d_pooled = _head_backward(p, "graph_head", cg, d_graph, grads)
    d_h2 = d_h2 + np.repeat(d_pooled, batch.sizes, axis=0)
    d_h1 = gat_backward(p, "gat2", c2, d_h2, batch, grads)
    gat_backward(p, "gat1", c1, d_h1 * _elu_grad(a1), batch, grads, need_input_grad=False)
    ordered = {}
    for name in p.tensors:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r}")
        ordered[name] = g
    return ordered


def embeddings(p: ModelParams, batch: GraphBatch) -> np.ndarray:
    a1, _ = gat_forward(p, "gat1", batch.x, batch)
    h2, _ = gat_forward(p, "gat2", _elu(a1), batch)
    return h2


def attention_weights(p: ModelParams, graph, layer: str = "gat1"):
    """(receiver, sender, alpha) for one graph, self-loops included."""
    batch = GraphBatch([graph])
    x = batch.x
    if layer == "gat2":
        a1, _ = gat_forward(p, "gat1", x, batch)
        x = _elu(a1)
    _, (_, _, _, _, alpha) = gat_forward(p, layer, x, batch)
    return batch.recv.copy(), batch.send.copy(), alpha


def gatv2_layer_forward(p: ModelParams, graph, node_in: np.ndarray, layer: str = "gat1") -> np.ndarray:
    """Apply one layer to explicit node inputs on ``graph``'s structure."""
    node_in = np.asarray(node_in, dtype=float)
    if not np.all(np.isfinite(node_in)):
        raise NumericError("non-finite layer input")
    batch = GraphBatch([graph])
    out, _ = gat_forward(p, layer, node_in, batch)
    return out


def model_forward(p: ModelParams, graph) -> tuple[np.ndarray, np.ndarray]:
    """Raw (node n x 3, graph 3) quantiles for a single graph."""
    y_node, y_graph = forward(p, GraphBatch([graph]))
    return y_node, y_graph[0]
