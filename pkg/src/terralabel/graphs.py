"""Segment graphs and the GNN (GAT / GCN) that embeds them.

A chip's segments become nodes carrying their 64-channel mean activations;
directed edges join each node to its K geographically nearest segment
centroids (ties to the lower id). Message passing always operates over
N(i) ∪ {i} via explicit self-loops.

The 3-layer models follow the widths in use throughout the pipeline: GAT
layers of 8 hidden features x 8 attention heads (64-dim concatenated), GCN
layers of 60 hidden features. Layer 2's output — ELU-free, identity
activation — is the segment embedding; layer 3 is a linear head whose
softmax is trained against segment-averaged memberships with categorical
cross-entropy.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .numerics import Tensor, tensor

GAT_HEADS = 8
GAT_HIDDEN = 8
GCN_HIDDEN = 60


class GraphError(ValueError):
    pass


@dataclass
class SegmentGraph:
    chip_id: str
    features: np.ndarray  # [S, 64] float32
    edges: np.ndarray     # [E, 2] int64, directed i -> j, no self-loops
    k: int

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def build_graph(seg, feats: np.ndarray, k: int = 8,
                chip_id: str = "") -> SegmentGraph:
    """Directed KNN graph over segment centroids.

    Each node points at its min(K, S-1) nearest centroids by Euclidean
    pixel distance; equidistant candidates resolve to the lower segment id.
    """
    s = len(seg.segments)
    if s < 2:
        raise GraphError(f"need at least 2 segments, got {s}")
    if k < 1:
        raise GraphError("k must be >= 1")
    feats = np.asarray(feats, dtype=np.float32)
    if feats.shape[0] != s:
        raise GraphError(f"feature rows {feats.shape[0]} != segment count {s}")
    if not np.all(np.isfinite(feats)):
        raise GraphError("non-finite node features")

    cents = np.array([info.centroid_rc for info in seg.segments], dtype=np.float64)
    d2 = ((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort: equal distances keep ascending id order
    order = np.argsort(d2, axis=1, kind="stable")[:, : min(k, s - 1)]
    src = np.repeat(np.arange(s, dtype=np.int64), order.shape[1])
    edges = np.stack([src, order.ravel().astype(np.int64)], axis=1)
    return SegmentGraph(chip_id, feats, edges, k)


def message_indices(edges: np.ndarray, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """(src, dst) arrays over N(i) ∪ {i}: graph edges plus one self-loop each."""
    loops = np.arange(n_nodes, dtype=np.int64)
    dst = np.concatenate([edges[:, 0], loops])
    src = np.concatenate([edges[:, 1], loops])
    return src, dst


def _check_self_loops(src: np.ndarray, dst: np.ndarray, n_nodes: int) -> None:
    has_loop = np.zeros(n_nodes, dtype=bool)
    loops = src == dst
    has_loop[dst[loops]] = True
    if not has_loop.all():
        missing = int(np.nonzero(~has_loop)[0][0])
        raise GraphError(f"node {missing} has no self-loop (N(i) ∪ {{i}} contract)")


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "elu":
        return x.elu()
    if activation == "identity":
        return x
    raise GraphError(f"unknown activation {activation!r}")


def gat_layer(X: Tensor, src: np.ndarray, dst: np.ndarray,
              Ws: list[Tensor], a_left: list[Tensor], a_right: list[Tensor],
              activation: str = "elu",
              return_attention: bool = False):
    """Multi-head graph attention over precomputed (src, dst) message pairs.

    Per head: e_ij = a^T LeakyReLU([W x_i || W x_j]) for j ∈ N(i) ∪ {i},
    alpha = softmax_j(e_ij), out_i = sigma(sum_j alpha_ij W x_j); heads are
    concatenated. The attention softmax is computed stably per destination
    node with a detached running max.
    """
    n = X.shape[0]
    _check_self_loops(src, dst, n)
    outs = []
    attns = []
    for W, al, ar in zip(Ws, a_left, a_right):
        H = X.matmul(W)                     # [S, h]
        P = H.leaky_relu(0.2)               # LeakyReLU inside the concat form
        li = P.matmul(al.reshape(-1, 1))    # [S, 1]
        rj = P.matmul(ar.reshape(-1, 1))
        logits = nm.gather_rows(li, dst) + nm.gather_rows(rj, src)  # [E, 1]

        # stable per-destination softmax; max is a constant w.r.t. the graph
        flat = logits.data[:, 0]
        seg_max = np.full(n, -np.inf, dtype=flat.dtype)
        np.maximum.at(seg_max, dst, flat)
        shifted = (logits - seg_max[dst][:, None]).exp()
        denom = nm.segment_sum(shifted, dst, n)
        alpha = shifted / nm.gather_rows(denom, dst)

        messages = alpha * nm.gather_rows(H, src)
        outs.append(nm.segment_sum(messages, dst, n))
        attns.append(alpha)
    out = _activate(nm.concat(outs, axis=1), activation)
    if return_attention:
        return out, attns
    return out


def gcn_layer(X: Tensor, src: np.ndarray, dst: np.ndarray, W: Tensor,
              activation: str = "elu") -> Tensor:
    """X' = sigma(D^-1/2 (A+I) D^-1/2 X W) with degrees from A+I row sums."""
    n = X.shape[0]
    _check_self_loops(src, dst, n)
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    norm = 1.0 / np.sqrt(deg)
    scale = (norm[dst] * norm[src])[:, None]
    H = X.matmul(W)
    messages = nm.gather_rows(H, src) * scale.astype(H.dtype)
    return _activate(nm.segment_sum(messages, dst, n), activation)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class GnnModel:
    """3-layer GAT or GCN; layer 2 is the embedding, layer 3 a linear head."""

    def __init__(self, variant: str, in_dim: int = 64, n_classes: int = 8,
                 seed: int = 0):
        if variant not in ("gat", "gcn"):
            raise GraphError(f"unknown variant {variant!r}")
        self.variant = variant
        self.in_dim = in_dim
        self.n_classes = n_classes
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        if variant == "gat":
            self.embed_dim = GAT_HEADS * GAT_HIDDEN
            for layer, cin in ((1, in_dim), (2, self.embed_dim)):
                for h in range(GAT_HEADS):
                    p[f"l{layer}.h{h}.W"] = nm.init.glorot_uniform(
                        (cin, GAT_HIDDEN), cin, GAT_HIDDEN, rng)
                    p[f"l{layer}.h{h}.al"] = nm.init.glorot_uniform(
                        (GAT_HIDDEN,), GAT_HIDDEN, 1, rng)
                    p[f"l{layer}.h{h}.ar"] = nm.init.glorot_uniform(
                        (GAT_HIDDEN,), GAT_HIDDEN, 1, rng)
        else:
            self.embed_dim = GCN_HIDDEN
            p["l1.W"] = nm.init.glorot_uniform((in_dim, GCN_HIDDEN),
                                               in_dim, GCN_HIDDEN, rng)
            p["l2.W"] = nm.init.glorot_uniform((GCN_HIDDEN, GCN_HIDDEN),
                                               GCN_HIDDEN, GCN_HIDDEN, rng)
        p["head.W"] = nm.init.glorot_uniform((self.embed_dim, n_classes),
                                             self.embed_dim, n_classes, rng)
        p["head.b"] = nm.init.zeros((n_classes,))
        self._params = p

    def params(self) -> dict[str, Tensor]:
        return self._params

    def _heads(self, layer: int):
        p = self._params
        Ws = [p[f"l{layer}.h{h}.W"] for h in range(GAT_HEADS)]
        al = [p[f"l{layer}.h{h}.al"] for h in range(GAT_HEADS)]
        ar = [p[f"l{layer}.h{h}.ar"] for h in range(GAT_HEADS)]
        return Ws, al, ar

    def hidden_states(self, X: Tensor, edges: np.ndarray,
                      return_attention: bool = False):
        """(layer-1 output, layer-2 embedding[, layer-2 attention])."""
        src, dst = message_indices(edges, X.shape[0])
        attn = None
        if self.variant == "gat":
            h1 = gat_layer(X, src, dst, *self._heads(1), activation="elu")
            if return_attention:
                emb, attn = gat_layer(h1, src, dst, *self._heads(2),
                                      activation="identity",
                                      return_attention=True)
            else:
                emb = gat_layer(h1, src, dst, *self._heads(2),
                                activation="identity")
        else:
            h1 = gcn_layer(X, src, dst, self._params["l1.W"], activation="elu")
            emb = gcn_layer(h1, src, dst, self._params["l2.W"],
                            activation="identity")
        if return_attention:
            return h1, emb, attn
        return h1, emb

    def forward(self, X: Tensor, edges: np.ndarray,
                return_attention: bool = False):
        """Returns (class logits [S, C], embedding [S, d][, attention])."""
        if return_attention:
            _, emb, attn = self.hidden_states(X, edges, return_attention=True)
        else:
            _, emb = self.hidden_states(X, edges)
            attn = None
        logits = emb.matmul(self._params["head.W"]) + self._params["head.b"]
        if return_attention:
            return logits, emb, attn
        return logits, emb

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self._params.items()}
        arrays["meta.gnn"] = np.asarray(
            [0.0 if self.variant == "gat" else 1.0, self.in_dim, self.n_classes],
            dtype=np.float32)
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise GraphError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise GraphError(f"checkpoint {name}: shape mismatch")
            p.data = arrays[name].astype(p.data.dtype)

    def save(self, path) -> None:
        nm.save_checkpoint(path, self.state_arrays())

    @classmethod
    def load(cls, path) -> "GnnModel":
        arrays = nm.load_checkpoint(path)
        if "meta.gnn" not in arrays:
            raise GraphError("checkpoint has no meta.gnn record")
        code, in_dim, classes = arrays["meta.gnn"]
        model = cls("gat" if code == 0.0 else "gcn", int(in_dim), int(classes))
        model.load_state_arrays(arrays)
        return model


def cross_entropy(targets: np.ndarray, logits: Tensor) -> Tensor:
    """Mean categorical cross-entropy of softmax(logits) against soft targets."""
    m = logits.data.max(axis=1, keepdims=True)
    z = logits - m
    lse = z.exp().sum(axis=1, keepdims=True).log()
    return -((z - lse) * targets).sum() / float(targets.shape[0])


def embed(model: GnnModel, graph: SegmentGraph, layer: int = 2) -> np.ndarray:
    """Deterministic embedding [S, 64 (GAT) or 60 (GCN)].

    ``layer=1`` returns the first message-passing layer's output; the default
    ``layer=2`` is the usual second-layer embedding.
    """
    if layer not in (1, 2):
        raise GraphError(f"layer must be 1 or 2, got {layer}")
    if graph.features.shape[1] != model.in_dim:
        raise GraphError(
            f"graph features {graph.features.shape[1]}-d, model expects "
            f"{model.in_dim}-d")
    with nm.no_grad():
        h1, emb = model.hidden_states(tensor(graph.features), graph.edges)
    out = h1 if layer == 1 else emb
    return np.asarray(out.data, dtype=np.float32)


@dataclass
class GnnTrainResult:
    model: GnnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False


def train_gnn(graphs: list[SegmentGraph], targets: dict[str, np.ndarray],
              variant: str = "gat", n_classes: int = 8,
              val_graphs: list[SegmentGraph] | None = None,
              epochs: int = 200, patience: int = 15, lr: float = 1e-3,
              seed: int = 0, log=None) -> GnnTrainResult:
    """Train a GNN on whole graphs against per-segment soft targets.

    targets: chip_id -> [S, C] mean membership per segment. Early stopping
    and divergence handling mirror the U-Net loop: best held-out loss wins,
    patience epochs without improvement stop training, a non-finite loss
    aborts and restores the best weights.
    """
    if not graphs:
        raise GraphError("no training graphs")
    model = GnnModel(variant, graphs[0].features.shape[1], n_classes, seed=seed)
    rng = np.random.default_rng(seed + 1)
    opt = nm.Adam(model.params(), lr=lr)
    held_out = val_graphs if val_graphs else graphs

    def graph_loss(g: SegmentGraph) -> Tensor:
        logits, _ = model.forward(tensor(g.features), g.edges)
        return cross_entropy(np.asarray(targets[g.chip_id], dtype=np.float32),
                             logits)

    def held_out_loss() -> float:
        with nm.no_grad():
            return float(np.mean([graph_loss(g).item() for g in held_out]))

    best = {"loss": np.inf, "arrays": {k: v.copy()
                                       for k, v in model.state_arrays().items()},
            "epoch": 0}
    history: list[dict] = []
    diverged = False
    try:
        for epoch in range(1, epochs + 1):
            epoch_losses = []
            for gi in rng.permutation(len(graphs)):
                loss = graph_loss(graphs[gi])
                value = float(loss.item())
                if not np.isfinite(value):
                    raise nm.TrainingDivergence(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                opt.zero_grad()
                epoch_losses.append(value)
            val = held_out_loss()
            history.append({"epoch": epoch,
                            "train_loss": float(np.mean(epoch_losses)),
                            "val_loss": val})
            if log:
                log(history[-1])
            if val < best["loss"]:
                best = {"loss": val,
                        "arrays": {k: v.copy()
                                   for k, v in model.state_arrays().items()},
                        "epoch": epoch}
            elif epoch - best["epoch"] >= patience:
                break
    except nm.TrainingDivergence:
        diverged = True

    if best["epoch"] > 0 or diverged:
        model.load_state_arrays(best["arrays"])
    return GnnTrainResult(model, history, best["epoch"], diverged)


# ---------------------------------------------------------------------------
# graph file format
# ---------------------------------------------------------------------------


def write_graph(graph: SegmentGraph, path) -> None:
    payload = np.ascontiguousarray(graph.features, dtype="<f4").tobytes()
    Path(path).write_text(json.dumps({
        "chip_id": graph.chip_id,
        "S": graph.n_nodes,
        "K": graph.k,
        "edges": [[int(i), int(j)] for i, j in graph.edges],
        "features": base64.b64encode(payload).decode("ascii"),
    }))


def read_graph(path) -> SegmentGraph:
    raw = json.loads(Path(path).read_text())
    feats = np.frombuffer(base64.b64decode(raw["features"]),
                          dtype="<f4").reshape(raw["S"], -1).copy()
    edges = np.asarray(raw["edges"], dtype=np.int64).reshape(-1, 2)
    return SegmentGraph(raw["chip_id"], feats, edges, raw["K"])
