"""Graph convolution with per-edge complementary-feature gates.

One layer computes ``relu((A_hat * S) @ H @ W)`` where ``S[i, j]`` is
``sigmoid(gate_w . e_ij + gate_b)`` for an annotated ordered pair with
annotation vector ``e_ij`` (GMM bin scores followed by a relation
embedding) and 1 everywhere else, the diagonal included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import Adjacency, SceneGraph, adjacency


@dataclass
class GcnLayer:
    w: T.Tensor  # (d_in, d_out)
    gate_w: T.Tensor  # (m + d_rel,)
    gate_b: T.Tensor  # scalar

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]


@dataclass
class EdgeArrays:
    """Annotated ordered pairs of a graph, flattened for vectorised gating."""

    rows: np.ndarray
    cols: np.ndarray
    scores: np.ndarray  # (E, m), zeros where absent
    relations: np.ndarray  # (E,), -1 where absent
    relation_dists: np.ndarray | None = None

    @classmethod
    def from_graph(cls, graph: SceneGraph, m: int) -> EdgeArrays:
        keys = sorted(graph.annotations)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        scores = np.zeros((len(keys), m))
        rel = np.full(len(keys), -1, dtype=np.int64)
        for e, k in enumerate(keys):
            ann = graph.annotations[k]
            if ann.scores is not None:
                scores[e] = ann.scores
            if ann.relation is not None:
                rel[e] = ann.relation
        return cls(rows, cols, scores, rel)


@dataclass
class EncodedScene:
    h: T.Tensor  # (n, d_model)
    graph: SceneGraph


class GcnEncoder:
    """Stack of gated graph-convolution layers plus the relation embedding table."""

    def __init__(
        self,
        d_in: int,
        d_model: int,
        n_layers: int = 2,
        m: int = 8,
        n_relations: int = 1,
        d_rel: int = 16,
        seed: int = 0,
        gates: bool = True,
        use_spatial: bool = True,
        use_semantic: bool = True,
        soft_relation: bool = False,
        gate_scale: float = 1.0,
        dtype=np.float64,
    ):
        rng = np.random.default_rng([seed, 11])
        self.gate_scale = gate_scale
        self.m, self.d_rel = m, d_rel
        self.gates, self.use_spatial, self.use_semantic = gates, use_spatial, use_semantic
        self.soft_relation = soft_relation
        self.params: dict[str, T.Tensor] = {}
        self.layers: list[GcnLayer] = []
        dims = [d_in] + [d_model] * n_layers
        for l in range(n_layers):
            lim = 1.0 / np.sqrt(dims[l])
            w = T.Parameter(rng.uniform(-lim, lim, (dims[l], dims[l + 1])).astype(dtype), f"gcn/{l}/w")
            # gate inputs have roughly unit norm, so unit-variance logits give
            # gates spread over (0, 1) from the first step
            gw = T.Parameter(rng.normal(0.0, 1.0 / gate_scale, m + d_rel).astype(dtype), f"gcn/{l}/gate_w")
            gb = T.Parameter(np.zeros((), dtype=dtype), f"gcn/{l}/gate_b")
            self.layers.append(GcnLayer(w, gw, gb))
            self.params.update({w.name: w, gw.name: gw, gb.name: gb})
        # small embeddings: predicted classes start as a weak gate signal next to the bins
        self.rel_table = T.Parameter(rng.normal(0.0, 0.1 / np.sqrt(d_rel), (n_relations, d_rel)).astype(dtype), "gcn/rel_emb")
        self.params[self.rel_table.name] = self.rel_table

    def edge_inputs(self, edges: EdgeArrays) -> T.Tensor:
        """Gate input rows ``[bin scores, relation embedding]`` per annotated pair."""
        n_e = len(edges.rows)
        dtype = self.rel_table.dtype
        scores = edges.scores if self.use_spatial else np.zeros_like(edges.scores)
        spatial = T.Tensor(scores.astype(dtype))
        if not self.use_semantic:
            semantic = T.Tensor(np.zeros((n_e, self.d_rel), dtype=dtype))
        elif self.soft_relation and edges.relation_dists is not None:
            semantic = T.Tensor(edges.relation_dists.astype(dtype)) @ self.rel_table
        else:
            known = edges.relations >= 0
            emb = T.embedding(self.rel_table, np.where(known, edges.relations, 0))
            semantic = T.mul(emb, known[:, None].astype(dtype))
        return T.concat([spatial, semantic], axis=1)

    def forward(self, h0: np.ndarray, a_hat: np.ndarray, edges: EdgeArrays | None) -> T.Tensor:
        return gcn_layers_forward(self.layers, h0, a_hat, edges, self if self.gates else None)


def gcn_layers_forward(layers: Sequence[GcnLayer], h0, a_hat, edges: EdgeArrays | None, encoder: GcnEncoder | None) -> T.Tensor:
    """Run the layer stack; ``encoder=None`` (or no edges) means every gate is 1."""
    h = T.as_tensor(h0)
    a_hat = np.asarray(a_hat, dtype=h.dtype)
    n = a_hat.shape[0]
    gate_in = None
    if encoder is not None and edges is not None and len(edges.rows):
        gate_in = encoder.edge_inputs(edges)
    for l, layer in enumerate(layers):
        if h.shape[-1] != layer.d_in:
            raise T.ShapeError(f"gcn layer {l}: node features have dim {h.shape[-1]}, layer expects {layer.d_in}")
        if gate_in is None:
            prop = T.Tensor(a_hat)
        else:
            logit = gate_in @ layer.gate_w.reshape(-1, 1) + layer.gate_b
            g = T.sigmoid(logit * encoder.gate_scale if encoder.gate_scale != 1.0 else logit).reshape(-1)
            s = T.scatter_matrix(g, edges.rows, edges.cols, (n, n), fill=1.0)
            prop = T.mul(s, a_hat)
        h = T.relu((prop @ h) @ layer.w)
    return h


def gcn_forward(graph: SceneGraph, adj: Adjacency | None, encoder: GcnEncoder) -> EncodedScene:
    """Encode one graph; the one-hot node-level code is appended to features."""
    graph = graph.with_type_embedding()
    adj = adj or adjacency(graph)
    edges = EdgeArrays.from_graph(graph, encoder.m)
    h = encoder.forward(graph.features(), adj.renormalized, edges)
    return EncodedScene(h, graph)


def encode_for_decoder(scene: EncodedScene, image_id: str) -> T.Tensor:
    """Refined rows of ``image_id``'s region nodes, in detection order."""
    return T.take_rows(scene.h, scene.graph.object_rows(image_id))
