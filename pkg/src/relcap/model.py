"""End-to-end captioner: relation annotation, graph encoding, decoding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from . import checkpoint
from . import tensor as T
from .config import Config
from .corpus import SceneRecord, Vocabulary, group_contexts
from .decoder import DecoderConfig, TransformerDecoder
from .gcn import EdgeArrays, GcnEncoder
from .geometry import GmmModel, fit_gmm, pairwise_features
from .losses import xe_from_logits
from .graph import (
    Annotator,
    EdgeAnnotation,
    SceneGraph,
    build_hierarchical_graph,
    build_image_graph,
    build_object_graph,
    isolated_objects,
    merge,
    renormalize,
)
from .relations import RelationClassifier, RelationVocabulary, RelClsConfig, pair_examples, train_relation_classifier

log = logging.getLogger(__name__)


@dataclass
class GraphUnit:
    """One encoder graph (an image or a context) with its decoder targets."""

    h0: np.ndarray
    a_hat: np.ndarray
    edges: EdgeArrays
    targets: list[int]  # record indices
    rows: dict[int, list[int]]  # record index -> decoder-visible node rows

    @property
    def n(self) -> int:
        return self.a_hat.shape[0]


@dataclass
class Batch:
    h0: np.ndarray
    a_hat: np.ndarray
    edges: EdgeArrays
    mem_index: np.ndarray  # (B, Kmax), -1 for padding
    inputs: np.ndarray  # (B, T)
    targets: np.ndarray  # (B, T), PAD where ignored
    record_ids: list[int] = field(default_factory=list)


def fit_spatial_bins(records: Sequence[SceneRecord], cfg: Config) -> GmmModel:
    feats = [pairwise_features(r.boxes)[0] for r in records if len(r.regions) > 1]
    x = np.concatenate(feats) if feats else np.zeros((0, 6))
    return fit_gmm(x, cfg.gmm_m, cfg.seed, cfg.gmm_covariance, n_init=cfg.gmm_n_init)


def relation_vocab_of(records: Sequence[SceneRecord]) -> RelationVocabulary:
    return RelationVocabulary(sorted({p for r in records for _, _, p in r.relations}))


def fit_relation_classifier(records: Sequence[SceneRecord], vocab: RelationVocabulary, cfg: Config) -> RelationClassifier:
    x, y = pair_examples(records, vocab)
    rc = RelClsConfig(cfg.relcls_hidden, cfg.relcls_epochs, cfg.relcls_lr, cfg.relcls_batch, cfg.seed)
    clf, _ = train_relation_classifier(x, y, vocab.n_classes, rc)
    return clf


class CaptionModel:
    def __init__(
        self,
        cfg: Config,
        vocab: Vocabulary,
        feature_dim: int,
        rel_vocab: RelationVocabulary,
        gmm: GmmModel | None = None,
        relcls: RelationClassifier | None = None,
    ):
        self.cfg = cfg
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.rel_vocab = rel_vocab
        self.gmm = gmm
        self.relcls = relcls
        self.dtype = np.dtype(cfg.dtype)
        self.annotator = Annotator(gmm if cfg.use_spatial else None, relcls if cfg.use_semantic else None)
        self.encoder = GcnEncoder(
            feature_dim + 3,
            cfg.d_model,
            cfg.gcn_layers,
            cfg.gmm_m,
            rel_vocab.n_classes,
            cfg.d_rel,
            cfg.seed,
            gates=cfg.gates,
            use_spatial=cfg.use_spatial,
            use_semantic=cfg.use_semantic,
            soft_relation=cfg.soft_relation,
            gate_scale=cfg.gate_scale,
            dtype=self.dtype,
        )
        dcfg = DecoderConfig(len(vocab), cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff or None, cfg.max_len)
        self.decoder = TransformerDecoder(dcfg, cfg.seed, self.dtype)
        self._ann_cache: dict[str, dict[tuple[int, int], EdgeAnnotation]] = {}

    # -- parameters --------------------------------------------------------------
    def params(self) -> dict[str, T.Tensor]:
        out = dict(self.encoder.params)
        out.update(self.decoder.params())
        return out

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()

    # -- graph units ---------------------------------------------------------------
    def annotate(self, record: SceneRecord) -> dict[tuple[int, int], EdgeAnnotation]:
        if not self.cfg.gates:
            return {}
        ann = self._ann_cache.get(record.image_id)
        if ann is None:
            ann = self._ann_cache[record.image_id] = self.annotator(record)
        return ann

    def contexts(self, records: Sequence[SceneRecord], rng: np.random.Generator | None = None) -> list[list[int]]:
        if self.cfg.level == "object":
            return [[i] for i in range(len(records))]
        return group_contexts(records, self.cfg.context_size, rng=rng)

    def _unit(self, graph: SceneGraph, records: Sequence[SceneRecord], members: Sequence[int], with_image_row: bool) -> GraphUnit:
        graph = graph.with_type_embedding()
        rows = {}
        for idx in members:
            rid = records[idx].image_id
            r = graph.object_rows(rid)
            if with_image_row:
                r = r + [nd.node_id for nd in graph.nodes if nd.level == "image" and nd.image_id == rid]
            rows[idx] = r
        return GraphUnit(
            graph.features().astype(self.dtype),
            renormalize(graph.adjacency()).astype(self.dtype),
            EdgeArrays.from_graph(graph, self.cfg.gmm_m),
            list(members),
            rows,
        )

    def build_units(self, records: Sequence[SceneRecord], rng: np.random.Generator | None = None) -> list[GraphUnit]:
        """Encoder graphs for ``records`` at the configured level; ``rng`` reshuffles context membership."""
        with_image_row = self.cfg.level == "image"
        return [self._unit(self.graph_for(records, m), records, m, with_image_row) for m in self.contexts(records, rng)]

    def graph_for(self, records: Sequence[SceneRecord], members: Sequence[int]) -> SceneGraph:
        cfg = self.cfg
        recs = [records[i] for i in members]
        if cfg.level == "object":
            return build_object_graph(recs[0], self.annotate, cfg.k_max)
        if cfg.level == "image":
            # image nodes form the context graph; regions stay isolated
            return merge([build_image_graph(recs, cfg.k_max)] + [isolated_objects(r, cfg.k_max) for r in recs], level="image")
        return build_hierarchical_graph(recs, self.annotate, cfg.hierarchy_mode, cfg.scene_nodes, cfg.k_max)

    # -- batching ------------------------------------------------------------------
    def encode_caption(self, tokens: Sequence[str]) -> list[int]:
        ids = [self.vocab.bos_id] + self.vocab.encode(tokens) + [self.vocab.eos_id]
        return ids[: self.cfg.max_len + 1]

    def make_batch(self, units: Sequence[GraphUnit], records: Sequence[SceneRecord]) -> Batch:
        offsets = np.cumsum([0] + [u.n for u in units])
        a_hat = scipy.linalg.block_diag(*[u.a_hat for u in units]).astype(self.dtype)
        h0 = np.concatenate([u.h0 for u in units])
        edges = EdgeArrays(
            np.concatenate([u.edges.rows + off for u, off in zip(units, offsets)]),
            np.concatenate([u.edges.cols + off for u, off in zip(units, offsets)]),
            np.concatenate([u.edges.scores for u in units]),
            np.concatenate([u.edges.relations for u in units]),
        )
        mem_rows, seqs, rids = [], [], []
        for u, off in zip(units, offsets):
            for idx in u.targets:
                for cap in records[idx].captions:
                    mem_rows.append([r + off for r in u.rows[idx]])
                    seqs.append(self.encode_caption(cap))
                    rids.append(idx)
        kmax = max(len(r) for r in mem_rows)
        mem_index = np.full((len(mem_rows), kmax), -1, dtype=np.int64)
        for b, r in enumerate(mem_rows):
            mem_index[b, : len(r)] = r
        tmax = max(len(s) for s in seqs) - 1
        inputs = np.full((len(seqs), tmax), self.vocab.pad_id, dtype=np.int64)
        targets = np.full((len(seqs), tmax), self.vocab.pad_id, dtype=np.int64)
        for b, s in enumerate(seqs):
            inputs[b, : len(s) - 1] = s[:-1]
            targets[b, : len(s) - 1] = s[1:]
        return Batch(h0, a_hat, edges, mem_index, inputs, targets, rids)

    def memory(self, batch: Batch) -> tuple[T.Tensor, np.ndarray]:
        h = self.encoder.forward(batch.h0, batch.a_hat, batch.edges)
        padded = T.concat([h, T.Tensor(np.zeros((1, h.shape[1]), dtype=h.dtype))], axis=0)
        pad_mask = batch.mem_index < 0
        idx = np.where(pad_mask, h.shape[0], batch.mem_index)
        mem = T.take_rows(padded, idx.reshape(-1)).reshape(idx.shape[0], idx.shape[1], h.shape[1])
        return mem, pad_mask

    def batch_loss(self, batch: Batch) -> tuple[T.Tensor, int]:
        """Mean token XE over non-pad targets, and the token count."""
        mem, pad_mask = self.memory(batch)
        logits = self.decoder.logits(batch.inputs, mem, pad_mask)
        return xe_from_logits(logits, batch.targets, self.vocab.pad_id), int(np.sum(batch.targets != self.vocab.pad_id))

    def memory_for(self, records: Sequence[SceneRecord], members: Sequence[int], target: int) -> np.ndarray:
        """Decoder memory (rows x d_model) for one record encoded within its context."""
        unit = self._unit(self.graph_for(records, members), records, members, self.cfg.level == "image")
        with T.no_grad():
            h = self.encoder.forward(unit.h0, unit.a_hat, unit.edges)
        return h.data[unit.rows[target]]

    def memories(self, records: Sequence[SceneRecord]) -> list[np.ndarray]:
        out: list[np.ndarray | None] = [None] * len(records)
        for unit in self.build_units(records):
            with T.no_grad():
                h = self.encoder.forward(unit.h0, unit.a_hat, unit.edges).data
            for idx in unit.targets:
                out[idx] = h[unit.rows[idx]]
        return out

    # -- persistence -----------------------------------------------------------------
    def save(self, path: str | Path) -> None:
        arrays = {k: v.data for k, v in self.params().items()}
        sections = {k: "model" for k in arrays}
        if self.gmm is not None:
            g = self.gmm.to_arrays()
            arrays.update(g)
            sections.update({k: "gmm" for k in g})
        if self.relcls is not None:
            r = self.relcls.to_arrays()
            arrays.update(r)
            sections.update({k: "relcls" for k in r})
        meta = {
            "config": {k: v for k, v in self.cfg.items()},
            "vocab": self.vocab.to_list(),
            "relations": self.rel_vocab.names,
            "feature_dim": self.feature_dim,
            "relcls_hidden": None if self.relcls is None else int(self.relcls.params["relcls/b1"].shape[0]),
        }
        checkpoint.save(path, arrays, sections, meta)

    @classmethod
    def load(cls, path: str | Path) -> CaptionModel:
        arrays, meta = checkpoint.load(path)
        cfg = Config(**meta["config"]).validate()
        vocab = Vocabulary(meta["vocab"][4:])
        rel_vocab = RelationVocabulary(meta["relations"])
        gmm = GmmModel.from_arrays(arrays, seed=cfg.seed) if "gmm/weights" in arrays else None
        relcls = None
        if "relcls/w1" in arrays:
            relcls = RelationClassifier(meta["feature_dim"], rel_vocab.n_classes, meta["relcls_hidden"])
            relcls.load_arrays(arrays)
        model = cls(cfg, vocab, meta["feature_dim"], rel_vocab, gmm, relcls)
        for k, p in model.params().items():
            p.data = np.array(arrays[k], dtype=p.dtype)
        return model
