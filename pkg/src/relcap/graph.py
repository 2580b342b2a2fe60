"""Object-, image- and hierarchy-level graphs with renormalised adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .corpus import K_MAX, SceneRecord
from .geometry import GmmModel, assign_scores, pairwise_features
from .relations import RelationClassifier, pair_inputs

LEVELS = ("object", "image", "scene")


@dataclass
class Node:
    node_id: int
    level: str
    feature: np.ndarray
    image_id: str | None = None


@dataclass
class EdgeAnnotation:
    scores: np.ndarray | None  # m GMM responsibilities
    relation: int | None  # predicted relation class id


@dataclass
class SceneGraph:
    nodes: list[Node]
    edges: list[tuple[int, int]]  # undirected, i < j
    annotations: dict[tuple[int, int], EdgeAnnotation] = field(default_factory=dict)  # ordered pairs
    level: str = "object"
    typed: bool = False

    @property
    def n(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def features(self) -> np.ndarray:
        return np.stack([node.feature for node in self.nodes])

    def object_rows(self, image_id: str) -> list[int]:
        rows = [nd.node_id for nd in self.nodes if nd.level == "object" and nd.image_id == image_id]
        if not rows:
            raise KeyError(f"image {image_id!r} has no object nodes in this graph")
        return rows

    def image_ids(self) -> list[str]:
        seen = []
        for nd in self.nodes:
            if nd.image_id is not None and nd.image_id not in seen:
                seen.append(nd.image_id)
        return seen

    def with_type_embedding(self) -> SceneGraph:
        """Append a one-hot (object, image, scene) code to every node feature."""
        if self.typed:
            return self
        nodes = []
        for nd in self.nodes:
            onehot = np.zeros(len(LEVELS))
            onehot[LEVELS.index(nd.level)] = 1.0
            nodes.append(replace(nd, feature=np.concatenate([nd.feature, onehot])))
        return replace(self, nodes=nodes, typed=True)

    def permuted(self, perm: Sequence[int]) -> SceneGraph:
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = list(perm)
        new_of = {old: new for new, old in enumerate(perm)}
        nodes = [replace(self.nodes[old], node_id=new) for new, old in enumerate(perm)]
        edges = sorted(tuple(sorted((new_of[i], new_of[j]))) for i, j in self.edges)
        ann = {(new_of[i], new_of[j]): a for (i, j), a in self.annotations.items()}
        return replace(self, nodes=nodes, edges=edges, annotations=ann)

    def dump(self) -> str:
        """Human-readable node and edge listing."""
        lines = [f"# graph level={self.level} nodes={self.n} edges={len(self.edges)}"]
        for nd in self.nodes:
            lines.append(f"node {nd.node_id} {nd.level} image={nd.image_id}")
        for i, j in self.edges:
            parts = [f"edge {i} {j}"]
            for a, b in ((i, j), (j, i)):
                ann = self.annotations.get((a, b))
                if ann is not None:
                    top = "-" if ann.scores is None else str(int(np.argmax(ann.scores)))
                    parts.append(f"[{a}->{b} bin={top} rel={ann.relation}]")
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"


Annotate = Callable[[SceneRecord], dict[tuple[int, int], EdgeAnnotation]]


class Annotator:
    """Spatial bins (GMM) and semantic class (classifier) for each ordered pair."""

    def __init__(self, gmm: GmmModel | None, classifier: RelationClassifier | None):
        self.gmm = gmm
        self.classifier = classifier

    def __call__(self, record: SceneRecord) -> dict[tuple[int, int], EdgeAnnotation]:
        if len(record.regions) < 2:
            return {}
        scores = None
        if self.gmm is not None:
            feats, pairs = pairwise_features(record.boxes)
            scores = assign_scores(self.gmm, feats)
        rel = None
        if self.classifier is not None:
            x, pairs = pair_inputs(record)
            rel = np.argmax(self.classifier.predict_proba(x), axis=1)
        else:
            pairs = [(i, j) for i in range(len(record.regions)) for j in range(len(record.regions)) if i != j]
        return {
            pair: EdgeAnnotation(None if scores is None else scores[k], None if rel is None else int(rel[k]))
            for k, pair in enumerate(pairs)
        }


def _object_nodes(record: SceneRecord, start: int, k_max: int) -> list[Node]:
    regions = record.regions[:k_max]
    return [Node(start + k, "object", r.feature, record.image_id) for k, r in enumerate(regions)]


def _pooled(record: SceneRecord, k_max: int) -> np.ndarray:
    return np.mean([r.feature for r in record.regions[:k_max]], axis=0)


def build_object_graph(record: SceneRecord, annotate: Annotate | None = None, k_max: int = K_MAX) -> SceneGraph:
    """Complete graph over the (at most ``k_max``) regions of one image."""
    k = len(record.regions)
    if k == 0:
        raise ValueError(f"image {record.image_id!r} has no regions")
    if k > k_max:
        raise ValueError(f"image {record.image_id!r} has {k} regions > K_max={k_max}")
    nodes = _object_nodes(record, 0, k_max)
    edges = list(combinations(range(k), 2))
    ann = annotate(record) if annotate is not None else {}
    return SceneGraph(nodes, edges, dict(ann), level="object")


def build_image_graph(records: Sequence[SceneRecord], k_max: int = K_MAX) -> SceneGraph:
    """Complete graph over image nodes; each node is its image's mean region feature."""
    nodes = [Node(n, "image", _pooled(r, k_max), r.image_id) for n, r in enumerate(records)]
    return SceneGraph(nodes, list(combinations(range(len(nodes)), 2)), {}, level="image")


def build_hierarchical_graph(
    records: Sequence[SceneRecord],
    annotate: Annotate | None = None,
    mode: str = "structured",
    scene_nodes: bool = False,
    k_max: int = K_MAX,
) -> SceneGraph:
    """Images of one context together with their regions.

    ``structured``: regions complete within their image, each image node
    linked to its own regions, image nodes complete across the context.
    ``literal``: one complete graph over every image and region node.
    ``scene_nodes`` adds one node per superclass linked to its images.
    """
    if mode not in ("structured", "literal"):
        raise ValueError(f"unknown hierarchy mode {mode!r}")
    if not records:
        raise ValueError("hierarchical graph needs at least one image")
    nodes: list[Node] = []
    annotations: dict[tuple[int, int], EdgeAnnotation] = {}
    edges: set[tuple[int, int]] = set()
    image_nodes = []
    for rec in records:
        obj = _object_nodes(rec, len(nodes), k_max)
        nodes.extend(obj)
        ids = [nd.node_id for nd in obj]
        if annotate is not None:
            for (a, b), ann in annotate(rec).items():
                if a < len(ids) and b < len(ids):
                    annotations[(ids[a], ids[b])] = ann
        img = Node(len(nodes), "image", _pooled(rec, k_max), rec.image_id)
        nodes.append(img)
        image_nodes.append(img.node_id)
        if mode == "structured":
            edges.update(combinations(ids, 2))
            edges.update((i, img.node_id) for i in ids)
    if mode == "structured":
        edges.update(combinations(image_nodes, 2))
    if scene_nodes:
        by_super: dict[str, list[int]] = {}
        for rec, nid in zip(records, image_nodes):
            by_super.setdefault(rec.superclass, []).append(nid)
        for sup in sorted(by_super):
            members = by_super[sup]
            feat = np.mean([nodes[m].feature for m in members], axis=0)
            scene = Node(len(nodes), "scene", feat, None)
            nodes.append(scene)
            if mode == "structured":
                edges.update((m, scene.node_id) for m in members)
    if mode == "literal":
        edges = set(combinations(range(len(nodes)), 2))
    return SceneGraph(nodes, sorted(edges), annotations, level="hierarchical")


def isolated_objects(record: SceneRecord, k_max: int = K_MAX) -> SceneGraph:
    """Region nodes of one image with no edges between them."""
    return SceneGraph(_object_nodes(record, 0, k_max), [], {}, level="object")


def merge(graphs: Sequence[SceneGraph], level: str | None = None) -> SceneGraph:
    """Disjoint union; node ids are shifted, annotations carried along."""
    nodes, edges, ann = [], [], {}
    for g in graphs:
        off = len(nodes)
        nodes.extend(replace(nd, node_id=nd.node_id + off) for nd in g.nodes)
        edges.extend((i + off, j + off) for i, j in g.edges)
        ann.update({(i + off, j + off): a for (i, j), a in g.annotations.items()})
    typed = bool(graphs) and all(g.typed for g in graphs)
    return SceneGraph(nodes, edges, ann, level=level or (graphs[0].level if graphs else "object"), typed=typed)


@dataclass
class Adjacency:
    raw: np.ndarray
    renormalized: np.ndarray


def renormalize(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ValueError("adjacency must be non-negative")
    a_tilde = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d[:, None] * a_tilde * d[None, :]


def adjacency(graph: SceneGraph) -> Adjacency:
    raw = graph.adjacency()
    return Adjacency(raw, renormalize(raw))
