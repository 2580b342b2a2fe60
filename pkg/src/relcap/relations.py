"""Semantic relation classifier over ordered region pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import SceneRecord
from .geometry import BoundingBox, iou, union_box
from .optim import Adam

log = logging.getLogger(__name__)

NON_RELATION = "__none__"


class RelationVocabulary:
    """``C`` predicate names at ids ``0..C-1``; id ``C`` is the non-relation class."""

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError("relation names must be unique")
        if NON_RELATION in names:
            raise ValueError(f"{NON_RELATION!r} is reserved")
        self.names = names
        self.index = {n: i for i, n in enumerate(names)}

    @property
    def none_id(self) -> int:
        return len(self.names)

    @property
    def n_classes(self) -> int:
        return len(self.names) + 1

    def id_of(self, name: str | None) -> int:
        return self.none_id if name in (None, NON_RELATION) else self.index[name]

    def name_of(self, cid: int) -> str:
        return NON_RELATION if cid == self.none_id else self.names[cid]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RelationVocabulary:
        return cls([ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()])


@dataclass
class RelationPrediction:
    distribution: np.ndarray
    label: int


def union_feature(regions: Sequence[tuple[BoundingBox, np.ndarray]], i: int, j: int, threshold: float = 0.5) -> np.ndarray:
    """Mean feature of regions covering the union box of ``i`` and ``j``.

    A region counts when its IoU with the union box exceeds ``threshold``;
    with none, the mean of the two pair features is used.
    """
    ub = union_box(regions[i][0], regions[j][0])
    inside = [f for b, f in regions if iou(b, ub) > threshold]
    if not inside:
        inside = [regions[i][1], regions[j][1]]
    return np.mean(inside, axis=0)


class RelationClassifier:
    """Two-layer perceptron on ``concat(v_i, v_j, union)``."""

    def __init__(self, feature_dim: int, n_classes: int, hidden: int = 256, seed: int = 0, dropout: float = 0.0):
        rng = np.random.default_rng(seed)
        d_in = 3 * feature_dim
        lim = 1.0 / np.sqrt(d_in)
        self.feature_dim = feature_dim
        self.dropout = dropout
        self.params = {
            "relcls/w1": T.Parameter(rng.uniform(-lim, lim, (d_in, hidden)), "relcls/w1"),
            "relcls/b1": T.Parameter(np.zeros(hidden), "relcls/b1"),
            "relcls/w2": T.Parameter(np.zeros((hidden, n_classes)), "relcls/w2"),
            "relcls/b2": T.Parameter(np.zeros(n_classes), "relcls/b2"),
        }

    @property
    def n_classes(self) -> int:
        return self.params["relcls/b2"].shape[0]

    def logits(self, x, rng: np.random.Generator | None = None) -> T.Tensor:
        p = self.params
        x = T.as_tensor(x)
        if x.shape[-1] != 3 * self.feature_dim:
            raise T.ShapeError(f"relation input dim {x.shape[-1]} != 3 * {self.feature_dim}")
        h = T.relu(x @ p["relcls/w1"] + p["relcls/b1"])
        h = T.dropout(h, self.dropout, rng)
        return h @ p["relcls/w2"] + p["relcls/b2"]

    def predict_proba(self, x) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.logits(np.atleast_2d(x)), axis=-1).data

    def classify(self, v_i, v_j, union_feat) -> RelationPrediction:
        for name, v in (("v_i", v_i), ("v_j", v_j), ("union", union_feat)):
            if np.shape(v) != (self.feature_dim,):
                raise T.ShapeError(f"{name} has shape {np.shape(v)}, expected ({self.feature_dim},)")
        dist = self.predict_proba(np.concatenate([v_i, v_j, union_feat]))[0]
        # np.argmax returns the lowest id on ties
        return RelationPrediction(dist, int(np.argmax(dist)))

    def loss(self, x, y, rng=None) -> T.Tensor:
        logp = T.log_softmax(self.logits(x, rng), axis=-1)
        return -T.pick(logp, np.asarray(y)).mean()

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data = np.array(arrays[k], dtype=v.dtype)


def pair_inputs(record: SceneRecord) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Classifier inputs for every ordered region pair of one scene."""
    regs = [(r.box, r.feature) for r in record.regions]
    pairs = [(i, j) for i in range(len(regs)) for j in range(len(regs)) if i != j]
    if not pairs:
        return np.zeros((0, 3 * len(record.regions[0].feature))), pairs
    x = np.stack([np.concatenate([regs[i][1], regs[j][1], union_feature(regs, i, j)]) for i, j in pairs])
    return x, pairs


def pair_examples(records: Sequence[SceneRecord], vocab: RelationVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, labels) for every ordered pair; unlabeled pairs are non-relations."""
    xs, ys = [], []
    for rec in records:
        x, pairs = pair_inputs(rec)
        labels = {(i, j): p for i, j, p in rec.relations}
        xs.append(x)
        ys.extend(vocab.id_of(labels.get(pair)) for pair in pairs)
    if not xs:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs), np.asarray(ys, dtype=np.int64)


@dataclass
class RelClsConfig:
    hidden: int = 256
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    dropout: float = 0.0


def train_relation_classifier(x: np.ndarray, y: np.ndarray, n_classes: int, config: RelClsConfig | None = None):
    """XE-train a classifier; returns ``(classifier, per-epoch mean losses)``."""
    config = config or RelClsConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty relation corpus")
    clf = RelationClassifier(x.shape[1] // 3, n_classes, config.hidden, config.seed, config.dropout)
    opt = Adam(clf.params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = clf.loss(x[idx], y[idx], rng if config.dropout > 0 else None)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(x))
    log.info("relation classifier: final train loss %.4f", history[-1])
    return clf, history


def accuracy(clf: RelationClassifier, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(clf.predict_proba(x), axis=1) == y))
