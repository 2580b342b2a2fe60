"""Scene records, vocabularies and the synthetic relation corpus."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoundingBox, GeometryError

log = logging.getLogger(__name__)

CORPUS_FORMAT = "relcap-corpus"
CORPUS_VERSION = 1
K_MAX = 36

PAD, BOS, EOS, UNK = "<PAD>", "<S>", "<E>", "<UNK>"
RESERVED = (PAD, BOS, EOS, UNK)


class CorpusError(ValueError):
    pass


@dataclass
class Region:
    box: BoundingBox
    feature: np.ndarray
    class_id: int


@dataclass
class SceneRecord:
    image_id: str
    superclass: str
    subclass: str
    regions: list[Region]
    captions: list[list[str]]
    # oracle labels: ordered (i, j, predicate) triples, plus free-form extras
    relations: list[tuple[int, int, str]] = field(default_factory=list)
    labels: dict = field(default_factory=dict)

    @property
    def boxes(self) -> list[BoundingBox]:
        return [r.box for r in self.regions]

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.feature for r in self.regions])

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "superclass": self.superclass,
            "subclass": self.subclass,
            "regions": [
                {"box": [float(v) for v in r.box], "feature": [float(v) for v in r.feature], "class_id": int(r.class_id)}
                for r in self.regions
            ],
            "captions": [" ".join(c) for c in self.captions],
            "relations": [[int(i), int(j), p] for i, j, p in self.relations],
            "labels": self.labels,
        }

    @classmethod
    def from_json(cls, obj: dict) -> SceneRecord:
        regions = [
            Region(BoundingBox(*map(float, r["box"])).validate(), np.asarray(r["feature"], dtype=np.float64), int(r["class_id"]))
            for r in obj["regions"]
        ]
        return cls(
            image_id=str(obj["image_id"]),
            superclass=str(obj.get("superclass", "")),
            subclass=str(obj.get("subclass", "")),
            regions=regions,
            captions=[c.split() if isinstance(c, str) else list(c) for c in obj["captions"]],
            relations=[(int(i), int(j), str(p)) for i, j, p in obj.get("relations", [])],
            labels=dict(obj.get("labels", {})),
        )


# -- vocabulary -----------------------------------------------------------------
class Vocabulary:
    """Token <-> id bijection with fixed reserved ids (<PAD>=0, <S>=1, <E>=2, <UNK>=3)."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        for t in tokens:
            if t in RESERVED:
                continue
            self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    pad_id, bos_id, eos_id, unk_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t.lower(), self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (self.pad_id, self.bos_id):
                continue
            if strip and i == self.eos_id:
                break
            out.append(self.itos[i])
        return out

    def to_list(self) -> list[str]:
        return list(self.itos)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED:
            raise CorpusError(f"{path}: vocabulary must start with reserved tokens {RESERVED}")
        return cls(lines[4:])


def build_vocab(captions: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Lowercased tokens seen at least ``min_count`` times.

    Ids follow frequency (descending), ties broken lexicographically.
    """
    counts = Counter(t.lower() for cap in captions for t in cap)
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def corpus_captions(records: Iterable[SceneRecord]) -> list[list[str]]:
    return [c for r in records for c in r.captions]


# -- file io -------------------------------------------------------------------
def save_corpus(records: Sequence[SceneRecord], path: str | Path) -> None:
    feature_dim = len(records[0].regions[0].feature) if records else 0
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "feature_dim": feature_dim}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def _validate_record(obj: dict, lineno: int, feature_dim: int | None, k_max: int) -> SceneRecord:
    problems = []
    for key in ("image_id", "regions", "captions"):
        if key not in obj:
            problems.append(f"missing field {key!r}")
    if problems:
        raise CorpusError(f"line {lineno}: " + "; ".join(problems))
    if not obj["regions"]:
        problems.append("no regions")
    if not obj["captions"]:
        problems.append("no captions")
    for ci, cap in enumerate(obj["captions"]):
        if not (cap.split() if isinstance(cap, str) else cap):
            problems.append(f"caption {ci} is empty")
    for ri, reg in enumerate(obj["regions"]):
        if len(reg.get("box", [])) != 4:
            problems.append(f"region {ri}: box must have 4 numbers")
        elif not (reg["box"][2] > 0 and reg["box"][3] > 0):
            problems.append(f"region {ri}: non-positive box size")
        if feature_dim is not None and len(reg.get("feature", [])) != feature_dim:
            problems.append(f"region {ri}: feature dim {len(reg.get('feature', []))} != {feature_dim}")
    if problems:
        raise CorpusError(f"line {lineno}: " + "; ".join(problems))
    try:
        rec = SceneRecord.from_json(obj)
    except (GeometryError, TypeError, ValueError, KeyError) as exc:
        raise CorpusError(f"line {lineno}: {exc}") from exc
    if len(rec.regions) > k_max:
        log.warning("line %d: %d regions exceed K_max=%d; keeping the first %d", lineno, len(rec.regions), k_max, k_max)
        rec.regions = rec.regions[:k_max]
        rec.relations = [(i, j, p) for i, j, p in rec.relations if i < k_max and j < k_max]
    return rec


def load_corpus(path: str | Path, k_max: int = K_MAX) -> list[SceneRecord]:
    """Read and validate a corpus file; raises :class:`CorpusError` with the line number."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        log.warning("%s: empty corpus", path)
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line 1: malformed header: {exc}") from exc
    if header.get("format") != CORPUS_FORMAT or header.get("version") != CORPUS_VERSION:
        raise CorpusError(f"line 1: expected {CORPUS_FORMAT} version {CORPUS_VERSION}, got {header}")
    feature_dim = header.get("feature_dim") or None
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON: {exc}") from exc
        records.append(_validate_record(obj, lineno, feature_dim, k_max))
    if not records:
        log.warning("%s: empty corpus", path)
    return records


# -- synthetic scenes ---------------------------------------------------------------
INVERSE = {"left-of": "right-of", "right-of": "left-of", "above": "below", "below": "above"}


def predicate_holds(pred: str, subj: BoundingBox, obj: BoundingBox) -> bool:
    """Geometric definition of each built-in predicate (y grows downward).

    ``left-of``: subject lies wholly left of the object and the two overlap
    vertically; the other three are the obvious rotations.
    """
    sx1, sy1, sx2, sy2 = subj.corners()
    ox1, oy1, ox2, oy2 = obj.corners()
    v_overlap = min(sy2, oy2) > max(sy1, oy1)
    h_overlap = min(sx2, ox2) > max(sx1, ox1)
    if pred == "left-of":
        return sx2 <= ox1 and v_overlap
    if pred == "right-of":
        return ox2 <= sx1 and v_overlap
    if pred == "above":
        return sy2 <= oy1 and h_overlap
    if pred == "below":
        return oy2 <= sy1 and h_overlap
    raise KeyError(pred)


@dataclass
class SyntheticSpec:
    """Recipe for a relation-determined caption corpus.

    Each scene holds one (subject, object) pair whose predicate is fixed by
    geometry, plus optional distractor regions.  The subject is the pair
    member with the lower class id, so mirrored layouts flip only the
    predicate token.
    """

    object_classes: list[str] = field(default_factory=lambda: ["cat", "dog", "cup", "book", "lamp", "chair", "ball", "tree"])
    predicates: list[str] = field(default_factory=lambda: ["left-of", "right-of", "above", "below"])
    # superclass -> subclasses; object pools are keyed by superclass
    taxonomy: dict[str, list[str]] = field(default_factory=lambda: {"indoor": ["kitchen", "office"], "outdoor": ["park", "street"]})
    object_pools: dict[str, list[int]] = field(default_factory=lambda: {"indoor": [0, 1, 2, 3, 4, 5], "outdoor": [0, 1, 5, 6, 7, 4]})
    predicate_priors: dict[str, dict[str, float]] = field(default_factory=dict)
    # superclass -> {predicate: surface word}; default is the predicate name
    predicate_words: dict[str, dict[str, str]] = field(default_factory=dict)
    template: str = "a {subj} {pred} a {obj}"
    feature_dim: int = 64
    prototype_scale: float = 1.0
    noise: float = 0.3
    distractors: tuple[int, int] = (0, 0)
    min_gap: float = 0.02

    def validate(self) -> None:
        problems = []
        if len(set(self.object_classes)) != len(self.object_classes):
            problems.append("duplicate object class names")
        for p in self.predicates:
            if p not in INVERSE:
                problems.append(f"predicate {p!r} has no geometric definition")
        for sup, pool in self.object_pools.items():
            if sup not in self.taxonomy:
                problems.append(f"object pool for unknown superclass {sup!r}")
            if len(set(pool)) < 2:
                problems.append(f"superclass {sup!r} needs at least two object classes")
            if any(not 0 <= c < len(self.object_classes) for c in pool):
                problems.append(f"superclass {sup!r} pool references unknown class ids")
        for sup in self.taxonomy:
            if sup not in self.object_pools:
                problems.append(f"superclass {sup!r} has no object pool")
            if not self.taxonomy[sup]:
                problems.append(f"superclass {sup!r} has no subclasses")
        for table in (self.predicate_priors, self.predicate_words):
            for sup, entries in table.items():
                if sup not in self.taxonomy:
                    problems.append(f"unknown superclass {sup!r} in priors/words")
                for p in entries:
                    if p not in self.predicates:
                        problems.append(f"unknown predicate {p!r} for superclass {sup!r}")
        for key in ("{subj}", "{pred}", "{obj}"):
            if key not in self.template:
                problems.append(f"template lacks {key}")
        lo, hi = self.distractors
        if lo < 0 or hi < lo:
            problems.append("invalid distractor range")
        if problems:
            raise CorpusError("inconsistent synthetic spec: " + "; ".join(problems))

    def word(self, superclass: str, pred: str) -> str:
        return self.predicate_words.get(superclass, {}).get(pred, pred)

    def all_predicate_words(self) -> set[str]:
        return {self.word(s, p) for s in self.taxonomy for p in self.predicates}


def _place_pair(pred: str, rng: np.random.Generator, gap: float) -> tuple[BoundingBox, BoundingBox]:
    """Boxes for (subject, object) satisfying ``pred``, inside the unit square."""
    while True:
        ws, hs, wo, ho = rng.uniform(0.12, 0.3, size=4)
        g = rng.uniform(gap, 0.15)
        horizontal = pred in ("left-of", "right-of")
        if horizontal:
            first_w, second_w = (ws, wo) if pred == "left-of" else (wo, ws)
            span = first_w + g + second_w
            x0 = rng.uniform(0.0, 1.0 - span) if span < 1 else None
            if x0 is None:
                continue
            c_first = x0 + first_w / 2
            c_second = x0 + first_w + g + second_w / 2
            cy = rng.uniform(0.3, 0.7)
            jitter = rng.uniform(-0.3, 0.3) * min(hs, ho)
            sx, ox = (c_first, c_second) if pred == "left-of" else (c_second, c_first)
            subj = BoundingBox(sx, cy, ws, hs)
            obj = BoundingBox(ox, cy + jitter, wo, ho)
        else:
            first_h, second_h = (hs, ho) if pred == "above" else (ho, hs)
            span = first_h + g + second_h
            if span >= 1:
                continue
            y0 = rng.uniform(0.0, 1.0 - span)
            c_first = y0 + first_h / 2
            c_second = y0 + first_h + g + second_h / 2
            cx = rng.uniform(0.3, 0.7)
            jitter = rng.uniform(-0.3, 0.3) * min(ws, wo)
            sy, oy = (c_first, c_second) if pred == "above" else (c_second, c_first)
            subj = BoundingBox(cx, sy, ws, hs)
            obj = BoundingBox(cx + jitter, oy, wo, ho)
        if all(0 <= b.cx - b.w / 2 and b.cx + b.w / 2 <= 1 and 0 <= b.cy - b.h / 2 and b.cy + b.h / 2 <= 1 for b in (subj, obj)):
            if predicate_holds(pred, subj, obj):
                return subj, obj


def class_prototypes(spec: SyntheticSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    return rng.normal(0.0, spec.prototype_scale, size=(len(spec.object_classes), spec.feature_dim))


def generate_synthetic(n_scenes: int, seed: int, spec: SyntheticSpec | None = None, id_prefix: str = "img") -> list[SceneRecord]:
    """Scenes whose caption is a deterministic function of classes and layout."""
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    protos = class_prototypes(spec, seed)
    supers = sorted(spec.taxonomy)
    records = []
    for n in range(n_scenes):
        sup = supers[int(rng.integers(len(supers)))]
        sub = spec.taxonomy[sup][int(rng.integers(len(spec.taxonomy[sup])))]
        pool = sorted(set(spec.object_pools[sup]))
        a, b = rng.choice(len(pool), size=2, replace=False)
        subj_c, obj_c = sorted((pool[a], pool[b]))
        priors = spec.predicate_priors.get(sup)
        if priors:
            weights = np.array([priors.get(p, 0.0) for p in spec.predicates], dtype=np.float64)
            pred = spec.predicates[int(rng.choice(len(spec.predicates), p=weights / weights.sum()))]
        else:
            pred = spec.predicates[int(rng.integers(len(spec.predicates)))]
        subj_box, obj_box = _place_pair(pred, rng, spec.min_gap)
        items = [(subj_box, subj_c, "subj"), (obj_box, obj_c, "obj")]
        n_dis = int(rng.integers(spec.distractors[0], spec.distractors[1] + 1))
        others = [c for c in pool if c not in (subj_c, obj_c)]
        for _ in range(n_dis):
            if not others:
                break
            w, h = rng.uniform(0.08, 0.2, size=2)
            box = BoundingBox(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h)
            items.append((box, others[int(rng.integers(len(others)))], "distractor"))
        order = rng.permutation(len(items))
        items = [items[k] for k in order]
        regions = [
            Region(box, protos[c] + rng.normal(0.0, spec.noise, size=spec.feature_dim), int(c)) for box, c, _ in items
        ]
        si = next(k for k, it in enumerate(items) if it[2] == "subj")
        oi = next(k for k, it in enumerate(items) if it[2] == "obj")
        word = spec.word(sup, pred)
        caption = spec.template.format(subj=spec.object_classes[subj_c], pred=word, obj=spec.object_classes[obj_c]).split()
        records.append(
            SceneRecord(
                image_id=f"{id_prefix}{n:05d}",
                superclass=sup,
                subclass=sub,
                regions=regions,
                captions=[caption],
                relations=[(si, oi, pred), (oi, si, INVERSE[pred])],
                labels={"predicate": pred, "predicate_word": word, "subject": si, "object": oi},
            )
        )
    return records


def group_contexts(
    records: Sequence[SceneRecord], size: int, by: str = "subclass", rng: np.random.Generator | None = None
) -> list[list[int]]:
    """Partition record indices into contexts sharing a taxonomy label.

    Within each label, records keep corpus order (or an ``rng`` permutation)
    and are chunked into groups of ``size``; the last chunk may be smaller.
    """
    buckets: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        key = r.subclass if by == "subclass" else r.superclass
        buckets.setdefault(key, []).append(i)
    groups = []
    for key in sorted(buckets):
        idx = buckets[key]
        if rng is not None:
            idx = [idx[k] for k in rng.permutation(len(idx))]
        groups.extend(idx[k : k + size] for k in range(0, len(idx), size))
    return groups
