"""Pairwise box geometry and its Gaussian-mixture discretisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

FEATURE_DIM = 6
VAR_FLOOR = 1e-6
COLLAPSE_WEIGHT = 1e-8
MAX_RESTARTS = 5


class GeometryError(ValueError):
    pass


class BoundingBox(NamedTuple):
    """Box given by its centre ``(cx, cy)`` and size ``(w, h)``.

    Coordinates are normalised by image width/height at ingestion.
    """

    cx: float
    cy: float
    w: float
    h: float

    def validate(self) -> BoundingBox:
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"degenerate box {tuple(self)}: width and height must be positive")
        return self

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def from_pixels(cls, x1, y1, x2, y2, image_w, image_h) -> BoundingBox:
        box = cls.from_corners(x1 / image_w, y1 / image_h, x2 / image_w, y2 / image_h)
        return box.validate()


def _overlap(c1: float, s1: float, c2: float, s2: float) -> float:
    # 1-D intersection length of two centred intervals
    return max(0.0, min((s1 + s2) / 2 - abs(c2 - c1), s1, s2))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = _overlap(a.cx, a.w, b.cx, b.w) * _overlap(a.cy, a.h, b.cy, b.h)
    union = a.area + b.area - inter
    return inter / union


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    return BoundingBox.from_corners(min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))


def spatial_feature(bi: BoundingBox, bj: BoundingBox) -> np.ndarray:
    """6-vector describing where ``bj`` sits relative to ``bi``.

    Order: (dx, dy) scaled by sqrt(area_i), sqrt(area_j / area_i), IoU,
    aspect ratio w/h of ``bi``, aspect ratio of ``bj``.
    """
    bi = BoundingBox(*bi).validate()
    bj = BoundingBox(*bj).validate()
    scale = np.sqrt(bi.w * bi.h)
    return np.array(
        [
            (bj.cx - bi.cx) / scale,
            (bj.cy - bi.cy) / scale,
            np.sqrt((bj.w * bj.h) / (bi.w * bi.h)),
            iou(bi, bj),
            bi.w / bi.h,
            bj.w / bj.h,
        ]
    )


def pairwise_features(boxes: Iterable[BoundingBox]) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Spatial features for every ordered pair ``i != j``."""
    boxes = list(boxes)
    pairs = [(i, j) for i in range(len(boxes)) for j in range(len(boxes)) if i != j]
    feats = np.array([spatial_feature(boxes[i], boxes[j]) for i, j in pairs]).reshape(-1, FEATURE_DIM)
    return feats, pairs


# -- Gaussian mixture ---------------------------------------------------------
@dataclass
class GmmModel:
    weights: np.ndarray  # (m,)
    means: np.ndarray  # (m, 6), standardised space
    covariances: np.ndarray  # (m, 6) diagonal or (m, 6, 6) full
    center: np.ndarray  # per-dimension standardisation
    scale: np.ndarray
    covariance_type: str = "diag"
    loglik_trace: list[float] = field(default_factory=list)
    seed: int = 0

    @property
    def m(self) -> int:
        return len(self.weights)

    def feature_means(self) -> np.ndarray:
        """Component means in raw (unstandardised) feature units."""
        return self.means * self.scale + self.center

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def component_loglik(self, z: np.ndarray) -> np.ndarray:
        """log(weight_k) + log N(z | component k) for standardised rows ``z``."""
        return np.log(self.weights) + _log_gauss(z, self.means, self.covariances, self.covariance_type)

    def to_arrays(self, prefix: str = "gmm") -> dict[str, np.ndarray]:
        return {
            f"{prefix}/weights": self.weights,
            f"{prefix}/means": self.means,
            f"{prefix}/covariances": self.covariances,
            f"{prefix}/center": self.center,
            f"{prefix}/scale": self.scale,
            f"{prefix}/loglik_trace": np.asarray(self.loglik_trace, dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "gmm", seed: int = 0) -> GmmModel:
        cov = arrays[f"{prefix}/covariances"]
        return cls(
            weights=arrays[f"{prefix}/weights"],
            means=arrays[f"{prefix}/means"],
            covariances=cov,
            center=arrays[f"{prefix}/center"],
            scale=arrays[f"{prefix}/scale"],
            covariance_type="full" if cov.ndim == 3 else "diag",
            loglik_trace=list(arrays.get(f"{prefix}/loglik_trace", [])),
            seed=seed,
        )


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    return (amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))).squeeze(axis)


def _log_gauss(z: np.ndarray, means: np.ndarray, cov: np.ndarray, kind: str) -> np.ndarray:
    d = z.shape[1]
    if kind == "diag":
        diff = z[:, None, :] - means[None, :, :]
        maha = np.sum(diff * diff / cov[None], axis=2)
        logdet = np.sum(np.log(cov), axis=1)
    else:
        maha = np.empty((z.shape[0], means.shape[0]))
        logdet = np.empty(means.shape[0])
        for k in range(means.shape[0]):
            chol = np.linalg.cholesky(cov[k])
            sol = np.linalg.solve(chol, (z - means[k]).T)
            maha[:, k] = np.sum(sol * sol, axis=0)
            logdet[k] = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2 * np.pi) + logdet[None, :] + maha)


def _kmeanspp(z: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    centers = [z[rng.integers(len(z))]]
    for _ in range(1, m):
        d2 = np.min(((z[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.choice(len(z), p=d2 / total) if total > 0 else rng.integers(len(z))
        centers.append(z[idx])
    return np.array(centers)


def _em(z, m, rng, kind, tol, max_iter):
    n, d = z.shape
    means = _kmeanspp(z, m, rng)
    if kind == "diag":
        cov = np.ones((m, d))
    else:
        cov = np.repeat(np.eye(d)[None], m, axis=0)
    weights = np.full(m, 1.0 / m)
    trace = []
    for _ in range(max_iter + 1):
        joint = np.log(weights) + _log_gauss(z, means, cov, kind)
        lse = _logsumexp(joint, axis=1)
        trace.append(float(lse.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        if len(trace) == max_iter + 1:
            break
        resp = np.exp(joint - lse[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        if np.any(weights < COLLAPSE_WEIGHT):
            return None
        means = resp.T @ z / nk[:, None]
        if kind == "diag":
            diff = z[:, None, :] - means[None, :, :]
            cov = np.maximum(np.einsum("nk,nkd->kd", resp, diff * diff) / nk[:, None], VAR_FLOOR)
        else:
            cov = np.empty((m, d, d))
            for k in range(m):
                diff = z - means[k]
                cov[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + VAR_FLOOR * np.eye(d)
    return weights, means, cov, trace


def fit_gmm(
    features,
    m: int = 8,
    seed: int = 0,
    covariance_type: str = "diag",
    tol: float = 1e-6,
    max_iter: int = 200,
    n_init: int = 1,
) -> GmmModel:
    """Fit an ``m``-component mixture by EM on z-scored features.

    Stops once the mean log-likelihood improves by less than ``tol`` or after
    ``max_iter`` iterations.  A component whose weight collapses below 1e-8
    triggers a reseeded restart (at most 5 per initialisation).  With
    ``n_init > 1`` the best of that many independent fits is kept.
    """
    x = np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    if covariance_type not in ("diag", "full"):
        raise ValueError(f"unknown covariance type {covariance_type!r}")
    if m < 1 or n_init < 1:
        raise ValueError("m and n_init must be positive")
    if len(x) < 10 * m:
        raise GeometryError(f"fit_gmm needs at least {10 * m} samples for m={m}, got {len(x)}")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    z = (x - center) / scale
    best = None
    for init in range(n_init):
        for attempt in range(MAX_RESTARTS + 1):
            rng = np.random.default_rng([seed, init * (MAX_RESTARTS + 1) + attempt])
            result = _em(z, m, rng, covariance_type, tol, max_iter)
            if result is not None:
                break
            log.warning("GMM component collapsed (init %d, attempt %d); reseeding", init, attempt)
        else:
            raise GeometryError(f"GMM fit collapsed after {MAX_RESTARTS} restarts")
        if best is None or result[3][-1] > best[3][-1]:
            best = result
    weights, means, cov, trace = best
    return GmmModel(weights, means, cov, center, scale, covariance_type, trace, seed)


def assign_scores(model: GmmModel, f) -> np.ndarray:
    """Posterior responsibilities; one row per feature (1-D in, 1-D out)."""
    x = np.asarray(f, dtype=np.float64)
    single = x.ndim == 1
    # clipping keeps squared distances finite for extreme inputs
    z = np.clip(model.standardize(x.reshape(-1, FEATURE_DIM)), -1e6, 1e6)
    joint = model.component_loglik(z)
    post = np.exp(joint - _logsumexp(joint, axis=1)[:, None])
    return post[0] if single else post
