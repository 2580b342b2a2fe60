"""Cross-entropy training of the full captioner."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import Config
from .corpus import SceneRecord, Vocabulary, build_vocab, corpus_captions
from .geometry import GeometryError
from .losses import xe_from_logits, xe_loss  # noqa: F401  (re-exported)
from .model import CaptionModel, GraphUnit, fit_relation_classifier, fit_spatial_bins, relation_vocab_of
from .optim import Adam, NumericalError, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float

    def line(self) -> str:
        # wall time goes to the logger only, so equal runs give equal files
        return f"{self.epoch}\t{self.train_loss:.10f}\t{self.val_loss:.10f}\n"


@dataclass
class TrainResult:
    model: CaptionModel
    history: list[EpochStats] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def metrics_log(self) -> str:
        header = self.model.cfg.echo() + "# epoch\ttrain_loss\tval_loss\n"
        return header + "".join(h.line() for h in self.history)


def split_train_val(records: Sequence[SceneRecord], fraction: float, seed: int) -> tuple[list[SceneRecord], list[SceneRecord]]:
    if fraction <= 0 or len(records) < 2:
        return list(records), []
    rng = np.random.default_rng([seed, 3])
    order = rng.permutation(len(records))
    n_val = max(1, int(round(fraction * len(records))))
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return [records[i] for i in train], [records[i] for i in val]


def build_model(records: Sequence[SceneRecord], cfg: Config, vocab: Vocabulary | None = None) -> CaptionModel:
    """Fit the preprocessing stages (bins, relation classifier) and initialise a model."""
    if not records:
        raise ValueError("training corpus is empty")
    vocab = vocab or build_vocab(corpus_captions(records), cfg.min_count)
    rel_vocab = relation_vocab_of(records)
    gmm = relcls = None
    if cfg.gates and cfg.use_spatial:
        try:
            gmm = fit_spatial_bins(records, cfg)
        except GeometryError as exc:
            # tiny corpora: leave the spatial gate inputs at zero
            log.warning("spatial bins disabled: %s", exc)
    if cfg.gates and cfg.use_semantic and rel_vocab.names:
        relcls = fit_relation_classifier(records, rel_vocab, cfg)
    return CaptionModel(cfg, vocab, len(records[0].regions[0].feature), rel_vocab, gmm, relcls)


def _batches(units: Sequence[GraphUnit], batch_size: int, order: np.ndarray) -> list[list[GraphUnit]]:
    out, cur, count = [], [], 0
    for k in order:
        cur.append(units[k])
        count += len(units[k].targets)
        if count >= batch_size:
            out.append(cur)
            cur, count = [], 0
    if cur:
        out.append(cur)
    return out


def evaluate_loss(model: CaptionModel, records: Sequence[SceneRecord], units: Sequence[GraphUnit] | None = None) -> float:
    """Token-weighted teacher-forced XE over ``records``."""
    if not records:
        return float("nan")
    units = units if units is not None else model.build_units(records)
    total, count = 0.0, 0
    with T.no_grad():
        for chunk in _batches(units, model.cfg.batch_size, np.arange(len(units))):
            loss, n = model.batch_loss(model.make_batch(chunk, records))
            total += loss.item() * n
            count += n
    return total / max(count, 1)


def train(
    records: Sequence[SceneRecord],
    cfg: Config,
    val_records: Sequence[SceneRecord] | None = None,
    vocab: Vocabulary | None = None,
    model: CaptionModel | None = None,
    log_path: str | Path | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Adam on teacher-forced XE; one metrics line per epoch.

    Stops at ``cfg.epochs`` or when the validation loss has not improved by
    ``cfg.min_delta`` for ``cfg.patience`` epochs.  With ``cfg.keep_best`` the
    parameters from the best validation epoch are restored at the end.
    ``max_steps`` caps the number of optimizer steps (used for capacity checks).
    """
    if val_records is None:
        records, val_records = split_train_val(records, cfg.val_fraction, cfg.seed)
    model = model or build_model(records, cfg, vocab)
    units = model.build_units(records)
    val_units = model.build_units(val_records) if val_records else None
    params = model.params()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 5])
    ctx_rng = np.random.default_rng([cfg.seed, 6])
    regroup = cfg.shuffle_contexts and cfg.level != "object"
    result = TrainResult(model)
    best, stale, steps = np.inf, 0, 0
    snapshot: dict[str, np.ndarray] | None = None
    snap_val = np.inf
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if fh:
            fh.write(cfg.echo() + "# epoch\ttrain_loss\tval_loss\n")
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            total, count = 0.0, 0
            if regroup and epoch > 1:
                units = model.build_units(records, ctx_rng)
            for chunk in _batches(units, cfg.batch_size, rng.permutation(len(units))):
                opt.zero_grad()
                loss, n = model.batch_loss(model.make_batch(chunk, records))
                if not np.isfinite(loss.item()):
                    raise NumericalError(f"loss is {loss.item()} at epoch {epoch} (seed={cfg.seed}, config: {dict(cfg.items())})")
                loss.backward()
                if cfg.clip_norm > 0:
                    clip_grad_norm(params, cfg.clip_norm)
                opt.step()
                result.step_losses.append(loss.item())
                total += loss.item() * n
                count += n
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            val = evaluate_loss(model, val_records, val_units) if val_records else float("nan")
            stats = EpochStats(epoch, total / max(count, 1), val, time.perf_counter() - t0)
            result.history.append(stats)
            if fh:
                fh.write(stats.line())
                fh.flush()
            log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, stats.train_loss, stats.val_loss, stats.wall_seconds)
            if max_steps is not None and steps >= max_steps:
                break
            if val_records:
                if cfg.keep_best and val < snap_val:
                    snap_val = val
                    snapshot = {k: p.data.copy() for k, p in params.items()}
                    result.best_epoch = epoch
                if val < best - cfg.min_delta:
                    best, stale = val, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break
    finally:
        if fh:
            fh.close()
    if snapshot is not None:
        for k, p in params.items():
            p.data[...] = snapshot[k]
    return result
