"""Teacher-forced cross-entropy."""

from __future__ import annotations

import numpy as np

from . import tensor as T


def _check_targets(targets: np.ndarray, vocab_size: int) -> None:
    if targets.size and (targets.min() < 0 or targets.max() >= vocab_size):
        bad = targets[(targets < 0) | (targets >= vocab_size)][0]
        raise ValueError(f"target id {int(bad)} outside vocabulary of size {vocab_size}")


def xe_loss(distributions, targets, pad_id: int = 0) -> T.Tensor:
    """Negative mean log-probability of the non-pad targets.

    ``distributions`` (..., |V|) holds probabilities, ``targets`` (...) ids.
    """
    dist = T.as_tensor(distributions)
    targets = np.asarray(targets, dtype=np.int64)
    _check_targets(targets, dist.shape[-1])
    keep = targets != pad_id
    logp = T.log(T.pick(dist, targets) + T.Tensor((~keep).astype(dist.dtype)))
    return -(T.mul(logp, keep.astype(dist.dtype)).sum() * (1.0 / max(int(keep.sum()), 1)))


def xe_from_logits(logits, targets, pad_id: int = 0) -> T.Tensor:
    """Same quantity as :func:`xe_loss`, computed stably from logits."""
    logits = T.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    _check_targets(targets, logits.shape[-1])
    keep = (targets != pad_id).astype(logits.dtype)
    logp = T.pick(T.log_softmax(logits, axis=-1), targets)
    return -(T.mul(logp, keep).sum() * (1.0 / max(float(keep.sum()), 1.0)))
