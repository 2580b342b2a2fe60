"""Flat ``key=value`` configuration.

Every default used by the pipeline lives here.  Full-scale runs use
D_v=2048, K=36, d_model=512, batch 1024.  ``beta1``/``beta2`` are Adam's
moment decays; no weight decay is applied.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "RELCAP_"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 0
    dtype: str = "float64"
    # graph
    level: str = "object"
    hierarchy_mode: str = "structured"
    scene_nodes: bool = False
    context_size: int = 4
    # regroup same-label images each epoch so contexts cannot be memorised
    shuffle_contexts: bool = True
    k_max: int = 36
    # spatial bins
    gmm_m: int = 8
    gmm_covariance: str = "diag"
    gmm_n_init: int = 4
    # semantic relations
    relcls_hidden: int = 256
    relcls_epochs: int = 30
    relcls_lr: float = 1e-3
    relcls_batch: int = 64
    d_rel: int = 16
    # gate logit = gate_scale * (w . e + b); larger values let Adam's
    # bounded steps move gates across (0, 1) within a short budget
    gate_scale: float = 10.0
    soft_relation: bool = False
    # encoder
    gates: bool = True
    use_spatial: bool = True
    use_semantic: bool = True
    gcn_layers: int = 2
    d_model: int = 128
    # decoder
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 0  # 0 means 4 * d_model
    max_len: int = 16
    # optimisation
    lr: float = 5e-4
    beta1: float = 0.8
    beta2: float = 0.999
    batch_size: int = 32
    clip_norm: float = 0.0  # global gradient-norm cap; 0 disables
    epochs: int = 35
    patience: int = 5
    min_delta: float = 1e-4
    val_fraction: float = 0.1
    keep_best: bool = False  # restore the parameters of the best validation epoch
    # data / inference
    min_count: int = 5
    beam: int = 3

    def validate(self) -> Config:
        problems = []
        if self.level not in ("object", "image", "hierarchical"):
            problems.append(f"level must be object|image|hierarchical, got {self.level!r}")
        if self.hierarchy_mode not in ("structured", "literal"):
            problems.append(f"hierarchy_mode must be structured|literal, got {self.hierarchy_mode!r}")
        if self.gmm_covariance not in ("diag", "full"):
            problems.append("gmm_covariance must be diag|full")
        if self.dtype not in ("float64", "float32"):
            problems.append("dtype must be float64|float32")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if not 0 < self.beta1 < self.beta2 < 1:
            problems.append("need 0 < beta1 < beta2 < 1")
        if self.d_model % self.n_heads:
            problems.append("d_model must be divisible by n_heads")
        for name in ("context_size", "k_max", "gmm_m", "gmm_n_init", "gcn_layers", "n_layers", "batch_size", "max_len", "beam"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.gate_scale <= 0:
            problems.append("gate_scale must be positive")
        if self.clip_norm < 0:
            problems.append("clip_norm must be >= 0")
        if not 0 <= self.val_fraction < 1:
            problems.append("val_fraction must be in [0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def echo(self) -> str:
        return "".join(f"# {k}={_fmt(v)}\n" for k, v in self.items())

    def replace(self, **changes) -> Config:
        return dataclasses.replace(self, **changes).validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def apply(cfg: Config, pairs: Mapping[str, str]) -> Config:
    known = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(Config)}
    changes = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, raw, known[key])
    return dataclasses.replace(cfg, **changes)


def parse(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load(path: str | Path | None = None, env: Mapping[str, str] | None = None, **overrides) -> Config:
    """Defaults, then the file at ``path``, then ``RELCAP_*`` variables, then ``overrides``."""
    cfg = Config()
    if path is not None:
        cfg = apply(cfg, parse(Path(path).read_text(encoding="utf-8")))
    env = os.environ if env is None else env
    from_env = {k[len(ENV_PREFIX) :].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    cfg = apply(cfg, from_env)
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
