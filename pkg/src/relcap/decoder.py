"""Autoregressive caption decoder.

Post-norm layers of masked self-attention, cross-attention over the
encoder rows, and a position-wise feed-forward block.  Sinusoidal position
codes are added on the token side only, so cross-attention is invariant to
the order of the memory rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

NEG_INF = -1e9


@dataclass
class DecoderConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    max_len: int = 16

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")


def sinusoid_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def attention(q, k, v, mask=None) -> T.Tensor:
    """softmax(q k^T / sqrt(d_head) + mask) v over the last two axes.

    ``mask`` is boolean, True where attention is forbidden.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise T.ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = (q @ T.transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = T.masked_fill(scores, np.broadcast_to(mask, scores.shape), NEG_INF)
    return T.softmax(scores, axis=-1) @ v


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention:
    def __init__(self, prefix: str, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64):
        self.h = n_heads
        self.dh = d_model // n_heads
        lim = 1.0 / np.sqrt(d_model)
        self.p = {}
        for name in ("q", "k", "v", "o"):
            self.p[name] = T.Parameter(rng.uniform(-lim, lim, (d_model, d_model)).astype(dtype), f"{prefix}/w{name}")
            self.p["b" + name] = T.Parameter(np.zeros(d_model, dtype=dtype), f"{prefix}/b{name}")

    def params(self) -> dict[str, T.Tensor]:
        return {t.name: t for t in self.p.values()}

    def split(self, x: T.Tensor) -> T.Tensor:
        # (..., t, d) -> (..., h, t, dh)
        lead = x.shape[:-2]
        x = x.reshape(*lead, x.shape[-2], self.h, self.dh)
        nd = x.ndim
        return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    def merge(self, x: T.Tensor) -> T.Tensor:
        nd = x.ndim
        x = T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
        return x.reshape(*x.shape[:-2], self.h * self.dh)

    def project_kv(self, x) -> tuple[T.Tensor, T.Tensor]:
        p = self.p
        return self.split(x @ p["k"] + p["bk"]), self.split(x @ p["v"] + p["bv"])

    def __call__(self, x, k: T.Tensor, v: T.Tensor, mask=None) -> T.Tensor:
        p = self.p
        q = self.split(x @ p["q"] + p["bq"])
        ctx = attention(q, k, v, mask)
        return self.merge(ctx) @ p["o"] + p["bo"]


class DecoderLayer:
    def __init__(self, prefix: str, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float64):
        d = cfg.d_model
        self.self_attn = MultiHeadAttention(f"{prefix}/self", d, cfg.n_heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(f"{prefix}/cross", d, cfg.n_heads, rng, dtype)
        lim1, lim2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(cfg.d_ff)
        self.p = {
            "w1": T.Parameter(rng.uniform(-lim1, lim1, (d, cfg.d_ff)).astype(dtype), f"{prefix}/ffn/w1"),
            "b1": T.Parameter(np.zeros(cfg.d_ff, dtype=dtype), f"{prefix}/ffn/b1"),
            "w2": T.Parameter(rng.uniform(-lim2, lim2, (cfg.d_ff, d)).astype(dtype), f"{prefix}/ffn/w2"),
            "b2": T.Parameter(np.zeros(d, dtype=dtype), f"{prefix}/ffn/b2"),
        }
        for k in (1, 2, 3):
            self.p[f"g{k}"] = T.Parameter(np.ones(d, dtype=dtype), f"{prefix}/ln{k}/gain")
            self.p[f"s{k}"] = T.Parameter(np.zeros(d, dtype=dtype), f"{prefix}/ln{k}/shift")

    def params(self) -> dict[str, T.Tensor]:
        out = {t.name: t for t in self.p.values()}
        out.update(self.self_attn.params())
        out.update(self.cross_attn.params())
        return out

    def __call__(self, x, self_kv, mem_kv, self_mask, mem_mask) -> T.Tensor:
        p = self.p
        a = self.self_attn(x, *self_kv, mask=self_mask)
        x = T.layer_norm(x + a, p["g1"], p["s1"])
        c = self.cross_attn(x, *mem_kv, mask=mem_mask)
        x = T.layer_norm(x + c, p["g2"], p["s2"])
        f = T.relu(x @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
        return T.layer_norm(x + f, p["g3"], p["s3"])


@dataclass(frozen=True)
class DecoderState:
    """Prefix plus per-layer self-attention keys/values (one example)."""

    tokens: tuple[int, ...]
    self_kv: tuple[tuple[np.ndarray, np.ndarray], ...]
    mem_kv: tuple[tuple[np.ndarray, np.ndarray], ...]
    mem_mask: np.ndarray | None
    logprobs: np.ndarray  # next-token log-distribution given ``tokens``


class TransformerDecoder:
    def __init__(self, cfg: DecoderConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 23])
        d = cfg.d_model
        self.embed = T.Parameter(rng.normal(0.0, 1.0, (cfg.vocab_size, d)).astype(dtype), "dec/embed")
        self.layers = [DecoderLayer(f"dec/{l}", cfg, rng, dtype) for l in range(cfg.n_layers)]
        # output layer starts at zero: the initial next-token distribution is uniform
        self.out_w = T.Parameter(np.zeros((d, cfg.vocab_size), dtype=dtype), "dec/out_w")
        self.out_b = T.Parameter(np.zeros(cfg.vocab_size, dtype=dtype), "dec/out_b")
        self.pe = sinusoid_table(cfg.max_len + 1, d).astype(dtype)

    def params(self) -> dict[str, T.Tensor]:
        out = {self.embed.name: self.embed}
        for layer in self.layers:
            out.update(layer.params())
        out[self.out_w.name] = self.out_w
        out[self.out_b.name] = self.out_b
        return out

    # -- full (teacher-forced) pass -------------------------------------------
    def logits(self, tokens, memory, mem_mask=None) -> T.Tensor:
        """Next-token logits at every prefix position.

        ``tokens`` (..., t) ints, ``memory`` (..., k, d); ``mem_mask`` (..., k)
        is True on padding rows.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        memory = T.as_tensor(memory)
        t = tokens.shape[-1]
        if t == 0:
            raise ValueError("empty prefix")
        if t > self.cfg.max_len:
            raise ValueError(f"prefix length {t} exceeds max_len={self.cfg.max_len}")
        x = T.embedding(self.embed, tokens) + self.pe[:t]
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)
        mmask = None if mem_mask is None else np.asarray(mem_mask, dtype=bool)[..., None, None, :]
        for layer in self.layers:
            self_kv = layer.self_attn.project_kv(x)
            mem_kv = layer.cross_attn.project_kv(memory)
            x = layer(x, self_kv, mem_kv, causal, mmask)
        return x @ self.out_w + self.out_b

    def distributions(self, tokens, memory, mem_mask=None) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.logits(tokens, memory, mem_mask), axis=-1).data

    def decode_step(self, prefix, memory, mem_mask=None) -> np.ndarray:
        """Next-token distribution after ``prefix`` (recomputed from scratch)."""
        return self.distributions(np.asarray(prefix)[None], T.as_tensor(memory).data[None], None if mem_mask is None else np.asarray(mem_mask)[None])[0, -1]

    # -- incremental decoding ----------------------------------------------------
    def start(self, memory, bos_id: int, mem_mask=None) -> DecoderState:
        mem = T.as_tensor(memory).data
        with T.no_grad():
            mem_kv = tuple(tuple(a.data for a in layer.cross_attn.project_kv(T.Tensor(mem))) for layer in self.layers)
        empty = tuple((None, None) for _ in self.layers)
        state = DecoderState((), empty, mem_kv, None if mem_mask is None else np.asarray(mem_mask, dtype=bool), np.zeros(0))
        return self.advance(state, bos_id)

    def advance(self, state: DecoderState, token: int) -> DecoderState:
        """Append ``token`` and compute the next distribution using the cache."""
        pos = len(state.tokens)
        if pos >= self.cfg.max_len:
            raise ValueError(f"prefix length {pos + 1} exceeds max_len={self.cfg.max_len}")
        mmask = None if state.mem_mask is None else state.mem_mask[None, None, :]
        with T.no_grad():
            x = T.embedding(self.embed, np.array([token])) + self.pe[pos : pos + 1]
            new_kv = []
            for layer, (pk, pv), mem_kv in zip(self.layers, state.self_kv, state.mem_kv):
                k, v = layer.self_attn.project_kv(x)
                if pk is not None:
                    k = T.Tensor(np.concatenate([pk, k.data], axis=-2))
                    v = T.Tensor(np.concatenate([pv, v.data], axis=-2))
                new_kv.append((k.data, v.data))
                x = layer(x, (k, v), tuple(T.Tensor(a) for a in mem_kv), None, mmask)
            logp = T.log_softmax(x @ self.out_w + self.out_b, axis=-1).data[0]
        return DecoderState(state.tokens + (int(token),), tuple(new_kv), state.mem_kv, state.mem_mask, logp)
