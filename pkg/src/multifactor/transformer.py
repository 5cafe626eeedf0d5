"""Pre-LN encoder-decoder transformer.

Training runs through the tape ops in :mod:`multifactor.numerics` (teacher
forcing over whole target sequences).  Inference uses a separate plain-numpy
incremental decoder with a self-attention cache; the two paths are checked
against each other in the tests.

Cross-attention keys/values are computed once per source and handed to the
decoder as a ``memory`` list, one (K, V) pair per decoder layer.  The PET
model plugs its fused keys in through that seam.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor


class LengthError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    max_sequence_length: int = 160
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    dropout: float = 0.1
    d_k: int = 0
    d_v: int = 0

    def __post_init__(self):
        if not self.d_k:
            self.d_k = self.d_model // max(self.num_heads, 1)
        if not self.d_v:
            self.d_v = self.d_k
        self.validate()

    def validate(self) -> None:
        dims = (self.vocab_size, self.d_model, self.num_heads, self.d_ff, self.encoder_layers,
                self.decoder_layers, self.max_sequence_length, self.d_k, self.d_v)
        if min(dims) <= 0:
            raise ValueError("model dimensions must be positive")
        if self.d_model != self.num_heads * self.d_k or self.d_model != self.num_heads * self.d_v:
            raise ValueError(f"d_model={self.d_model} must equal num_heads*d_k ({self.num_heads}*{self.d_k})")
        if max(self.pad_id, self.bos_id, self.eos_id) >= self.vocab_size:
            raise ValueError("special token ids must be < vocab_size")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            k = k.strip()
            if k not in types:
                raise ValueError(f"unknown model config key {k!r}")
            kw[k] = float(v) if k == "dropout" else int(v)
        return cls(**kw)


@dataclass
class DecodeResult:
    tokens: list[int]
    step_logprobs: list[float] = field(default_factory=list)
    score: float = 0.0
    normalized_score: float = 0.0
    finished: bool = True


Params = dict[str, Tensor]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _attn_params(p: dict, prefix: str, c: ModelConfig, rng) -> None:
    d = c.d_model
    for w in ("W_q", "W_k", "W_v", "W_o"):
        p[f"{prefix}.{w}"] = _xavier(rng, d, d)
    p[f"{prefix}.b_o"] = np.zeros(d)


def _ln_params(p: dict, prefix: str, d: int) -> None:
    p[f"{prefix}.gain"] = np.ones(d)
    p[f"{prefix}.bias"] = np.zeros(d)


def _ffn_params(p: dict, prefix: str, c: ModelConfig, rng) -> None:
    p[f"{prefix}.W1"] = _xavier(rng, c.d_model, c.d_ff)
    p[f"{prefix}.b1"] = np.zeros(c.d_ff)
    p[f"{prefix}.W2"] = _xavier(rng, c.d_ff, c.d_model)
    p[f"{prefix}.b2"] = np.zeros(c.d_model)


def init_params(config: ModelConfig, seed: int) -> Params:
    """Seeded vanilla parameters; creation order is fixed and part of the contract."""
    c, rng = config, np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    p["embed.token"] = rng.normal(0.0, 0.02, size=(c.vocab_size, c.d_model))
    p["encoder.position"] = rng.normal(0.0, 0.02, size=(c.max_sequence_length, c.d_model))
    p["decoder.position"] = rng.normal(0.0, 0.02, size=(c.max_sequence_length, c.d_model))
    for i in range(c.encoder_layers):
        pre = f"encoder.layer{i}"
        _ln_params(p, f"{pre}.ln1", c.d_model)
        _attn_params(p, f"{pre}.self_attn", c, rng)
        _ln_params(p, f"{pre}.ln2", c.d_model)
        _ffn_params(p, f"{pre}.ffn", c, rng)
    _ln_params(p, "encoder.final_ln", c.d_model)
    for i in range(c.decoder_layers):
        pre = f"decoder.layer{i}"
        _ln_params(p, f"{pre}.ln1", c.d_model)
        _attn_params(p, f"{pre}.self_attn", c, rng)
        _ln_params(p, f"{pre}.ln2", c.d_model)
        _attn_params(p, f"{pre}.cross_attn", c, rng)
        _ln_params(p, f"{pre}.ln3", c.d_model)
        _ffn_params(p, f"{pre}.ffn", c, rng)
    _ln_params(p, "decoder.final_ln", c.d_model)
    p["decoder.out_proj.W"] = _xavier(rng, c.d_model, c.vocab_size)
    p["decoder.out_proj.b"] = np.zeros(c.vocab_size)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def count_parameters(params: Params) -> int:
    return sum(t.size for t in params.values())


def params_from_arrays(arrays: dict[str, np.ndarray]) -> Params:
    return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def _as_batch(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    return arr[None, :] if arr.ndim == 1 else arr


def _as_mask(mask) -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    return m[None, :] if m.ndim == 1 else m


def _check_ids(ids: np.ndarray, c: ModelConfig) -> None:
    if ids.shape[1] > c.max_sequence_length:
        raise LengthError(f"sequence length {ids.shape[1]} exceeds max_sequence_length {c.max_sequence_length}")
    if ids.size and (ids.min() < 0 or ids.max() >= c.vocab_size):
        raise DimensionError(f"token id outside [0, {c.vocab_size})")


# ---------------------------------------------------------------------------
# tape (training / teacher-forced) path
# ---------------------------------------------------------------------------


def _self_attention(x: Tensor, p: Params, pre: str, c: ModelConfig, mask) -> Tensor:
    q = nx.linear(x, p[f"{pre}.W_q"])
    k = nx.linear(x, p[f"{pre}.W_k"])
    v = nx.linear(x, p[f"{pre}.W_v"])
    o, _ = nx.attention(q, k, v, mask, c.num_heads)
    return nx.linear(o, p[f"{pre}.W_o"], p[f"{pre}.b_o"])


def _ffn(x: Tensor, p: Params, pre: str) -> Tensor:
    h = nx.relu(nx.linear(x, p[f"{pre}.W1"], p[f"{pre}.b1"]))
    return nx.linear(h, p[f"{pre}.W2"], p[f"{pre}.b2"])


def _ln(x: Tensor, p: Params, pre: str) -> Tensor:
    return nx.layer_norm(x, p[f"{pre}.gain"], p[f"{pre}.bias"])


def encode(token_ids, pad_mask, config: ModelConfig, params: Params, rng=None) -> Tensor:
    """Encoder hidden states H, shape [B, T_x, d] (or [T_x, d] for 1-D input).

    ``pad_mask`` is True at real tokens.  Padded keys are never attended to.
    """
    c = config
    single = np.asarray(token_ids).ndim == 1
    ids = _as_batch(token_ids)
    mask = _as_mask(pad_mask)
    if mask.shape != ids.shape:
        raise DimensionError(f"pad mask shape {mask.shape} != ids shape {ids.shape}")
    _check_ids(ids, c)
    T = ids.shape[1]
    p_drop = c.dropout if rng is not None else 0.0
    x = nx.embedding(params["embed.token"], ids)
    x = nx.add(x, nx.embedding(params["encoder.position"], np.arange(T)))
    x = nx.dropout(x, p_drop, rng)
    attn_mask = mask[:, None, :]
    for i in range(c.encoder_layers):
        pre = f"encoder.layer{i}"
        h = _self_attention(_ln(x, params, f"{pre}.ln1"), params, f"{pre}.self_attn", c, attn_mask)
        x = nx.add(x, nx.dropout(h, p_drop, rng))
        h = _ffn(_ln(x, params, f"{pre}.ln2"), params, f"{pre}.ffn")
        x = nx.add(x, nx.dropout(h, p_drop, rng))
    H = _ln(x, params, "encoder.final_ln")
    if single:
        H = nx.reshape(H, H.shape[1:])
    return H


KeyFn = Callable[[int, Tensor, Tensor], Tensor]


def plain_keys(layer: int, H: Tensor, W_k: Tensor) -> Tensor:
    return nx.linear(H, W_k)


def cross_memory(H: Tensor, config: ModelConfig, params: Params, key_fn: KeyFn = plain_keys) -> list[tuple[Tensor, Tensor]]:
    """Per-decoder-layer cross-attention (K, V) built from encoder states."""
    mem = []
    for i in range(config.decoder_layers):
        pre = f"decoder.layer{i}.cross_attn"
        K = key_fn(i, H, params[f"{pre}.W_k"])
        V = nx.linear(H, params[f"{pre}.W_v"])
        mem.append((K, V))
    return mem


def decode(y_in, memory, src_mask, config: ModelConfig, params: Params, rng=None,
           return_attention: bool = False):
    """Teacher-forced decoder logits [B, T_y, V] for the input prefix ``y_in``.

    With ``return_attention`` also returns the cross-attention probability
    arrays, one [B, h, T_y, T_x] array per decoder layer.
    """
    c = config
    ids = _as_batch(y_in)
    _check_ids(ids, c)
    B, T = ids.shape
    p_drop = c.dropout if rng is not None else 0.0
    x = nx.embedding(params["embed.token"], ids)
    x = nx.add(x, nx.embedding(params["decoder.position"], np.arange(T)))
    x = nx.dropout(x, p_drop, rng)
    self_mask = causal_mask(T)[None, :, :]
    cross_mask = _as_mask(src_mask)[:, None, :]
    probs = []
    for i in range(c.decoder_layers):
        pre = f"decoder.layer{i}"
        h = _self_attention(_ln(x, params, f"{pre}.ln1"), params, f"{pre}.self_attn", c, self_mask)
        x = nx.add(x, nx.dropout(h, p_drop, rng))
        hq = nx.linear(_ln(x, params, f"{pre}.ln2"), params[f"{pre}.cross_attn.W_q"])
        K, V = memory[i]
        o, pr = nx.attention(hq, K, V, cross_mask, c.num_heads)
        probs.append(pr)
        h = nx.linear(o, params[f"{pre}.cross_attn.W_o"], params[f"{pre}.cross_attn.b_o"])
        x = nx.add(x, nx.dropout(h, p_drop, rng))
        h = _ffn(_ln(x, params, f"{pre}.ln3"), params, f"{pre}.ffn")
        x = nx.add(x, nx.dropout(h, p_drop, rng))
    x = _ln(x, params, "decoder.final_ln")
    logits = nx.linear(x, params["decoder.out_proj.W"], params["decoder.out_proj.b"])
    return (logits, probs) if return_attention else logits


def cross_attention(Q, K, V, mask=None) -> np.ndarray:
    """Single-head Softmax(QKᵀ/√d_k)V on 2-D arrays; ``mask`` is [n_q, n_k] bool."""
    Q, K, V = (np.asarray(getattr(t, "data", t), dtype=np.float64) for t in (Q, K, V))
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"{K.shape[0]} keys but {V.shape[0]} values")
    if Q.shape[1] != K.shape[1]:
        raise DimensionError(f"query width {Q.shape[1]} != key width {K.shape[1]}")
    m = None if mask is None else np.asarray(mask, dtype=bool)[None]
    with nx.no_grad():
        out, _ = nx.attention(Tensor(Q[None]), Tensor(K[None]), Tensor(V[None]), m, 1)
    return out.data[0]


# ---------------------------------------------------------------------------
# numpy inference path
# ---------------------------------------------------------------------------


@dataclass
class Source:
    """Encoded source ready for decoding: per-layer (K, V) arrays and key mask."""

    memory: list[tuple[np.ndarray, np.ndarray]]
    mask: np.ndarray  # [B, T_x] bool

    @property
    def batch(self) -> int:
        return self.mask.shape[0]

    def select(self, rows: np.ndarray) -> "Source":
        return Source([(k[rows], v[rows]) for k, v in self.memory], self.mask[rows])


def prepare_source(token_ids, pad_mask, config: ModelConfig, params: Params) -> Source:
    with nx.no_grad():
        H = encode(_as_batch(token_ids), _as_mask(pad_mask), config, params)
        mem = cross_memory(H, config, params)
    return Source([(k.data, v.data) for k, v in mem], _as_mask(pad_mask))


def _np_ln(x, p, pre, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * p[f"{pre}.gain"].data + p[f"{pre}.bias"].data


def _np_attend(q, K, V, mask, h):
    """q [B, h*dk] single query; K, V [B, T, h*dk]; mask [B, T] or None."""
    B, T, w = K.shape
    dk = w // h
    qh = q.reshape(B, h, 1, dk)
    Kh = K.reshape(B, T, h, dk).transpose(0, 2, 1, 3)
    Vh = V.reshape(B, T, h, V.shape[2] // h).transpose(0, 2, 1, 3)
    s = (qh @ Kh.transpose(0, 1, 3, 2)) / math.sqrt(dk)
    if mask is not None:
        s = np.where(mask[:, None, None, :], s, -np.inf)
    pr = nx.softmax_array(s, -1)
    return (pr @ Vh).reshape(B, -1)


class DecoderCache:
    """Self-attention keys/values for the already-decoded prefix."""

    def __init__(self, config: ModelConfig, batch: int):
        d = config.d_model
        self.k = [np.zeros((batch, 0, d)) for _ in range(config.decoder_layers)]
        self.v = [np.zeros((batch, 0, d)) for _ in range(config.decoder_layers)]

    @property
    def length(self) -> int:
        return self.k[0].shape[1]

    def reorder(self, rows: np.ndarray) -> None:
        self.k = [k[rows] for k in self.k]
        self.v = [v[rows] for v in self.v]


def decode_step(tokens, source: Source, cache: DecoderCache, config: ModelConfig, params: Params) -> np.ndarray:
    """Feed one token per row, extend the cache, return next-token logits [B, V]."""
    c, p = config, params
    pos = cache.length
    if pos >= c.max_sequence_length:
        raise LengthError(f"prefix exceeds max_sequence_length {c.max_sequence_length}")
    tok = np.asarray(tokens, dtype=np.int64).reshape(-1)
    x = p["embed.token"].data[tok] + p["decoder.position"].data[pos]
    for i in range(c.decoder_layers):
        pre = f"decoder.layer{i}"
        h = _np_ln(x, p, f"{pre}.ln1")
        sa = f"{pre}.self_attn"
        q = h @ p[f"{sa}.W_q"].data
        cache.k[i] = np.concatenate([cache.k[i], (h @ p[f"{sa}.W_k"].data)[:, None]], axis=1)
        cache.v[i] = np.concatenate([cache.v[i], (h @ p[f"{sa}.W_v"].data)[:, None]], axis=1)
        o = _np_attend(q, cache.k[i], cache.v[i], None, c.num_heads)
        x = x + o @ p[f"{sa}.W_o"].data + p[f"{sa}.b_o"].data
        ca = f"{pre}.cross_attn"
        q = _np_ln(x, p, f"{pre}.ln2") @ p[f"{ca}.W_q"].data
        K, V = source.memory[i]
        o = _np_attend(q, K, V, source.mask, c.num_heads)
        x = x + o @ p[f"{ca}.W_o"].data + p[f"{ca}.b_o"].data
        h = _np_ln(x, p, f"{pre}.ln3")
        f = np.maximum(h @ p[f"{pre}.ffn.W1"].data + p[f"{pre}.ffn.b1"].data, 0.0)
        x = x + f @ p[f"{pre}.ffn.W2"].data + p[f"{pre}.ffn.b2"].data
    x = _np_ln(x, p, "decoder.final_ln")
    return x @ p["decoder.out_proj.W"].data + p["decoder.out_proj.b"].data


def _log_softmax(z: np.ndarray, banned: list[int]) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    lp = z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    if banned:
        lp[..., banned] = -np.inf
    return lp


def _banned(c: ModelConfig) -> list[int]:
    return sorted({c.pad_id, c.bos_id})


def greedy_decode_batch(source: Source, config: ModelConfig, params: Params, max_len: int) -> list[DecodeResult]:
    c = config
    B = source.batch
    max_len = min(max_len, c.max_sequence_length)
    cache = DecoderCache(c, B)
    out = [DecodeResult([]) for _ in range(B)]
    alive = np.ones(B, dtype=bool)
    tok = np.full(B, c.bos_id)
    banned = _banned(c)
    for _ in range(max_len):
        lp = _log_softmax(decode_step(tok, source, cache, c, params), banned)
        nxt = lp.argmax(axis=-1)
        for b in np.flatnonzero(alive):
            r = out[b]
            r.tokens.append(int(nxt[b]))
            r.step_logprobs.append(float(lp[b, nxt[b]]))
            if nxt[b] == c.eos_id:
                alive[b] = False
        tok = nxt
        if not alive.any():
            break
    for b, r in enumerate(out):
        r.finished = bool(r.tokens) and r.tokens[-1] == c.eos_id
        r.score = float(sum(r.step_logprobs))
        r.normalized_score = r.score / max(len(r.tokens), 1)
    return out


def greedy_decode(source: Source, config: ModelConfig, params: Params, max_len: int) -> DecodeResult:
    if source.batch != 1:
        raise ValueError("greedy_decode takes a single source; use greedy_decode_batch")
    return greedy_decode_batch(source, config, params, max_len)[0]


def beam_search(source: Source, config: ModelConfig, params: Params, width: int, max_len: int,
                alpha: float = 1.0) -> list[DecodeResult]:
    """Beam search over one source.

    Each step ranks every expansion of the live beams by cumulative log
    probability and keeps the best ``width``; those ending in eos are moved to
    the finished pool, the rest stay live.  Hypotheses still live at
    ``max_len`` are finished unterminated.  Finished hypotheses are ranked by
    ``score / len**alpha``; ties go to earlier completion, then to the
    lexicographically smaller token sequence.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if source.batch != 1:
        raise ValueError("beam_search takes a single source")
    c = config
    max_len = min(max_len, c.max_sequence_length)
    banned = _banned(c)
    cache = DecoderCache(c, 1)
    src = source
    live: list[tuple[list[int], list[float]]] = [([], [])]
    tok = np.array([c.bos_id])
    finished: list[tuple[float, int, list[int], list[float], bool]] = []
    for step in range(1, max_len + 1):
        lp = _log_softmax(decode_step(tok, src, cache, c, params), banned)
        base = np.array([sum(s) for _, s in live])
        total = base[:, None] + lp
        V = total.shape[1]
        flat = total.reshape(-1)
        finite = np.flatnonzero(np.isfinite(flat))
        # stable order: score desc, then (beam, token) index for determinism
        order = finite[np.lexsort((finite, -flat[finite]))][:width]
        new_live, rows, toks = [], [], []
        for idx in order:
            b, t = divmod(int(idx), V)
            seq = live[b][0] + [t]
            steps = live[b][1] + [float(lp[b, t])]
            if t == c.eos_id or step == max_len:
                finished.append((float(flat[idx]), step, seq, steps, t == c.eos_id))
            else:
                new_live.append((seq, steps))
                rows.append(b)
                toks.append(t)
        if not new_live:
            break
        live = new_live
        rows_a = np.array(rows)
        cache.reorder(rows_a)
        if src.batch != len(rows):
            src = source.select(np.zeros(len(rows), dtype=np.int64))
        tok = np.array(toks)
    results = []
    for score, step, seq, steps, done in finished:
        norm = score / (len(seq) ** alpha) if alpha else score
        results.append(DecodeResult(seq, steps, float(sum(steps)), norm, done))
    results.sort(key=lambda r: (-r.normalized_score, len(r.tokens), r.tokens))
    return results[:width]


def teacher_forced_logprob(tokens: list[int], source_ids, pad_mask, config: ModelConfig, params: Params,
                           memory_fn=None) -> float:
    """Log-probability of a complete output sequence under the tape path."""
    c = config
    y_in = [c.bos_id] + list(tokens[:-1])
    with nx.no_grad():
        if memory_fn is None:
            H = encode(_as_batch(source_ids), _as_mask(pad_mask), c, params)
            mem = cross_memory(H, c, params)
        else:
            mem = memory_fn()
        logits = decode(np.array([y_in]), mem, _as_mask(pad_mask), c, params).data[0]
    lp = _log_softmax(logits, _banned(c))
    return float(sum(lp[i, t] for i, t in enumerate(tokens)))
