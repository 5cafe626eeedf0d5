"""Phrase-Enhanced Transformer.

The encoder output feeds two heads: a phrase classifier over [max ; mean]
pooled span states, and the decoder, whose cross-attention keys are shifted
per token by ``delta @ W_delta``.  ``delta`` row j is ``[1 - z, z]`` when
token j belongs to a phrase with selection value z and ``[1, 0]`` otherwise;
Q-model inputs additionally force every full-answer token to ``[0, 1]``.

Modes
-----
fine-tuned  plain transformer, no classifier, no fusion
cls+gen     classifier trained jointly, decoder untouched
one-hot     fusion with gold labels in training, rounded predictions at inference
pet         fusion with gold labels in training, soft predictions at inference
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from . import transformer as tfm
from .numerics import DimensionError, Tensor
from .transformer import ModelConfig, Params, Source

MODES = ("fine-tuned", "cls+gen", "one-hot", "pet")


class SpanError(ValueError):
    pass


@dataclass
class PhraseSpan:
    start: int
    end: int
    label: int | None = None
    probability: float | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise SpanError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def shifted(self, offset: int) -> "PhraseSpan":
        return PhraseSpan(self.start + offset, self.end + offset, self.label, self.probability)


@dataclass
class TrainingConfig:
    lam: float = 1.0
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    mode: str = "pet"
    weight_decay: float = 0.01
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


def has_classifier(mode: str) -> bool:
    return mode != "fine-tuned"


def has_fusion(mode: str) -> bool:
    return mode in ("one-hot", "pet")


def init_pet_params(config: ModelConfig, seed: int, mode: str = "pet") -> Params:
    """Vanilla parameters plus the mode's extras.

    The vanilla part is identical to ``transformer.init_params(config, seed)``;
    the extras come from an independent stream.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    params = tfm.init_params(config, seed)
    rng = np.random.default_rng([seed, 7919])
    d = config.d_model
    if has_classifier(mode):
        a = math.sqrt(6.0 / (2 * d + 2))
        params["phrase_classifier.W"] = Tensor(rng.uniform(-a, a, size=(2 * d, 2)), True, "phrase_classifier.W")
        params["phrase_classifier.b"] = Tensor(np.zeros(2), True, "phrase_classifier.b")
    if has_fusion(mode):
        for i in range(config.decoder_layers):
            name = f"decoder.layer{i}.fusion.W_delta"
            params[name] = Tensor(np.zeros((2, config.d_k)), True, name)
    return params


def param_overhead(config: ModelConfig) -> int:
    """Extra parameters of a full PET over the vanilla model."""
    d = config.d_model
    return (2 * d * 2 + 2) + config.decoder_layers * 2 * config.d_k


# ---------------------------------------------------------------------------
# phrase selection
# ---------------------------------------------------------------------------


def pool_phrase(H, span: PhraseSpan) -> np.ndarray:
    """[max ; mean] over rows start..end-1 of a single [T_x, d] state matrix."""
    Hd = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if span.end > Hd.shape[0]:
        raise SpanError(f"span [{span.start}, {span.end}) exceeds length {Hd.shape[0]}")
    with nx.no_grad():
        out = nx.pool_spans(Tensor(Hd[None]), np.array([[0, span.start, span.end]]))
    return out.data[0]


def phrase_logits(H: Tensor, span_rows: np.ndarray, params: Params) -> Tensor:
    """Two-class logits [L, 2] for spans given as (batch, start, end) rows."""
    pooled = nx.pool_spans(H, span_rows)
    return nx.linear(pooled, params["phrase_classifier.W"], params["phrase_classifier.b"])


def classify_phrases(H, spans: Sequence[PhraseSpan], params: Params) -> np.ndarray:
    """Selection probability z_i (class 1 of a 2-way softmax) for each span."""
    Hd = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if not spans:
        return np.zeros(0)
    rows = np.array([[0, s.start, s.end] for s in spans])
    with nx.no_grad():
        pr = nx.softmax(phrase_logits(Tensor(Hd[None]), rows, params), axis=-1)
    return pr.data[:, 1]


def build_delta(T_x: int, spans: Sequence[PhraseSpan], z, mode: str = "soft",
                forced: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    """Per-token fusion indicator, shape [T_x, 2].

    ``mode`` is ``"soft"`` (use z as given, e.g. predicted probabilities),
    or ``"hard"`` (round z to {0, 1}; gold labels pass through unchanged).
    ``forced`` lists [start, end) regions whose rows become [0, 1].
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if len(z) != len(spans):
        raise ValueError(f"{len(spans)} spans but {len(z)} z values")
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown delta mode {mode!r}")
    if np.any((z < 0) | (z > 1)):
        raise ValueError("z values must lie in [0, 1]")
    if mode == "hard":
        z = (z >= 0.5).astype(np.float64)
    delta = np.zeros((T_x, 2))
    delta[:, 0] = 1.0
    owner = np.full(T_x, -1)
    for i, s in enumerate(spans):
        if s.end > T_x:
            raise SpanError(f"span [{s.start}, {s.end}) exceeds length {T_x}")
        if np.any(owner[s.start : s.end] >= 0):
            raise RuntimeError(f"overlapping spans survived resolution at [{s.start}, {s.end})")
        owner[s.start : s.end] = i
        delta[s.start : s.end] = (1.0 - z[i], z[i])
    for a, b in forced:
        delta[a:b] = (0.0, 1.0)
    return delta


def fuse_keys(H: Tensor, delta, W_k: Tensor, W_delta: Tensor, num_heads: int = 1) -> Tensor:
    """K̃ = delta @ W_delta + H @ W_k, with W_delta shared across heads.

    H is [..., T_x, d]; delta is [..., T_x, 2]; W_delta is [2, d_k].
    """
    dl = delta if isinstance(delta, Tensor) else Tensor(np.asarray(delta, dtype=np.float64))
    if dl.shape[:-1] != H.shape[:-1] or dl.shape[-1] != 2:
        raise DimensionError(f"delta shape {dl.shape} does not match H {H.shape}")
    if W_delta.shape[0] != 2 or W_delta.shape[1] * num_heads != W_k.shape[1]:
        raise DimensionError(f"W_delta {W_delta.shape} incompatible with W_k {W_k.shape} over {num_heads} heads")
    base = nx.linear(H, W_k)
    bias = nx.linear(dl, W_delta if num_heads == 1 else nx.tile_cols(W_delta, num_heads))
    return nx.add(base, bias)


# ---------------------------------------------------------------------------
# batches and forward pass
# ---------------------------------------------------------------------------


@dataclass
class PetItem:
    """One collated example: input ids, target ids (without bos/eos), spans."""

    input_ids: list[int]
    target_ids: list[int]
    spans: list[PhraseSpan] = field(default_factory=list)
    forced: list[tuple[int, int]] = field(default_factory=list)
    context: tuple[int, int] = (0, 0)


@dataclass
class PetBatch:
    src: np.ndarray  # [B, T_x]
    src_mask: np.ndarray  # [B, T_x] bool
    y_in: np.ndarray  # [B, T_y] bos + target
    y_out: np.ndarray  # [B, T_y] target + eos, pad elsewhere
    span_rows: np.ndarray  # [L, 3] (b, start, end)
    labels: np.ndarray  # [L] int (-1 when unknown)
    forced: list[list[tuple[int, int]]]
    spans: list[list[PhraseSpan]]
    contexts: list[tuple[int, int]]


def collate(items: Sequence[PetItem], config: ModelConfig) -> PetBatch:
    c = config
    B = len(items)
    Tx = max(len(it.input_ids) for it in items)
    Ty = max(len(it.target_ids) for it in items) + 1
    src = np.full((B, Tx), c.pad_id, dtype=np.int64)
    mask = np.zeros((B, Tx), dtype=bool)
    y_in = np.full((B, Ty), c.pad_id, dtype=np.int64)
    y_out = np.full((B, Ty), c.pad_id, dtype=np.int64)
    rows, labels = [], []
    for b, it in enumerate(items):
        n = len(it.input_ids)
        src[b, :n] = it.input_ids
        mask[b, :n] = True
        t = list(it.target_ids)
        y_in[b, : len(t) + 1] = [c.bos_id] + t
        y_out[b, : len(t) + 1] = t + [c.eos_id]
        lo, hi = it.context
        for s in it.spans:
            if it.context != (0, 0) and not (lo <= s.start and s.end <= hi):
                raise SpanError(f"span [{s.start}, {s.end}) outside context region [{lo}, {hi})")
            rows.append((b, s.start, s.end))
            labels.append(-1 if s.label is None else int(s.label))
    return PetBatch(
        src, mask, y_in, y_out,
        np.array(rows, dtype=np.int64).reshape(-1, 3),
        np.array(labels, dtype=np.int64),
        [list(it.forced) for it in items],
        [list(it.spans) for it in items],
        [it.context for it in items],
    )


def batch_delta(batch: PetBatch, z: np.ndarray, mode: str) -> np.ndarray:
    """Stack per-example delta matrices, [B, T_x, 2]."""
    B, Tx = batch.src.shape
    out = np.empty((B, Tx, 2))
    k = 0
    for b in range(B):
        n = len(batch.spans[b])
        out[b] = build_delta(Tx, batch.spans[b], z[k : k + n], mode, batch.forced[b])
        k += n
    return out


def _key_fn(params: Params, delta: np.ndarray | None, heads: int):
    if delta is None:
        return tfm.plain_keys

    def fn(layer: int, H: Tensor, W_k: Tensor) -> Tensor:
        return fuse_keys(H, delta, W_k, params[f"decoder.layer{layer}.fusion.W_delta"], heads)

    return fn


@dataclass
class ForwardOutput:
    logits: Tensor
    phrase_logits: Tensor | None
    z: np.ndarray
    delta: np.ndarray | None
    attention: list[np.ndarray] | None = None


def pet_forward(batch: PetBatch, mode: str, params: Params, config: ModelConfig, rng=None,
                training: bool = True, return_attention: bool = False) -> ForwardOutput:
    """Generation logits and phrase logits for a batch.

    With ``training`` the fusion uses gold span labels; otherwise it uses the
    classifier's predictions (rounded in one-hot mode).  Forced full-answer
    rows apply in both phases.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    c = config
    H = tfm.encode(batch.src, batch.src_mask, c, params, rng)
    plog = None
    z = np.zeros(len(batch.labels))
    if has_classifier(mode) and len(batch.span_rows):
        plog = phrase_logits(H, batch.span_rows, params)
        z = nx.softmax_array(plog.data, -1)[:, 1]
    delta = None
    if has_fusion(mode):
        if training:
            if np.any(batch.labels < 0):
                raise ValueError("training-mode fusion needs a gold label on every span")
            delta = batch_delta(batch, batch.labels.astype(np.float64), "hard")
        else:
            delta = batch_delta(batch, z, "hard" if mode == "one-hot" else "soft")
    mem = tfm.cross_memory(H, c, params, _key_fn(params, delta, c.num_heads))
    out = tfm.decode(batch.y_in, mem, batch.src_mask, c, params, rng, return_attention=return_attention)
    if return_attention:
        logits, probs = out
        return ForwardOutput(logits, plog, z, delta, probs)
    return ForwardOutput(out, plog, z, delta)


def joint_loss(gen_logits: Tensor, targets: np.ndarray, phrase_logits_: Tensor | None,
               labels: np.ndarray, lam: float, pad_id: int = 0) -> Tensor:
    """Token CE over non-pad targets + lam * phrase CE averaged over phrases.

    Phrase CE is taken on the classifier logits, which equals CE on the
    softmax probabilities.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    V = gen_logits.shape[-1]
    gen = nx.cross_entropy(nx.reshape(gen_logits, (-1, V)), np.asarray(targets).reshape(-1), ignore_id=pad_id)
    if phrase_logits_ is None or lam == 0 or len(labels) == 0:
        return gen
    labels = np.asarray(labels)
    if len(labels) != phrase_logits_.shape[0]:
        raise ValueError(f"{phrase_logits_.shape[0]} phrases but {len(labels)} labels")
    cls = nx.cross_entropy(phrase_logits_, labels)
    return nx.add(gen, nx.scale(cls, lam))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class PreparedSource:
    source: Source
    z: np.ndarray
    delta: np.ndarray | None


def prepare_source(batch: PetBatch, mode: str, params: Params, config: ModelConfig) -> PreparedSource:
    """Encode, classify and fuse once; the result drives incremental decoding."""
    c = config
    with nx.no_grad():
        H = tfm.encode(batch.src, batch.src_mask, c, params)
        z = np.zeros(len(batch.span_rows))
        if has_classifier(mode) and len(batch.span_rows):
            z = nx.softmax_array(phrase_logits(H, batch.span_rows, params).data, -1)[:, 1]
        delta = None
        if has_fusion(mode):
            delta = batch_delta(batch, z, "hard" if mode == "one-hot" else "soft")
        mem = tfm.cross_memory(H, c, params, _key_fn(params, delta, c.num_heads))
    return PreparedSource(Source([(k.data, v.data) for k, v in mem], batch.src_mask.copy()), z, delta)


# ---------------------------------------------------------------------------
# finite-difference check on a micro model
# ---------------------------------------------------------------------------


def micro_gradient_check(seed: int = 7, mode: str = "pet", h: float = 1e-5, lam: float = 1.0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per parameter.

    Model: d=16, 2 heads, one encoder and one decoder layer; one 12-token input
    with two labelled phrases and a 5-token target.  Parameters are jittered
    away from their initial values so zero-initialised fusion weights are
    exercised too.
    """
    c = ModelConfig(vocab_size=20, d_model=16, num_heads=2, d_ff=32, encoder_layers=1, decoder_layers=1,
                    max_sequence_length=32, dropout=0.0)
    params = init_pet_params(c, seed, mode)
    rng = np.random.default_rng(seed)
    for t in params.values():
        t.data[...] = t.data + rng.normal(scale=0.1, size=t.shape)
    ids = [4, *rng.integers(7, c.vocab_size, size=2), 5, *rng.integers(7, c.vocab_size, size=8)]
    spans = [PhraseSpan(5, 7, label=1), PhraseSpan(9, 12, label=0)]
    target = list(rng.integers(7, c.vocab_size, size=5))
    batch = collate([PetItem([int(i) for i in ids], [int(t) for t in target], spans, context=(4, 12))], c)

    def loss():
        out = pet_forward(batch, mode, params, c, training=True)
        return joint_loss(out.logits, batch.y_out, out.phrase_logits, batch.labels, lam, c.pad_id)

    return nx.check_gradients(loss, params, h)
