"""Two-stage question generation: a full-answer model feeds a question model.

    p(q | c, a) ~= p(q | s*, c, a),   s* = best full answer under p(s | c, a)

Both stages are PET instances sharing one vocabulary.  ``run_ablation`` trains
the family of variants (plain fine-tuning, classifier only, hard/soft fusion,
the two-stage pipeline and its full-answer variants) on one corpus and scores
them on the test split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import lexicon, metrics
from . import numerics as nx
from . import pet
from . import transformer as tfm
from .corpus import (
    Corpus,
    DataError,
    Example,
    KBConfig,
    Vocabulary,
    assemble_input,
    dumps_jsonl,
    generate_corpus,
    tokenize,
)
from .corpus.assemble import AssembledInput
from .fullanswer import contains_run
from .numerics import NumericError
from .transformer import ModelConfig

log = logging.getLogger(__name__)

# run modes and what each one trains or reuses
MODES = ("fine-tuned", "cls+gen", "one-hot", "pet-q", "multifactor", "q-w/o-context", "q-oracle-fa",
         "q-gold-fa")
SINGLE_STAGE = {"fine-tuned": "fine-tuned", "cls+gen": "cls+gen", "pet-q": "pet", "one-hot": "pet"}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class PipelineConfig:
    # model
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    max_sequence_length: int = 160
    dropout: float = 0.1
    # optimisation
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    lam: float = 1.0
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    # decoding
    max_decode_len: int = 40
    beam_width: int = 1
    alpha: float = 1.0
    oracle_k: int = 5
    oracle_reference: str = "full_answer"  # or "question"
    # data
    corpus_size: int = 2000
    corpus_seed: int | None = None  # None: use the run seed
    kb_config: str = ""  # key=value text, see KBConfig
    include_unconvertible: bool = False
    q_context_phrases: bool = True  # Q-model classifies context phrases on top of the forced full answer

    def __post_init__(self):
        if self.oracle_reference not in ("full_answer", "question"):
            raise ConfigError("oracle_reference must be 'full_answer' or 'question'")
        for name in ("batch_size", "epochs", "max_decode_len", "beam_width", "oracle_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0 or self.lam < 0 or self.clip_norm <= 0:
            raise ConfigError("lr and clip_norm must be positive, lam non-negative")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")

    def model_config(self, vocab_size: int) -> ModelConfig:
        try:
            return ModelConfig(vocab_size=vocab_size, d_model=self.d_model, num_heads=self.num_heads,
                               d_ff=self.d_ff, encoder_layers=self.encoder_layers,
                               decoder_layers=self.decoder_layers,
                               max_sequence_length=self.max_sequence_length, dropout=self.dropout)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def kb(self) -> KBConfig:
        try:
            return KBConfig.from_text(self.kb_config)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **kw) -> "PipelineConfig":
        return PipelineConfig.from_dict({**self.to_dict(), **kw})


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Parameters plus what is needed to use them: model shape, PET mode and input layout."""

    params: tfm.Params
    model: ModelConfig
    mode: str  # pet mode
    layout: str  # "FA" | "Q" | "Q-no-context"
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    context_phrases: bool = True

    def save(self, path: str | Path) -> None:
        path = Path(path)
        nx.save(path, {k: v.data for k, v in self.params.items()})
        meta = {"model": self.model.to_text(), "mode": self.mode, "layout": self.layout,
                "context_phrases": self.context_phrases, "history": self.history, "best_epoch": self.best_epoch}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        params = tfm.params_from_arrays(nx.load(path))
        return cls(params, ModelConfig.from_text(meta["model"]), meta["mode"], meta["layout"],
                   meta.get("history", []), meta.get("best_epoch", -1), meta.get("context_phrases", True))


# ---------------------------------------------------------------------------
# data -> PET items
# ---------------------------------------------------------------------------


def build_vocab(train: Sequence[Example]) -> Vocabulary:
    """Vocabulary from the training split only."""
    return Vocabulary.build(
        tokenize(e.context) + tokenize(e.question) + tokenize(e.answer) + tokenize(e.full_answer or "")
        for e in train
    )


def make_input(example: Example, layout: str, vocab: Vocabulary, model: ModelConfig,
               fa: str | Sequence[str] | None = None, target: Sequence[str] | None = None,
               phrases: bool = True) -> AssembledInput:
    """Assembled input; ``phrases=False`` drops the context candidates (the full answer stays forced)."""
    inp = assemble_input(example, layout, vocab, fa, max_len=model.max_sequence_length, target=target)
    return inp if phrases else dataclasses.replace(inp, spans=[])


def to_item(inp: AssembledInput, target: Sequence[str], vocab: Vocabulary, max_target: int) -> pet.PetItem:
    return pet.PetItem(
        input_ids=inp.ids,
        target_ids=vocab.encode(list(target)[: max_target - 1]),
        spans=inp.spans,
        forced=[inp.full_answer] if inp.full_answer else [],
        context=inp.context or (0, 0),
    )


def fa_items(examples: Sequence[Example], vocab: Vocabulary, model: ModelConfig) -> list[pet.PetItem]:
    """x = answer + context, y = gold full answer; phrases labelled against y."""
    out = []
    for ex in examples:
        y = tokenize(ex.full_answer)
        out.append(to_item(make_input(ex, "FA", vocab, model, target=y), y, vocab, model.max_sequence_length))
    return out


def q_items(examples: Sequence[Example], vocab: Vocabulary, model: ModelConfig, layout: str,
            fas: Sequence[str | Sequence[str] | None] | None = None, phrases: bool = True) -> list[pet.PetItem]:
    """y = question; the input layout decides whether a full answer is included."""
    out = []
    for i, ex in enumerate(examples):
        y = tokenize(ex.question)
        fa = None if layout == "FA" else (fas[i] if fas is not None else ex.full_answer)
        if layout != "FA" and fa is None:
            fa = []
        inp = make_input(ex, layout, vocab, model, fa=fa, target=y, phrases=phrases)
        out.append(to_item(inp, y, vocab, model.max_sequence_length))
    return out


def training_subset(examples: Sequence[Example], include_unconvertible: bool) -> list[Example]:
    """Examples without a pseudo-gold full answer are dropped unless explicitly kept."""
    if include_unconvertible:
        return list(examples)
    return [e for e in examples if e.full_answer is not None]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _batches(n: int, size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _loss(batch: pet.PetBatch, mode: str, params, model: ModelConfig, lam: float, rng=None) -> nx.Tensor:
    out = pet.pet_forward(batch, mode, params, model, rng, training=True)
    return pet.joint_loss(out.logits, batch.y_out, out.phrase_logits, batch.labels, lam, model.pad_id)


def dev_losses(items: Sequence[pet.PetItem], mode: str, params, model: ModelConfig, lam: float,
               batch_size: int = 32) -> tuple[float, float]:
    """(joint loss, generation NLL), token-weighted means with dropout off, from one forward pass."""
    joint = nll = weight = 0.0
    with nx.no_grad():
        for idx in _batches(len(items), batch_size, None):
            batch = pet.collate([items[i] for i in idx], model)
            out = pet.pet_forward(batch, mode, params, model, training=True)
            gen = pet.joint_loss(out.logits, batch.y_out, None, batch.labels, lam, model.pad_id).item()
            total = pet.joint_loss(out.logits, batch.y_out, out.phrase_logits, batch.labels, lam,
                                   model.pad_id).item()
            n = float((batch.y_out != model.pad_id).sum())
            joint += total * n
            nll += gen * n
            weight += n
    return joint / weight, nll / weight


def evaluate_loss(items: Sequence[pet.PetItem], mode: str, params, model: ModelConfig, lam: float,
                  batch_size: int = 32) -> float:
    """Token-weighted mean joint loss with dropout off."""
    return dev_losses(items, mode, params, model, lam, batch_size)[0]


def teacher_forced_accuracy(items: Sequence[pet.PetItem], mode: str, params, model: ModelConfig,
                            batch_size: int = 32) -> tuple[float, float]:
    """(token accuracy, phrase-classification accuracy) under teacher forcing, dropout off."""
    tok_ok = tok_n = ph_ok = ph_n = 0
    with nx.no_grad():
        for idx in _batches(len(items), batch_size, None):
            batch = pet.collate([items[i] for i in idx], model)
            out = pet.pet_forward(batch, mode, params, model, training=True)
            pred = out.logits.data.argmax(-1)
            keep = batch.y_out != model.pad_id
            tok_ok += int((pred == batch.y_out)[keep].sum())
            tok_n += int(keep.sum())
            if out.phrase_logits is not None:
                ph_ok += int((out.phrase_logits.data.argmax(-1) == batch.labels).sum())
                ph_n += len(batch.labels)
    return tok_ok / max(tok_n, 1), (ph_ok / ph_n if ph_n else float("nan"))


def fit(train: Sequence[pet.PetItem], dev: Sequence[pet.PetItem], mode: str, layout: str,
        model: ModelConfig, cfg: PipelineConfig, seed: int, max_steps: int | None = None,
        on_step: Callable[[int, float], None] | None = None) -> Checkpoint:
    """AdamW with global-norm clipping; keeps the parameters of the epoch with the lowest dev generation NLL."""
    if not train:
        raise DataError("empty effective training set")
    params = pet.init_pet_params(model, seed, mode)
    state = nx.OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2]) if model.dropout > 0 else None
    best, best_loss, best_epoch, history = None, np.inf, -1, []
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        running = []
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            batch = pet.collate([train[i] for i in idx], model)
            nx.zero_grad(params)
            loss = _loss(batch, mode, params, model, cfg.lam, dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at step {step}")
            nx.backward(loss)
            nx.clip_grad_norm(params, cfg.clip_norm)
            nx.adamw_step(params, state)
            running.append(value)
            step += 1
            if on_step is not None:
                on_step(step, value)
            if max_steps is not None and step >= max_steps:
                break
        if dev:
            dev_loss, dev_nll = dev_losses(dev, mode, params, model, cfg.lam)
        else:
            dev_loss = dev_nll = float(np.mean(running))
        history.append({"epoch": epoch, "steps": step, "train_loss": float(np.mean(running)),
                        "dev_loss": dev_loss, "dev_nll": dev_nll, "seconds": round(time.perf_counter() - t0, 3)})
        log.info("epoch %d  train %.4f  dev %.4f  dev nll %.4f", epoch, history[-1]["train_loss"], dev_loss, dev_nll)
        # selection follows generation quality; the phrase term is reported but does not decide
        if dev_nll < best_loss:
            best_loss, best_epoch = dev_nll, epoch
            best = {k: v.data.copy() for k, v in params.items()}
        if max_steps is not None and step >= max_steps:
            break
    final = tfm.params_from_arrays(best) if best is not None else params
    return Checkpoint(final, model, mode, layout, history, best_epoch)


def train_fa(train: Sequence[Example], dev: Sequence[Example], vocab: Vocabulary, cfg: PipelineConfig,
             seed: int, mode: str = "pet", **kw) -> Checkpoint:
    """Full-answer model: (answer, context) -> full answer."""
    model = cfg.model_config(len(vocab))
    tr = [e for e in train if e.full_answer is not None]
    dv = [e for e in dev if e.full_answer is not None]
    log.info("FA model: %d/%d training examples have a full answer", len(tr), len(train))
    return fit(fa_items(tr, vocab, model), fa_items(dv, vocab, model), mode, "FA", model, cfg, seed, **kw)


def train_q(train: Sequence[Example], dev: Sequence[Example], vocab: Vocabulary, cfg: PipelineConfig,
            seed: int, mode: str = "pet", layout: str = "Q", fa_source: str = "gold",
            fa_ckpt: Checkpoint | None = None, **kw) -> Checkpoint:
    """Question model.

    ``layout`` "FA" trains the single-stage baseline (no full answer in the
    input); "Q" and "Q-no-context" include a full answer taken from the gold
    annotation or, with ``fa_source="generated"``, decoded by ``fa_ckpt``.
    """
    if layout not in ("FA", "Q", "Q-no-context"):
        raise ConfigError(f"unknown input layout {layout!r}")
    if fa_source not in ("gold", "generated"):
        raise ConfigError("fa_source must be 'gold' or 'generated'")
    if layout != "FA" and fa_source == "generated" and fa_ckpt is None:
        raise ConfigError("fa_source='generated' needs a trained FA checkpoint")
    model = cfg.model_config(len(vocab))
    tr = training_subset(train, cfg.include_unconvertible)
    dv = training_subset(dev, cfg.include_unconvertible)
    tr_fa = dv_fa = None
    if layout != "FA" and fa_source == "generated":
        tr_fa = [r.tokens for r in decode_full_answers(tr, fa_ckpt, vocab, cfg)]
        dv_fa = [r.tokens for r in decode_full_answers(dv, fa_ckpt, vocab, cfg)]
    phrases = layout == "FA" or cfg.q_context_phrases
    items = q_items(tr, vocab, model, layout, tr_fa, phrases)
    ck = fit(items, q_items(dv, vocab, model, layout, dv_fa, phrases), mode, layout, model, cfg, seed, **kw)
    ck.context_phrases = phrases
    return ck


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class Decoded:
    tokens: list[str]
    finished: bool
    score: float
    phrases: list[dict] = field(default_factory=list)  # per span: start, end, text, z
    importance: list[float] | None = None  # delta[:, 1] per input token


def _diagnostics(item: pet.PetItem, tokens: list[str], z: np.ndarray, delta: np.ndarray | None,
                 row: int) -> tuple[list[dict], list[float] | None]:
    phrases = [{"start": s.start, "end": s.end, "text": " ".join(tokens[s.start:s.end]), "z": float(p)}
               for s, p in zip(item.spans, z)]
    imp = None if delta is None else [float(v) for v in delta[row, : len(item.input_ids), 1]]
    return phrases, imp


def decode_items(ckpt: Checkpoint, items: Sequence[pet.PetItem], vocab: Vocabulary, cfg: PipelineConfig,
                 mode: str | None = None, width: int | None = None, batch_size: int = 32,
                 diagnostics: bool = False) -> list[list[Decoded]]:
    """Top hypotheses per item (one for greedy, up to ``width`` for beam search)."""
    mode = mode or ckpt.mode
    width = width or cfg.beam_width
    model = ckpt.model
    out: list[list[Decoded]] = []
    for idx in _batches(len(items), batch_size, None):
        chunk = [items[i] for i in idx]
        batch = pet.collate(chunk, model)
        prep = pet.prepare_source(batch, mode, ckpt.params, model)
        if width == 1:
            results = [[r] for r in tfm.greedy_decode_batch(prep.source, model, ckpt.params, cfg.max_decode_len)]
        else:
            results = [tfm.beam_search(prep.source.select(np.array([b])), model, ckpt.params, width,
                                       cfg.max_decode_len, cfg.alpha) for b in range(len(chunk))]
        k = 0
        for b, (item, hyps) in enumerate(zip(chunk, results)):
            n = len(item.spans)
            phrases, imp = [], None
            if diagnostics:
                phrases, imp = _diagnostics(item, vocab.decode(item.input_ids, strip_special=False),
                                            prep.z[k:k + n], prep.delta, b)
            k += n
            out.append([Decoded(vocab.decode([t for t in h.tokens if t != model.eos_id]), h.finished,
                                h.score, phrases, imp) for h in hyps])
    return out


def decode_full_answers(examples: Sequence[Example], fa_ckpt: Checkpoint, vocab: Vocabulary,
                        cfg: PipelineConfig, width: int = 1, diagnostics: bool = False) -> list[Decoded]:
    return [h[0] for h in decode_fa_beams(examples, fa_ckpt, vocab, cfg, width, diagnostics)]


def decode_fa_beams(examples: Sequence[Example], fa_ckpt: Checkpoint, vocab: Vocabulary, cfg: PipelineConfig,
                    width: int = 1, diagnostics: bool = False) -> list[list[Decoded]]:
    model = fa_ckpt.model
    items = [to_item(make_input(e, "FA", vocab, model), [], vocab, model.max_sequence_length) for e in examples]
    return decode_items(fa_ckpt, items, vocab, cfg, width=width, diagnostics=diagnostics)


@dataclass
class Generation:
    id: str
    question: list[str]
    full_answer: list[str] | None
    finished: bool
    fa_finished: bool | None = None
    q_input: AssembledInput | None = None
    fa_phrases: list[dict] = field(default_factory=list)
    q_phrases: list[dict] = field(default_factory=list)
    fa_importance: list[float] | None = None
    q_importance: list[float] | None = None

    def as_dict(self, diagnostics: bool = False) -> dict:
        out = {"id": self.id, "question": " ".join(self.question), "finished": self.finished}
        if self.full_answer is not None:
            out["full_answer"] = " ".join(self.full_answer)
            out["fa_finished"] = self.fa_finished
        if diagnostics:
            out["fa_phrases"] = self.fa_phrases
            out["q_phrases"] = self.q_phrases
            out["fa_importance"] = self.fa_importance
            out["q_importance"] = self.q_importance
        return out


def generate_questions(examples: Sequence[Example], q_ckpt: Checkpoint, vocab: Vocabulary, cfg: PipelineConfig,
                       fas: Sequence[Sequence[str]] | None = None, mode: str | None = None,
                       diagnostics: bool = False) -> list[Generation]:
    """Question model only; ``fas`` supplies the full answer for layouts that take one."""
    model = q_ckpt.model
    inputs, items = [], []
    for i, ex in enumerate(examples):
        fa = None if q_ckpt.layout == "FA" else list(fas[i])
        inp = make_input(ex, q_ckpt.layout, vocab, model, fa=fa, phrases=q_ckpt.context_phrases)
        inputs.append(inp)
        items.append(to_item(inp, [], vocab, model.max_sequence_length))
    hyps = decode_items(q_ckpt, items, vocab, cfg, mode=mode, diagnostics=diagnostics)
    return [Generation(ex.id, h[0].tokens, None if fas is None else list(fas[i]), h[0].finished, None, inp,
                       q_phrases=h[0].phrases, q_importance=h[0].importance)
            for i, (ex, h, inp) in enumerate(zip(examples, hyps, inputs))]


def infer(examples: Sequence[Example], fa_ckpt: Checkpoint, q_ckpt: Checkpoint, vocab: Vocabulary,
          cfg: PipelineConfig, diagnostics: bool = False) -> list[Generation]:
    """Decode the best full answer, then the question conditioned on it."""
    fa = decode_full_answers(examples, fa_ckpt, vocab, cfg, width=cfg.beam_width, diagnostics=diagnostics)
    gens = generate_questions(examples, q_ckpt, vocab, cfg, [d.tokens for d in fa], diagnostics=diagnostics)
    for g, d in zip(gens, fa):
        g.fa_finished = d.finished
        g.fa_phrases, g.fa_importance = d.phrases, d.importance
    return gens


def select_oracle(candidates: Sequence[Sequence[str]], reference: Sequence[str]) -> list[str]:
    """Highest sentence-BLEU candidate; ties go to the lexicographically smallest tokens."""
    if not candidates:
        raise ValueError("no candidates")
    return list(min(candidates, key=lambda c: (-metrics.sentence_bleu(c, reference), list(c))))


def oracle_full_answers(examples: Sequence[Example], fa_ckpt: Checkpoint, vocab: Vocabulary, cfg: PipelineConfig,
                        k: int | None = None) -> list[list[str]]:
    k = cfg.oracle_k if k is None else k
    if k < 1:
        raise ConfigError("oracle k must be >= 1")
    beams = decode_fa_beams(examples, fa_ckpt, vocab, cfg, width=k)
    out = []
    for ex, hyps in zip(examples, beams):
        ref_text = ex.full_answer if cfg.oracle_reference == "full_answer" else ex.question
        if ref_text is None:  # nothing to select against: keep the model's top hypothesis
            out.append(hyps[0].tokens)
        else:
            out.append(select_oracle([h.tokens for h in hyps], tokenize(ref_text)))
    return out


def infer_oracle_fa(examples: Sequence[Example], fa_ckpt: Checkpoint, q_ckpt: Checkpoint, vocab: Vocabulary,
                    cfg: PipelineConfig, k: int | None = None) -> list[Generation]:
    """Like ``infer`` but picks, among the FA model's top-k, the candidate closest to the gold reference."""
    fas = oracle_full_answers(examples, fa_ckpt, vocab, cfg, k)
    return generate_questions(examples, q_ckpt, vocab, cfg, fas)


# ---------------------------------------------------------------------------
# ablation ladder
# ---------------------------------------------------------------------------


def corpus_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for name, rows in corpus.splits().items():
        h.update(name.encode() + b"\n")
        h.update(dumps_jsonl(rows).encode("utf-8"))
    return h.hexdigest()


def score(examples: Sequence[Example], questions: Sequence[Sequence[str]]) -> metrics.MetricReport:
    return metrics.evaluate([list(q) for q in questions], [tokenize(e.question) for e in examples])


def answer_in_fa_rate(examples: Sequence[Example], fas: Sequence[Sequence[str]]) -> float:
    hits = [contains_run(list(f), tokenize(e.answer)) for e, f in zip(examples, fas)]
    return float(np.mean(hits)) if hits else float("nan")


@dataclass
class RunManifest:
    config: dict
    corpus_hash: str
    lexicon_version: str
    seeds: dict
    modes: list[str]
    checkpoints: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, dict] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n"

    def metrics_json(self) -> str:
        """The deterministic part: metrics keyed by mode plus diagnostics."""
        return json.dumps({"corpus_hash": self.corpus_hash, "metrics": self.metrics,
                           "diagnostics": self.diagnostics}, indent=1, sort_keys=True) + "\n"


def required_models(modes: Iterable[str]) -> list[str]:
    need: list[str] = []
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; expected one of {MODES}")
        if m in SINGLE_STAGE:
            need.append(f"q:{SINGLE_STAGE[m]}")
        elif m == "q-w/o-context":
            need += ["fa", "q:no-context"]
        else:
            need += ["fa", "q:multifactor"]
    return sorted(set(need), key=need.index)


def run_ablation(cfg: PipelineConfig, seed: int, modes: Sequence[str] = MODES, out_dir: str | Path | None = None,
                 corpus: Corpus | None = None) -> tuple[RunManifest, dict[str, metrics.MetricReport]]:
    """Train what ``modes`` need on one corpus and score every mode on the test split."""
    t_start = time.perf_counter()
    corpus_seed = seed if cfg.corpus_seed is None else cfg.corpus_seed
    if corpus is None:
        corpus = generate_corpus(corpus_seed, cfg.corpus_size, cfg.kb())
    vocab = build_vocab(corpus.train)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
    manifest = RunManifest(
        config=cfg.to_dict(), corpus_hash=corpus_hash(corpus), lexicon_version=lexicon.version(),
        seeds={"run": seed, "corpus": corpus_seed}, modes=list(modes),
        policy={"fa_valid_train": len(training_subset(corpus.train, False)), "train": len(corpus.train),
                "include_unconvertible": cfg.include_unconvertible, "eval_split": "test",
                "eval_examples": len(corpus.test), "oracle_reference": cfg.oracle_reference},
    )
    train, dev, test = corpus.train, corpus.dev, corpus.test
    models: dict[str, Checkpoint] = {}
    for name in required_models(modes):
        t0 = time.perf_counter()
        if name == "fa":
            ck = train_fa(train, dev, vocab, cfg, seed)
        elif name == "q:multifactor":
            ck = train_q(train, dev, vocab, cfg, seed, "pet", "Q")
        elif name == "q:no-context":
            ck = train_q(train, dev, vocab, cfg, seed, "pet", "Q-no-context")
        else:
            ck = train_q(train, dev, vocab, cfg, seed, name.split(":", 1)[1], "FA")
        models[name] = ck
        manifest.timings[f"train {name}"] = round(time.perf_counter() - t0, 2)
        if out is not None:
            path = out / f"{name.replace(':', '_')}.ckpt"
            ck.save(path)
            manifest.checkpoints[name] = str(path)
    reports: dict[str, metrics.MetricReport] = {}
    greedy_fa = None
    if "fa" in models:
        greedy_fa = [d.tokens for d in decode_full_answers(test, models["fa"], vocab, cfg, width=cfg.beam_width)]
        manifest.diagnostics["answer_in_fa"] = answer_in_fa_rate(test, greedy_fa)
    for mode in modes:
        t0 = time.perf_counter()
        if mode in SINGLE_STAGE:
            ck = models[f"q:{SINGLE_STAGE[mode]}"]
            gens = generate_questions(test, ck, vocab, cfg, mode="one-hot" if mode == "one-hot" else None)
        elif mode == "multifactor":
            gens = generate_questions(test, models["q:multifactor"], vocab, cfg, greedy_fa)
        elif mode == "q-w/o-context":
            gens = generate_questions(test, models["q:no-context"], vocab, cfg, greedy_fa)
        elif mode == "q-oracle-fa":
            fas = oracle_full_answers(test, models["fa"], vocab, cfg)
            gens = generate_questions(test, models["q:multifactor"], vocab, cfg, fas)
        else:  # q-gold-fa; examples lacking a gold FA fall back to the generated one
            fas = [tokenize(e.full_answer) if e.full_answer is not None else g for e, g in zip(test, greedy_fa)]
            gens = generate_questions(test, models["q:multifactor"], vocab, cfg, fas)
        rep = score(test, [g.question for g in gens])
        reports[mode] = rep
        manifest.metrics[mode] = rep.as_dict()
        manifest.timings[f"eval {mode}"] = round(time.perf_counter() - t0, 2)
        if out is not None:
            rows = [{"id": g.id, "hypothesis": " ".join(g.question), "reference": e.question}
                    for g, e in zip(gens, test)]
            safe = mode.replace("/", "_")
            (out / f"predictions.{safe}.jsonl").write_text(
                "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
    manifest.timings["total"] = round(time.perf_counter() - t_start, 2)
    if out is not None:
        (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
        (out / "metrics.json").write_text(manifest.metrics_json(), encoding="utf-8")
        (out / "ablation.txt").write_text(metrics.format_table(reports), encoding="utf-8")
    return manifest, reports

