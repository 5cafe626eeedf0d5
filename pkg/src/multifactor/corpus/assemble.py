"""Model input layouts.

    FA            <ans> answer <passage> context
    Q             <ans> answer <fa> full_answer <passage> context
    Q-no-context  <ans> answer <fa> full_answer
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from ..pet import PhraseSpan
from ..phrase import extract_candidates, label_phrases, resolve_overlaps
from .jsonl import Example
from .text import ANS, FA, PASSAGE, Vocabulary, tokenize, tokenize_cased

log = logging.getLogger(__name__)

KINDS = ("FA", "Q", "Q-no-context")
SEG_SPECIAL, SEG_ANSWER, SEG_FA, SEG_CONTEXT = 0, 1, 2, 3


@dataclass
class AssembledInput:
    ids: list[int]
    tokens: list[str]
    segments: list[int]  # one SEG_* code per token
    answer: tuple[int, int]
    full_answer: tuple[int, int] | None
    context: tuple[int, int] | None
    spans: list[PhraseSpan] = field(default_factory=list)  # input coordinates
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def candidate_spans(example: Example) -> list[PhraseSpan]:
    """Annotated spans when present, otherwise the heuristic extractor; always disjoint."""
    if example.phrase_spans:
        gold = [PhraseSpan(s, e, z) for s, e, z in example.phrase_spans]
        cands = extract_candidates([], gold_spans=sorted(gold, key=lambda p: (p.start, p.end)))
    else:
        toks, caps = tokenize_cased(example.context)
        cands = extract_candidates(toks, caps)
    return resolve_overlaps(cands).spans


def _as_tokens(text: str | Sequence[str]) -> list[str]:
    return tokenize(text) if isinstance(text, str) else [t.lower() for t in text]


def assemble_input(example: Example, kind: str, vocab: Vocabulary, fa_text: str | Sequence[str] | None = None,
                   max_len: int | None = None, target: str | Sequence[str] | None = None) -> AssembledInput:
    """Token ids plus segment map for one model input.

    Phrase labels are recomputed against ``target`` when given (the sequence the
    model will generate); otherwise the example's stored labels are kept.
    An input longer than ``max_len`` loses context from the tail only.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if kind != "FA" and fa_text is None:
        raise ValueError(f"{kind} input requires a full answer")
    answer = tokenize(example.answer)
    tokens = [ANS] + answer
    segments = [SEG_SPECIAL] + [SEG_ANSWER] * len(answer)
    ans_span = (1, 1 + len(answer))
    fa_span = None
    if kind != "FA":
        fa = _as_tokens(fa_text)
        tokens.append(FA)
        segments.append(SEG_SPECIAL)
        fa_span = (len(tokens), len(tokens) + len(fa))
        tokens += fa
        segments += [SEG_FA] * len(fa)
    ctx_span = None
    spans: list[PhraseSpan] = []
    truncated = False
    if kind != "Q-no-context":
        ctx = example.context_tokens()
        tokens.append(PASSAGE)
        segments.append(SEG_SPECIAL)
        start = len(tokens)
        if max_len is not None and start + len(ctx) > max_len:
            keep = max_len - start
            if keep < 1:
                raise ValueError(f"{example.id}: answer and full answer alone exceed max_len={max_len}")
            log.warning("%s: context truncated from %d to %d tokens", example.id, len(ctx), keep)
            ctx = ctx[:keep]
            truncated = True
        tokens += ctx
        segments += [SEG_CONTEXT] * len(ctx)
        ctx_span = (start, start + len(ctx))
        kept = [s for s in candidate_spans(example) if s.end <= len(ctx)]
        if target is not None:
            labels = label_phrases(kept, ctx, _as_tokens(target))
        else:
            labels = [s.label for s in kept]
        spans = [PhraseSpan(s.start + start, s.end + start, None if z is None else int(z))
                 for s, z in zip(kept, labels)]
    elif max_len is not None and len(tokens) > max_len:
        raise ValueError(f"{example.id}: answer and full answer alone exceed max_len={max_len}")
    return AssembledInput(vocab.encode(tokens), tokens, segments, ans_span, fa_span, ctx_span, spans, truncated)
