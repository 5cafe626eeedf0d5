"""BLEU and ROUGE-L over token sequences."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _stats(hyp: Tokens, ref: Tokens, max_n: int) -> tuple[list[int], list[int]]:
    """Clipped n-gram matches and hypothesis n-gram totals for orders 1..max_n."""
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches.append(sum((h & r).values()))
        totals.append(max(len(hyp) - n + 1, 0))
    return matches, totals


def _brevity(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c >= r else math.exp(1.0 - r / c)


def _check(hypotheses, references) -> None:
    if len(hypotheses) == 0:
        raise ValueError("no hypotheses to score")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if any(len(r) == 0 for r in references):
        raise ValueError("references must be non-empty")


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> list[float]:
    """Corpus BLEU-1..max_n from pooled clipped counts, unsmoothed."""
    _check(hypotheses, references)
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        m, t = _stats(hyp, ref, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c += len(hyp)
        r += len(ref)
    bp = _brevity(c, r)
    out, log_sum = [], 0.0
    for k in range(max_n):
        if matches[k] == 0 or log_sum == -math.inf:
            log_sum = -math.inf
            out.append(0.0)
            continue
        log_sum += math.log(matches[k] / totals[k])
        out.append(bp * math.exp(log_sum / (k + 1)))
    return out


def sentence_bleu(hyp: Tokens, ref: Tokens, max_n: int = 4) -> float:
    """BLEU-max_n for one pair; orders >= 2 use add-one smoothing."""
    if not ref:
        raise ValueError("reference must be non-empty")
    if not hyp:
        return 0.0
    m, t = _stats(hyp, ref, max_n)
    if m[0] == 0:
        return 0.0
    logs = [math.log(m[0] / t[0])]
    logs += [math.log((m[k] + 1) / (t[k] + 1)) for k in range(1, max_n)]
    return _brevity(len(hyp), len(ref)) * math.exp(sum(logs) / max_n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Bit-parallel LCS (Hyyro 2004): one big-integer pass per token of ``b``."""
    if not a or not b:
        return 0
    masks: dict = {}
    for i, tok in enumerate(a):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l_pair(hyp: Tokens, ref: Tokens, beta: float = 1.0) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def rouge_l(hypotheses: Sequence[Tokens], references: Sequence[Tokens], beta: float = 1.0) -> float:
    """Mean ROUGE-L F over pairs (beta=1 is plain F1)."""
    _check(hypotheses, references)
    return math.fsum(rouge_l_pair(h, r, beta) for h, r in zip(hypotheses, references)) / len(hypotheses)


@dataclass
class MetricReport:
    bleu: list[float]
    rouge_l: float
    count: int
    sentence_bleu: list[float] = field(default_factory=list)
    sentence_rouge_l: list[float] = field(default_factory=list)

    def as_dict(self, per_example: bool = False) -> dict:
        out = {f"bleu{i + 1}": v for i, v in enumerate(self.bleu)}
        out["rouge_l"] = self.rouge_l
        out["count"] = self.count
        if per_example:
            out["sentence_bleu"] = self.sentence_bleu
            out["sentence_rouge_l"] = self.sentence_rouge_l
        return out

    def row(self) -> str:
        return "".join(f"{100 * v:>9.2f}" for v in [*self.bleu, self.rouge_l])


HEADER = "".join(f"{h:>9}" for h in ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L"))


def evaluate(hypotheses: Sequence[Tokens], references: Sequence[Tokens], beta: float = 1.0) -> MetricReport:
    _check(hypotheses, references)
    return MetricReport(
        bleu(hypotheses, references),
        rouge_l(hypotheses, references, beta),
        len(hypotheses),
        [sentence_bleu(h, r) for h, r in zip(hypotheses, references)],
        [rouge_l_pair(h, r, beta) for h, r in zip(hypotheses, references)],
    )


def format_table(rows: dict[str, MetricReport], title: str = "") -> str:
    width = max([len(k) for k in rows] + [len("Mode")])
    lines = [title] if title else []
    lines.append(f"{'Mode':<{width}}{HEADER}")
    lines.append("-" * (width + len(HEADER)))
    lines += [f"{name:<{width}}{rep.row()}" for name, rep in rows.items()]
    return "\n".join(lines) + "\n"
