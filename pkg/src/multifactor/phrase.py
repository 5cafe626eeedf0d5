"""Candidate phrase spans over a context and their ground-truth labels.

Spans come either from corpus annotations (passed through untouched) or from a
small deterministic rule set driven by the shipped lexicons:

entity   maximal runs of capitalized non-stopwords; 4-digit years; day-month-year
         and month-year dates
noun     maximal runs of content words delimited by stopwords, verbs, numbers and
         punctuation, plus the same run extended over a preceding article
verb     single tokens found in the verb lexicon
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import lexicon
from .pet import PhraseSpan

MONTHS = frozenset(
    "january february march april may june july august september october november december".split()
)
ARTICLES = frozenset({"a", "an", "the"})
_YEAR = re.compile(r"^(1\d{3}|20\d{2})$")
_DAY = re.compile(r"^([1-9]|[12]\d|3[01])$")


@dataclass
class CandidateSet:
    spans: list[PhraseSpan] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)  # "annotation" | "heuristic"
    kinds: list[str] = field(default_factory=list)  # "entity" | "noun" | "verb" | "gold"

    def __len__(self) -> int:
        return len(self.spans)

    def __iter__(self):
        return iter(self.spans)

    def bounds(self) -> list[tuple[int, int]]:
        return [(s.start, s.end) for s in self.spans]

    def is_disjoint(self) -> bool:
        b = self.bounds()
        return all(b[i][1] <= b[i + 1][0] for i in range(len(b) - 1))

    def with_labels(self, labels: Iterable[int]) -> "CandidateSet":
        spans = [PhraseSpan(s.start, s.end, int(z)) for s, z in zip(self.spans, labels, strict=True)]
        return CandidateSet(spans, list(self.provenance), list(self.kinds))


def _is_word(tok: str) -> bool:
    return tok[:1].isalnum()


def _runs(flags: Sequence[bool]) -> list[tuple[int, int]]:
    out, start = [], None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(flags)))
    return out


def _dates(tokens: Sequence[str]) -> list[tuple[int, int]]:
    out = []
    n = len(tokens)
    for i, t in enumerate(tokens):
        if _YEAR.match(t):
            out.append((i, i + 1))
        if t in MONTHS and i + 1 < n and _YEAR.match(tokens[i + 1]):
            if i > 0 and _DAY.match(tokens[i - 1]):
                out.append((i - 1, i + 2))
            else:
                out.append((i, i + 2))
    return out


def heuristic_spans(tokens: Sequence[str], caps: Sequence[bool] | None = None) -> list[tuple[int, int, str]]:
    """Raw (start, end, kind) candidates; may overlap."""
    toks = [t.lower() for t in tokens]
    stop, verbs = lexicon.stopwords(), lexicon.verbs()
    found: list[tuple[int, int, str]] = []
    if caps is not None:
        if len(caps) != len(toks):
            raise ValueError("case mask length must match the token count")
        flags = [bool(c) and _is_word(t) and t not in stop for t, c in zip(toks, caps)]
        found += [(s, e, "entity") for s, e in _runs(flags)]
    found += [(s, e, "entity") for s, e in _dates(toks)]
    content = [_is_word(t) and not t.isdigit() and t not in stop and t not in verbs for t in toks]
    for s, e in _runs(content):
        found.append((s, e, "noun"))
        if s > 0 and toks[s - 1] in ARTICLES:
            found.append((s - 1, e, "noun"))
    found += [(i, i + 1, "verb") for i, t in enumerate(toks) if t in verbs]
    return found


def extract_candidates(tokens: Sequence[str], caps: Sequence[bool] | None = None,
                       gold_spans: Sequence[PhraseSpan] | None = None) -> CandidateSet:
    """Candidates sorted by (start, end); duplicates keep the first rule that produced them.

    With ``gold_spans`` the annotation is returned verbatim and no rules run.
    """
    if gold_spans is not None:
        spans = list(gold_spans)
        return CandidateSet(spans, ["annotation"] * len(spans), ["gold"] * len(spans))
    seen: dict[tuple[int, int], str] = {}
    for s, e, kind in heuristic_spans(tokens, caps):
        seen.setdefault((s, e), kind)
    keys = sorted(seen)
    return CandidateSet([PhraseSpan(s, e) for s, e in keys], ["heuristic"] * len(keys), [seen[k] for k in keys])


def resolve_overlaps(candidates: CandidateSet) -> CandidateSet:
    """Longest span wins, earlier start breaks ties; result disjoint and sorted."""
    order = sorted(range(len(candidates)), key=lambda i: (-(candidates.spans[i].end - candidates.spans[i].start),
                                                           candidates.spans[i].start, candidates.spans[i].end))
    taken = np.zeros(max((s.end for s in candidates.spans), default=0), dtype=bool)
    keep = []
    for i in order:
        s = candidates.spans[i]
        if not taken[s.start:s.end].any():
            taken[s.start:s.end] = True
            keep.append(i)
    keep.sort(key=lambda i: (candidates.spans[i].start, candidates.spans[i].end))
    return CandidateSet([candidates.spans[i] for i in keep], [candidates.provenance[i] for i in keep],
                        [candidates.kinds[i] for i in keep])


def label_phrases(candidates: CandidateSet | Sequence[PhraseSpan], context: Sequence[str],
                  target: Sequence[str]) -> np.ndarray:
    """z_i = 1 iff span i's (case-folded) tokens occur contiguously in ``target``."""
    spans = candidates.spans if isinstance(candidates, CandidateSet) else list(candidates)
    y = tuple(t.lower() for t in target)
    grams: dict[int, set[tuple[str, ...]]] = {}
    z = np.zeros(len(spans), dtype=np.int64)
    for i, s in enumerate(spans):
        n = s.end - s.start
        if n > len(y):
            continue
        if n not in grams:
            grams[n] = {y[k:k + n] for k in range(len(y) - n + 1)}
        z[i] = tuple(t.lower() for t in context[s.start:s.end]) in grams[n]
    return z
