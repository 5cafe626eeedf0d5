"""Question + answer -> declarative "full answer" by a small table of rewrite rules.

Rules are tried in order and the first whose pattern matches wins.  A rewrite is
accepted only if it keeps enough of the question's content words, so every
produced sentence satisfies the content-preservation threshold.  Questions no
rule understands (yes/no, either-or comparisons, anything exotic) yield None.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import lexicon
from .phrase import MONTHS

WH_SUBJECT = frozenset({"what", "who", "which"})
COPULA = frozenset({"is", "was", "are", "were"})
DO_AUX = frozenset({"do", "does", "did"})
AUX = COPULA | DO_AUX | frozenset({"has", "have", "had", "can", "could", "will", "would", "should", "may", "might"})
PREPOSITIONS = frozenset({"in", "on", "at", "during"})
DEFAULT_THRESHOLD = 0.7

Tokens = list[str]


def _is_word(tok: str) -> bool:
    return tok[:1].isalnum()


def _is_verb(tok: str) -> bool:
    return tok in lexicon.verbs() or tok in lexicon.irregular_past()


def past_tense(verb: str) -> str:
    irregular = lexicon.irregular_past()
    if verb in irregular:
        return irregular[verb]
    if verb.endswith("e"):
        return verb + "d"
    if len(verb) > 1 and verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ied"
    return verb + "ed"


def third_singular(verb: str) -> str:
    if verb in ("be", "have"):
        return {"be": "is", "have": "has"}[verb]
    if verb.endswith(("s", "sh", "ch", "x", "z", "o")):
        return verb + "es"
    if len(verb) > 1 and verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ies"
    return verb + "s"


def _inflect(verb: str, aux: str) -> str:
    return {"did": past_tense, "does": third_singular}.get(aux, lambda v: v)(verb)


def _forms(word: str) -> set[str]:
    return {word, past_tense(word), third_singular(word)}


def content_words(tokens: Sequence[str]) -> list[str]:
    stop = lexicon.stopwords()
    return [t for t in tokens if _is_word(t) and t not in stop]


def content_preservation(question: Sequence[str], declarative: Sequence[str]) -> float:
    """Share of the question's content words that survive, allowing tense changes."""
    words = content_words([t.lower() for t in question])
    if not words:
        return 1.0
    present = {t.lower() for t in declarative}
    kept = sum(1 for w in words if _forms(w) & present)
    return kept / len(words)


def contains_run(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    return n > 0 and any(list(haystack[i:i + n]) == list(needle) for i in range(len(haystack) - n + 1))


def _split_participle(rest: Tokens) -> tuple[Tokens, str, Tokens] | None:
    """subject / final verb / trailing complement; the subject must be non-empty."""
    for i in range(len(rest) - 1, 0, -1):
        if _is_verb(rest[i]):
            return rest[:i], rest[i], rest[i + 1:]
    return None


def _noun_then(tokens: Tokens, start: int, stop_set: frozenset[str]) -> int | None:
    """Index of the first token from ``start`` in ``stop_set``, or None."""
    for i in range(start, len(tokens)):
        if tokens[i] in stop_set:
            return i
        if not _is_word(tokens[i]):
            return None
    return None


def _time_prep(answer: Tokens) -> str:
    has_day = any(t.isdigit() and len(t) <= 2 for t in answer)
    return "on" if has_day and any(t in MONTHS for t in answer) else "in"


def _prep_wh(q: Tokens, a: Tokens) -> Tokens | None:
    """[in] what/which <noun> <aux> <subject> <verb> ... -> subject aux verb ... in A"""
    i, prep = 0, "in"
    if q[0] in PREPOSITIONS:
        prep, i = q[0], 1
    if i >= len(q) or q[i] not in ("what", "which"):
        return None
    j = _noun_then(q, i + 1, COPULA)
    if j is None or j == i + 1:
        return None
    rest = q[j + 1:]
    if not rest or _is_verb(rest[0]):
        return None
    parts = _split_participle(rest)
    if parts is None:
        return None
    subject, verb, tail = parts
    return subject + [q[j], verb] + tail + [prep] + a


def _when_where_aux(q: Tokens, a: Tokens) -> Tokens | None:
    """when/where <aux> <subject> <verb> ... -> subject aux verb ... in/on A"""
    if q[0] not in ("when", "where") or len(q) < 4 or q[1] not in AUX - DO_AUX:
        return None
    parts = _split_participle(q[2:])
    if parts is None:
        return None
    subject, verb, tail = parts
    prep = "in" if q[0] == "where" else _time_prep(a)
    return subject + [q[1], verb] + tail + [prep] + a


def _do_support(q: Tokens, a: Tokens) -> Tokens | None:
    """when/where/what did <subject> <verb> ... -> subject verb+ed ... [in/on] A"""
    if q[0] not in ("when", "where", "what", "who", "whom") or len(q) < 4 or q[1] not in DO_AUX:
        return None
    parts = _split_participle(q[2:])
    if parts is None:
        return None
    subject, verb, tail = parts
    out = subject + [_inflect(verb, q[1])] + tail
    if q[0] == "where":
        return out + ["in"] + a
    if q[0] == "when":
        return out + [_time_prep(a)] + a
    return out + a


def _by_whom(q: Tokens, a: Tokens) -> Tokens | None:
    """by whom was <subject> <verb> ... -> subject was verb ... by A"""
    if len(q) < 5 or q[:2] != ["by", "whom"] or q[2] not in COPULA:
        return None
    parts = _split_participle(q[3:])
    if parts is None:
        return None
    subject, verb, tail = parts
    return subject + [q[2], verb] + tail + ["by"] + a


def _copula(q: Tokens, a: Tokens) -> Tokens | None:
    """what/who/which [<noun>] is/was <noun phrase> -> noun phrase was A"""
    if q[0] not in WH_SUBJECT:
        return None
    j = _noun_then(q, 1, COPULA)
    if j is None:
        return None
    rest = q[j + 1:]
    if not rest or _is_verb(rest[0]) or rest[0] in AUX:
        return None
    return rest + [q[j]] + a


def _subject(q: Tokens, a: Tokens) -> Tokens | None:
    """who/what/which [<noun>] <verb> ... -> A verb ..."""
    if q[0] not in WH_SUBJECT or len(q) < 2:
        return None
    for j in range(1, len(q)):
        if _is_verb(q[j]) or q[j] in AUX:
            break
        if not _is_word(q[j]) or q[j] in lexicon.stopwords():
            return None
    else:
        return None
    if j > 1 and q[0] == "who":
        return None
    return a + q[j:]


@dataclass(frozen=True)
class ConversionRule:
    name: str
    pattern: str
    apply: Callable[[Tokens, Tokens], Tokens | None] = field(repr=False)


RULES: tuple[ConversionRule, ...] = (
    ConversionRule("prep-wh", "[in] what/which <noun> <aux> <subject> <verb> ...", _prep_wh),
    ConversionRule("when-where", "when/where <aux> <subject> <verb> ...", _when_where_aux),
    ConversionRule("do-support", "wh did/does/do <subject> <verb> ...", _do_support),
    ConversionRule("by-whom", "by whom <aux> <subject> <verb> ...", _by_whom),
    ConversionRule("copula", "what/who/which [<noun>] <be> <noun phrase>", _copula),
    ConversionRule("subject", "who/what/which [<noun>] <verb> ...", _subject),
)


@dataclass(frozen=True)
class Conversion:
    tokens: Tokens
    rule: str


def _is_choice(q: Tokens) -> bool:
    # "..., X or Y?" style comparisons are deliberately left unconverted
    return "or" in q and "," in q


def convert(question: Iterable[str], answer: Iterable[str],
            threshold: float = DEFAULT_THRESHOLD) -> Conversion | None:
    try:
        q = [str(t).lower() for t in question]
        a = [str(t).lower() for t in answer]
    except Exception:
        return None
    while q and q[-1] in ("?", ".", "!"):
        q.pop()
    if not q or not a or q[0] in AUX or _is_choice(q):
        return None
    for rule in RULES:
        out = rule.apply(q, a)
        if out is None:
            continue
        out = out + ["."]
        if contains_run(out, a) and content_preservation(q, out) >= threshold:
            return Conversion(out, rule.name)
        return None
    return None


def qa2d(question: Iterable[str], answer: Iterable[str], threshold: float = DEFAULT_THRESHOLD) -> Tokens | None:
    """Declarative token sequence for (question, answer), or None if no rule applies."""
    conv = convert(question, answer, threshold)
    return None if conv is None else conv.tokens


@dataclass
class CoverageReport:
    converted: int = 0
    skipped: int = 0
    by_type: dict[str, dict[str, int]] = field(default_factory=dict)
    by_rule: dict[str, int] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"converted": self.converted, "skipped": self.skipped, "by_type": self.by_type,
                "by_rule": self.by_rule}


def coverage_report(dataset: Iterable, threshold: float = DEFAULT_THRESHOLD) -> CoverageReport:
    """Tally convertible vs skipped examples; each record flags one example."""
    from .corpus.text import tokenize

    report = CoverageReport()
    rules: Counter[str] = Counter()
    for ex in dataset:
        conv = convert(tokenize(ex.question), tokenize(ex.answer), threshold)
        kind = getattr(ex, "question_type", "unknown")
        slot = report.by_type.setdefault(kind, {"converted": 0, "skipped": 0})
        key = "skipped" if conv is None else "converted"
        slot[key] += 1
        setattr(report, key, getattr(report, key) + 1)
        if conv is not None:
            rules[conv.rule] += 1
        report.records.append({"id": ex.id, "question_type": kind, "converted": conv is not None,
                               "rule": None if conv is None else conv.rule})
    report.by_rule = dict(sorted(rules.items()))
    return report
