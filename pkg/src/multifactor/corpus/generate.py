"""Seeded synthetic multi-hop QA corpus.

Each context holds one person paragraph and one work paragraph per (person,
work) pair, shuffled together:

    <Person> was born in <City> on <Day Month Year>. <Person> died in <City>.
    <Work> is a <kind> <made> by <Person>. <Work> was <published> in <Year>.

Bridge questions join the two paragraphs of the target pair (ask about the
author of a work, or about the work of a person identified by birthplace).
Comparison questions pit two people or two works against each other; their
answers are in the context but no full-answer rule applies to them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

from ..fullanswer import qa2d
from ..phrase import label_phrases
from ..pet import PhraseSpan
from .jsonl import Example
from .rng import SplitMix64
from .text import detokenize, raw_tokens, tokenize

FIRST_NAMES = ("Ada Alice Arthur Beatrice Clara Daniel Edith Felix George Harriet Hugo Ida Jonas Karl Laura "
               "Martin Nora Oscar Paul Rosa Simon Thea Victor Walter").split()
LAST_NAMES = ("Abbott Brandt Carver Dalton Ellery Fenwick Garland Hale Ingram Jarvis Keller Lowell Mercer "
              "Norcross Osborne Prescott Quinlan Radley Sutton Thorne Upton Vance Whitlock Yardley").split()
CITIES = ("Antwerp Bergen Bristol Cork Dresden Geneva Genoa Leeds Lisbon Lyon Madrid Marseille Milan Munich "
          "Naples Oslo Porto Prague Rotterdam Seville Turin Valencia Vienna Zurich").split()
TITLE_ADJECTIVES = ("Amber Broken Crimson Distant Emerald Faded Golden Hidden Hollow Iron Lonely Midnight "
                    "Northern Pale Quiet Scarlet Silent Silver Winter Wild").split()
TITLE_NOUNS = ("Harbor Garden River Lantern Mirror Orchard Meadow Tower Voyage Shore Forest Letter Bridge "
               "Island Valley Kingdom Echo Compass Harvest Window").split()
MONTH_NAMES = ("January February March April May June July August September October November "
               "December").split()


@dataclass(frozen=True)
class WorkKind:
    noun: str
    made: str  # passive participle: "written"
    role: str  # creator noun: "author"
    released: str  # "published"


KINDS = (
    WorkKind("novel", "written", "author", "published"),
    WorkKind("film", "directed", "director", "released"),
    WorkKind("album", "recorded", "singer", "released"),
)

BRIDGE_TEMPLATES = ("birthplace", "birthdate", "deathplace", "work_by_city", "year_by_city")
COMPARISON_TEMPLATES = ("born_first", "released_first")


class CorpusError(ValueError):
    """Invalid generator configuration or a request beyond template capacity."""


@dataclass(frozen=True)
class KBConfig:
    first_names: int = 24
    last_names: int = 24
    cities: int = 24
    title_adjectives: int = 20
    title_nouns: int = 20
    year_min: int = 1800
    year_max: int = 1950
    comparison_ratio: float = 0.2
    distractors: int = 1
    templates: str = ",".join(BRIDGE_TEMPLATES)
    comparison_templates: str = ",".join(COMPARISON_TEMPLATES)

    def __post_init__(self):
        pools = {"first_names": FIRST_NAMES, "last_names": LAST_NAMES, "cities": CITIES,
                 "title_adjectives": TITLE_ADJECTIVES, "title_nouns": TITLE_NOUNS}
        for name, pool in pools.items():
            if not 1 <= getattr(self, name) <= len(pool):
                raise CorpusError(f"{name} must be in [1, {len(pool)}]")
        pairs = 1 + self.distractors
        if self.distractors < 1:
            raise CorpusError("distractors must be >= 1")
        if self.cities < 2 * pairs:
            raise CorpusError(f"need at least {2 * pairs} cities for {pairs} people per context")
        if self.year_max - self.year_min < 60 + pairs:
            raise CorpusError("year range too narrow (needs > 60 years)")
        if not 0.0 <= self.comparison_ratio <= 1.0:
            raise CorpusError("comparison_ratio must be in [0, 1]")
        for name, known in (("templates", BRIDGE_TEMPLATES), ("comparison_templates", COMPARISON_TEMPLATES)):
            for t in self.template_list(name):
                if t not in known:
                    raise CorpusError(f"unknown template {t!r} in {name}")
        if not self.template_list("templates") and self.comparison_ratio < 1.0:
            raise CorpusError("no bridge templates enabled")
        if not self.template_list("comparison_templates") and self.comparison_ratio > 0.0:
            raise CorpusError("no comparison templates enabled")

    def template_list(self, name: str = "templates") -> list[str]:
        return [t for t in getattr(self, name).split(",") if t]

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "KBConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep or key not in known:
                raise CorpusError(f"kb_config line {lineno}: unknown or malformed entry {raw!r}")
            default = getattr(cls, key)
            try:
                kw[key] = type(default)(value)
            except ValueError:
                raise CorpusError(f"kb_config line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kw)

    @property
    def titles(self) -> int:
        return self.title_adjectives * self.title_nouns

    @property
    def people(self) -> int:
        return self.first_names * self.last_names

    def capacity(self) -> int:
        """Distinct (question, answer) pairs the enabled templates can produce."""
        k, t, c, p = len(KINDS), self.titles, self.cities, self.people
        years = self.year_max - self.year_min + 1
        per = {
            "birthplace": k * t * c,
            "birthdate": k * t * 28 * 12 * years,
            "deathplace": k * t * c,
            "work_by_city": k * c * t,
            "year_by_city": k * c * years,
            "born_first": p * (p - 1),
            "released_first": t * (t - 1),
        }
        cap = 0
        if self.comparison_ratio < 1.0:
            cap += sum(per[n] for n in self.template_list("templates"))
        if self.comparison_ratio > 0.0:
            cap += sum(per[n] for n in self.template_list("comparison_templates"))
        return cap


@dataclass
class Person:
    name: str
    birth_city: str
    death_city: str
    day: int
    month: str
    year: int

    @property
    def date(self) -> str:
        return f"{self.day} {self.month} {self.year}"


@dataclass
class Work:
    title: str
    kind: WorkKind
    creator: Person
    year: int


class _Builder:
    """Accumulates context tokens while recording annotated spans."""

    def __init__(self):
        self.pieces: list[str] = []
        self.n = 0
        self.spans: list[tuple[int, int]] = []

    def add(self, text: str, mark: bool = False) -> None:
        k = len(tokenize(text))
        if mark:
            self.spans.append((self.n, self.n + k))
        self.pieces.append(text)
        self.n += k

    def text(self) -> str:
        out = ""
        for p in self.pieces:
            if out and p not in (".", ","):
                out += " "
            out += p
        return out


def _person_paragraph(b: _Builder, p: Person) -> None:
    b.add(p.name, True); b.add("was"); b.add("born", True); b.add("in"); b.add(p.birth_city, True)
    b.add("on"); b.add(p.date, True); b.add(".")
    b.add(p.name, True); b.add("died", True); b.add("in"); b.add(p.death_city, True); b.add(".")


def _work_paragraph(b: _Builder, w: Work) -> None:
    article = "an" if w.kind.noun[0] in "aeiou" else "a"
    b.add(w.title, True); b.add("is"); b.add(article); b.add(w.kind.noun, True); b.add(w.kind.made, True)
    b.add("by"); b.add(w.creator.name, True); b.add(".")
    b.add(w.title, True); b.add("was"); b.add(w.kind.released, True); b.add("in"); b.add(str(w.year), True)
    b.add(".")


def _sample_world(rng: SplitMix64, kb: KBConfig) -> list[Work]:
    pairs = 1 + kb.distractors
    people: set[str] = set()
    titles: set[str] = set()
    cities = list(CITIES[: kb.cities])
    rng.shuffle(cities)
    births: set[int] = set()
    releases: set[int] = set()
    works = []
    for i in range(pairs):
        while True:
            name = f"{rng.choice(FIRST_NAMES[: kb.first_names])} {rng.choice(LAST_NAMES[: kb.last_names])}"
            if name not in people:
                people.add(name)
                break
        while True:
            title = f"{rng.choice(TITLE_ADJECTIVES[: kb.title_adjectives])} {rng.choice(TITLE_NOUNS[: kb.title_nouns])}"
            if title not in titles:
                titles.add(title)
                break
        while True:
            year = rng.between(kb.year_min, kb.year_max - 60)
            if year not in births:
                births.add(year)
                break
        while True:
            released = year + rng.between(20, 59)
            if released not in releases:
                releases.add(released)
                break
        person = Person(name, cities[2 * i], cities[2 * i + 1], rng.between(1, 28), rng.choice(MONTH_NAMES), year)
        works.append(Work(title, rng.choice(KINDS), person, released))
    return works


def _question(template: str, rng: SplitMix64, works: list[Work]) -> tuple[str, str]:
    w = works[0]
    p, k = w.creator, w.kind
    if template == "birthplace":
        return f"Where was the {k.role} of {w.title} born?", p.birth_city
    if template == "birthdate":
        return f"What was the birth date of the {k.role} of {w.title}?", p.date
    if template == "deathplace":
        return f"Where did the {k.role} of {w.title} die?", p.death_city
    if template == "work_by_city":
        return f"Which {k.noun} was {k.made} by the person born in {p.birth_city}?", w.title
    if template == "year_by_city":
        return f"In what year was the {k.noun} {k.made} by the person born in {p.birth_city} {k.released}?", str(w.year)
    a, b = works[0], works[1]
    if rng.below(2):
        a, b = b, a
    if template == "born_first":
        first = a if a.creator.year < b.creator.year else b
        return f"Who was born first, {a.creator.name} or {b.creator.name}?", first.creator.name
    if template == "released_first":
        first = a if a.year < b.year else b
        return f"Which work appeared first, {a.title} or {b.title}?", first.title
    raise CorpusError(f"unknown template {template!r}")


def _recase(tokens: list[str], sources: list[str]) -> str:
    """Restore the casing seen in ``sources`` and capitalize the first word."""
    cased: dict[str, str] = {}
    for s in sources:
        for tok in raw_tokens(s):
            if tok[:1].isupper():
                cased.setdefault(tok.lower(), tok)
    words = [cased.get(t, t) for t in tokens]
    if words:
        words[0] = words[0][:1].upper() + words[0][1:]
    return detokenize(words)


def make_example(rng: SplitMix64, kb: KBConfig, ex_id: str) -> Example:
    comparison = rng.random() < kb.comparison_ratio
    template = rng.choice(kb.template_list("comparison_templates" if comparison else "templates"))
    works = _sample_world(rng, kb)
    question, answer = _question(template, rng, works)
    paragraphs: list[Callable[[_Builder], None]] = []
    for w in works:
        paragraphs.append(lambda b, p=w.creator: _person_paragraph(b, p))
        paragraphs.append(lambda b, w=w: _work_paragraph(b, w))
    rng.shuffle(paragraphs)
    b = _Builder()
    for para in paragraphs:
        para(b)
    context = b.text()
    ctx_tokens = tokenize(context)
    spans = [PhraseSpan(s, e) for s, e in b.spans]
    labels = label_phrases(spans, ctx_tokens, tokenize(question))
    fa_tokens = qa2d(tokenize(question), tokenize(answer))
    full_answer = None if fa_tokens is None else _recase(fa_tokens, [question, answer])
    ex = Example(
        id=ex_id,
        context=context,
        answer=answer,
        question=question,
        full_answer=full_answer,
        phrase_spans=[(s.start, s.end, int(z)) for s, z in zip(spans, labels)],
        question_type="comparison" if comparison else "bridge",
        extra={"template": template},
    )
    ex.validate()
    if len(ctx_tokens) != b.n:
        raise AssertionError("context text does not re-tokenize to the annotated tokens")
    return ex


@dataclass
class Corpus:
    train: list[Example]
    dev: list[Example]
    test: list[Example]

    def splits(self) -> dict[str, list[Example]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def split_sizes(size: int) -> tuple[int, int, int]:
    return size, size // 10, size // 10


def generate_corpus(seed: int, size: int = 2000, kb_config: KBConfig | None = None) -> Corpus:
    """Train/dev/test examples; ``size`` is the train count, dev and test get size // 10 each."""
    kb = kb_config or KBConfig()
    if size < 10:
        raise CorpusError("size must be >= 10")
    sizes = split_sizes(size)
    needed = sum(sizes)
    if needed > kb.capacity():
        raise CorpusError(f"{needed} examples requested but the templates allow only {kb.capacity()} "
                          "distinct question/answer pairs")
    rng = SplitMix64(seed)
    seen: set[tuple[str, str]] = set()
    out: dict[str, list[Example]] = {}
    budget = 50 * needed
    for split, n in zip(("train", "dev", "test"), sizes):
        rows: list[Example] = []
        while len(rows) < n:
            if budget == 0:
                raise CorpusError("template capacity exhausted while sampling unique questions")
            budget -= 1
            ex = make_example(rng, kb, f"{split}-{len(rows):05d}")
            key = (ex.question, ex.answer)
            if key in seen:
                continue
            seen.add(key)
            rows.append(ex)
        out[split] = rows
    return Corpus(out["train"], out["dev"], out["test"])
