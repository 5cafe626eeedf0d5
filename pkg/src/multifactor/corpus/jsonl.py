"""The Example record and its JSONL serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .text import tokenize

QUESTION_TYPES = ("bridge", "comparison")
FIELDS = ("id", "context", "answer", "question", "full_answer", "phrase_spans", "question_type")


class DataError(ValueError):
    """A malformed record or an Example whose invariants do not hold."""


@dataclass
class Example:
    id: str
    context: str
    answer: str
    question: str
    full_answer: str | None
    phrase_spans: list[tuple[int, int, int]]  # [start, end) over tokenize(context), label
    question_type: str
    extra: dict = field(default_factory=dict)

    def context_tokens(self) -> list[str]:
        return tokenize(self.context)

    def validate(self) -> None:
        if self.question_type not in QUESTION_TYPES:
            raise DataError(f"{self.id}: question_type must be one of {QUESTION_TYPES}")
        ctx = self.context_tokens()
        ans = tokenize(self.answer)
        n = len(ans)
        if not n or not any(ctx[i:i + n] == ans for i in range(len(ctx) - n + 1)):
            raise DataError(f"{self.id}: answer {self.answer!r} does not occur in the context")
        for s, e, z in self.phrase_spans:
            if not 0 <= s < e <= len(ctx):
                raise DataError(f"{self.id}: phrase span [{s}, {e}) outside a {len(ctx)}-token context")
            if z not in (0, 1):
                raise DataError(f"{self.id}: phrase label {z!r} is not 0/1")

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "context": self.context,
            "answer": self.answer,
            "question": self.question,
            "full_answer": self.full_answer,
            "phrase_spans": [[int(s), int(e), int(z)] for s, e, z in self.phrase_spans],
            "question_type": self.question_type,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, obj: dict, where: str = "record") -> "Example":
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected a JSON object")
        missing = [f for f in FIELDS if f not in obj]
        if missing:
            raise DataError(f"{where}: missing required field {missing[0]!r}")
        for name in ("id", "context", "answer", "question", "question_type"):
            if not isinstance(obj[name], str):
                raise DataError(f"{where}: field {name!r} must be a string")
        if obj["full_answer"] is not None and not isinstance(obj["full_answer"], str):
            raise DataError(f"{where}: field 'full_answer' must be a string or null")
        spans = obj["phrase_spans"]
        ok = isinstance(spans, list) and all(
            isinstance(s, list) and len(s) == 3 and all(isinstance(v, int) and not isinstance(v, bool) for v in s)
            for s in spans)
        if not ok:
            raise DataError(f"{where}: field 'phrase_spans' must be a list of [start, end, label] integer triples")
        extra = {k: v for k, v in obj.items() if k not in FIELDS}
        return cls(obj["id"], obj["context"], obj["answer"], obj["question"], obj["full_answer"],
                   [tuple(s) for s in spans], obj["question_type"], extra)


def dumps_jsonl(examples: Iterable[Example]) -> str:
    return "".join(json.dumps(ex.to_json(), ensure_ascii=False) + "\n" for ex in examples)


def write_jsonl(path: str | Path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(examples))


def loads_jsonl(text: str, source: str = "<string>") -> list[Example]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
        out.append(Example.from_json(obj, where))
    return out


def read_jsonl(path: str | Path) -> list[Example]:
    with open(path, encoding="utf-8", newline=None) as fh:
        return loads_jsonl(fh.read(), str(path))
