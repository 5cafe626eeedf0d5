"""Word-level tokenization and the vocabulary."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK, ANS, PASSAGE, FA = "<pad>", "<bos>", "<eos>", "<unk>", "<ans>", "<passage>", "<fa>"
RESERVED = (PAD, BOS, EOS, UNK, ANS, PASSAGE, FA)

_TOKEN = re.compile(r"\w+|[^\w\s]")
_NO_SPACE_BEFORE = frozenset(".,?!;:)]}'%")
_NO_SPACE_AFTER = frozenset("([{")


def raw_tokens(text: str) -> list[str]:
    """Tokens with their original casing."""
    return _TOKEN.findall(text)


def tokenize_cased(text: str) -> tuple[list[str], list[bool]]:
    """Lowercased tokens plus a parallel "starts with an uppercase letter" mask."""
    raw = _TOKEN.findall(text)
    return [t.lower() for t in raw], [t[:1].isupper() for t in raw]


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN.findall(text)]


def detokenize(tokens: Sequence[str]) -> str:
    out: list[str] = []
    glue = True
    for tok in tokens:
        if out and not glue and tok not in _NO_SPACE_BEFORE:
            out.append(" ")
        out.append(tok)
        glue = tok in _NO_SPACE_AFTER
    return "".join(out)


class Vocabulary:
    """Token <-> id map with the seven reserved symbols at ids 0..6."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        idx = self._stoi.get(token)
        if idx is None:
            idx = len(self._itos)
            self._itos.append(token)
            self._stoi[token] = idx
        return idx

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]]) -> "Vocabulary":
        """Ids assigned by descending frequency, ties broken lexicographically."""
        counts: dict[str, int] = {}
        for stream in token_streams:
            for t in stream:
                counts[t] = counts.get(t, 0) + 1
        for t in RESERVED:
            counts.pop(t, None)
        return cls(sorted(counts, key=lambda t: (-counts[t], t)))

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token, 3)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._stoi.get(t, 3) for t in tokens]

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            t = self._itos[int(i)]
            if strip_special and t in RESERVED and t != UNK:
                continue
            out.append(t)
        return out

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: vocabulary must begin with the reserved tokens {RESERVED}")
        if len(set(lines)) != len(lines):
            raise ValueError(f"{path}: duplicate vocabulary entries")
        return cls(lines[len(RESERVED):])
