"""Shipped word lists.

Each list is a UTF-8 file under ``data/`` with one entry per line; ``#`` starts
a comment.  The combined SHA-256 of all files is the lexicon version recorded in
run manifests, so extraction results can be tied to the exact tables used.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources

FILES = ("stopwords.txt", "verbs.txt", "irregular_verbs.txt")


def _read(name: str) -> str:
    return resources.files("multifactor").joinpath("data", name).read_text(encoding="utf-8")


def _lines(name: str) -> list[str]:
    out = []
    for raw in _read(name).splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


@lru_cache(maxsize=None)
def stopwords() -> frozenset[str]:
    return frozenset(_lines("stopwords.txt"))


@lru_cache(maxsize=None)
def verbs() -> frozenset[str]:
    return frozenset(_lines("verbs.txt"))


@lru_cache(maxsize=None)
def irregular_past() -> dict[str, str]:
    """base form -> simple past."""
    table = {}
    for line in _lines("irregular_verbs.txt"):
        base, past = line.split()
        table[base] = past
    return table


@lru_cache(maxsize=None)
def version() -> str:
    h = hashlib.sha256()
    for name in FILES:
        h.update(name.encode())
        h.update(b"\0")
        h.update(_read(name).encode("utf-8"))
    return h.hexdigest()
