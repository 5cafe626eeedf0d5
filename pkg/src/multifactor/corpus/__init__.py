"""Synthetic corpus, tokenization, vocabulary and dataset IO."""

from .assemble import AssembledInput, assemble_input, candidate_spans
from .generate import BRIDGE_TEMPLATES, COMPARISON_TEMPLATES, Corpus, CorpusError, KBConfig, generate_corpus
from .jsonl import DataError, Example, dumps_jsonl, loads_jsonl, read_jsonl, write_jsonl
from .rng import SplitMix64
from .text import RESERVED, Vocabulary, detokenize, tokenize, tokenize_cased

__all__ = [
    "AssembledInput", "assemble_input", "candidate_spans", "BRIDGE_TEMPLATES", "COMPARISON_TEMPLATES", "Corpus",
    "CorpusError", "KBConfig", "generate_corpus", "DataError", "Example", "dumps_jsonl", "loads_jsonl",
    "read_jsonl", "write_jsonl", "SplitMix64", "RESERVED", "Vocabulary", "detokenize", "tokenize",
    "tokenize_cased",
]
