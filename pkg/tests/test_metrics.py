import math
import random

import pytest
from oracles import random_pairs, ref_corpus_bleu, ref_lcs, ref_rouge, ref_sentence_bleu

from multifactor.metrics import (
    bleu,
    evaluate,
    format_table,
    lcs_length,
    rouge_l,
    rouge_l_pair,
    sentence_bleu,
)


def test_metrics_match_brute_force_on_500_pairs():
    pairs = random_pairs(2024)
    hyps, refs = [p[0] for p in pairs], [p[1] for p in pairs]
    got, want = bleu(hyps, refs), ref_corpus_bleu(hyps, refs)
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12
    for h, r in pairs:
        assert abs(sentence_bleu(h, r) - ref_sentence_bleu(h, r)) < 1e-12
        assert lcs_length(h, r) == ref_lcs(h, r)
        assert abs(rouge_l_pair(h, r) - ref_rouge(h, r)) < 1e-12
    assert abs(rouge_l(hyps, refs) - sum(ref_rouge(h, r) for h, r in pairs) / len(pairs)) < 1e-12


def test_corpus_bleu_on_small_batches_matches_reference():
    for seed in range(20):
        pairs = random_pairs(seed, n=3)
        hyps, refs = [p[0] for p in pairs], [p[1] for p in pairs]
        got, want = bleu(hyps, refs), ref_corpus_bleu(hyps, refs)
        assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


def test_identity_scores_one():
    s = "the author of iron shore was born in lyon".split()
    assert bleu([s], [s])[3] == pytest.approx(1.0, abs=1e-15)
    assert rouge_l([s], [s]) == 1.0
    assert sentence_bleu(s, s) == pytest.approx(1.0, abs=1e-15)


def test_clipped_unigram_precision():
    assert bleu([["the", "the", "the"]], [["the", "cat"]], max_n=1)[0] == pytest.approx(1 / 3, abs=1e-15)


def test_brevity_penalty_strict():
    ref = "a b c d e f".split()
    hyp = "a b c d".split()
    b = bleu([hyp], [ref])
    assert b[0] < 1.0
    assert b[0] == pytest.approx(math.exp(1 - 6 / 4), abs=1e-15)


def test_rouge_examples():
    assert rouge_l_pair(list("abcd"), list("acde")) == pytest.approx(0.75, abs=1e-15)
    assert rouge_l([list("abc")], [list("xyz")]) == 0.0
    assert rouge_l_pair([], list("abc")) == 0.0


def test_rouge_beta_weights_recall():
    h, r = list("ab"), list("abcdef")  # P = 1, R = 1/3
    assert rouge_l_pair(h, r, beta=1.0) == pytest.approx(0.5)
    assert rouge_l_pair(h, r, beta=8.0) == pytest.approx((1 + 64) * (1 / 3) / ((1 / 3) + 64), abs=1e-15)


def test_corpus_bleu_permutation_invariant():
    pairs = random_pairs(5, n=60)
    perm = pairs[:]
    random.Random(1).shuffle(perm)
    a = bleu([p[0] for p in pairs], [p[1] for p in pairs])
    b = bleu([p[0] for p in perm], [p[1] for p in perm])
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-12


def test_bleu_pools_counts_rather_than_averaging():
    hyps = [["a", "b"], ["c", "d", "e", "f"]]
    refs = [["a", "b"], ["c", "x", "e", "y"]]
    pooled = bleu(hyps, refs, max_n=1)[0]
    assert pooled == pytest.approx(4 / 6)
    assert pooled != pytest.approx((1.0 + 0.5) / 2)


def test_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError):
        rouge_l([["a"]], [[]])


def test_report_and_table():
    s = "who wrote the novel".split()
    rep = evaluate([s], [s])
    d = rep.as_dict()
    assert d["bleu4"] == pytest.approx(1.0) and d["rouge_l"] == 1.0 and d["count"] == 1
    table = format_table({"gold": rep})
    assert "100.00" in table and "BLEU-4" in table
    # too short for any 4-gram: unsmoothed corpus BLEU-4 is zero
    assert evaluate([["a", "b"]], [["a", "b"]]).bleu[3] == 0.0
