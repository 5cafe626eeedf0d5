import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multifactor.corpus import generate_corpus
from multifactor.corpus.jsonl import Example
from multifactor.corpus.text import tokenize
from multifactor.fullanswer import (
    RULES,
    content_preservation,
    contains_run,
    convert,
    coverage_report,
    past_tense,
    qa2d,
    third_singular,
)


def run(q, a):
    out = qa2d(tokenize(q), tokenize(a))
    return None if out is None else out


def test_copula_example():
    q = "What was the birth date of the English inventor who is noted for developing the oil engine?"
    want = "The birth date of the English inventor who is noted for developing the oil engine was 28 January 1864."
    assert run(q, "28 January 1864") == tokenize(want)


def test_subject_example():
    assert run("Who wrote Hamlet?", "Shakespeare") == tokenize("Shakespeare wrote Hamlet.")


@pytest.mark.parametrize("q,a", [
    ("Is A larger than B?", "yes"),
    ("Was Hamlet written by Shakespeare?", "yes"),
    ("Who was born first, Ada Hale or Paul Upton?", "Ada Hale"),
    ("Which work appeared first, Iron Shore or Pale Echo?", "Iron Shore"),
])
def test_unconvertible_is_none(q, a):
    assert run(q, a) is None


@pytest.mark.parametrize("q,a,want,rule", [
    ("In what year was the novel written by the person born in Lyon published?", "1901",
     "the novel written by the person born in lyon was published in 1901 .", "prep-wh"),
    ("Where was the author of Silent Harbor born?", "Oslo", "the author of silent harbor was born in oslo .",
     "when-where"),
    ("When was Ada Hale born?", "3 May 1830", "ada hale was born on 3 may 1830 .", "when-where"),
    ("When was Iron Shore released?", "1901", "iron shore was released in 1901 .", "when-where"),
    ("Where did the director of Iron Road die?", "Rome", "the director of iron road died in rome .", "do-support"),
    ("What did Shakespeare write?", "Hamlet", "shakespeare wrote hamlet .", "do-support"),
    ("By whom was Hamlet written?", "Shakespeare", "hamlet was written by shakespeare .", "by-whom"),
    ("Which city was the birthplace of Ada Hale?", "Lyon", "the birthplace of ada hale was lyon .", "copula"),
    ("Which novel was written by the person born in Lyon?", "Iron Shore",
     "iron shore was written by the person born in lyon .", "subject"),
])
def test_rule_table(q, a, want, rule):
    conv = convert(tokenize(q), tokenize(a))
    assert conv is not None and conv.rule == rule
    assert conv.tokens == want.split()


def test_rule_table_size():
    assert len(RULES) == 6


def test_inflection_tables():
    assert past_tense("write") == "wrote" and past_tense("die") == "died"
    assert past_tense("study") == "studied" and past_tense("play") == "played" and past_tense("work") == "worked"
    assert third_singular("watch") == "watches" and third_singular("fly") == "flies"
    assert third_singular("write") == "writes"


def test_content_preservation_counts_inflections():
    q = tokenize("where did the author of iron road die")
    assert content_preservation(q, tokenize("the author of iron road died in rome .")) == 1.0
    assert content_preservation(q, tokenize("rome .")) == 0.0
    assert content_preservation(["the", "of"], []) == 1.0


def test_threshold_gates_output():
    q, a = tokenize("Who wrote Hamlet?"), tokenize("Shakespeare")
    assert qa2d(q, a, threshold=1.0) is not None
    assert qa2d(tokenize("What was the birth date of Ada?"), ["x"], threshold=1.01) is None


def test_corpus_conversions_keep_answer_and_content():
    corpus = generate_corpus(3, 300)
    n = 0
    for ex in corpus.train + corpus.dev + corpus.test:
        q, a = tokenize(ex.question), tokenize(ex.answer)
        out = qa2d(q, a)
        if out is None:
            continue
        n += 1
        assert contains_run(out, a)
        assert content_preservation(q, out) >= 0.7
    assert n > 200


words = st.sampled_from(
    ["what", "who", "which", "when", "where", "did", "does", "do", "was", "is", "by", "whom", "in", "the",
     "of", "born", "wrote", "write", "die", "novel", "lyon", ",", "or", "?", "1864", "a", "", " ", "é", "x y"])


@settings(max_examples=400, deadline=None)
@given(st.lists(words, max_size=12), st.lists(words, max_size=4))
def test_total_and_contract_over_arbitrary_tokens(q, a):
    out = qa2d(q, a)
    if out is not None:
        aa = [t.lower() for t in a]
        assert contains_run(out, aa)
        assert content_preservation(q, out) >= 0.7


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(max_size=6), max_size=10), st.lists(st.text(max_size=6), max_size=3))
def test_total_over_arbitrary_text(q, a):
    qa2d(q, a)


def _ex(i, q, a, kind="bridge"):
    return Example(f"e{i}", f"{a} context", a, q, None, [], kind)


def test_coverage_report():
    ds = [_ex(0, "Who wrote Hamlet?", "Shakespeare"), _ex(1, "Where was Ada born?", "Lyon"),
          _ex(2, "What was the name of the ship?", "Argo")]
    rep = coverage_report(ds)
    assert (rep.converted, rep.skipped) == (3, 0)
    rep = coverage_report([])
    assert (rep.converted, rep.skipped) == (0, 0)
    rep = coverage_report(ds + [_ex(3, "Is it big?", "yes", "comparison")])
    assert rep.by_type["comparison"] == {"converted": 0, "skipped": 1}
    assert [r["converted"] for r in rep.records] == [True, True, True, False]


def test_coverage_on_synthetic_corpus():
    corpus = generate_corpus(11, 200)
    rep = coverage_report(corpus.train)
    assert rep.by_type["bridge"]["skipped"] == 0
    assert rep.by_type["comparison"]["converted"] == 0
    assert rep.by_type["comparison"]["skipped"] > 0
