import json

import numpy as np
import pytest

from multifactor import pet
from multifactor.corpus import DataError, assemble_input, generate_corpus, tokenize
from multifactor.corpus.text import PASSAGE
from multifactor.pipeline import (
    MODES,
    Checkpoint,
    ConfigError,
    PipelineConfig,
    build_vocab,
    decode_full_answers,
    fit,
    generate_questions,
    infer,
    infer_oracle_fa,
    oracle_full_answers,
    q_items,
    required_models,
    run_ablation,
    select_oracle,
    train_fa,
    train_q,
    training_subset,
)

TINY = dict(d_model=16, num_heads=2, d_ff=32, encoder_layers=1, decoder_layers=1, dropout=0.0,
            epochs=2, batch_size=8, max_decode_len=12, lr=3e-3)


@pytest.fixture(scope="module")
def world():
    corpus = generate_corpus(4, 40)
    vocab = build_vocab(corpus.train)
    cfg = PipelineConfig(**TINY)
    fa = train_fa(corpus.train, corpus.dev, vocab, cfg, seed=0)
    q = train_q(corpus.train, corpus.dev, vocab, cfg, seed=0, mode="pet", layout="Q")
    return corpus, vocab, cfg, fa, q


def test_config_roundtrip_and_validation():
    cfg = PipelineConfig(**TINY)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.replace(epochs=5).epochs == 5
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"epochz": 3})
    with pytest.raises(ConfigError):
        PipelineConfig(beam_width=0)
    with pytest.raises(ConfigError):
        PipelineConfig(oracle_reference="nope")
    with pytest.raises(ConfigError):
        PipelineConfig(d_model=10, num_heads=4).model_config(50)


def test_required_models():
    assert required_models(["fine-tuned"]) == ["q:fine-tuned"]
    assert required_models(["one-hot", "pet-q"]) == ["q:pet"]
    assert required_models(["multifactor", "q-gold-fa", "q-oracle-fa"]) == ["fa", "q:multifactor"]
    assert set(required_models(MODES)) == {"q:fine-tuned", "q:cls+gen", "q:pet", "fa", "q:multifactor",
                                           "q:no-context"}
    with pytest.raises(ConfigError):
        required_models(["t5"])


def test_training_subset_policy():
    corpus = generate_corpus(4, 40)
    kept = training_subset(corpus.train, False)
    assert all(e.full_answer is not None for e in kept) and len(kept) < len(corpus.train)
    assert training_subset(corpus.train, True) == corpus.train


def test_loss_decreases_over_first_50_steps():
    corpus = generate_corpus(1, 40)
    vocab = build_vocab(corpus.train)
    cfg = PipelineConfig(**TINY)
    model = cfg.model_config(len(vocab))
    items = q_items(corpus.train, vocab, model, "FA")
    losses = []
    fit(items, [], "pet", "FA", model, cfg.replace(epochs=100), 0, max_steps=50,
        on_step=lambda s, v: losses.append(v))
    assert len(losses) == 50
    assert np.mean(losses[-10:]) < 0.8 * np.mean(losses[:10])


def test_fine_tuned_checkpoint_has_no_phrase_parameters():
    corpus = generate_corpus(1, 20)
    vocab = build_vocab(corpus.train)
    ck = train_q(corpus.train, [], vocab, PipelineConfig(**{**TINY, "epochs": 1}), 0, "fine-tuned", "FA")
    assert not any(k.startswith("phrase_classifier") or ".fusion." in k for k in ck.params)
    extra = set(pet.init_pet_params(ck.model, 0, "pet")) - set(ck.params)
    assert extra and all(k.startswith("phrase_classifier") or k.endswith("fusion.W_delta") for k in extra)


def test_generated_fa_source_needs_checkpoint():
    corpus = generate_corpus(1, 20)
    vocab = build_vocab(corpus.train)
    with pytest.raises(ConfigError):
        train_q(corpus.train, corpus.dev, vocab, PipelineConfig(**TINY), 0, "pet", "Q", fa_source="generated")
    with pytest.raises(ConfigError):
        train_q(corpus.train, corpus.dev, vocab, PipelineConfig(**TINY), 0, "pet", "XYZ")


def test_empty_training_set_is_data_error():
    corpus = generate_corpus(1, 20)
    vocab = build_vocab(corpus.train)
    comparisons = [e for e in corpus.train if e.full_answer is None]
    with pytest.raises(DataError):
        train_q(comparisons, [], vocab, PipelineConfig(**TINY), 0, "pet", "Q")


def test_no_context_layout_drops_passage(world):
    corpus, vocab, cfg, _, _ = world
    model = cfg.model_config(len(vocab))
    ex = training_subset(corpus.train, False)[:5]
    for item in q_items(ex, vocab, model, "Q-no-context"):
        assert vocab.id(PASSAGE) not in item.input_ids
    for item in q_items(ex, vocab, model, "Q"):
        assert vocab.id(PASSAGE) in item.input_ids


def test_checkpoint_roundtrip(world, tmp_path):
    *_, q = world
    q.save(tmp_path / "q.ckpt")
    back = Checkpoint.load(tmp_path / "q.ckpt")
    assert back.model == q.model and (back.mode, back.layout) == (q.mode, q.layout)
    assert back.best_epoch == q.best_epoch and back.history == json.loads(json.dumps(q.history))
    assert all(np.array_equal(back.params[k].data, q.params[k].data) for k in q.params)


def test_best_epoch_follows_dev_nll(world):
    *_, q = world
    nll = [h["dev_nll"] for h in q.history]
    assert q.best_epoch == int(np.argmin(nll))
    assert all(h["dev_loss"] >= h["dev_nll"] - 1e-12 for h in q.history)


def test_infer_is_deterministic_and_feeds_best_fa(world):
    corpus, vocab, cfg, fa, q = world
    test = corpus.test
    a = infer(test, fa, q, vocab, cfg)
    b = infer(test, fa, q, vocab, cfg)
    assert [g.as_dict() for g in a] == [g.as_dict() for g in b]
    best = decode_full_answers(test, fa, vocab, cfg)
    for g, ex, s in zip(a, test, best):
        assert g.full_answer == s.tokens
        want = assemble_input(ex, "Q", vocab, s.tokens, max_len=q.model.max_sequence_length)
        assert g.q_input.ids == want.ids and g.q_input.spans == want.spans


def test_oracle_k1_equals_greedy_pipeline(world):
    corpus, vocab, cfg, fa, q = world
    test = corpus.test
    oracle = infer_oracle_fa(test, fa, q, vocab, cfg, k=1)
    plain = infer(test, fa, q, vocab, cfg)
    assert [g.question for g in oracle] == [g.question for g in plain]
    with pytest.raises(ConfigError):
        oracle_full_answers(test, fa, vocab, cfg, k=0)


def test_oracle_fa_falls_back_without_reference(world):
    corpus, vocab, cfg, fa, _ = world
    no_ref = [e for e in corpus.train if e.full_answer is None][:2]
    got = oracle_full_answers(no_ref, fa, vocab, cfg, k=3)
    assert got == [d.tokens for d in decode_full_answers(no_ref, fa, vocab, cfg, width=3)]


def test_select_oracle_is_order_invariant():
    ref = "ada hale was born in lyon .".split()
    cands = [ref[:-1] + ["!"], "ada hale was born in oslo .".split(), "lyon".split(), list(ref)]
    assert select_oracle(cands, ref) == ref
    rng = np.random.default_rng(0)
    tied = [["b", "x"], ["a", "x"], ["c", "x"]]
    for _ in range(10):
        perm = [tied[i] for i in rng.permutation(3)]
        assert select_oracle(perm, ["z"]) == ["a", "x"]
    with pytest.raises(ValueError):
        select_oracle([], ref)


def test_diagnostics_expose_phrase_probabilities(world):
    corpus, vocab, cfg, fa, q = world
    g = infer(corpus.test[:1], fa, q, vocab, cfg, diagnostics=True)[0]
    d = g.as_dict(diagnostics=True)
    assert d["fa_phrases"] and all(0.0 <= p["z"] <= 1.0 for p in d["fa_phrases"])
    assert len(d["q_importance"]) == len(g.q_input.ids)
    for p in d["q_phrases"]:
        assert all(d["q_importance"][i] == pytest.approx(p["z"]) for i in range(p["start"], p["end"]))


def test_single_stage_generation_ignores_full_answers(world):
    corpus, vocab, cfg, *_ = world
    ck = train_q(corpus.train, [], vocab, cfg.replace(epochs=1), 0, "fine-tuned", "FA")
    gens = generate_questions(corpus.test, ck, vocab, cfg)
    assert all(g.full_answer is None and g.q_input.full_answer is None for g in gens)


def test_memorised_example_reproduces_question():
    corpus = generate_corpus(2, 20)
    ex = training_subset(corpus.train, False)[:1]
    vocab = build_vocab(corpus.train)
    cfg = PipelineConfig(**{**TINY, "d_model": 32, "d_ff": 64, "epochs": 300, "batch_size": 1, "max_decode_len": 40})
    q = train_q(ex, [], vocab, cfg, 0, "pet", "Q")
    g = generate_questions(ex, q, vocab, cfg, [tokenize(ex[0].full_answer)])[0]
    assert g.question == tokenize(ex[0].question) and g.finished


def test_ablation_manifest_is_reproducible(tmp_path):
    cfg = PipelineConfig(**{**TINY, "epochs": 1, "corpus_size": 30})
    modes = ["fine-tuned", "multifactor", "q-gold-fa"]
    m1, r1 = run_ablation(cfg, 3, modes, tmp_path / "a")
    m2, r2 = run_ablation(cfg, 3, modes, tmp_path / "b")
    assert m1.metrics_json() == m2.metrics_json()
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seeds"] == {"run": 3, "corpus": 3} and manifest["modes"] == modes
    assert set(manifest["checkpoints"]) == {"q:fine-tuned", "fa", "q:multifactor"}
    assert manifest["policy"]["eval_examples"] == 3
    rows = (tmp_path / "a" / "predictions.multifactor.jsonl").read_text().splitlines()
    assert len(rows) == 3 and set(json.loads(rows[0])) == {"id", "hypothesis", "reference"}
    assert set(r1) == set(modes)


def test_q_model_without_context_phrases_keeps_forced_full_answer(world):
    corpus, vocab, cfg, fa, _ = world
    off = cfg.replace(q_context_phrases=False, epochs=1)
    q = train_q(corpus.train, [], vocab, off, 0, "pet", "Q")
    assert q.context_phrases is False
    g = infer(corpus.test[:2], fa, q, vocab, off, diagnostics=True)
    for gen in g:
        assert gen.q_input.spans == [] and gen.q_phrases == []
        s, e = gen.q_input.full_answer
        assert all(v == 1.0 for v in gen.q_importance[s:e])
        assert all(v == 0.0 for i, v in enumerate(gen.q_importance) if not s <= i < e)
