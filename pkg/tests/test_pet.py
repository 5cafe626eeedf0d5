import math

import numpy as np
import pytest

from multifactor import numerics as nx
from multifactor import pet
from multifactor import transformer as tfm
from multifactor.numerics import Tensor
from multifactor.pet import PetItem, PhraseSpan
from multifactor.transformer import ModelConfig


def micro(**kw):
    base = dict(vocab_size=20, d_model=16, num_heads=2, d_ff=32, encoder_layers=1, decoder_layers=1,
                max_sequence_length=32, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def micro_batch(config, n_items=1, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n_items):
        ids = [4] + list(rng.integers(7, config.vocab_size, size=2)) + [5] + list(rng.integers(7, config.vocab_size, size=8))
        spans = [PhraseSpan(5, 7, label=1), PhraseSpan(9, 12, label=0)]
        tgt = list(rng.integers(7, config.vocab_size, size=5))
        items.append(PetItem(ids, tgt, spans, context=(4, 12)))
    return pet.collate(items, config)


def test_pool_phrase_examples():
    H = np.array([[1.0, 2.0], [3.0, 0.0], [7.0, 7.0]])
    assert pet.pool_phrase(H, PhraseSpan(0, 2)).tolist() == [3.0, 2.0, 2.0, 1.0]
    assert pet.pool_phrase(H, PhraseSpan(2, 3)).tolist() == [7.0, 7.0, 7.0, 7.0]
    const = np.full((4, 3), 2.5)
    assert pet.pool_phrase(const, PhraseSpan(1, 4)).tolist() == [2.5] * 6
    with pytest.raises(pet.SpanError):
        PhraseSpan(2, 2)
    with pytest.raises(pet.SpanError):
        pet.pool_phrase(H, PhraseSpan(1, 5))


def test_classify_zero_weights_is_half():
    H = np.random.default_rng(0).normal(size=(6, 4))
    params = {"phrase_classifier.W": Tensor(np.zeros((8, 2))), "phrase_classifier.b": Tensor(np.zeros(2))}
    z = pet.classify_phrases(H, [PhraseSpan(0, 2), PhraseSpan(3, 6)], params)
    assert z.tolist() == [0.5, 0.5]


def test_classify_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    H = rng.normal(size=(5, 3))
    W, b = rng.normal(size=(6, 2)), rng.normal(size=2)
    params = {"phrase_classifier.W": Tensor(W), "phrase_classifier.b": Tensor(b)}
    spans = [PhraseSpan(0, 3), PhraseSpan(4, 5)]
    got = pet.classify_phrases(H, spans, params)
    for s, zi in zip(spans, got):
        rows = [list(H[j]) for j in range(s.start, s.end)]
        feat = [max(r[c] for r in rows) for c in range(3)] + [sum(r[c] for r in rows) / len(rows) for c in range(3)]
        logit = [sum(feat[i] * W[i][k] for i in range(6)) + b[k] for k in range(2)]
        oracle = math.exp(logit[1]) / (math.exp(logit[0]) + math.exp(logit[1]))
        assert abs(zi - oracle) < 1e-12
        assert 0.0 < zi < 1.0


def test_classifier_two_classes_sum_to_one():
    c = micro()
    params = pet.init_pet_params(c, 0, "pet")
    batch = micro_batch(c, 3)
    with nx.no_grad():
        out = pet.pet_forward(batch, "pet", params, c, training=False)
    pr = nx.softmax_array(out.phrase_logits.data, -1)
    assert np.all(np.abs(pr.sum(axis=1) - 1.0) <= 1e-12)


def test_build_delta_examples():
    assert pet.build_delta(3, [], []).tolist() == [[1, 0]] * 3
    d = pet.build_delta(4, [PhraseSpan(1, 3)], [1.0])
    assert d.tolist() == [[1, 0], [0, 1], [0, 1], [1, 0]]
    d = pet.build_delta(4, [PhraseSpan(2, 4)], [0.3])
    assert np.allclose(d[2:], [[0.7, 0.3], [0.7, 0.3]], atol=0)
    assert pet.build_delta(4, [PhraseSpan(0, 2)], [0.6], mode="hard").tolist() == [[0, 1], [0, 1], [1, 0], [1, 0]]
    forced = pet.build_delta(5, [PhraseSpan(0, 1)], [0.2], forced=[(3, 5)])
    assert forced[3:].tolist() == [[0, 1], [0, 1]]
    with pytest.raises(RuntimeError):
        pet.build_delta(5, [PhraseSpan(0, 3), PhraseSpan(2, 4)], [0.1, 0.2])
    with pytest.raises(ValueError):
        pet.build_delta(5, [PhraseSpan(0, 3)], [1.5])


def test_delta_rows_by_phase():
    c = micro()
    params = pet.init_pet_params(c, 0, "pet")
    batch = micro_batch(c, 2)
    train = pet.pet_forward(batch, "pet", params, c, training=True).delta
    assert set(np.unique(train)) <= {0.0, 1.0}
    nx.clear_tape()
    with nx.no_grad():
        infer = pet.pet_forward(batch, "pet", params, c, training=False).delta
    assert infer.min() >= 0 and infer.max() <= 1
    assert np.allclose(infer.sum(axis=-1), 1.0, atol=1e-15)


def test_fuse_keys_zero_fusion_exact():
    rng = np.random.default_rng(2)
    H, Wk = Tensor(rng.normal(size=(2, 5, 8))), Tensor(rng.normal(size=(8, 8)))
    delta = pet.build_delta(5, [PhraseSpan(1, 3)], [0.8])
    d2 = np.stack([delta, delta])
    fused = pet.fuse_keys(H, d2, Wk, Tensor(np.zeros((2, 4))), num_heads=2).data
    assert np.array_equal(fused, H.data @ Wk.data)


def test_fuse_keys_hand_case():
    H = Tensor([[1.0, 0.0], [0.0, 1.0]])
    delta = pet.build_delta(2, [PhraseSpan(0, 1)], [1.0])
    Wd = Tensor([[0.0, 0.0], [1.0, 1.0]])
    out = pet.fuse_keys(H, delta, Tensor(np.eye(2)), Wd)
    assert out.data.tolist() == [[2.0, 1.0], [0.0, 1.0]]
    with pytest.raises(nx.DimensionError):
        pet.fuse_keys(H, np.ones((3, 2)), Tensor(np.eye(2)), Wd)


@pytest.mark.parametrize("seed", range(10))
def test_fusion_degeneracy_with_no_phrases(seed):
    c = micro(num_heads=4, decoder_layers=2)
    params = pet.init_pet_params(c, seed, "pet")
    rng = np.random.default_rng(seed)
    for i in range(c.decoder_layers):
        params[f"decoder.layer{i}.fusion.W_delta"].data[:] = rng.normal(scale=3.0, size=(2, c.d_k))
    batch = micro_batch(c, 2, seed)
    batch.spans = [[], []]
    batch.span_rows = np.zeros((0, 3), dtype=np.int64)
    batch.labels = np.zeros(0, dtype=np.int64)
    with nx.no_grad():
        fused = pet.pet_forward(batch, "pet", params, c, training=False, return_attention=True)
        plain = pet.pet_forward(batch, "fine-tuned", params, c, return_attention=True)
    assert np.all(fused.delta[..., 0] == 1.0)
    for a, b in zip(fused.attention, plain.attention):
        assert np.max(np.abs(a - b)) < 1e-10


def test_fine_tuned_equals_vanilla_bitwise():
    c = micro()
    ft = pet.init_pet_params(c, 3, "fine-tuned")
    van = tfm.init_params(c, 3)
    assert list(ft) == list(van)
    batch = micro_batch(c, 2)
    with nx.no_grad():
        a = pet.pet_forward(batch, "fine-tuned", ft, c).logits.data
        H = tfm.encode(batch.src, batch.src_mask, c, van)
        b = tfm.decode(batch.y_in, tfm.cross_memory(H, c, van), batch.src_mask, c, van).data
    assert np.array_equal(a, b)


def test_zero_fusion_pet_equals_cls_gen():
    c = micro()
    p_pet = pet.init_pet_params(c, 4, "pet")
    p_cls = pet.init_pet_params(c, 4, "cls+gen")
    for k in p_cls:
        assert np.array_equal(p_pet[k].data, p_cls[k].data)
    batch = micro_batch(c, 2)
    with nx.no_grad():
        a = pet.pet_forward(batch, "pet", p_pet, c, training=True).logits.data
        b = pet.pet_forward(batch, "cls+gen", p_cls, c).logits.data
    assert np.array_equal(a, b)


def test_mode_parameter_names():
    c = micro()
    ft = pet.init_pet_params(c, 0, "fine-tuned")
    assert not any(k.startswith("phrase_classifier") or "fusion" in k for k in ft)
    cls = pet.init_pet_params(c, 0, "cls+gen")
    assert "phrase_classifier.W" in cls and not any("fusion" in k for k in cls)
    full = pet.init_pet_params(c, 0, "pet")
    assert "decoder.layer0.fusion.W_delta" in full
    assert np.all(full["decoder.layer0.fusion.W_delta"].data == 0)
    assert np.all(full["phrase_classifier.b"].data == 0)


@pytest.mark.parametrize("d,heads,layers", [(16, 2, 1), (64, 4, 2), (96, 12, 12), (24, 3, 5)])
def test_parameter_overhead_arithmetic(d, heads, layers):
    c = ModelConfig(vocab_size=30, d_model=d, num_heads=heads, d_ff=8, encoder_layers=1, decoder_layers=layers,
                    max_sequence_length=4)
    extra = tfm.count_parameters(pet.init_pet_params(c, 0, "pet")) - tfm.count_parameters(tfm.init_params(c, 0))
    assert extra == (2 * d * 2 + 2) + layers * 2 * c.d_k
    assert extra == pet.param_overhead(c)


def test_joint_loss_examples():
    gen = Tensor(np.zeros((1, 2, 4)))
    targets = np.array([[3, 0]])
    ce = math.log(4)
    assert pet.joint_loss(gen, targets, Tensor([[0.0, 5.0]]), np.array([0]), 0.0).item() == pytest.approx(ce)
    # construct logits with known CE values: gen CE 2.0, phrase CE 0.5
    g = np.zeros((1, 1, 2))
    g[0, 0, 0] = math.log(math.exp(2.0) - 1.0)
    p = np.array([[0.0, math.log(math.exp(0.5) - 1.0)]])
    total = pet.joint_loss(Tensor(g), np.array([[1]]), Tensor(p), np.array([0]), 1.0).item()
    assert total == pytest.approx(2.5, abs=1e-12)
    perfect = pet.joint_loss(Tensor([[[0.0, 60.0]]]), np.array([[1]]), Tensor([[0.0, 60.0]]), np.array([1]), 1.0)
    assert perfect.item() < 1e-20


def test_joint_loss_without_phrases_is_generation_only():
    gen = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5)))
    t = np.array([[1, 2, 0], [3, 4, 2]])
    a = pet.joint_loss(gen, t, None, np.zeros(0), 1.0).item()
    b = nx.cross_entropy(nx.reshape(gen, (-1, 5)), t.reshape(-1), ignore_id=0).item()
    assert a == b


def _loss_fn(batch, mode, params, c, lam=1.0):
    def f():
        out = pet.pet_forward(batch, mode, params, c, training=True)
        return pet.joint_loss(out.logits, batch.y_out, out.phrase_logits, batch.labels, lam, c.pad_id)

    return f


def test_w_delta_gradient_nonzero_and_matches_fd():
    c = micro()
    params = pet.init_pet_params(c, 5, "pet")
    batch = micro_batch(c, 1, seed=5)
    W = params["decoder.layer0.fusion.W_delta"]
    f = _loss_fn(batch, "pet", params, c)
    nx.zero_grad(params)
    nx.backward(f())
    assert np.abs(W.grad).max() > 1e-6
    num = nx.numeric_grad(f, W)
    assert nx.relative_error(W.grad, num).max() < 1e-6


def test_end_to_end_gradient_check():
    """Every parameter of a micro PET, 12-token input, 2 phrases."""
    c = micro()
    params = pet.init_pet_params(c, 7, "pet")
    rng = np.random.default_rng(7)
    for t in params.values():
        t.data[...] = t.data + rng.normal(scale=0.1, size=t.shape)
    batch = micro_batch(c, 1, seed=7)
    assert batch.src.shape[1] == 12 and len(batch.span_rows) == 2
    errs = nx.check_gradients(_loss_fn(batch, "pet", params, c), params)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, (worst, errs[worst])


def test_collate_rejects_span_outside_context():
    c = micro()
    with pytest.raises(pet.SpanError):
        pet.collate([PetItem([4, 8, 5, 9, 10], [9], [PhraseSpan(0, 2, 1)], context=(3, 5))], c)


def test_training_config_validation():
    with pytest.raises(ValueError):
        pet.TrainingConfig(lam=-1)
    with pytest.raises(ValueError):
        pet.TrainingConfig(mode="bogus")
