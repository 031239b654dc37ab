import copy
import json

import numpy as np
import pytest

from cmla.autodiff import Tensor, backward, constant, grad_check, init_uniform, zeros
from cmla.bio import ASPECT, B, I, O, OPINION, LabelSeq, Span
from cmla.data import DataFormatError, SynthConfig, generate_synthetic
from cmla.model import (
    CLASS_INDEX,
    CLASS_ORDER,
    CmlaParams,
    TrainConfig,
    TrainingDiverged,
    attention_layer,
    compose,
    embed_sentence,
    forward,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    sentence_loss,
    train,
    update_prototype,
)


@pytest.fixture(scope="module")
def tiny_corpus():
    return generate_synthetic(SynthConfig(dim=6))


def random_inputs(d, n, seed=0):
    gen = np.random.default_rng(seed)
    return [constant(gen.uniform(-1, 1, size=d)) for _ in range(n)]


def random_gold(n, head, seed=0):
    gen = np.random.default_rng(seed)
    return LabelSeq([CLASS_ORDER[int(gen.integers(3))] for _ in range(n)], head)


# --- parameters -------------------------------------------------------------


def test_init_shapes_and_prototype_band():
    params = CmlaParams.init(dim=5, channels=3, rng=0, init_scale=0.7)
    params.check_shapes()
    assert params.dim == 5 and params.channels == 3 and params.layers == 2
    for head in (params.aspect, params.opinion):
        assert np.all(np.abs(head.prototype.data) <= 0.2)
        assert np.all(np.abs(head.comp.data) <= 0.7)
    names = set(params.named_tensors())
    assert "ctx_gru.W_z" in names and "aspect.comp" in names and "opinion.proto_map" in names
    assert len(names) == 9 + 2 * (9 + 5)


def test_init_validation():
    with pytest.raises(ValueError):
        CmlaParams.init(dim=0, channels=2, rng=0)
    with pytest.raises(ValueError):
        CmlaParams.init(dim=2, channels=2, rng=0, layers=0)


def test_init_deterministic():
    a = CmlaParams.init(dim=4, channels=2, rng=11)
    b = CmlaParams.init(dim=4, channels=2, rng=11)
    for (na, ta), (nb, tb) in zip(a.named_tensors().items(), b.named_tensors().items()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)


# --- compose ----------------------------------------------------------------


def test_compose_zero_tensors_give_zero_vector():
    h = constant(np.ones(3))
    u = constant(np.ones(3))
    z = constant(np.zeros((2, 3, 3)))
    out = compose(h, u, u, z, z)
    assert np.array_equal(out.data, np.zeros(4))


def test_compose_scalar_case():
    h = constant([0.5])
    u_self = constant([1.0])
    u_other = constant([0.0])
    g = constant([[[2.0]]])
    out = compose(h, u_self, u_other, g, g)
    assert out.data.shape == (2,)
    assert abs(out.data[0] - np.tanh(1.0)) < 1e-15
    assert out.data[1] == 0.0


def test_compose_matches_loop_oracle():
    gen = np.random.default_rng(5)
    d, k = 4, 3
    h = constant(gen.uniform(-1, 1, size=d))
    u_self = constant(gen.uniform(-1, 1, size=d))
    u_other = constant(gen.uniform(-1, 1, size=d))
    comp = constant(gen.uniform(-1, 1, size=(k, d, d)))
    cross = constant(gen.uniform(-1, 1, size=(k, d, d)))
    out = compose(h, u_self, u_other, comp, cross)
    assert np.all(np.abs(out.data) < 1.0)
    for c in range(k):
        own = sum(h.data[i] * comp.data[c, i, j] * u_self.data[j]
                  for i in range(d) for j in range(d))
        coupled = sum(h.data[i] * cross.data[c, i, j] * u_other.data[j]
                      for i in range(d) for j in range(d))
        assert abs(out.data[c] - np.tanh(own)) < 1e-12
        assert abs(out.data[k + c] - np.tanh(coupled)) < 1e-12


# --- attention layer --------------------------------------------------------


def test_attention_single_token_score_is_one():
    params = CmlaParams.init(dim=4, channels=2, rng=1)
    h_seq = random_inputs(4, 1, seed=2)
    out = attention_layer(h_seq, params.aspect, params.aspect.prototype, params.opinion.prototype)
    assert out.norm_scores.data.shape == (1,)
    assert abs(out.norm_scores.data[0] - 1.0) <= 1e-12


def test_attention_zero_params_uniform_scores():
    params = CmlaParams.init(dim=4, channels=2, rng=1)
    for t in params.all_tensors():
        t.data[:] = 0.0
    h_seq = random_inputs(4, 5, seed=3)
    out = attention_layer(h_seq, params.aspect, params.aspect.prototype, params.opinion.prototype)
    assert np.allclose(out.norm_scores.data, np.full(5, 0.2), atol=1e-15)


def test_attention_outputs_per_token():
    params = CmlaParams.init(dim=4, channels=2, rng=4)
    h_seq = random_inputs(4, 3, seed=5)
    out = attention_layer(h_seq, params.aspect, params.aspect.prototype, params.opinion.prototype)
    assert len(out.features) == 3 and len(out.logits) == 3
    assert all(l.data.shape == (3,) for l in out.logits)
    for i, l in enumerate(out.logits):
        assert out.raw_scores.data[i] == max(l.data[0], l.data[1])


# --- update_prototype -------------------------------------------------------


def test_update_prototype_zero_map_is_identity():
    u = constant(np.array([1.0, -2.0, 0.5]))
    scores = constant(np.array([0.3, 0.7]))
    h_seq = random_inputs(3, 2, seed=6)
    out = update_prototype(u, scores, h_seq, constant(np.zeros((3, 3))))
    assert np.array_equal(out.data, u.data)


def test_update_prototype_single_token_identity_map():
    u = constant(np.array([1.0, 2.0]))
    h = constant(np.array([0.25, -0.5]))
    out = update_prototype(u, constant(np.array([1.0])), [h], constant(np.eye(2)))
    assert np.allclose(out.data, u.data + h.data, atol=1e-15)


def test_update_prototype_matches_weighted_sum_oracle():
    gen = np.random.default_rng(7)
    d, n = 4, 5
    u = constant(gen.uniform(-1, 1, size=d))
    raw = gen.uniform(0.1, 1.0, size=n)
    w = raw / raw.sum()
    h_seq = [constant(gen.uniform(-1, 1, size=d)) for _ in range(n)]
    v = constant(gen.uniform(-1, 1, size=(d, d)))
    out = update_prototype(u, constant(w), h_seq, v)
    expected = u.data + sum(w[i] * (v.data @ h_seq[i].data) for i in range(n))
    assert np.allclose(out.data, expected, atol=1e-12)


def test_update_prototype_rejects_unnormalized_weights():
    u = constant(np.zeros(2))
    h_seq = random_inputs(2, 2, seed=8)
    bad = constant(np.array([0.5, 0.6]))
    with pytest.raises(ValueError, match="weight-sum violation beyond 1e-9"):
        update_prototype(u, bad, h_seq, constant(np.eye(2)))


def test_update_prototype_rejects_length_mismatch():
    u = constant(np.zeros(2))
    with pytest.raises(ValueError):
        update_prototype(u, constant(np.array([1.0])), random_inputs(2, 2), constant(np.eye(2)))


# --- forward ----------------------------------------------------------------


def test_forward_single_token_distributions_sum_to_one():
    params = CmlaParams.init(dim=4, channels=2, rng=9)
    fwd = forward(random_inputs(4, 1, seed=10), params)
    for out in (fwd.aspect, fwd.opinion):
        probs = np.exp(out.logits[0].data)
        probs /= probs.sum()
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert abs(out.norm_scores.data.sum() - 1.0) <= 1e-12


def test_forward_norm_scores_sum_to_one_multi_token():
    params = CmlaParams.init(dim=5, channels=3, rng=11)
    fwd = forward(random_inputs(5, 6, seed=12), params)
    assert abs(fwd.aspect.norm_scores.data.sum() - 1.0) <= 1e-12
    assert abs(fwd.opinion.norm_scores.data.sum() - 1.0) <= 1e-12


def test_forward_single_layer_is_causal():
    # with one attention layer the prototypes never feed back through the
    # sentence-wide softmax, so a token appended at the end cannot change
    # the logits of the tokens before it
    params = CmlaParams.init(dim=4, channels=2, rng=13, layers=1)
    xs = random_inputs(4, 4, seed=14)
    base = forward(xs, params)
    extended = forward(xs + random_inputs(4, 1, seed=15), params)
    for head in ("aspect", "opinion"):
        for t in range(4):
            assert np.array_equal(
                getattr(base, head).logits[t].data, getattr(extended, head).logits[t].data
            )


def test_forward_layer_count_changes_output():
    xs = random_inputs(4, 3, seed=16)
    one = CmlaParams.init(dim=4, channels=2, rng=17, layers=1)
    two = CmlaParams.init(dim=4, channels=2, rng=17, layers=2)
    a = forward(xs, one).aspect.logits[0].data
    b = forward(xs, two).aspect.logits[0].data
    assert not np.array_equal(a, b)


def test_forward_full_gradcheck_small():
    gen = np.random.default_rng(18)
    params = CmlaParams.init(dim=6, channels=3, rng=gen, init_scale=1.2)
    xs = [constant(gen.uniform(-1, 1, size=6)) for _ in range(4)]
    ga = random_gold(4, ASPECT, seed=19)
    gp = random_gold(4, OPINION, seed=20)

    def f():
        fwd = forward(xs, params)
        return loss(fwd.aspect.logits, fwd.opinion.logits, ga, gp)

    assert grad_check(f, params.all_tensors(), max_coords_per_param=4, rng=21) < 1e-4


# --- loss -------------------------------------------------------------------


def test_loss_uniform_logits_is_two_ln_three():
    n = 5
    logits = [constant(np.zeros(3)) for _ in range(n)]
    ga = LabelSeq([O] * n, ASPECT)
    gp = LabelSeq([O] * n, OPINION)
    val = loss(logits, logits, ga, gp)
    assert abs(val.item() - 2 * np.log(3)) < 1e-12


def test_loss_perfect_logits_tends_to_zero():
    n = 3
    strong = []
    gold = [B, I, O]
    for lab in gold:
        vec = np.full(3, -50.0)
        vec[CLASS_INDEX[lab]] = 50.0
        strong.append(constant(vec))
    val = loss(strong, strong, LabelSeq(gold, ASPECT), LabelSeq(gold, OPINION))
    assert val.item() < 1e-12


def test_loss_matches_direct_oracle():
    gen = np.random.default_rng(22)
    n = 4
    la = [constant(gen.normal(size=3)) for _ in range(n)]
    lp = [constant(gen.normal(size=3)) for _ in range(n)]
    ga = random_gold(n, ASPECT, seed=23)
    gp = random_gold(n, OPINION, seed=24)
    val = loss(la, lp, ga, gp)

    def head_nll(logits, gold):
        total = 0.0
        for vec, lab in zip(logits, gold.labels):
            p = np.exp(vec.data) / np.exp(vec.data).sum()
            total -= np.log(p[CLASS_INDEX[lab]])
        return total / len(gold.labels)

    expected = head_nll(la, ga) + head_nll(lp, gp)
    assert abs(val.item() - expected) < 1e-12
    assert val.item() >= 0.0


def test_loss_length_mismatch():
    logits = [constant(np.zeros(3))]
    with pytest.raises(ValueError):
        loss(logits, logits, LabelSeq([O, O], ASPECT), LabelSeq([O], OPINION))


# --- training ---------------------------------------------------------------


def test_train_zero_epochs_leaves_params_bitwise(tiny_corpus):
    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=25)
    before = {n: t.data.copy() for n, t in params.named_tensors().items()}
    trace = train(sents[:3], table, params, TrainConfig(epochs=0))
    assert trace == []
    for name, t in params.named_tensors().items():
        assert np.array_equal(t.data, before[name])


def test_train_two_runs_identical(tiny_corpus):
    sents, table = tiny_corpus

    def run():
        params = CmlaParams.init(dim=6, channels=2, rng=26)
        trace = train(sents[:4], table, params, TrainConfig(lr=0.3, epochs=3, seed=5))
        return trace, {n: t.data.copy() for n, t in params.named_tensors().items()}

    trace_a, state_a = run()
    trace_b, state_b = run()
    assert trace_a == trace_b
    for name in state_a:
        assert np.array_equal(state_a[name], state_b[name])


def test_train_reduces_loss_on_tiny_set(tiny_corpus):
    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=27)
    trace = train(sents[:4], table, params, TrainConfig(lr=0.3, epochs=12, seed=0))
    assert trace[-1] < trace[0]


def test_train_nan_loss_aborts_naming_sentence(tiny_corpus):
    sents, table = tiny_corpus
    poisoned = copy.deepcopy(table)
    word = sents[1].tokens[0].surface.lower()
    poisoned.vectors[word] = np.full(table.dim, np.nan)
    params = CmlaParams.init(dim=6, channels=2, rng=28)
    with pytest.raises(TrainingDiverged, match="sentence index"):
        train(sents[:3], table=poisoned, params=params, config=TrainConfig(epochs=1))


def test_train_rejects_empty_dataset(tiny_corpus):
    _, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=29)
    with pytest.raises(ValueError):
        train([], table, params, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(clip=0.0)


def test_no_dead_parameters_on_fixture(tiny_corpus):
    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=30)
    totals = {t: 0.0 for t in params.all_tensors()}
    for s in sents[:6]:
        grads = backward(sentence_loss(s, table, params))
        for t in totals:
            g = grads.get(t)
            if g is not None:
                totals[t] += float(np.abs(g).sum())
    names = params.named_tensors()
    for name, t in names.items():
        assert totals[t] > 0.0, f"parameter {name} never received gradient"


def test_gradient_clipping_bounds_update(tiny_corpus):
    from cmla.model import clip_gradients

    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=31)
    grads = backward(sentence_loss(sents[0], table, params))
    tensors = params.all_tensors()
    clip_gradients(grads, tensors, 0.01)
    total = sum(float((np.asarray(grads[t]) ** 2).sum()) for t in tensors if t in grads)
    assert np.sqrt(total) <= 0.01 + 1e-12


# --- predict ----------------------------------------------------------------


def test_predict_spans_roundtrip_and_merged_shape(tiny_corpus):
    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=32)
    from cmla.bio import labels_to_spans, spans_to_labels

    for s in sents[:8]:
        pred = predict(s, table, params)
        n = len(s.tokens)
        assert len(pred.merged) == n
        assert len(pred.token_scores) == n
        for spans_list, head in ((pred.aspect_spans, ASPECT), (pred.opinion_spans, OPINION)):
            again = labels_to_spans(spans_to_labels(n, spans_list, head))
            assert again == spans_list
        assert abs(sum(ts.aspect_attention for ts in pred.token_scores) - 1.0) <= 1e-9


def test_predict_handles_oov_without_error(tiny_corpus):
    from cmla.data import Sentence, tokenize

    _, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=33)
    text = "volslagen onbekende woorden hier"
    s = Sentence(raw_text=text, tokens=tokenize(text), aspect_spans=[], opinion_spans=[])
    pred = predict(s, table, params)
    assert len(pred.merged) == 4


def test_predict_empty_spans_is_valid(tiny_corpus):
    # an untrained model may legitimately emit no spans for some sentence;
    # force the situation with a classifier that always prefers O
    sents, table = tiny_corpus
    params = CmlaParams.init(dim=6, channels=2, rng=34)
    for head in (params.aspect, params.opinion):
        for t in head.att_gru.tensors().values():
            t.data[:] = 0.0
        head.att_gru.b_h.data[:] = 1.0  # features strictly positive at every step
        head.classifier.data[:] = 0.0
        head.classifier.data[2, :] = 1.0  # O logit > 0 = B = I
    pred = predict(sents[0], table, params)
    assert pred.aspect_spans == [] and pred.opinion_spans == []
    assert all(tag == "O" for tag in pred.merged)


# --- checkpoints ------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    params = CmlaParams.init(dim=5, channels=3, rng=35, layers=2)
    path = tmp_path / "model.json"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert loaded.dim == 5 and loaded.channels == 3 and loaded.layers == 2
    for (na, ta), (nb, tb) in zip(
        params.named_tensors().items(), loaded.named_tensors().items()
    ):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    path2 = tmp_path / "model2.json"
    save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json at all", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_format_and_version(tmp_path):
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"format": "something-else", "version": 1}), encoding="utf-8")
    with pytest.raises(DataFormatError, match="not a"):
        load_checkpoint(path)
    params = CmlaParams.init(dim=2, channels=2, rng=36)
    good = tmp_path / "good.json"
    save_checkpoint(good, params)
    payload = json.loads(good.read_text(encoding="utf-8"))
    payload["version"] = 99
    bad = tmp_path / "version.json"
    bad.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(DataFormatError, match="version"):
        load_checkpoint(bad)


def test_checkpoint_rejects_missing_tensor_and_bad_shape(tmp_path):
    params = CmlaParams.init(dim=2, channels=2, rng=37)
    good = tmp_path / "good.json"
    save_checkpoint(good, params)
    payload = json.loads(good.read_text(encoding="utf-8"))

    dropped = dict(payload, tensors={k: v for k, v in payload["tensors"].items()
                                     if k != "aspect.comp"})
    p1 = tmp_path / "missing.json"
    p1.write_text(json.dumps(dropped), encoding="utf-8")
    with pytest.raises(DataFormatError, match="aspect.comp"):
        load_checkpoint(p1)

    mangled = json.loads(good.read_text(encoding="utf-8"))
    mangled["tensors"]["aspect.prototype"]["shape"] = [3]
    p2 = tmp_path / "shape.json"
    p2.write_text(json.dumps(mangled), encoding="utf-8")
    with pytest.raises(DataFormatError, match="shape"):
        load_checkpoint(p2)
