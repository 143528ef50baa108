import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fscil_replay import autodiff as ad
from fscil_replay.checkpoint import checkpoint_bytes
from fscil_replay.errors import ContractViolation
from fscil_replay.models import (AuxiliaryModel, ClassifierModel, GeneratorModel, argmax_class, clone_model,
                                 expand_head, load_model, save_model)
from fscil_replay.optim import SGD

from oracles import central_difference, grad_mismatch


def small_model(n_classes=3, seed=0, scale=16.0):
    m = ClassifierModel(4, hidden=(8,), feature_dim=5, scale=scale, seed=seed)
    m.add_head(range(n_classes), seed=seed + 1)
    return m


def test_logit_equals_scale_when_feature_matches_head_row():
    m = small_model()
    x = np.random.default_rng(0).normal(size=(1, 4))
    feat = m.features(x, trainable=False).data[0]
    m.heads[0].weights.data[1] = 3.0 * feat  # storage scale is irrelevant
    assert m.logits(x)[0, 1] == pytest.approx(16.0, rel=1e-5)


def test_logit_is_zero_for_orthogonal_head_row():
    m = small_model()
    x = np.random.default_rng(1).normal(size=(1, 4))
    feat = m.features(x, trainable=False).data[0].astype(np.float64)
    v = np.random.default_rng(2).normal(size=feat.shape)
    v -= v @ feat / (feat @ feat) * feat
    m.heads[0].weights.data[2] = v
    assert abs(m.logits(x)[0, 2]) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 40.0))
def test_logits_bounded_by_scale(seed, scale):
    m = small_model(seed=seed % 50, scale=scale)
    x = np.random.default_rng(seed).normal(size=(16, 4)) * 5
    assert np.all(np.abs(m.logits(x)) <= scale * (1 + 1e-6))


def test_cosine_logits_ignore_feature_rescaling():
    m = small_model()
    f = np.random.default_rng(3).normal(size=(6, 5))
    heads = ad.l2_normalize(ad.Tensor(m.heads[0].weights.data), axis=1).data
    outs = [ad.l2_normalize(ad.Tensor(f * k), axis=1).data @ heads.T for k in (0.01, 1.0, 250.0)]
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-5)
    np.testing.assert_allclose(outs[2], outs[1], atol=1e-5)


def test_wrong_input_width_is_rejected():
    with pytest.raises(ContractViolation, match="4"):
        small_model().logits(np.zeros((2, 3)))


def test_expand_head_preserves_old_logits():
    m = small_model()
    x = np.random.default_rng(4).normal(size=(10, 4))
    before = m.logits(x)
    new = expand_head(m, [3, 4], seed=9)
    after = new.logits(x)
    assert after.shape == (10, 5)
    np.testing.assert_array_equal(after[:, :3], before)
    assert m.n_classes == 3 and len(m.heads) == 1


def test_expand_head_is_seeded():
    m = small_model()
    a, b = expand_head(m, [3], seed=5), expand_head(m, [3], seed=5)
    assert a.heads[-1].weights.data.tobytes() == b.heads[-1].weights.data.tobytes()


def test_new_head_init_scale():
    m = ClassifierModel(2, hidden=(4,), feature_dim=64, seed=0)
    m.add_head(range(200), seed=3)
    assert m.heads[0].weights.data.std() == pytest.approx(1 / 8, rel=0.05)


@pytest.mark.parametrize("ids,match", [([], "at least one"), ([1], "class id 1"), ([7, 7], "duplicate")])
def test_expand_head_rejects_bad_ids(ids, match):
    with pytest.raises(ContractViolation, match=match):
        expand_head(small_model(), ids, seed=0)


def test_head_growth_bookkeeping():
    m = small_model(n_classes=4)
    for i in range(1, 4):
        m = expand_head(m, [100 + 2 * i, 101 + 2 * i], seed=i)
        assert m.n_classes == 4 + 2 * i
        assert [h.session_index for h in m.heads] == list(range(i + 1))


def test_clone_is_isolated_from_training():
    src = small_model()
    snap = checkpoint_bytes(src.parameters())
    twin = clone_model(src)
    assert checkpoint_bytes(twin.parameters()) == snap
    x = np.random.default_rng(5).normal(size=(8, 4))
    np.testing.assert_array_equal(twin.logits(x), src.logits(x))
    opt = SGD(twin.parameters(), lr=0.1)
    for _ in range(10):
        ad.backward(ad.mean(twin(x)), twin.parameters())
        opt.step()
    assert checkpoint_bytes(src.parameters()) == snap
    assert checkpoint_bytes(twin.parameters()) != snap


def test_generator_shape_and_range():
    g = GeneratorModel(6, 4, hidden=(16,), seed=0)
    out = g(np.random.default_rng(0).normal(size=(4, 6)) * 50)
    assert out.shape == (4, 4)
    assert np.all(np.abs(out.data) <= 1)


def test_generator_rejects_wrong_noise_dim():
    with pytest.raises(ContractViolation, match="6"):
        GeneratorModel(6, 4, seed=0)(np.zeros((2, 5)))


def test_generator_gradient_matches_finite_differences():
    g = GeneratorModel(3, 2, hidden=(5,), seed=1, dtype=np.float64)
    z = np.random.default_rng(2).normal(size=(4, 3))
    ad.backward(ad.mean(g(z)), g.parameters())
    num = central_difference(lambda: ad.mean(g(z)).item(), [p.data for p in g.parameters().values()])
    for p, n in zip(g.parameters().values(), num):
        assert len(grad_mismatch(p.grad, n)) == 0


def test_auxiliary_head_matches_teacher_and_is_fixed():
    t = expand_head(small_model(), [3, 4], seed=1)
    aux = AuxiliaryModel.for_teacher(t, seed=0)
    assert aux.class_ids == t.class_ids
    with pytest.raises(ContractViolation):
        aux.add_head([9], seed=0)


def test_model_round_trip(tmp_path):
    m = expand_head(small_model(), [7], seed=2)
    save_model(m, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.structure() == m.structure()
    assert checkpoint_bytes(back.parameters()) == checkpoint_bytes(m.parameters())


def test_argmax_examples():
    assert argmax_class(np.array([[0.1, 2.3, -1.0]]), [0, 1, 2]).tolist() == [1]
    assert argmax_class(np.array([[1.0, 1.0]]), [0, 1]).tolist() == [0]
    # ties resolve to the lowest id even when columns are not sorted
    assert argmax_class(np.array([[1.0, 1.0]]), [5, 2]).tolist() == [2]
