import numpy as np
import pytest

from fscil_replay import autodiff as ad
from fscil_replay.autodiff import graph_ops
from fscil_replay.checkpoint import checkpoint_bytes
from fscil_replay.datasets import SessionDataset, make_toy_protocol
from fscil_replay.errors import ContractViolation
from fscil_replay.models import ClassifierModel, expand_head
from fscil_replay.optim import SGD
from fscil_replay.replay import GenTrainConfig, ReplayBatch
from fscil_replay.session import (ABLATION_ARMS, Ablation, ProtocolConfig, _param_groups, base_train,
                                  incremental_step, merge_dataset, run_protocol)

GEN = dict(epochs=2, batches_per_epoch=2, batch_size=16, k_inner=2, alpha=1e-2, beta=1e-2, lr_milestones=(),
           noise_dim=4, gen_hidden=(8,))


def quick_cfg(**kw):
    base = dict(base_epochs=8, base_milestones=(6,), base_batch_size=64, incremental_epochs=3,
                incremental_milestones=(2,), replay_count=10, hidden=(8,), feature_dim=4, cosine_scale=4.0,
                gen_cfg=GenTrainConfig(**GEN))
    base.update(kw)
    return ProtocolConfig(**base)


@pytest.fixture(scope="module")
def toy():
    return make_toy_protocol(0)


@pytest.fixture(scope="module")
def base_model(toy):
    return base_train(toy[0][0], quick_cfg(base_epochs=30, base_milestones=(20, 25), hidden=(32, 32), feature_dim=16))


def test_base_training_fits_toy_clusters(base_model, toy):
    from fscil_replay.metrics import cumulative_accuracy
    assert cumulative_accuracy(base_model, toy[0][0]) > 0.95


def test_base_training_is_deterministic(toy):
    a, b = base_train(toy[0][0], quick_cfg()), base_train(toy[0][0], quick_cfg())
    assert checkpoint_bytes(a.parameters()) == checkpoint_bytes(b.parameters())


def test_base_training_rejects_degenerate_sets():
    one = SessionDataset(np.zeros((4, 2)), np.zeros(4, int))
    with pytest.raises(ContractViolation):
        base_train(one, quick_cfg())
    with pytest.raises(ContractViolation):
        base_train(SessionDataset(np.zeros((0, 2)), np.zeros(0, int), class_ids=(0, 1)), quick_cfg())


def replay_of(labels, width=2):
    labels = np.asarray(labels)
    n = len(labels)
    return ReplayBatch(np.zeros((n, width), np.float32), labels, np.zeros(n), np.zeros((n, 3)))


def test_merge_counts_and_provenance(toy):
    novel = SessionDataset(np.ones((25, 2)), np.repeat(np.arange(5, 10), 5), session_index=1)
    rep = replay_of(np.arange(25) % 3)
    merged = merge_dataset(novel, rep)
    assert len(merged) == 50 and merged.generated.sum() == 25
    want = dict(novel.class_counts())
    for c, n in zip(*np.unique(rep.labels, return_counts=True)):
        want[int(c)] = want.get(int(c), 0) + int(n)
    assert merged.class_counts() == want


def test_merge_without_replay_is_identity():
    novel = SessionDataset(np.ones((5, 2)), np.full(5, 3))
    assert merge_dataset(novel, None) is novel


def test_merge_rejects_label_overlap():
    novel = SessionDataset(np.ones((5, 2)), np.full(5, 1))
    with pytest.raises(ContractViolation, match=r"\[1\]"):
        merge_dataset(novel, replay_of([0, 1]))


def test_two_tier_update_moves_params_by_exact_learning_rates(base_model):
    cfg = quick_cfg(lambda1=1e-4, lambda2=0.1)
    model = expand_head(base_model, [3], seed=4)
    groups = _param_groups(model, 1, cfg)
    opt = SGD(groups, lr=cfg.lambda2, momentum=0.0)
    before = {k: p.data.copy() for k, p in model.parameters().items()}
    for p in model.parameters().values():
        p.grad = np.ones_like(p.data)
    opt.step()
    for name, p in model.parameters().items():
        step = before[name] - p.data
        want = np.float32(0.1) if name == "head.1.weight" else np.float32(1e-4)
        assert np.all(step == before[name] - (before[name] - want)), name


def test_relabel_path_is_cross_entropy_only(base_model, toy):
    seen = []
    incremental_step(base_model, toy[0][1], quick_cfg(), on_step=lambda loss, terms: seen.append(graph_ops(loss)))
    assert seen and all("cross_entropy" in ops and "kd_kl" not in ops for ops in seen)


def test_vanilla_kd_arm_adds_a_kl_term(base_model, toy):
    seen = []
    cfg = quick_cfg(ablation=Ablation(relabel=False))
    incremental_step(base_model, toy[0][1], cfg, on_step=lambda loss, terms: seen.append(terms))
    assert any("kd_kl" in t for t in seen)


def test_frozen_backbone_arm_keeps_backbone(base_model, toy):
    cfg = quick_cfg(ablation=Ablation(backbone_finetune=False), lambda1=0.05)
    model, run = incremental_step(base_model, toy[0][1], cfg)
    assert checkpoint_bytes(model.backbone) == checkpoint_bytes(base_model.backbone)
    assert checkpoint_bytes(model.head_parameters([0])) != checkpoint_bytes(base_model.head_parameters([0]))
    assert len(run.model_after.heads) == len(run.model_before.heads) + 1


def test_zero_learning_rates_are_a_fixed_point(base_model, toy):
    cfg = quick_cfg(lambda1=0.0, lambda2=0.0)
    model, _ = incremental_step(base_model, toy[0][1], cfg)
    fresh = expand_head(base_model, toy[0][1].class_ids, seed=cfg.seed * 7919 + 1)
    x = toy[1][1].features
    np.testing.assert_array_equal(model.logits(x), fresh.logits(x))
    np.testing.assert_array_equal(model.logits(x)[:, :3], base_model.logits(x))


def test_incremental_step_rejects_known_classes(base_model, toy):
    with pytest.raises(ContractViolation):
        incremental_step(base_model, toy[0][0], quick_cfg())


def test_replay_histogram_counts_every_draw(base_model, toy):
    cfg = quick_cfg(replay_count=7, incremental_epochs=4)
    _, run = incremental_step(base_model, toy[0][1], cfg)
    assert run.replay_drawn == 28 and sum(run.replay_histogram.values()) == 28


def test_protocol_report_shape(toy):
    sessions, tests = toy
    report = run_protocol(sessions, tests, quick_cfg())
    assert len(report.per_session_accuracy) == 4
    assert all(0 <= a <= 1 for a in report.per_session_accuracy)
    assert report.n_test_examples == sorted(set(report.n_test_examples))
    assert report.average_accuracy == pytest.approx(np.mean(report.per_session_accuracy), abs=1e-12)
    assert report.incremental_class_ids == [3, 4, 5]


def test_protocol_with_base_session_only(toy):
    report = run_protocol(toy[0][:1], toy[1][:1], quick_cfg())
    assert len(report.per_session_accuracy) == 1


def test_protocol_rejects_repeated_classes(toy):
    with pytest.raises(ContractViolation):
        run_protocol([toy[0][0], toy[0][1], toy[0][1]], toy[1][:3], quick_cfg())


def test_failure_keeps_partial_report(toy):
    sessions, tests = toy
    bad_tests = list(tests[:2]) + [tests[3]]  # holds a class the session-2 model has never seen
    with pytest.raises(ContractViolation) as err:
        run_protocol(sessions[:3], bad_tests, quick_cfg())
    assert len(err.value.partial_report.per_session_accuracy) == 2


def test_config_round_trip_and_unknown_keys():
    cfg = quick_cfg(ablation=ABLATION_ARMS["no-er"])
    back = ProtocolConfig.from_dict(cfg.to_dict())
    assert back.config_hash() == cfg.config_hash()
    with pytest.raises(ContractViolation, match="lambda3"):
        ProtocolConfig.from_dict({"lambda3": 1.0})


def test_entropy_switch_only_changes_generator_weight():
    cfg = quick_cfg(ablation=ABLATION_ARMS["no-er"])
    assert cfg.effective_gen_cfg(1).entropy_weight == 0.0
    assert quick_cfg().effective_gen_cfg(1).entropy_weight == 1.0


@pytest.mark.parametrize("kw", [dict(replay_count=-1), dict(kd_weight=-0.1), dict(lambda1=-1.0)])
def test_protocol_config_contract(kw):
    with pytest.raises(ContractViolation):
        quick_cfg(**kw)
