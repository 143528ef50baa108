"""Acceptance criteria for the package, one test per criterion.

Each test records a single PASS/FAIL line which the conftest hook prints in
the terminal summary. Run just this file with::

    pytest tests/test_acceptance.py -v

The experiment-level criteria read their hyperparameters from the ``toy`` and
``pattern`` presets, so the numbers here are exactly what ``fscil-replay
run-fscil --preset ...`` produces.
"""
import copy
import math
import time

import numpy as np
import pytest

from fscil_replay import autodiff as ad
from fscil_replay.checkpoint import checkpoint_bytes
from fscil_replay.models import expand_head
from fscil_replay.optim import SGD
from fscil_replay.presets import build_protocol, preset
from fscil_replay.replay import GenTrainConfig, aux_loss, gen_loss, sample_replay, shannon_entropy, train_generator
from fscil_replay.session import ABLATION_ARMS, ProtocolConfig, _param_groups, base_train, run_protocol

from netgen import gradient_check

SEEDS = range(5)
N_GENERATED = 1000
FORGET_FT_MIN_DROP = 0.20
FORGET_FULL_MAX_DROP = 0.10
FORGET_BUDGET_S = 300.0
ABLATION_TIE = 0.005

RESULTS = []


def record(name, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def protocol_cfg(run, **overrides):
    proto = copy.deepcopy(run["protocol"])
    proto.update(overrides)
    return ProtocolConfig.from_dict(proto)


# -- shared experiment runs ---------------------------------------------------

@pytest.fixture(scope="session")
def toy_runs():
    """Fine-tune and full-method toy runs over the acceptance seeds, timed."""
    run = preset("toy")
    out = []
    elapsed = 0.0
    for seed in SEEDS:
        sessions, tests = build_protocol(run["dataset"], seed)
        t0 = time.perf_counter()
        ft = run_protocol(sessions, tests, protocol_cfg(run, seed=seed, replay_count=0))
        audit = []
        full = run_protocol(sessions, tests, protocol_cfg(run, seed=seed), runs=audit)
        elapsed += time.perf_counter() - t0
        out.append(dict(seed=seed, ft=ft, full=full, audit=audit))
    return out, elapsed


def generated_with_and_without_er(teacher, seed):
    gen_kw = preset("toy")["protocol"]["gen_cfg"]
    batches = []
    for weight in (1.0, 0.0):
        gen, _ = train_generator(teacher, GenTrainConfig(**{**gen_kw, "entropy_weight": weight, "seed": seed}))
        batches.append(sample_replay(gen, teacher, N_GENERATED, np.random.default_rng(seed + 77)))
    return batches


# -- engine-level criteria ----------------------------------------------------

def test_gradient_oracle_on_random_networks():
    t0 = time.perf_counter()
    failures = []
    for seed in range(60):
        desc, bad = gradient_check(seed)
        if bad:
            failures.append((seed, desc, bad[:2]))
    elapsed = time.perf_counter() - t0
    record("gradient oracle", not failures and elapsed < 30.0,
           f"60 networks, {len(failures)} failing, {elapsed:.1f}s (budget 30s)")


def test_entropy_identities():
    worst = 0.0
    for c in (2, 3, 10, 100):
        uniform = shannon_entropy(np.full((1, c), 1.0 / c, dtype=np.float64)).item()
        onehot = shannon_entropy(np.eye(c, dtype=np.float64)[:1]).item()
        worst = max(worst, abs(uniform - math.log(c)), abs(onehot))
    record("entropy identities", worst <= 1e-6, f"max error {worst:.2e} over C in (2, 3, 10, 100)")


def test_generator_loss_without_entropy_is_negated_auxiliary_loss():
    rng = np.random.default_rng(0)
    unequal = 0
    for _ in range(100):
        n, c = (int(v) for v in rng.integers(1, 33, size=2))
        t = ad.Tensor(rng.normal(size=(n, c)) * 3.0)
        a = ad.Tensor(rng.normal(size=(n, c)) * 3.0)
        g = gen_loss(t, a, ad.softmax(t, axis=1), entropy_weight=0.0, match_norm="sq_l2").item()
        unequal += g != -aux_loss(t, a).item()
    record("generator loss reduction", unequal == 0, f"{100 - unequal}/100 batches exactly equal")


def test_frozen_teacher_and_two_rate_step():
    run = preset("toy")
    cfg = protocol_cfg(run, seed=0)
    sessions, _ = build_protocol(run["dataset"], 0)
    teacher = base_train(sessions[0], cfg)
    snapshot = checkpoint_bytes(teacher.parameters())
    train_generator(teacher, cfg.effective_gen_cfg(1))
    frozen = checkpoint_bytes(teacher.parameters()) == snapshot

    model = expand_head(teacher, sessions[1].class_ids, seed=1)
    opt = SGD(_param_groups(model, 1, cfg), lr=cfg.lambda2, momentum=0.0)
    before = {k: p.data.copy() for k, p in model.parameters().items()}
    for p in model.parameters().values():
        p.grad = np.ones_like(p.data)
    opt.step()
    new_head = {h.param_name() for h in model.heads if h.session_index == 1}
    wrong = []
    for name, p in model.parameters().items():
        lr = cfg.lambda2 if name in new_head else cfg.lambda1
        # float32 reference: subtract the float32-rounded rate in float32
        expected = np.subtract(before[name], np.float32(lr), dtype=np.float32)
        if not np.array_equal(p.data, expected):
            wrong.append(name)
    record("frozen teacher and two-rate step", frozen and not wrong,
           f"teacher bytes unchanged={frozen}, lambda1={cfg.lambda1} on old params, lambda2={cfg.lambda2} "
           f"on {sorted(new_head)}, mismatched={wrong}")


# -- toy protocol criteria ----------------------------------------------------

def test_forgetting_is_prevented_by_replay(toy_runs):
    runs, elapsed = toy_runs
    drop = lambda rep: rep.per_session_base_accuracy[0] - rep.per_session_base_accuracy[-1]
    ft_drop = float(np.mean([drop(r["ft"]) for r in runs]))
    full_drop = float(np.mean([drop(r["full"]) for r in runs]))
    ok = ft_drop >= FORGET_FT_MIN_DROP and full_drop <= FORGET_FULL_MAX_DROP and elapsed < FORGET_BUDGET_S
    record("forgetting", ok, f"mean base-accuracy drop fine-tune {ft_drop:.3f} (need >= {FORGET_FT_MIN_DROP}), "
                             f"full {full_drop:.3f} (need <= {FORGET_FULL_MAX_DROP}), {elapsed:.0f}s "
                             f"(budget {FORGET_BUDGET_S:.0f}s)")


def test_entropy_weight_raises_generated_entropy(toy_runs):
    runs, _ = toy_runs
    wins = []
    for r in runs:
        with_er, without = generated_with_and_without_er(r["audit"][0].model_before, r["seed"])
        wins.append(with_er.teacher_entropy.mean() > without.teacher_entropy.mean())
    record("entropy regularizer effect", sum(wins) == len(wins), f"{sum(wins)}/{len(wins)} seeds")


def test_entropy_weight_shifts_labels_toward_few_shot_classes(toy_runs):
    runs, _ = toy_runs
    wins = []
    for r in runs:
        teacher = r["audit"][-1].model_before
        few_shot = [c for c in r["full"].incremental_class_ids if c in teacher.class_ids]
        with_er, without = generated_with_and_without_er(teacher, r["seed"])
        wins.append(np.isin(with_er.labels, few_shot).mean() > np.isin(without.labels, few_shot).mean())
    record("label distribution effect", sum(wins) >= 4, f"{sum(wins)}/{len(wins)} seeds (need >= 4)")


def test_few_shot_classes_have_higher_prediction_entropy(toy_runs):
    runs, _ = toy_runs
    gaps = [r["full"].entropy_gap() for r in runs]
    mean_gap = float(np.mean(gaps))
    record("few-shot entropy gap", mean_gap > 0,
           f"mean gap {mean_gap:+.3f} nats over {len(gaps)} runs, positive in {sum(g > 0 for g in gaps)}")


def test_identical_config_gives_identical_report(toy_runs):
    runs, _ = toy_runs
    run = preset("toy")
    sessions, tests = build_protocol(run["dataset"], 0)
    again = run_protocol(sessions, tests, protocol_cfg(run, seed=0))
    same = again.to_json().encode() == runs[0]["full"].to_json().encode()
    record("determinism", same, "report JSON byte-identical" if same else "report JSON differs")


# -- pattern protocol ---------------------------------------------------------

def test_full_method_is_not_beaten_by_any_ablation():
    run = preset("pattern")
    acc = {arm: [] for arm in ABLATION_ARMS}
    for seed in SEEDS:
        sessions, tests = build_protocol(run["dataset"], seed)
        for arm, ablation in ABLATION_ARMS.items():
            cfg = protocol_cfg(run, seed=seed, ablation=copy.deepcopy(ablation))
            acc[arm].append(run_protocol(sessions, tests, cfg).average_accuracy)
    mean = {arm: float(np.mean(v)) for arm, v in acc.items()}
    beaten = [arm for arm in mean if mean[arm] > mean["full"] + ABLATION_TIE]
    table = ", ".join(f"{arm} {v:.4f}" for arm, v in mean.items())
    record("ablation ordering", not beaten, f"average accuracy {table}; arms ahead by > 0.5 points: {beaten}")
