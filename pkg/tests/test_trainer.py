import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from treepool import trainer as tr
from treepool.constraints import Constraint, ConstraintSet
from treepool.model import ModelConfig, forward, init_params, total_loss
from treepool.synth import SynthCorpusSpec, generate
from treepool.trainer import (Checkpoint, LagrangianState, TrainConfig, TrainingDiverged, dual_update, f1_scores,
                              split, train)
from treepool.treebank import Vocabulary

K_OV = (0, Constraint.OVERLAP)
K_CO = (0, Constraint.CONTIGUITY)


# -- dual update -----------------------------------------------------------------

def test_dual_update_examples():
    s = LagrangianState({K_OV: 0.0, K_CO: 0.3}, step_size=0.1)
    s2 = dual_update(s, {K_OV: 0.5, K_CO: 0.0}, step=7)
    assert s2.lambdas[K_OV] == pytest.approx(0.05)
    assert s2.lambdas[K_CO] == 0.3
    assert s2.history[-1]["step"] == 7
    assert s.history == [] and s.lambdas[K_OV] == 0.0


def test_dual_update_clamps():
    s = LagrangianState({K_OV: 0.01}, step_size=-0.1)  # injected state drifting downwards
    assert dual_update(s, {K_OV: 0.5}).lambdas[K_OV] == 0.0


@pytest.mark.parametrize("bad", [-0.1, float("nan"), float("inf")])
def test_dual_update_rejects_bad_violations(bad):
    with pytest.raises(ValueError):
        dual_update(LagrangianState({K_OV: 0.0}), {K_OV: bad})


@given(st.lists(st.floats(0, 5), min_size=1, max_size=20), st.floats(0, 1))
def test_lambda_non_negative_and_history_monotone(viols, eta):
    s = LagrangianState({K_OV: 0.0}, step_size=eta)
    for i, v in enumerate(viols):
        s = dual_update(s, {K_OV: v}, step=i)
        assert s.lambdas[K_OV] >= 0
    steps = [h["step"] for h in s.history]
    assert steps == sorted(steps)


def test_frozen_model_lambdas_increase():
    recs = generate(SynthCorpusSpec(n_per_class=3, seed=1))
    vocab = Vocabulary.build(r.tree for r in recs)
    cfg = ModelConfig(vocab_size=len(vocab), embed_dim=4, hidden_dim=4, mlp_hidden=4, pool_ks=(3, 1),
                      constraint_set=ConstraintSet(kind="sstk", delta=0.0, alpha=1.0))
    params = init_params(cfg)
    ex = tr.prepare(recs, vocab, ["claim", "other"])
    state = LagrangianState({(0, c): 0.0 for c in cfg.constraint_set.names}, 0.1)
    traj = []
    for step in range(3):
        sums = Counter()
        for e in ex:
            _, rep = total_loss(forward(e.graph, cfg, params), e.label, cfg, state.lambdas)
            sums.update({k: v / len(ex) for k, v in rep.values.items()})
        state = dual_update(state, dict(sums), step)
        traj.append(dict(state.lambdas))
    for key in (K_OV, (0, Constraint.INTENSITY)):
        assert traj[0][key] > 0
        assert traj[0][key] < traj[1][key] < traj[2][key]


def test_lagrangian_json_round_trip():
    s = dual_update(LagrangianState({K_OV: 0.2, K_CO: 0.0}, 0.3, 5), {K_OV: 1.0}, 3)
    back = LagrangianState.from_json(s.to_json())
    assert back == s


# -- F1 ---------------------------------------------------------------------------

def test_f1_perfect():
    r = f1_scores(["a", "b", "a"], ["a", "b", "a"], ["a", "b"])
    assert r.per_class == {"a": 1.0, "b": 1.0} and r.macro == 1.0


def test_f1_all_one_class():
    golds = ["a"] * 5 + ["b"] * 5
    r = f1_scores(["a"] * 10, golds, ["a", "b"])
    assert r.per_class["a"] == pytest.approx(2 / 3)
    assert r.per_class["b"] == 0.0
    assert r.macro == pytest.approx(1 / 3)


def test_f1_empty_intersection_and_errors():
    assert f1_scores(["b", "a"], ["a", "b"], ["a", "b"]).macro == 0.0
    with pytest.raises(ValueError):
        f1_scores(["a"], ["a", "b"], ["a", "b"])
    with pytest.warns(UserWarning, match="absent"):
        r = f1_scores(["a", "a"], ["a", "a"], ["a", "b"])
    assert r.per_class["b"] == 0.0


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=40), st.integers(0, 2**31))
def test_f1_matches_confusion_counts(golds, seed):
    preds = list(np.random.default_rng(seed).choice(list("abc"), size=len(golds)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = f1_scores(preds, golds, list("abc"))
    for c in "abc":
        tp = sum(p == g == c for p, g in zip(preds, golds))
        fp = sum(p == c != g for p, g in zip(preds, golds))
        fn = sum(g == c != p for p, g in zip(preds, golds))
        expected = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        assert r.per_class[c] == pytest.approx(expected)


# -- splits -----------------------------------------------------------------------

def test_kfold_sizes_and_determinism():
    labels = ["x"] * 50 + ["y"] * 50
    folds = split(labels, "kfold", seed=3, k=5)
    assert [len(f.test) for f in folds] == [20] * 5
    assert split(labels, "kfold", seed=3, k=5) == folds
    assert sorted(i for f in folds for i in f.test) == list(range(100))
    for f in folds:
        assert not set(f.train) & set(f.val) and not set(f.train) & set(f.test) and not set(f.val) & set(f.test)
        assert len(f.train) + len(f.val) + len(f.test) == 100


@given(st.lists(st.sampled_from("abc"), min_size=10, max_size=80), st.integers(0, 1000), st.integers(2, 5))
def test_kfold_stratified(labels, seed, k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        folds = split(labels, "kfold", seed=seed, k=k)
    total = Counter(labels)
    for f in folds:
        got = Counter(labels[i] for i in f.test)
        for c, n in total.items():
            assert abs(got[c] - n / k) <= 1


@given(st.lists(st.sampled_from("ab"), min_size=4, max_size=60), st.integers(0, 1000))
def test_holdout_partition(labels, seed):
    s = split(labels, "holdout", seed=seed, fractions=(0.6, 0.2, 0.2))[0]
    assert sorted(s.train + s.val + s.test) == list(range(len(labels)))


def test_repeated_and_errors():
    labels = ["a", "b"] * 10
    reps = split(labels, "repeated", seed=1, repeats=3)
    assert len(reps) == 3 and reps[0] != reps[1]
    with pytest.raises(ValueError):
        split(labels, "kfold", k=30)
    with pytest.raises(ValueError):
        split(labels, "bogus")
    with pytest.raises(ValueError):
        split(labels, fractions=(0.5, 0.2, 0.2))
    with pytest.warns(UserWarning):
        split(["a"] * 10 + ["b"] * 2, "kfold", k=3)


# -- config -----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"optimizer": "rmsprop"}, {"lambda_mode": "both"}, {"patience": 0},
                                {"multi_start": 0}, {"epochs": 0}, {"select_from_epoch": 20},
                                {"lambda_step": -1.0}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_fixed_value_lookup():
    t = TrainConfig(lambda_mode="fixed", fixed_lambdas={"0:overlap": 0.5, "contiguity": 2.0})
    assert t.fixed_value(K_OV) == 0.5
    assert t.fixed_value(K_CO) == 2.0
    assert t.fixed_value((1, Constraint.OVERLAP)) == 0.0
    assert TrainConfig(fixed_lambdas=0.3).fixed_value(K_OV) == 0.3


# -- training -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    recs = generate(SynthCorpusSpec(n_per_class=24, seed=2))
    s = split([r.label for r in recs], seed=0)[0]
    return [recs[i] for i in s.train], [recs[i] for i in s.val]


def tiny_cfg(kind="sstk", **kw):
    base = dict(embed_dim=6, hidden_dim=6, mlp_hidden=6, pool_ks=(2, 1), seed=5,
                constraint_set=None if kind is None else ConstraintSet(kind=kind))
    base.update(kw)
    return ModelConfig(**base)


def test_first_dual_update_increases(tiny):
    train_r, val_r = tiny
    ck, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=1, lr=1e-2, seed=1))
    first = rep.lambda_history[0]
    for key, v in first["violations"].items():
        if v > 0:
            assert first["lambdas"][key] > 0
    assert "last_batch" in first
    assert len(rep.lambda_history) == 1  # once per epoch by default


def test_update_period_in_steps(tiny):
    train_r, val_r = tiny
    _, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=2, batch_size=8, lambda_update_period=2))
    n_steps = 2 * -(-len(train_r) // 8)
    assert [h["step"] for h in rep.lambda_history] == list(range(2, n_steps + 1, 2))


def test_zero_fixed_lambdas_match_unconstrained(tiny):
    train_r, val_r = tiny
    t = TrainConfig(epochs=3, lr=1e-2, seed=4, lambda_mode="fixed", fixed_lambdas=0.0)
    _, rep0 = train(train_r, val_r, tiny_cfg("stk"), t)
    _, repn = train(train_r, val_r, tiny_cfg(None), t)
    assert [e["loss"] for e in rep0.epochs] == [e["loss"] for e in repn.epochs]
    assert [e["ce"] for e in rep0.epochs] == [e["loss"] for e in repn.epochs]


def test_training_deterministic(tiny, tmp_path):
    train_r, val_r = tiny
    t = TrainConfig(epochs=2, lr=1e-2, seed=9)
    a, ra = train(train_r, val_r, tiny_cfg(), t)
    b, rb = train(train_r, val_r, tiny_cfg(), t)
    assert a.digest() == b.digest()
    assert ra.metrics_csv() == rb.metrics_csv()
    a.save(tmp_path / "c.json")
    back = Checkpoint.load(tmp_path / "c.json")
    assert back.digest() == a.digest()
    assert all(np.array_equal(back.params[k], a.params[k]) for k in a.params)


def test_metrics_csv_shape(tiny):
    train_r, val_r = tiny
    _, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=2))
    lines = rep.metrics_csv().strip().split("\n")
    assert lines[0] == "epoch,loss,ce,train_violation,val_macro_f1,val_violation"
    assert len(lines) == 3
    assert all(len(line.split(",")) == 6 for line in lines)


def test_early_stopping_ties_earliest(tiny, monkeypatch):
    train_r, val_r = tiny
    real = tr.evaluate_examples
    scores = iter([0.5, 0.7, 0.7, 0.6, 0.7, 0.1, 0.1])

    def fake(*a, **k):
        res = real(*a, **k)
        res.f1.macro = next(scores)
        return res

    monkeypatch.setattr(tr, "evaluate_examples", fake)
    ck, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=7, patience=3))
    assert ck.epoch == 1 and rep.best_epoch == 1
    assert len(rep.epochs) == 5  # epochs 2..4 without improvement exhaust patience


def test_select_from_epoch(tiny):
    train_r, val_r = tiny
    ck, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=3, select_from_epoch=2))
    assert ck.epoch == 2


def test_multi_start(tiny):
    train_r, val_r = tiny
    ck, rep = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=1, multi_start=3))
    assert [r["restart"] for r in rep.restarts] == [0, 1, 2]
    assert len({r["model_seed"] for r in rep.restarts}) == 3
    assert ck.val_macro_f1 == max(r["best_val_macro_f1"] for r in rep.restarts)
    assert rep.restarts[0]["model_seed"] == 5


def test_divergence_reports_last_good(tiny, monkeypatch):
    train_r, val_r = tiny
    real = tr.total_loss
    calls = {"n": 0}
    n_first_epoch = len(train_r)

    def flaky(trace, label, *a, **k):
        loss, rep = real(trace, label, *a, **k)
        calls["n"] += 1
        if calls["n"] > n_first_epoch:
            loss = loss * float("nan")
        return loss, rep

    monkeypatch.setattr(tr, "total_loss", flaky)
    with pytest.raises(TrainingDiverged) as err:
        train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=3))
    assert err.value.last_good is not None and err.value.last_good.epoch == 0


def test_label_consistency(tiny):
    train_r, val_r = tiny
    bad = [r for r in val_r]
    bad[0] = tr.Record(bad[0].id, "mystery", bad[0].tree)
    with pytest.raises(ValueError, match="unseen"):
        train(train_r, bad, tiny_cfg(), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(train_r, [], tiny_cfg(), TrainConfig(epochs=1))


def test_evaluate_and_calibrate(tiny):
    train_r, val_r = tiny
    ck, _ = train(train_r, val_r, tiny_cfg(), TrainConfig(epochs=1))
    ev = tr.evaluate(ck, val_r)
    assert len(ev.predictions) == len(val_r)
    assert set(ev.constraint_means) == {f"0:{c.value}" for c in ck.model_config.constraint_set.names}
    rows = tr.calibrate_fixed(train_r, val_r, tiny_cfg(), TrainConfig(epochs=1), [0.0, 1.0])
    assert [r["lambda"] for r in rows] == [0.0, 1.0]
    assert all(0.0 <= r["val_macro_f1"] <= 1.0 for r in rows)
