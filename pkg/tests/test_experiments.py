import pytest

from treepool.constraints import ConstraintSet
from treepool.experiments import (PlantedSetup, degenerate_check, fragment_summary, fragment_violation,
                                  planted_data, run_planted)

TINY = PlantedSetup(n_per_class=12, epochs=3, select_window=2)


@pytest.fixture(scope="module")
def runs():
    return {kind: run_planted(0, kind, "dual", TINY) for kind in ("sstk", None)}


def test_planted_data_split():
    corpus, tr, va = planted_data(0, TINY)
    assert len(tr) + len(va) == 24 and {r.label for r in va} == set(corpus.classes)


def test_recipe_configs():
    m = TINY.model_config(None, 3)
    assert m.constraint_set is None and m.pooling_activation == "softmax" and m.seed == 3
    t = TINY.train_config("fixed", 3)
    assert t.select_from_epoch == 1 and t.fixed_lambdas == 1.0


def test_run_and_measures(runs):
    res = runs["sstk"]
    assert res.kind == "sstk" and 1 <= res.ckpt.epoch <= 2
    assert 0.0 <= fragment_violation(res.ckpt, res.val) <= 1.0
    chk = degenerate_check(res.ckpt, res.val, 0.3, 0.5)
    assert 0.0 <= chk["rate"] <= min(chk["overlap_rate"], chk["intensity_rate"])
    s = fragment_summary(res)
    assert len(s["top"]) <= 5 and s["n_sets"] >= s["n_records"]


def test_plain_baseline_has_zero_multipliers(runs):
    res = runs[None]
    assert res.kind is None and res.ckpt.model_config.constraint_set is None
    assert all(e["loss"] == e["ce"] for e in res.report.epochs)
    # C^frag of an unconstrained model is measured against an explicit constraint set
    assert fragment_violation(res.ckpt, res.val, ConstraintSet(kind="stk")) >= 0.0
