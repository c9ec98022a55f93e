import numpy as np
import pytest

import tractlabel.train as train_mod
from tractlabel.ensemble import ALL_CODES, SUPERVISORS, TRICLASSES, decompose, map_to_triclass
from tractlabel.errors import DivergenceError, InvalidInputError
from tractlabel.evaluation import (
    ablation_configs,
    aggregate_accuracy,
    branch_metrics,
    metrics_report,
    run_ablation,
)
from tractlabel.nn import StarConfig
from tractlabel.sampler import Split
from tractlabel.train import TrainConfig, evaluate, train


def _pred_from_codes(codes):
    return {s: np.array([decompose(c)[i] for c in codes]) for i, s in enumerate(SUPERVISORS)}


# ---------------------------------------------------------------- metrics


def test_perfect_predictions(rng):
    truth = list(rng.choice(ALL_CODES, 50))
    m = branch_metrics(_pred_from_codes(truth), truth)
    assert all(m[s].accuracy == 1.0 for s in SUPERVISORS)
    assert aggregate_accuracy(_pred_from_codes(truth), truth) == (1.0, 1.0)


def test_all_positive_on_balanced_truth():
    truth = ["pppp", "nnnn"] * 10
    m = branch_metrics({s: np.ones(20, bool) for s in SUPERVISORS}, truth)
    for s in SUPERVISORS:
        assert m[s].accuracy == 0.5 and m[s].recall == 1.0 and m[s].precision == 0.5


def test_zero_denominators_are_none():
    m = branch_metrics({s: np.zeros(2, bool) for s in SUPERVISORS}, ["nnnn", "nnnn"])
    assert m["tq"].precision is None and m["tq"].recall is None


def test_pnpp_vs_pppp():
    acc16, acc3 = aggregate_accuracy(_pred_from_codes(["pnpp"]), ["pppp"])
    assert acc16 == 0.0 and acc3 == 1.0


def test_confusion_against_tally(rng):
    truth = list(rng.choice(ALL_CODES, 1000))
    pred_codes = list(rng.choice(ALL_CODES, 1000))
    rep = metrics_report(_pred_from_codes(pred_codes), truth)
    for i, s in enumerate(SUPERVISORS):
        t = [c[i] for c in truth]
        p = [c[i] for c in pred_codes]
        tally = {(a, b): sum(1 for x, y in zip(t, p) if (x, y) == (a, b)) for a in "np" for b in "np"}
        assert rep.confusion_branch[i].tolist() == [
            [tally["n", "n"], tally["n", "p"]], [tally["p", "n"], tally["p", "p"]]
        ]
    for i, c in enumerate(ALL_CODES):
        assert rep.confusion_16[i].sum() == truth.count(c)
    tri = [map_to_triclass(c) for c in truth]
    for i, t in enumerate(TRICLASSES):
        assert rep.confusion_3[i].sum() == tri.count(t)
        assert rep.per_triclass[t]["support"] == tri.count(t)
    assert np.trace(rep.confusion_16) / 1000 == rep.accuracy_16
    assert np.trace(rep.confusion_3) / 1000 == rep.accuracy_3


def test_random_predictions_sixteen_class_rate(rng):
    n = 20000
    truth = list(rng.choice(ALL_CODES, n))
    acc16, acc3 = aggregate_accuracy(_pred_from_codes(list(rng.choice(ALL_CODES, n))), truth)
    sigma = np.sqrt(1 / 16 * 15 / 16 / n)
    assert abs(acc16 - 1 / 16) <= 3 * sigma
    assert acc3 >= acc16


def test_acc3_never_below_acc16(rng):
    for _ in range(200):
        n = rng.integers(1, 30)
        truth = list(rng.choice(ALL_CODES, n))
        pred = list(rng.choice(ALL_CODES, n))
        acc16, acc3 = aggregate_accuracy(_pred_from_codes(pred), truth)
        assert acc3 >= acc16


def test_report_from_logits_has_losses():
    logits = {s: np.array([[0.0, 0.0], [1.0, 0.0]]) for s in SUPERVISORS}
    rep = metrics_report(logits, ["nnnn", "nnnn"])
    assert rep.branches["tq"].accuracy == 1.0
    assert rep.branches["tq"].loss > 0
    d = rep.to_dict()
    assert d["confusion_3"] and d["accuracy_3"] == 1.0


def test_metrics_reject_mismatched_lengths():
    with pytest.raises(InvalidInputError):
        branch_metrics({s: np.zeros(3, bool) for s in SUPERVISORS}, ["pppp"])


def test_ablation_configs():
    cfg = ablation_configs()
    assert cfg["baseline"] == ()
    assert cfg["without_sh"] == ("sh",)
    assert cfg["only_xyz"] == ("lm", "sh", "t1w", "wmparc")
    assert len(cfg) == 11
    with pytest.raises(InvalidInputError):
        ablation_configs(("nope",))


# ---------------------------------------------------------------- training


def _tiny(dataset):
    return StarConfig.toy(dataset.in_channels(), blocks=1, kernels=4, fc_width=8)


def _cfg(**kw):
    base = dict(epochs=2, train_samples=48, val_samples=16, batch_size=16, lr=1e-3, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(small_dataset):
    names = small_dataset.names
    a = train(small_dataset, _tiny(small_dataset), _cfg(), names[:2], names[2:])
    b = train(small_dataset, _tiny(small_dataset), _cfg(), names[:2], names[2:])
    assert a.history == b.history
    for k, v in a.net.params().items():
        np.testing.assert_array_equal(v, b.net.params()[k])
    assert len(a.history) == 2 and "val" in a.history[0]
    c = train(small_dataset, _tiny(small_dataset), _cfg(seed=4), names[:2], names[2:])
    assert c.history != a.history


def test_empty_ablation_matches_baseline(small_dataset):
    names = small_dataset.names
    a = train(small_dataset, _tiny(small_dataset), _cfg(ablate=()), names[:2])
    b = train(small_dataset, _tiny(small_dataset), _cfg(), names[:2])
    assert a.history == b.history
    for k, v in a.net.params().items():
        np.testing.assert_array_equal(v, b.net.params()[k])


def test_evaluate_reports_every_sample(small_dataset):
    names = small_dataset.names
    res = train(small_dataset, _tiny(small_dataset), _cfg(epochs=1), names[:2])
    samples = small_dataset.all_samples([names[2]])
    rep = evaluate(res.net, small_dataset, samples, batch_size=50)
    assert rep.n == len(samples)
    assert rep.accuracy_3 >= rep.accuracy_16
    with pytest.raises(InvalidInputError):
        evaluate(res.net, small_dataset, [])


def test_divergence_raises(small_dataset, monkeypatch):
    real = train_mod._batch_inputs

    def poisoned(*a, **k):
        batch, targets, codes = real(*a, **k)
        batch["xyz"] = np.full_like(batch["xyz"], np.nan)
        return batch, targets, codes

    monkeypatch.setattr(train_mod, "_batch_inputs", poisoned)
    with pytest.raises(DivergenceError):
        train(small_dataset, _tiny(small_dataset), _cfg(), small_dataset.names[:2])


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(ablate=("colour",))
    with pytest.raises(InvalidInputError):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(lr=0)


def test_run_ablation_small(small_dataset):
    names = small_dataset.names
    split = Split(train=tuple(names[:2]), validation=(), test=(names[2],))
    res = run_ablation(
        small_dataset, _tiny(small_dataset), _cfg(epochs=1, val_samples=0),
        realizations=2, split=split, configs=["baseline", "only_xyz"],
    )
    assert set(res.reports) == {"baseline", "only_xyz"}
    assert all(len(v) == 2 for v in res.reports.values())
    stats = res.stats()
    assert stats["baseline"]["accuracy_3"]["std"] >= 0
    assert res.to_dict()["substituted"]["only_xyz"] == ["lm", "sh", "t1w", "wmparc"]
    with pytest.raises(InvalidInputError):
        run_ablation(small_dataset, _tiny(small_dataset), _cfg(), split=Split(tuple(names), (), ()))
