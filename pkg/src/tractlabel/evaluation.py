"""Per-branch and aggregated metrics, and the noise-substitution ablation harness.

Precision and recall treat "p" as the target class. A metric whose
denominator is zero is reported as ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import ALL_CODES, SUPERVISORS, TRICLASSES, code_index, compose, map_to_triclass
from .errors import InvalidInputError
from .nn.layers import softmax_xent
from .nn.star import predict_labels


def _ratio(num, den):
    return float(num) / den if den else None


@dataclass
class BranchMetrics:
    accuracy: float
    precision: float | None
    recall: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    loss: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _as_codes(truth) -> list:
    return [t if isinstance(t, str) else compose(t) for t in truth]


def _pred_codes(pred: dict) -> list:
    cols = [np.asarray(pred[s], dtype=bool) for s in SUPERVISORS]
    return [compose(row) for row in zip(*cols)]


def _check_lengths(pred: dict, truth):
    for s in SUPERVISORS:
        if len(pred[s]) != len(truth):
            raise InvalidInputError(f"{s}: {len(pred[s])} predictions for {len(truth)} samples")


def branch_metrics(pred: dict, truth) -> dict:
    """``pred`` maps supervisor -> boolean predictions; ``truth`` holds codes or verdicts."""
    codes = _as_codes(truth)
    _check_lengths(pred, codes)
    out = {}
    for i, s in enumerate(SUPERVISORS):
        p = np.asarray(pred[s], dtype=bool)
        t = np.array([c[i] == "p" for c in codes], dtype=bool)
        tp = int(np.sum(p & t))
        fp = int(np.sum(p & ~t))
        tn = int(np.sum(~p & ~t))
        fn = int(np.sum(~p & t))
        out[s] = BranchMetrics(
            accuracy=_ratio(tp + tn, len(t)),
            precision=_ratio(tp, tp + fp),
            recall=_ratio(tp, tp + fn),
            tp=tp, fp=fp, tn=tn, fn=fn,
        )
    return out


def aggregate_accuracy(pred: dict, truth):
    """Exact-match rate over the 16 composition classes and over POS/NEG/U."""
    codes = _as_codes(truth)
    _check_lengths(pred, codes)
    if not codes:
        raise InvalidInputError("no samples")
    pc = _pred_codes(pred)
    acc16 = sum(a == b for a, b in zip(pc, codes)) / len(codes)
    acc3 = sum(map_to_triclass(a) == map_to_triclass(b) for a, b in zip(pc, codes)) / len(codes)
    return acc16, acc3


def _confusion(truth_ids, pred_ids, k):
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(truth_ids, dtype=np.int64), np.asarray(pred_ids, dtype=np.int64)), 1)
    return m


def _pr_table(conf, labels) -> dict:
    """Per-class precision/recall from a confusion matrix (rows = truth)."""
    out = {}
    for i, lbl in enumerate(labels):
        out[lbl] = {
            "precision": _ratio(conf[i, i], conf[:, i].sum()),
            "recall": _ratio(conf[i, i], conf[i, :].sum()),
            "support": int(conf[i, :].sum()),
        }
    return out


@dataclass
class MetricsReport:
    n: int
    branches: dict
    accuracy_16: float
    accuracy_3: float
    # (4, 2, 2): supervisor x truth (n, p) x prediction (n, p)
    confusion_branch: np.ndarray
    # rows = truth, columns = prediction, in ALL_CODES / TRICLASSES order
    confusion_16: np.ndarray
    confusion_3: np.ndarray
    per_triclass: dict = field(default_factory=dict)
    per_code: dict = field(default_factory=dict)

    def mean_branch_accuracy(self) -> float:
        return float(np.mean([self.branches[s].accuracy for s in SUPERVISORS]))

    def summary(self) -> dict:
        """Compact per-epoch record (no confusion matrices)."""
        return {
            "n": self.n,
            "accuracy_16": self.accuracy_16,
            "accuracy_3": self.accuracy_3,
            "mean_branch_accuracy": self.mean_branch_accuracy(),
            "branches": {s: self.branches[s].to_dict() for s in SUPERVISORS},
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["confusion_branch"] = self.confusion_branch.tolist()
        d["confusion_16"] = self.confusion_16.tolist()
        d["confusion_3"] = self.confusion_3.tolist()
        d["per_triclass"] = self.per_triclass
        d["per_code"] = self.per_code
        return d


def metrics_report(outputs: dict, truth) -> MetricsReport:
    """Build a report from per-supervisor ``(B, 2)`` logits or boolean predictions.

    Losses are filled in only when logits are given.
    """
    codes = _as_codes(truth)
    first = np.asarray(outputs[SUPERVISORS[0]])
    have_logits = first.ndim == 2
    pred = predict_labels(outputs) if have_logits else {s: np.asarray(outputs[s], dtype=bool) for s in SUPERVISORS}
    branches = branch_metrics(pred, codes)
    if have_logits:
        for i, s in enumerate(SUPERVISORS):
            target = np.array([c[i] == "p" for c in codes], dtype=np.int64)
            branches[s].loss = float(softmax_xent(np.asarray(outputs[s], dtype=np.float64), target)[0])
    acc16, acc3 = aggregate_accuracy(pred, codes)
    pc = _pred_codes(pred)
    conf_b = np.stack([
        np.array([[b.tn, b.fp], [b.fn, b.tp]], dtype=np.int64) for b in (branches[s] for s in SUPERVISORS)
    ])
    conf16 = _confusion([code_index(c) for c in codes], [code_index(c) for c in pc], 16)
    tri = {t: i for i, t in enumerate(TRICLASSES)}
    conf3 = _confusion(
        [tri[map_to_triclass(c)] for c in codes], [tri[map_to_triclass(c)] for c in pc], 3
    )
    return MetricsReport(
        n=len(codes),
        branches=branches,
        accuracy_16=acc16,
        accuracy_3=acc3,
        confusion_branch=conf_b,
        confusion_16=conf16,
        confusion_3=conf3,
        per_triclass=_pr_table(conf3, TRICLASSES),
        per_code=_pr_table(conf16, ALL_CODES),
    )


# ---------------------------------------------------------------- ablation

LEAVE_ONE_OUT = "leave-one-out"
SINGLE_INPUT = "single-input"


def ablation_configs(modes=(LEAVE_ONE_OUT, SINGLE_INPUT)) -> dict:
    """Configuration name -> descriptors replaced by noise. Always includes ``baseline``."""
    from .descriptors import DESCRIPTOR_NAMES

    out = {"baseline": ()}
    for mode in modes:
        if mode == LEAVE_ONE_OUT:
            out.update({f"without_{d}": (d,) for d in DESCRIPTOR_NAMES})
        elif mode == SINGLE_INPUT:
            out.update({f"only_{d}": tuple(x for x in DESCRIPTOR_NAMES if x != d) for d in DESCRIPTOR_NAMES})
        else:
            raise InvalidInputError(f"unknown ablation mode {mode!r}")
    return out


@dataclass
class AblationResult:
    # configuration -> list of test reports, one per realization
    reports: dict
    substituted: dict

    def stats(self) -> dict:
        """Mean and (population) standard deviation over realizations."""
        out = {}
        for name, reps in self.reports.items():
            row = {}
            for key, values in (
                ("accuracy_3", [r.accuracy_3 for r in reps]),
                ("accuracy_16", [r.accuracy_16 for r in reps]),
                ("mean_branch_accuracy", [r.mean_branch_accuracy() for r in reps]),
                *((f"{s}_accuracy", [r.branches[s].accuracy for r in reps]) for s in SUPERVISORS),
            ):
                row[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
            out[name] = row
        return out

    def to_dict(self) -> dict:
        return {
            "substituted": {k: list(v) for k, v in self.substituted.items()},
            "stats": self.stats(),
            "reports": {k: [r.to_dict() for r in v] for k, v in self.reports.items()},
        }


def run_ablation(
    dataset,
    net_config,
    train_config,
    modes=(LEAVE_ONE_OUT, SINGLE_INPUT),
    realizations: int = 5,
    ratios=(0.60, 0.25, 0.15),
    split=None,
    configs=None,
    log=None,
) -> AblationResult:
    """Retrain from scratch for every configuration and realization.

    Realization ``r`` uses the subject split drawn with seed
    ``[train_config.seed, r]`` (or the fixed ``split``) and training seed
    ``[train_config.seed, r]``; the same seeds are used for every
    configuration, so draws and initial weights are shared. Test metrics are
    computed on every streamline of the test subjects. ``configs`` restricts
    the run to a subset of configuration names.
    """
    from dataclasses import replace

    from .sampler import split_subjects
    from .train import evaluate, train

    if realizations < 1:
        raise InvalidInputError("realizations must be >= 1")
    all_cfgs = ablation_configs(modes)
    if configs is not None:
        missing = set(configs) - set(all_cfgs)
        if missing:
            raise InvalidInputError(f"unknown ablation configurations {sorted(missing)}")
        all_cfgs = {k: v for k, v in all_cfgs.items() if k in configs}
    reports = {name: [] for name in all_cfgs}
    for r in range(realizations):
        seed = [int(train_config.seed), r]
        sp = split if split is not None else split_subjects(dataset.names, ratios, seed)
        if not sp.test:
            raise InvalidInputError("split has no test subjects")
        rseed = int(np.random.SeedSequence(seed).generate_state(1)[0])
        test_samples = dataset.all_samples(sp.test)
        for name, which in all_cfgs.items():
            cfg = replace(train_config, seed=rseed, ablate=which)
            res = train(dataset, net_config, cfg, sp.train, sp.validation)
            rep = evaluate(res.net, dataset, test_samples, cfg.ablate, [rseed, r])
            reports[name].append(rep)
            if log is not None:
                log({"realization": r, "config": name, **rep.summary()})
    return AblationResult(reports, dict(all_cfgs))
