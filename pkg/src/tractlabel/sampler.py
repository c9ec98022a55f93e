"""Subject-level splits and hierarchical subject -> class -> streamline sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import ALL_CODES
from .errors import InvalidInputError

DEFAULT_RATIOS = (0.60, 0.25, 0.15)


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple


def split_subjects(subjects, ratios=DEFAULT_RATIOS, seed=0) -> Split:
    """Shuffle subjects and cut them by ``ratios``.

    Validation and test sizes are ``floor(ratio * n)``; the remainder goes to
    training.
    """
    subjects = list(subjects)
    if len(subjects) < 3:
        raise InvalidInputError("need at least 3 subjects to split")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise InvalidInputError(f"ratios must be three nonnegative values summing to 1, got {ratios}")
    n = len(subjects)
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    n_train = n - n_val - n_test
    return Split(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )


class DatasetIndex:
    """Per subject, the streamline ids of each composition class.

    ``codes`` maps subject -> sequence of composition codes indexed by
    streamline id.
    """

    def __init__(self, codes: dict):
        self.pools = {}
        self.totals = {}
        for subject, subject_codes in codes.items():
            arr = np.asarray(list(subject_codes))
            pools = {c: np.flatnonzero(arr == c) for c in ALL_CODES}
            self.pools[subject] = {c: ids for c, ids in pools.items() if len(ids)}
            self.totals[subject] = len(arr)

    @property
    def subjects(self):
        return list(self.pools)

    def restrict(self, subjects) -> "DatasetIndex":
        out = DatasetIndex({})
        for s in subjects:
            out.pools[s] = self.pools[s]
            out.totals[s] = self.totals[s]
        return out


def hierarchical_sample(idx: DatasetIndex, n: int, seed) -> list:
    """Draw ``n`` i.i.d. ``(subject, code, streamline_id)`` triples.

    Subject is drawn proportional to its streamline count, then a class
    uniformly among that subject's non-empty classes, then a streamline
    uniformly from the pool.
    """
    subjects = [s for s in idx.subjects if idx.pools[s]]
    if not subjects:
        raise InvalidInputError("all (subject, class) pools are empty")
    weights = np.array([idx.totals[s] for s in subjects], dtype=np.float64)
    rng = np.random.default_rng(seed)
    subj_draw = rng.choice(len(subjects), size=n, p=weights / weights.sum())
    class_u = rng.random(n)
    item_u = rng.random(n)
    out = []
    for i in range(n):
        subject = subjects[subj_draw[i]]
        pools = idx.pools[subject]
        codes = list(pools)
        code = codes[min(int(class_u[i] * len(codes)), len(codes) - 1)]
        ids = pools[code]
        sid = int(ids[min(int(item_u[i] * len(ids)), len(ids) - 1)])
        out.append((subject, code, sid))
    return out


def epoch_batches(samples, batch_size: int):
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    samples = list(samples)
    return [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]
