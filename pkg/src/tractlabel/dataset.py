"""Labelled subjects and batch assembly for training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .descriptors import (
    DescriptorConfig,
    DescriptorSet,
    SubjectVolumes,
    descriptors_from_resampled,
)
from .ensemble import SUPERVISORS, compose
from .sampler import DatasetIndex
from .streamline import resample_fixed_step, truncate_pad


@dataclass
class SubjectData:
    """One subject's streamlines, their composition codes and images."""

    name: str
    streamlines: list
    codes: list
    volumes: SubjectVolumes
    _resampled: dict = field(default_factory=dict, repr=False)
    _full: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.streamlines) != len(self.codes):
            raise ValueError(f"{self.name}: {len(self.streamlines)} streamlines but {len(self.codes)} labels")
        self.codes = [c if isinstance(c, str) else compose(c) for c in self.codes]

    def resampled(self, sid: int, config: DescriptorConfig):
        r = self._resampled.get(sid)
        if r is None:
            full = resample_fixed_step(self.streamlines[sid], config.step)
            r = truncate_pad(full, config.n, config.step)
            self._resampled[sid] = r
            if config.landmarks_on_full:
                self._full[sid] = full
        return r, self._full.get(sid)

    def descriptors(self, sid: int, config: DescriptorConfig) -> DescriptorSet:
        r, full = self.resampled(sid, config)
        return descriptors_from_resampled(r, self.volumes, config, full)


class Dataset:
    """Subjects plus the descriptor config. With ``cache`` on, each
    streamline's descriptors are computed once and kept (single precision)."""

    def __init__(self, subjects, config: DescriptorConfig, cache: bool = True):
        subjects = list(subjects)
        self.subjects = {s.name: s for s in subjects}
        if len(self.subjects) != len(subjects):
            raise ValueError("duplicate subject names")
        self.config = config
        self.cache = cache
        self._desc = {}
        self.index = DatasetIndex({name: s.codes for name, s in self.subjects.items()})

    @property
    def names(self):
        return list(self.subjects)

    def sh_channels(self) -> int:
        return next(iter(self.subjects.values())).volumes.sh.channels

    def in_channels(self) -> dict:
        c = self.config
        return {"xyz": 3, "lm": c.k, "sh": self.sh_channels(), "t1w": 1, "wmparc": len(c.region_table)}

    def batch(self, samples, dtype=np.float32):
        """Descriptors and per-supervisor targets (1 = positive) for
        ``(subject, code, sid)`` triples."""
        ds = DescriptorSet.stack(self.descriptors(subj, sid) for subj, _, sid in samples).astype(dtype)
        codes = [self.subjects[subj].codes[sid] for subj, _, sid in samples]
        targets = {s: np.array([c[i] == "p" for c in codes], dtype=np.int64) for i, s in enumerate(SUPERVISORS)}
        return ds, targets, codes

    def descriptors(self, subject: str, sid: int) -> DescriptorSet:
        key = (subject, sid)
        d = self._desc.get(key)
        if d is None:
            d = self.subjects[subject].descriptors(sid, self.config).astype(np.float32)
            if self.cache:
                self._desc[key] = d
        return d

    def all_samples(self, subjects=None):
        out = []
        for name in subjects or self.names:
            out.extend((name, c, i) for i, c in enumerate(self.subjects[name].codes))
        return out
