"""The five per-streamline network inputs and noise substitution."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnsampleableError
from .streamline import (
    DEFAULT_K,
    DEFAULT_N,
    DEFAULT_STEP,
    BoundingBox,
    ResampledStreamline,
    landmark_descriptor,
    normalize_coordinates,
    resample_fixed_step,
    truncate_pad,
)
from .supervisors import OUTSIDE_LABEL
from .volume import Volume, in_range, lookup_or, normalize_t1w, trilinear_sample

DESCRIPTOR_NAMES = ("xyz", "lm", "sh", "t1w", "wmparc")


@dataclass
class DescriptorSet:
    """Arrays are ``(C, N)`` for one streamline or ``(B, C, N)`` for a batch."""

    xyz: np.ndarray
    lm: np.ndarray
    sh: np.ndarray
    t1w: np.ndarray
    wmparc: np.ndarray
    valid_len: np.ndarray | int = 0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in DESCRIPTOR_NAMES}

    def astype(self, dtype) -> "DescriptorSet":
        return replace(self, **{k: v.astype(dtype) for k, v in self.as_dict().items()})

    @classmethod
    def stack(cls, items) -> "DescriptorSet":
        items = list(items)
        arrays = {n: np.stack([getattr(d, n) for d in items]) for n in DESCRIPTOR_NAMES}
        return cls(**arrays, valid_len=np.array([d.valid_len for d in items]))


@dataclass
class DescriptorConfig:
    n: int = DEFAULT_N
    k: int = DEFAULT_K
    step: float = DEFAULT_STEP
    region_table: tuple = ()
    # landmarks on the truncated form (default) or on the full resampled streamline
    landmarks_on_full: bool = False


@dataclass
class SubjectVolumes:
    """Per-subject images used by the descriptor pipeline. ``t1w`` is
    normalized to [0, 1] on construction."""

    t1w: Volume
    sh: Volume
    parcellation: Volume
    bbox: BoundingBox | None = None
    _normalized: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self._normalized:
            self.t1w = normalize_t1w(self.t1w)
            self._normalized = True
        if self.bbox is None:
            self.bbox = self.t1w.grid.world_bbox()


def one_hot_parcellation(r: ResampledStreamline, parc: Volume, region_table) -> np.ndarray:
    """``(L, n)`` indicator of the region each real sample falls in.

    Samples outside the grid or in a label missing from the table give an
    all-zero column.
    """
    table = {int(lbl): i for i, lbl in enumerate(region_table)}
    out = np.zeros((len(table), r.n), dtype=np.float64)
    labels = lookup_or(parc, r.real_points, OUTSIDE_LABEL)
    outside = ~in_range(parc.grid, r.real_points)
    for j, lbl in enumerate(labels.tolist()):
        row = table.get(int(lbl))
        if row is not None and not outside[j]:
            out[row, j] = 1.0
    return out


def _sample_columns(vol: Volume, r: ResampledStreamline) -> np.ndarray:
    out = np.zeros((vol.channels, r.n), dtype=np.float64)
    out[:, : r.valid_len] = trilinear_sample(vol, r.real_points, clamp=True).T
    return out


def descriptors_from_resampled(
    r: ResampledStreamline,
    vols: SubjectVolumes,
    config: DescriptorConfig,
    full: np.ndarray | None = None,
) -> DescriptorSet:
    if not np.any(in_range(vols.t1w.grid, r.real_points)):
        raise UnsampleableError("streamline lies entirely outside the subject volumes")
    clipped = ResampledStreamline(
        np.where(np.arange(r.n)[:, None] < r.valid_len, vols.bbox.clip(r.points), 0.0),
        r.valid_len,
        r.step,
    )
    lm = landmark_descriptor(r, config.k, along=full)
    return DescriptorSet(
        xyz=normalize_coordinates(clipped, vols.bbox),
        lm=lm,
        sh=_sample_columns(vols.sh, r),
        t1w=_sample_columns(vols.t1w, r),
        wmparc=one_hot_parcellation(r, vols.parcellation, config.region_table),
        valid_len=r.valid_len,
    )


def build_descriptors(points, vols: SubjectVolumes, config: DescriptorConfig) -> DescriptorSet:
    """Resample at ``config.step``, truncate/pad to ``config.n`` and extract all
    five descriptors."""
    res = resample_fixed_step(points, config.step)
    r = truncate_pad(res, config.n, config.step)
    full = res if config.landmarks_on_full else None
    return descriptors_from_resampled(r, vols, config, full)


def noise_substitute(d: DescriptorSet, which, seed) -> DescriptorSet:
    """Replace the selected descriptors (padding included) with i.i.d.
    standard-normal values; the others are returned unchanged."""
    which = set(which)
    unknown = which - set(DESCRIPTOR_NAMES)
    if unknown:
        raise ValueError(f"unknown descriptors {sorted(unknown)}")
    if not which:
        return d
    rng = np.random.default_rng(seed)
    updates = {}
    for name in DESCRIPTOR_NAMES:
        if name in which:
            arr = getattr(d, name)
            updates[name] = rng.standard_normal(arr.shape).astype(arr.dtype, copy=False)
    return replace(d, **updates)


def descriptor_channels(config: DescriptorConfig, sh_channels: int = 56) -> dict:
    return {"xyz": 3, "lm": config.k, "sh": sh_channels, "t1w": 1, "wmparc": len(config.region_table)}
