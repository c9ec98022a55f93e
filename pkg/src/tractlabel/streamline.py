"""Streamline geometry: resampling, padding, winding angle, landmark descriptor
and coordinate normalization.

A raw streamline is an ``(M, 3)`` float array of world-space millimetre
coordinates. The fixed-length network form is :class:`ResampledStreamline`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, OutOfBoundsError

DEFAULT_N = 100
DEFAULT_STEP = 1.0
DEFAULT_K = 20


def as_streamline(points) -> np.ndarray:
    """Validate and return ``points`` as an ``(M, 3)`` float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"streamline must be (M, 3), got {pts.shape}")
    if len(pts) < 2:
        raise InvalidInputError("streamline needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("streamline has non-finite coordinates")
    if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
        raise InvalidInputError("streamline has repeated consecutive points")
    return pts


def arc_length(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at every vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _interp_at(points: np.ndarray, cum: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(targets, cum, points[:, j]) for j in range(3)], axis=1)


def resample_fixed_step(points, step: float = DEFAULT_STEP) -> np.ndarray:
    """Resample to a constant arc-length ``step``.

    The first and last polyline vertices are always kept, so the final
    interval may be shorter than ``step``.
    """
    if not step > 0:
        raise InvalidInputError("step must be positive")
    pts = as_streamline(points)
    cum = arc_length(pts)
    total = cum[-1]
    n_full = int(np.floor(total / step + 1e-9))
    targets = step * np.arange(n_full + 1, dtype=np.float64)
    if targets[-1] >= total - 1e-9 * max(step, total):
        targets[-1] = total
    else:
        targets = np.append(targets, total)
    out = _interp_at(pts, cum, targets)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_n_points(points, n: int) -> np.ndarray:
    """Resample to ``n`` points equidistant in arc length (endpoints kept)."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    pts = as_streamline(points)
    cum = arc_length(pts)
    out = _interp_at(pts, cum, np.linspace(0.0, cum[-1], n))
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


@dataclass(frozen=True)
class ResampledStreamline:
    """Fixed-length streamline: ``points`` is ``(n, 3)`` with zero padding
    after ``valid_len`` real samples."""

    points: np.ndarray
    valid_len: int
    step: float = DEFAULT_STEP

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def real_points(self) -> np.ndarray:
        return self.points[: self.valid_len]


def truncate_pad(points, n: int = DEFAULT_N, step: float = DEFAULT_STEP) -> ResampledStreamline:
    """Keep the first ``n`` points, zero-fill the remainder."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise InvalidInputError("need an (M>=2, 3) point array")
    valid = min(len(pts), n)
    out = np.zeros((n, 3), dtype=np.float64)
    out[:valid] = pts[:valid]
    return ResampledStreamline(out, valid, step)


def prepare(points, n: int = DEFAULT_N, step: float = DEFAULT_STEP) -> ResampledStreamline:
    """Fixed-step resampling followed by truncation/padding to ``n``."""
    return truncate_pad(resample_fixed_step(points, step), n, step)


def turning_angles(points) -> np.ndarray:
    """Unsigned angle (degrees) between consecutive segment directions."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return np.zeros(0)
    d = np.diff(pts, axis=0)
    a, b = d[:-1], d[1:]
    cross = np.linalg.norm(np.cross(a, b), axis=1)
    dot = np.einsum("ij,ij->i", a, b)
    return np.degrees(np.arctan2(cross, dot))


def winding_angle(points) -> float:
    """Total unsigned turning of the polyline in degrees (0 for < 3 points)."""
    return float(turning_angles(points).sum())


def landmark_points(real_points: np.ndarray, k: int) -> np.ndarray:
    """``k`` landmarks equidistant in arc length, first and last on the endpoints."""
    return resample_n_points(real_points, k)


def landmark_descriptor(r: ResampledStreamline, k: int = DEFAULT_K, along=None) -> np.ndarray:
    """``(k, n)`` matrix of distances from each landmark to each real sample.

    Landmarks are placed on the real samples of ``r`` unless ``along`` (e.g.
    the untruncated streamline) is given. Padded columns are zero.
    """
    if k < 2:
        raise InvalidInputError("k must be >= 2")
    if r.valid_len < 2:
        raise InvalidInputError("need at least 2 real samples")
    real = r.real_points
    lm = landmark_points(real if along is None else along, k)
    out = np.zeros((k, r.n), dtype=np.float64)
    out[:, : r.valid_len] = np.linalg.norm(lm[:, None, :] - real[None, :, :], axis=2)
    return out


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise InvalidInputError("bounding box needs positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        span = self.hi - self.lo
        return np.all((pts >= self.lo - tol * span) & (pts <= self.hi + tol * span), axis=-1)

    def clip(self, pts: np.ndarray) -> np.ndarray:
        return np.clip(pts, self.lo, self.hi)


def normalize_coordinates(r: ResampledStreamline, bbox: BoundingBox) -> np.ndarray:
    """Map real samples affinely so ``bbox`` spans [-1, 1] per axis.

    Returns a ``(3, n)`` array; padded columns stay exactly zero.
    """
    real = r.real_points
    if not np.all(bbox.contains(real)):
        raise OutOfBoundsError("streamline sample outside the normalization box")
    out = np.zeros((3, r.n), dtype=np.float64)
    out[:, : r.valid_len] = (2.0 * (real - bbox.lo) / (bbox.hi - bbox.lo) - 1.0).T
    return out


def denormalize_coordinates(xyz: np.ndarray, bbox: BoundingBox) -> np.ndarray:
    """Inverse of :func:`normalize_coordinates` for a ``(3, m)`` array; returns ``(m, 3)``."""
    return (np.asarray(xyz).T + 1.0) * 0.5 * (bbox.hi - bbox.lo) + bbox.lo
