"""Axis-aligned voxel volumes, world/voxel mapping, interpolation, T1w
normalization and per-shell spherical-harmonics fitting.

Voxel ``(i, j, k)`` has its centre at ``origin + (i, j, k) * spacing``; there
is no rotation component. Volume data is stored as ``(X, Y, Z, C)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import sph_harm_y

from .errors import (
    DegenerateInputError,
    InsufficientDirectionsError,
    InvalidInputError,
    OutOfBoundsError,
)
from .streamline import BoundingBox

DEFAULT_SHELLS = (1000.0, 3000.0)
DEFAULT_LMAX = 6
# cond(B^T B) above this triggers a warning during SH fitting
SH_CONDITION_WARN = 1e8


@dataclass(frozen=True)
class VolumeGrid:
    dims: tuple
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidInputError(f"dims must be 3 positive integers, got {self.dims}")
        if np.any(spacing <= 0):
            raise InvalidInputError("spacing must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    def world_bbox(self) -> BoundingBox:
        """World-space box covering every voxel out to its outer face."""
        lo = self.origin - 0.5 * self.spacing
        hi = self.origin + (np.asarray(self.dims) - 0.5) * self.spacing
        return BoundingBox(lo, hi)

    def voxel_centers(self) -> np.ndarray:
        """``(X, Y, Z, 3)`` world coordinates of all voxel centres."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def same_as(self, other: "VolumeGrid") -> bool:
        return (
            self.dims == other.dims
            and np.array_equal(self.spacing, other.spacing)
            and np.array_equal(self.origin, other.origin)
        )


@dataclass(frozen=True)
class Volume:
    """Scalar, multi-channel or label volume. ``data`` is ``(X, Y, Z, C)``."""

    grid: VolumeGrid
    data: np.ndarray
    is_label: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4 or tuple(data.shape[:3]) != self.grid.dims:
            raise InvalidInputError(
                f"data shape {data.shape} does not match grid dims {self.grid.dims}"
            )
        if self.is_label:
            if data.shape[3] != 1:
                raise InvalidInputError("label volumes have one channel")
            if np.any(data < 0):
                raise InvalidInputError("labels must be nonnegative")
            data = data.astype(np.uint32)
        elif data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def scalar(self) -> np.ndarray:
        """``(X, Y, Z)`` view of a single-channel volume."""
        return self.data[..., 0]


def world_to_voxel(grid: VolumeGrid, p) -> np.ndarray:
    return (np.asarray(p, dtype=np.float64) - grid.origin) / grid.spacing


def voxel_to_world(grid: VolumeGrid, u) -> np.ndarray:
    return np.asarray(u, dtype=np.float64) * grid.spacing + grid.origin


def in_range(grid: VolumeGrid, p) -> np.ndarray:
    """True where ``p`` maps inside the half-voxel rim ``[-0.5, dims - 0.5)``."""
    u = world_to_voxel(grid, p)
    dims = np.asarray(grid.dims)
    return np.all((u >= -0.5) & (u < dims - 0.5), axis=-1)


def _check_range(grid, pts, clamp):
    if clamp:
        return grid.world_bbox().clip(pts)
    if not np.all(in_range(grid, pts)):
        raise OutOfBoundsError("sampling point outside the volume")
    return pts


def trilinear_sample(v: Volume, p, clamp: bool = False) -> np.ndarray:
    """Trilinear interpolation at world points ``p`` (``(3,)`` or ``(M, 3)``).

    Returns ``(C,)`` or ``(M, C)``. Points in the half-voxel rim are clamped to
    the outermost voxel centre. With ``clamp=True`` points outside the volume
    are first moved onto its boundary instead of raising.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    pts = _check_range(v.grid, pts, clamp)
    dims = np.asarray(v.grid.dims)
    u = np.clip(world_to_voxel(v.grid, pts), 0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    data = v.data
    out = np.zeros((len(pts), v.channels), dtype=np.float64)
    for cx in (0, 1):
        wx = f[:, 0] if cx else 1 - f[:, 0]
        ix = i1[:, 0] if cx else i0[:, 0]
        for cy in (0, 1):
            wy = f[:, 1] if cy else 1 - f[:, 1]
            iy = i1[:, 1] if cy else i0[:, 1]
            for cz in (0, 1):
                wz = f[:, 2] if cz else 1 - f[:, 2]
                iz = i1[:, 2] if cz else i0[:, 2]
                out += (wx * wy * wz)[:, None] * data[ix, iy, iz]
    return out[0] if single else out


def nearest_voxel(grid: VolumeGrid, p) -> np.ndarray:
    """Integer index of the voxel whose centre is nearest; ties go to the lower index.

    Raises for points outside ``[-0.5, dims - 0.5)``.
    """
    pts = np.asarray(p, dtype=np.float64)
    if not np.all(in_range(grid, pts)):
        raise OutOfBoundsError("point outside the volume")
    u = world_to_voxel(grid, pts)
    idx = np.ceil(u - 0.5).astype(np.int64)
    return np.clip(idx, 0, np.asarray(grid.dims) - 1)


def nearest_label(v: Volume, p) -> np.ndarray:
    """Label (or value of channel 0) of the nearest voxel to each point."""
    idx = nearest_voxel(v.grid, p)
    return v.data[idx[..., 0], idx[..., 1], idx[..., 2], 0]


def lookup_or(v: Volume, p, fill) -> np.ndarray:
    """Nearest-voxel lookup for ``(M, 3)`` points; out-of-range points get ``fill``."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    inside = in_range(v.grid, pts)
    out = np.full(len(pts), fill, dtype=v.data.dtype)
    if np.any(inside):
        out[inside] = nearest_label(v, pts[inside])
    return out


def normalize_t1w(v: Volume) -> Volume:
    """Affine rescale of all voxel values so the global min is 0 and max is 1."""
    lo, hi = float(v.data.min()), float(v.data.max())
    if not hi > lo:
        raise DegenerateInputError("cannot normalize a constant volume")
    data = (v.data - lo) / (hi - lo)
    return Volume(v.grid, data, meta=dict(v.meta))


# ---------------------------------------------------------------- spherical harmonics


def sh_order_pairs(lmax: int):
    """(l, m) pairs of the even-order real basis, m = -l..l within each l."""
    if lmax < 0 or lmax % 2:
        raise InvalidInputError(f"lmax must be a nonnegative even integer, got {lmax}")
    return [(l, m) for l in range(0, lmax + 1, 2) for m in range(-l, l + 1)]


def sh_count(lmax: int) -> int:
    return (lmax // 2 + 1) * (lmax + 1)


def sh_basis(lmax: int, dirs) -> np.ndarray:
    """Real symmetric SH basis evaluated at unit directions, ``(len(dirs), c)``.

    Columns follow :func:`sh_order_pairs`. For ``m < 0`` the column is
    ``sqrt(2) (-1)^m Im Y_l^|m|``, for ``m > 0`` it is ``sqrt(2) (-1)^m Re Y_l^m``,
    giving an orthonormal basis under the uniform measure on the sphere.
    """
    pairs = sh_order_pairs(lmax)
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InvalidInputError("directions must be unit vectors")
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    cols = []
    for l, m in pairs:
        y = sph_harm_y(l, abs(m), theta, phi)
        if m < 0:
            cols.append(np.sqrt(2) * (-1) ** m * y.imag)
        elif m == 0:
            cols.append(y.real)
        else:
            cols.append(np.sqrt(2) * (-1) ** m * y.real)
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class GradientScheme:
    """Per-measurement unit directions ``(M, 3)`` and b-values ``(M,)``."""

    directions: np.ndarray
    bvals: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        b = np.asarray(self.bvals, dtype=np.float64).reshape(-1)
        if len(d) != len(b):
            raise InvalidInputError("direction and b-value counts differ")
        weighted = b > 0
        if np.any(np.abs(np.linalg.norm(d[weighted], axis=1) - 1.0) > 1e-6):
            raise InvalidInputError("diffusion directions must be unit-norm")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "bvals", b)

    def shell_mask(self, b: float, tol: float = 50.0) -> np.ndarray:
        return np.abs(self.bvals - b) <= tol


def fit_sh_per_shell(
    dwi: Volume,
    scheme: GradientScheme,
    lmax: int = DEFAULT_LMAX,
    shells=DEFAULT_SHELLS,
) -> Volume:
    """Least-squares SH coefficients per voxel for each shell, concatenated.

    Output channels are ``len(shells) * sh_count(lmax)`` in the order of
    ``shells``. Measurements whose b-value matches no shell are ignored.
    """
    if dwi.channels != len(scheme.bvals):
        raise InvalidInputError("DWI channel count does not match the gradient scheme")
    c = sh_count(lmax)
    signal = dwi.data.reshape(-1, dwi.channels)
    blocks = []
    for b in shells:
        sel = scheme.shell_mask(b)
        if sel.sum() < c:
            raise InsufficientDirectionsError(
                f"shell b={b:g} has {int(sel.sum())} directions, need >= {c}"
            )
        basis = sh_basis(lmax, scheme.directions[sel])
        normal = basis.T @ basis
        if np.linalg.cond(normal) > SH_CONDITION_WARN:
            warnings.warn(f"ill-conditioned SH fit for shell b={b:g}", RuntimeWarning)
        coef = np.linalg.solve(normal, basis.T @ signal[:, sel].T).T
        blocks.append(coef)
    data = np.concatenate(blocks, axis=1).reshape(*dwi.grid.dims, -1)
    return Volume(dwi.grid, data)


def synthesize_signal(coef: np.ndarray, lmax: int, dirs) -> np.ndarray:
    """Evaluate SH coefficients ``(..., c)`` at directions; returns ``(..., len(dirs))``."""
    return np.asarray(coef) @ sh_basis(lmax, dirs).T
