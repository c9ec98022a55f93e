"""Rule-based supervisors producing one binary label per streamline.

* AIF: loop and endpoint rules.
* mask rule: bundle-mask containment plus endpoint masks in either order.
* region query: simplified WMQL-style endpoint/traversal/exclusion queries
  on a parcellation.
* atlas: MDF shape matching against per-bundle prototype streamlines.

All mask and label lookups use the nearest voxel. Points outside a volume
count as "not in any mask / region".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ensemble import SupervisorVerdict
from .errors import InvalidInputError
from .streamline import resample_fixed_step, resample_n_points, winding_angle
from .volume import Volume, in_range, lookup_or

DEFAULT_LOOP_THRESHOLD = 360.0
DEFAULT_VENTRICLE_RADIUS = 3.0
DEFAULT_ATLAS_THRESHOLD = 5.0
# winding comparisons ignore float noise below this (degrees)
WINDING_EPS = 1e-6


def _points(s) -> np.ndarray:
    return np.asarray(getattr(s, "real_points", s), dtype=np.float64)


def _inside(mask: Volume, pts: np.ndarray) -> np.ndarray:
    return lookup_or(mask, pts, 0) != 0


def ball_structure(spacing, radius: float) -> np.ndarray:
    """Boolean structuring element of all voxel offsets within ``radius`` mm."""
    spacing = np.asarray(spacing, dtype=np.float64)
    half = np.floor(radius / spacing).astype(int)
    axes = [np.arange(-h, h + 1) * s for h, s in zip(half, spacing)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return gx**2 + gy**2 + gz**2 <= radius**2 + 1e-9


def dilate_mask(mask: Volume, radius: float) -> Volume:
    """Binary dilation by a ball of ``radius`` mm."""
    binary = mask.scalar != 0
    if radius > 0:
        binary = ndimage.binary_dilation(binary, structure=ball_structure(mask.grid.spacing, radius))
    return Volume(mask.grid, binary.astype(np.uint32), is_label=True)


# ---------------------------------------------------------------- AIF


def aif_label(
    s,
    deep_wm_mask: Volume,
    ventricle_zone: Volume,
    loop_threshold: float = DEFAULT_LOOP_THRESHOLD,
    step: float = 1.0,
) -> bool:
    """Negative if the 1 mm-resampled streamline turns more than
    ``loop_threshold`` degrees or either endpoint lies in the deep-WM mask or
    ventricle zone. Endpoints outside the grid are negative as well."""
    pts = _points(s)
    if not deep_wm_mask.grid.same_as(ventricle_zone.grid):
        raise InvalidInputError("AIF masks must share a grid")
    if winding_angle(resample_fixed_step(pts, step)) > loop_threshold + WINDING_EPS:
        return False
    ends = pts[[0, -1]]
    if not np.all(in_range(deep_wm_mask.grid, ends)):
        return False
    if np.any(_inside(deep_wm_mask, ends)) or np.any(_inside(ventricle_zone, ends)):
        return False
    return True


# ---------------------------------------------------------------- mask rule


@dataclass(frozen=True)
class BundleMasks:
    name: str
    mask: Volume
    start: Volume
    end: Volume

    def __post_init__(self):
        g = self.mask.grid
        if not (g.same_as(self.start.grid) and g.same_as(self.end.grid)):
            raise InvalidInputError(f"bundle {self.name}: masks must share one grid")


def bundle_rule(pts: np.ndarray, b: BundleMasks) -> bool:
    if not np.all(_inside(b.mask, pts)):
        return False
    ends = pts[[0, -1]]
    in0 = _inside(b.start, ends)
    in1 = _inside(b.end, ends)
    return bool((in0[0] and in1[1]) or (in0[1] and in1[0]))


def maskrule_label(s, bundles) -> bool:
    """Positive iff some bundle's mask holds every sample and its endpoint
    masks hold the two endpoints (either assignment)."""
    bundles = list(bundles)
    if not bundles:
        raise InvalidInputError("mask rule needs at least one bundle")
    pts = _points(s)
    return any(bundle_rule(pts, b) for b in bundles)


# ---------------------------------------------------------------- region query


@dataclass(frozen=True)
class RegionQuery:
    """Endpoint region sets, regions that must be visited and regions that must not."""

    name: str
    endpoint_a: frozenset
    endpoint_b: frozenset
    include: frozenset = field(default_factory=frozenset)
    exclude: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for attr in ("endpoint_a", "endpoint_b", "include", "exclude"):
            object.__setattr__(self, attr, frozenset(int(x) for x in getattr(self, attr)))
        if not self.endpoint_a or not self.endpoint_b:
            raise InvalidInputError(f"query {self.name}: endpoint region sets must be non-empty")

    def matches(self, labels: np.ndarray) -> bool:
        first, last = int(labels[0]), int(labels[-1])
        ends_ok = (first in self.endpoint_a and last in self.endpoint_b) or (
            last in self.endpoint_a and first in self.endpoint_b
        )
        if not ends_ok:
            return False
        visited = set(labels.tolist())
        return self.include <= visited and not (self.exclude & visited)


# label assigned to samples outside the parcellation grid
OUTSIDE_LABEL = 0


def region_query_label(s, parc: Volume, queries) -> bool:
    queries = list(queries)
    if not queries:
        raise InvalidInputError("region query supervisor needs at least one query")
    labels = lookup_or(parc, _points(s), OUTSIDE_LABEL).astype(np.int64)
    return any(q.matches(labels) for q in queries)


# ---------------------------------------------------------------- atlas


def mdf_distance(a, b) -> float:
    """Minimum over direct and flipped order of the mean pointwise distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"MDF needs equal point counts, got {a.shape} and {b.shape}")
    direct = np.linalg.norm(a - b, axis=1).mean()
    flipped = np.linalg.norm(a - b[::-1], axis=1).mean()
    return float(min(direct, flipped))


def mdf_to_many(a: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """MDF from ``a`` (P, 3) to each prototype in ``protos`` (n, P, 3)."""
    direct = np.linalg.norm(protos - a, axis=2).mean(axis=1)
    flipped = np.linalg.norm(protos[:, ::-1] - a, axis=2).mean(axis=1)
    return np.minimum(direct, flipped)


@dataclass(frozen=True)
class AtlasBundle:
    name: str
    prototypes: np.ndarray
    threshold: float = DEFAULT_ATLAS_THRESHOLD

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float64)
        if protos.ndim != 3 or protos.shape[2] != 3 or len(protos) == 0:
            raise InvalidInputError(f"atlas bundle {self.name}: prototypes must be (n, P, 3)")
        if not self.threshold > 0:
            raise InvalidInputError(f"atlas bundle {self.name}: threshold must be positive")
        object.__setattr__(self, "prototypes", protos)


@dataclass(frozen=True)
class BundleAtlas:
    bundles: tuple

    def __post_init__(self):
        bundles = tuple(self.bundles)
        if not bundles:
            raise InvalidInputError("atlas is empty")
        p = {b.prototypes.shape[1] for b in bundles}
        if len(p) != 1:
            raise InvalidInputError("all atlas prototypes must share one point count")
        object.__setattr__(self, "bundles", bundles)

    @property
    def n_points(self) -> int:
        return self.bundles[0].prototypes.shape[1]


def atlas_label(s, atlas: BundleAtlas) -> bool:
    """Positive iff the streamline is within some bundle's threshold (inclusive)."""
    r = resample_n_points(_points(s), atlas.n_points)
    return any(mdf_to_many(r, b.prototypes).min() <= b.threshold for b in atlas.bundles)


# ---------------------------------------------------------------- all four


@dataclass
class SupervisorInputs:
    """Everything the four rule engines need for one subject."""

    parcellation: Volume
    queries: list
    atlas: BundleAtlas
    bundles: list
    deep_wm: Volume
    ventricles: Volume
    ventricle_radius: float = DEFAULT_VENTRICLE_RADIUS
    loop_threshold: float = DEFAULT_LOOP_THRESHOLD
    step: float = 1.0

    def __post_init__(self):
        self.ventricle_zone = dilate_mask(self.ventricles, self.ventricle_radius)


def supervise_one(points, inputs: SupervisorInputs) -> SupervisorVerdict:
    raw = np.asarray(points, dtype=np.float64)
    res = resample_fixed_step(raw, inputs.step)
    return SupervisorVerdict(
        tq=region_query_label(res, inputs.parcellation, inputs.queries),
        rbx=atlas_label(raw, inputs.atlas),
        ts=maskrule_label(res, inputs.bundles),
        aif=aif_label(res, inputs.deep_wm, inputs.ventricle_zone, inputs.loop_threshold, inputs.step),
    )


def supervise(streamlines, inputs: SupervisorInputs) -> list:
    return [supervise_one(s, inputs) for s in streamlines]
