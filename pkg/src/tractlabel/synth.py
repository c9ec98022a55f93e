"""Synthetic subjects with known supervisor verdicts.

Each subject lives on a 50^3 grid of 2 mm voxels covering [0, 100] mm. Four
smooth bundles (quadratic Bezier centrelines) run through the periphery; a
ventricle ball sits at the centre and a deep white-matter ball above it.
Streamlines are drawn from eight construction categories whose verdicts are
fixed by geometric margins (distances in mm; nearest-voxel rounding adds at
most sqrt(3) mm):

==============  ======  =====================================================
category        code    construction
==============  ======  =====================================================
member          pppp    centreline + offset <= 2 + wiggle <= 0.8
bulged          ppnp    member with an 11 mm Gaussian bump leaving the mask
hooked          npnp    member whose last 12 mm curls 90 deg sideways
looped          pnpn    member with five tight loops (> 1800 deg turning)
deep_end        nnnn    bundle endpoint to the ventricle or deep-WM ball
alt_path        pnnp    same endpoints as the bundle, very different route
truncated       nnnp    member stopped at 55-80 % of its length
distractor      nnnp    random arc far from every bundle end and prototype
==============  ======  =====================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .descriptors import SubjectVolumes
from .ensemble import SupervisorVerdict
from .streamline import resample_fixed_step, resample_n_points, winding_angle
from .supervisors import (
    AtlasBundle,
    BundleAtlas,
    BundleMasks,
    RegionQuery,
    SupervisorInputs,
    mdf_to_many,
)
from .volume import GradientScheme, Volume, VolumeGrid, fit_sh_per_shell

GRID_DIMS = (50, 50, 50)
GRID_SPACING = 2.0
GRID_ORIGIN = 1.0
CENTER = np.array([50.0, 50.0, 50.0])

MASK_RADIUS = 7.0
END_RADIUS = 6.0
GM_RADIUS = 6.0
VENTRICLE_RADIUS = 8.0
DEEP_CENTER = np.array([50.0, 50.0, 80.0])
DEEP_RADIUS = 8.0
ATLAS_POINTS = 20
ATLAS_THRESHOLD = 5.0
STREAMLINE_STEP = 0.5

VENTRICLE_LABEL = 9
DEEP_LABEL = 10
FIRST_GM_LABEL = 11

# (name, start, control, end, direction used by the alternative route)
BUNDLES = (
    ("arc_low_a", (15, 20, 25), (50, 50, 25), (85, 20, 25), (0, 0, 1)),
    ("arc_low_b", (15, 80, 25), (50, 50, 25), (85, 80, 25), (0, 0, 1)),
    ("arc_right", (85, 20, 75), (85, 50, 45), (85, 80, 75), (-1, 0, 0)),
    ("arc_left", (15, 20, 75), (15, 50, 45), (15, 80, 75), (1, 0, 0)),
)

CATEGORY_CODES = {
    "member": "pppp",
    "bulged": "ppnp",
    "hooked": "npnp",
    "looped": "pnpn",
    "deep_end": "nnnn",
    "alt_path": "pnnp",
    "truncated": "nnnp",
    "distractor": "nnnp",
}
CATEGORY_FRACTIONS = {
    "member": 0.28,
    "bulged": 0.08,
    "hooked": 0.08,
    "looped": 0.10,
    "deep_end": 0.14,
    "alt_path": 0.10,
    "truncated": 0.10,
    "distractor": 0.12,
}

SHELLS = (1000.0, 3000.0)
DIRS_PER_SHELL = 45
N_B0 = 2


def region_table(n_bundles: int = len(BUNDLES)) -> tuple:
    return tuple(range(1, FIRST_GM_LABEL + 2 * n_bundles))


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _perp(v, t):
    """Component of ``v`` orthogonal to unit ``t``, normalized."""
    w = v - np.dot(v, t) * t
    return _unit(w)


def bezier(p0, c, p1, t):
    t = np.asarray(t)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t**2 * p1


def fibonacci_sphere(n: int, offset: float = 0.0) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z**2)
    phi = np.pi * (1 + 5**0.5) * i + offset
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def gradient_scheme() -> GradientScheme:
    dirs = [np.tile([1.0, 0.0, 0.0], (N_B0, 1))]
    bvals = [np.zeros(N_B0)]
    for k, b in enumerate(SHELLS):
        dirs.append(fibonacci_sphere(DIRS_PER_SHELL, offset=0.7 * k))
        bvals.append(np.full(DIRS_PER_SHELL, b))
    return GradientScheme(np.concatenate(dirs), np.concatenate(bvals))


@dataclass
class Bundle:
    name: str
    start: np.ndarray
    control: np.ndarray
    end: np.ndarray
    alt_dir: np.ndarray
    gm_labels: tuple

    def curve(self, n: int = 400) -> np.ndarray:
        return bezier(self.start, self.control, self.end, np.linspace(0, 1, n))

    def centerline(self) -> np.ndarray:
        return resample_fixed_step(self.curve(), 0.25)


@dataclass
class Anatomy:
    bundles: list
    ventricle_center: np.ndarray
    deep_center: np.ndarray

    @classmethod
    def build(cls, shift) -> "Anatomy":
        shift = np.asarray(shift, dtype=np.float64)
        bundles = []
        for i, (name, s, c, e, alt) in enumerate(BUNDLES):
            bundles.append(
                Bundle(
                    name,
                    np.asarray(s, float) + shift,
                    np.asarray(c, float) + shift,
                    np.asarray(e, float) + shift,
                    _unit(alt),
                    (FIRST_GM_LABEL + 2 * i, FIRST_GM_LABEL + 2 * i + 1),
                )
            )
        return cls(bundles, CENTER + shift, DEEP_CENTER + shift)

    def gm_centers(self):
        for b in self.bundles:
            yield b.start
            yield b.end


@dataclass
class SyntheticSubject:
    name: str
    streamlines: list
    categories: list
    truth: list
    grid: VolumeGrid
    t1w: Volume
    dwi: Volume
    scheme: GradientScheme
    sh: Volume
    parcellation: Volume
    deep_wm: Volume
    ventricles: Volume
    bundle_masks: list
    atlas: BundleAtlas
    queries: list
    anatomy: Anatomy = field(repr=False)

    def supervisor_inputs(self) -> SupervisorInputs:
        return SupervisorInputs(
            parcellation=self.parcellation,
            queries=self.queries,
            atlas=self.atlas,
            bundles=self.bundle_masks,
            deep_wm=self.deep_wm,
            ventricles=self.ventricles,
        )

    def volumes(self) -> SubjectVolumes:
        return SubjectVolumes(self.t1w, self.sh, self.parcellation)


@dataclass
class SyntheticFixture:
    subjects: list
    region_table: tuple
    # share of verdicts each engine is expected to reproduce
    expected_agreement: dict = field(
        default_factory=lambda: {"tq": 0.99, "rbx": 0.99, "ts": 1.0, "aif": 1.0}
    )


# ---------------------------------------------------------------- volumes


def make_grid() -> VolumeGrid:
    return VolumeGrid(GRID_DIMS, (GRID_SPACING,) * 3, (GRID_ORIGIN,) * 3)


def _render(grid: VolumeGrid, anatomy: Anatomy, rng):
    centers = grid.voxel_centers()
    flat = centers.reshape(-1, 3)

    parc = 1 + (
        (flat[:, 0] >= anatomy.ventricle_center[0]).astype(int)
        + 2 * (flat[:, 1] >= anatomy.ventricle_center[1])
        + 4 * (flat[:, 2] >= anatomy.ventricle_center[2])
    )
    vent = np.linalg.norm(flat - anatomy.ventricle_center, axis=1) <= VENTRICLE_RADIUS
    deep = np.linalg.norm(flat - anatomy.deep_center, axis=1) <= DEEP_RADIUS
    parc[vent] = VENTRICLE_LABEL
    parc[deep] = DEEP_LABEL
    gm = np.zeros(len(flat), bool)
    for b in anatomy.bundles:
        for label, p in zip(b.gm_labels, (b.start, b.end)):
            ball = np.linalg.norm(flat - p, axis=1) <= GM_RADIUS
            parc[ball] = label
            gm |= ball

    masks = []
    fiber_dir = np.zeros_like(flat)
    in_bundle = np.zeros(len(flat), bool)
    for b in anatomy.bundles:
        cl = b.centerline()
        tangents = np.gradient(cl, axis=0)
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        dist, nearest = cKDTree(cl).query(flat)
        m = dist <= MASK_RADIUS
        e0 = np.linalg.norm(flat - b.start, axis=1) <= END_RADIUS
        e1 = np.linalg.norm(flat - b.end, axis=1) <= END_RADIUS
        new = m & ~in_bundle
        fiber_dir[new] = tangents[nearest[new]]
        in_bundle |= m
        masks.append(
            BundleMasks(
                b.name,
                Volume(grid, m.reshape(grid.dims).astype(np.uint32), is_label=True),
                Volume(grid, e0.reshape(grid.dims).astype(np.uint32), is_label=True),
                Volume(grid, e1.reshape(grid.dims).astype(np.uint32), is_label=True),
            )
        )

    t1 = np.full(len(flat), 0.75)
    t1[gm] = 0.45
    t1[vent] = 0.10
    t1[deep] = 0.90
    t1 += rng.normal(0, 0.02, len(flat))

    scheme = gradient_scheme()
    g = scheme.directions
    lam1, lam_perp, lam_iso, lam_csf = 1.7e-3, 0.3e-3, 0.7e-3, 3.0e-3
    adc = np.full((len(flat), len(g)), lam_iso)
    adc[vent] = lam_csf
    cos2 = (fiber_dir[in_bundle] @ g.T) ** 2
    adc[in_bundle] = lam_perp + (lam1 - lam_perp) * cos2
    dwi = np.exp(-scheme.bvals[None, :] * adc)
    dwi += rng.normal(0, 0.005, dwi.shape)
    dwi = dwi.astype(np.float32)

    shape = grid.dims
    dwi_vol = Volume(grid, dwi.reshape(*shape, -1))
    sh = fit_sh_per_shell(dwi_vol, scheme, 6, SHELLS)
    sh = Volume(grid, sh.data.astype(np.float32))
    return dict(
        t1w=Volume(grid, t1.reshape(shape).astype(np.float32)),
        dwi=dwi_vol,
        scheme=scheme,
        sh=sh,
        parcellation=Volume(grid, parc.reshape(shape), is_label=True),
        deep_wm=Volume(grid, deep.reshape(shape).astype(np.uint32), is_label=True),
        ventricles=Volume(grid, vent.reshape(shape).astype(np.uint32), is_label=True),
        bundle_masks=masks,
    )


# ---------------------------------------------------------------- streamlines


def _finish(points, rng) -> np.ndarray:
    pts = resample_fixed_step(points, STREAMLINE_STEP)
    if rng.random() < 0.5:
        pts = pts[::-1]
    # float32-representable so the written tractogram reproduces it exactly
    return pts.astype(np.float32).astype(np.float64)


def _member_curve(b: Bundle, rng, max_offset=2.0, wiggle=0.8) -> np.ndarray:
    base = b.curve(600)
    direction = rng.normal(size=3)
    offset = _unit(direction) * rng.uniform(0, max_offset)
    t = np.linspace(0, 1, len(base))[:, None]
    amp = rng.uniform(0, wiggle)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    wig = amp * np.sin(2 * np.pi * freq * t + phase) * _unit(rng.normal(size=3))
    return resample_fixed_step(base + offset + wig, 0.25)


def _tangent(curve, i):
    lo, hi = max(i - 2, 0), min(i + 2, len(curve) - 1)
    return _unit(curve[hi] - curve[lo])


def _bulged(b: Bundle, rng) -> np.ndarray:
    c = _member_curve(b, rng, max_offset=1.0, wiggle=0.0)
    i0 = int(rng.uniform(0.35, 0.65) * len(c))
    n = _perp(rng.normal(size=3), _tangent(c, i0))
    s = np.arange(len(c)) * 0.25
    bump = 11.0 * np.exp(-((s - s[i0]) ** 2) / (2 * 8.0**2))
    return c + bump[:, None] * n


def _hooked(b: Bundle, rng, center) -> np.ndarray:
    c = _member_curve(b, rng, max_offset=1.0, wiggle=0.5)
    cut = len(c) - int(12.0 / 0.25) - 1
    q = c[cut]
    t = _tangent(c, cut)
    n = _perp(q - center, t)
    R = 11.0
    phi = np.linspace(0, np.pi / 2, 80)[1:]
    hook = q + R * np.sin(phi)[:, None] * t + R * (1 - np.cos(phi))[:, None] * n
    return np.concatenate([c[: cut + 1], hook])


def _looped(b: Bundle, rng, turns=5, radius=1.5) -> np.ndarray:
    c = _member_curve(b, rng, max_offset=1.5, wiggle=0.5)
    i0 = int(rng.uniform(0.3, 0.7) * len(c))
    q = c[i0]
    t = _tangent(c, i0)
    n = _perp(rng.normal(size=3), t)
    theta = np.linspace(0, 2 * np.pi * turns, int(turns * 2 * np.pi * radius / 0.2))[1:-1]
    loop = q + radius * np.sin(theta)[:, None] * t + radius * (1 - np.cos(theta))[:, None] * n
    return np.concatenate([c[: i0 + 1], loop, c[i0 + 1 :]])


def _truncated(b: Bundle, rng) -> np.ndarray:
    c = _member_curve(b, rng)
    return c[: int(rng.uniform(0.55, 0.8) * len(c))]


def _alt_path(b: Bundle, rng) -> np.ndarray:
    offset = _unit(rng.normal(size=3)) * rng.uniform(0, 1.5)
    mid = 0.5 * (b.start + b.end)
    control = mid + 2 * rng.uniform(18, 24) * b.alt_dir + rng.normal(0, 2, 3)
    return bezier(b.start + offset, control, b.end + offset, np.linspace(0, 1, 400))


def _deep_end(b: Bundle, rng, anatomy: Anatomy) -> np.ndarray:
    start = (b.start if rng.random() < 0.5 else b.end) + _unit(rng.normal(size=3)) * rng.uniform(0, 1.5)
    target_center = anatomy.ventricle_center if rng.random() < 0.5 else anatomy.deep_center
    target = target_center + _unit(rng.normal(size=3)) * rng.uniform(0, 3.0)
    control = 0.5 * (start + target) + rng.normal(0, 5, 3)
    return bezier(start, control, target, np.linspace(0, 1, 400))


def _distractor(rng, anatomy: Anatomy, protos) -> np.ndarray:
    gm = np.array(list(anatomy.gm_centers()))
    while True:
        a, e = rng.uniform(8, 92, size=(2, 3))
        ends = np.stack([a, e])
        if np.min(np.linalg.norm(ends[:, None] - gm[None], axis=2)) < 14:
            continue
        if np.min(np.linalg.norm(ends - anatomy.ventricle_center, axis=1)) < 16:
            continue
        if np.min(np.linalg.norm(ends - anatomy.deep_center, axis=1)) < 14:
            continue
        chord = np.linalg.norm(e - a)
        if not 30 <= chord <= 80:
            continue
        control = 0.5 * (a + e) + rng.normal(0, 8, 3)
        pts = bezier(a, control, e, np.linspace(0, 1, 400))
        if np.any(pts < 3) or np.any(pts > 97):
            continue
        res = resample_fixed_step(pts, 1.0)
        if len(res) > 98 or winding_angle(res) > 300:
            continue
        r = resample_n_points(pts, ATLAS_POINTS)
        if mdf_to_many(r, protos).min() <= ATLAS_THRESHOLD + 2.0:
            continue
        return pts


def _category_counts(n: int) -> dict:
    names = list(CATEGORY_FRACTIONS)
    counts = {k: int(np.floor(CATEGORY_FRACTIONS[k] * n)) for k in names}
    counts["member"] += n - sum(counts.values())
    return counts


def synth_subject(seed, n_streamlines: int = 2000, name: str | None = None) -> SyntheticSubject:
    rng = np.random.default_rng(seed)
    anatomy = Anatomy.build(rng.uniform(-2, 2, 3))
    grid = make_grid()
    vols = _render(grid, anatomy, rng)

    atlas = BundleAtlas(
        tuple(
            AtlasBundle(b.name, resample_n_points(b.curve(), ATLAS_POINTS)[None], ATLAS_THRESHOLD)
            for b in anatomy.bundles
        )
    )
    protos = np.concatenate([ab.prototypes for ab in atlas.bundles])
    queries = [
        RegionQuery(b.name, {b.gm_labels[0]}, {b.gm_labels[1]}, exclude={VENTRICLE_LABEL, DEEP_LABEL})
        for b in anatomy.bundles
    ]

    items = []
    for cat, count in _category_counts(n_streamlines).items():
        for _ in range(count):
            b = anatomy.bundles[rng.integers(len(anatomy.bundles))]
            if cat == "member":
                pts = _member_curve(b, rng)
            elif cat == "bulged":
                pts = _bulged(b, rng)
            elif cat == "hooked":
                pts = _hooked(b, rng, anatomy.ventricle_center)
            elif cat == "looped":
                pts = _looped(b, rng)
            elif cat == "deep_end":
                pts = _deep_end(b, rng, anatomy)
            elif cat == "alt_path":
                pts = _alt_path(b, rng)
            elif cat == "truncated":
                pts = _truncated(b, rng)
            else:
                pts = _distractor(rng, anatomy, protos)
            items.append((cat, _finish(pts, rng)))
    order = rng.permutation(len(items))
    items = [items[i] for i in order]

    return SyntheticSubject(
        name=name or f"subject_{seed}",
        streamlines=[p for _, p in items],
        categories=[c for c, _ in items],
        truth=[SupervisorVerdict.from_code(CATEGORY_CODES[c]) for c, _ in items],
        grid=grid,
        atlas=atlas,
        queries=queries,
        anatomy=anatomy,
        **vols,
    )


def synth_fixture(seed=0, n_subjects: int = 6, n_streamlines: int = 2000) -> SyntheticFixture:
    """Generate ``n_subjects`` independent subjects from one master seed."""
    seeds = np.random.SeedSequence(seed).generate_state(n_subjects)
    subjects = [
        synth_subject(int(s), n_streamlines, name=f"sub{i:02d}") for i, s in enumerate(seeds)
    ]
    return SyntheticFixture(subjects, region_table())
