import numpy as np
import pytest

from tractlabel.descriptors import (
    DESCRIPTOR_NAMES,
    DescriptorConfig,
    DescriptorSet,
    SubjectVolumes,
    build_descriptors,
    noise_substitute,
    one_hot_parcellation,
)
from tractlabel.errors import UnsampleableError
from tractlabel.streamline import landmark_descriptor, normalize_coordinates, prepare
from tractlabel.volume import Volume, VolumeGrid, trilinear_sample

GRID = VolumeGrid((20, 20, 20), [2, 2, 2], [-19, -19, -19])
TABLE = tuple(range(1, 11))


@pytest.fixture(scope="module")
def vols():
    rng = np.random.default_rng(3)
    c = GRID.voxel_centers()
    t1w = Volume(GRID, 100 + 3 * c[..., 0])
    sh = Volume(GRID, rng.normal(size=GRID.dims + (56,)))
    parc = Volume(GRID, rng.integers(1, 11, GRID.dims), is_label=True)
    return SubjectVolumes(t1w, sh, parc)


def _curve(rng, n=40):
    t = np.linspace(0, 1, n)[:, None]
    a, b = rng.uniform(-15, 15, (2, 3))
    return a + t * (b - a) + 3 * np.sin(6 * t) * rng.normal(size=3)


def test_shapes_and_zeroed_padding(vols, rng):
    cfg = DescriptorConfig(n=100, k=20, region_table=TABLE)
    d = build_descriptors(_curve(rng), vols, cfg)
    assert d.xyz.shape == (3, 100)
    assert d.lm.shape == (20, 100)
    assert d.sh.shape == (56, 100)
    assert d.t1w.shape == (1, 100)
    assert d.wmparc.shape == (10, 100)
    assert 0 < d.valid_len < 100
    for name in DESCRIPTOR_NAMES:
        assert np.all(getattr(d, name)[:, d.valid_len:] == 0), name


def test_channels_match_standalone_operations(vols, rng):
    cfg = DescriptorConfig(n=60, k=8, region_table=TABLE)
    pts = _curve(rng)
    d = build_descriptors(pts, vols, cfg)
    r = prepare(pts, 60)
    L = r.valid_len
    np.testing.assert_array_equal(d.xyz, normalize_coordinates(r, vols.bbox))
    np.testing.assert_array_equal(d.lm, landmark_descriptor(r, 8))
    np.testing.assert_allclose(d.sh[:, :L], trilinear_sample(vols.sh, r.real_points).T, atol=1e-12)
    # the T1w ramp is linear so trilinear sampling is exact: (x + 19) / 38 after min-max
    np.testing.assert_allclose(d.t1w[0, :L], (r.real_points[:, 0] + 19) / 38, atol=1e-12)


def test_one_hot_against_lookup_oracle(vols, rng):
    labels = vols.parcellation.scalar
    for _ in range(20):
        r = prepare(_curve(rng), 80)
        w = one_hot_parcellation(r, vols.parcellation, TABLE)
        assert set(np.unique(w)) <= {0.0, 1.0}
        assert np.all(w.sum(axis=0)[: r.valid_len] == 1)
        assert np.all(w[:, r.valid_len:] == 0)
        for j, p in enumerate(r.real_points):
            i = np.floor((p + 19) / 2 + 0.5).astype(int)
            assert w[TABLE.index(labels[tuple(i)]), j] == 1


def test_one_hot_unknown_label_and_outside_give_zero_column(vols):
    r = prepare([[0, 0, 0], [30, 0, 0]], 50)
    w = one_hot_parcellation(r, vols.parcellation, TABLE[:3])
    # samples beyond x = 20 are off the grid
    outside = r.real_points[:, 0] >= 20
    assert np.all(w[:, : r.valid_len][:, outside] == 0)
    assert np.all(w.sum(axis=0) <= 1)


def test_sample_in_region_five():
    grid = VolumeGrid((3, 3, 3), [1, 1, 1], [0, 0, 0])
    parc = Volume(grid, np.full((3, 3, 3), 42), is_label=True)
    r = prepare([[0, 0, 0], [2, 0, 0]], 4)
    w = one_hot_parcellation(r, parc, (1, 2, 3, 4, 5, 42, 7))
    np.testing.assert_array_equal(w[:, :3], np.eye(7)[:, [5, 5, 5]])


def test_two_valued_t1w_gives_binary_rows(rng):
    grid = VolumeGrid((10, 10, 10), [1, 1, 1], [0, 0, 0])
    t1 = np.where(np.arange(10)[:, None, None] < 5, 200.0, 900.0) * np.ones((10, 10, 10))
    vols = SubjectVolumes(
        Volume(grid, t1),
        Volume(grid, np.zeros((10, 10, 10, 56))),
        Volume(grid, np.ones((10, 10, 10)), is_label=True),
    )
    # points on voxel centres so no interpolation between the two values
    d = build_descriptors([[1, 1, 1], [8, 1, 1]], vols, DescriptorConfig(n=20, k=2, region_table=(1,)))
    assert set(np.unique(d.t1w[0, : d.valid_len])) <= {0.0, 1.0}


def test_entirely_outside_raises(vols):
    with pytest.raises(UnsampleableError):
        build_descriptors([[50, 50, 50], [60, 50, 50]], vols, DescriptorConfig(region_table=TABLE))


def test_deterministic(vols, rng):
    pts = _curve(rng)
    cfg = DescriptorConfig(n=50, k=5, region_table=TABLE)
    a, b = build_descriptors(pts, vols, cfg), build_descriptors(pts, vols, cfg)
    for name in DESCRIPTOR_NAMES:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


# ---------------------------------------------------------------- noise


def _batch(rng, b=1000):
    return DescriptorSet(
        xyz=rng.normal(size=(b, 3, 100)),
        lm=rng.normal(size=(b, 20, 100)),
        sh=rng.normal(size=(b, 56, 100)),
        t1w=rng.uniform(size=(b, 1, 100)),
        wmparc=np.zeros((b, 10, 100)),
    )


def test_noise_empty_is_identity(rng):
    d = _batch(rng, 4)
    assert noise_substitute(d, (), 1) is d


def test_noise_moments_and_untouched(rng):
    d = _batch(rng)
    out = noise_substitute(d, {"t1w"}, seed=11)
    vals = out.t1w.ravel()
    assert vals.size == 10**5
    assert abs(vals.mean()) <= 0.02
    assert 0.96 <= vals.var() <= 1.04
    for name in ("xyz", "lm", "sh", "wmparc"):
        assert getattr(out, name) is getattr(d, name)
    assert out.t1w.shape == d.t1w.shape


def test_noise_replaces_padding_and_is_seeded(rng):
    d = _batch(rng, 3)
    a = noise_substitute(d, {"wmparc", "xyz"}, seed=5)
    b = noise_substitute(d, {"wmparc", "xyz"}, seed=5)
    np.testing.assert_array_equal(a.wmparc, b.wmparc)
    assert np.all(a.wmparc != 0)
    c = noise_substitute(d, {"wmparc", "xyz"}, seed=6)
    assert not np.array_equal(a.xyz, c.xyz)
    with pytest.raises(ValueError):
        noise_substitute(d, {"bogus"}, seed=0)
