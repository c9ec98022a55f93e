import numpy as np

from tractlabel.ensemble import SUPERVISORS, class_distribution
from tractlabel.supervisors import supervise
from tractlabel.synth import fibonacci_sphere, synth_fixture


def test_supervisors_reproduce_ground_truth(small_fixture):
    need = small_fixture.expected_agreement
    for s in small_fixture.subjects:
        verdicts = supervise(s.streamlines, s.supervisor_inputs())
        for name in SUPERVISORS:
            agree = np.mean([getattr(v, name) == getattr(t, name) for v, t in zip(verdicts, s.truth)])
            assert agree >= need[name], (s.name, name, agree)
    assert need["aif"] == need["ts"] == 1.0


def test_fixture_is_seeded():
    a = synth_fixture(seed=3, n_subjects=1, n_streamlines=50).subjects[0]
    b = synth_fixture(seed=3, n_subjects=1, n_streamlines=50).subjects[0]
    c = synth_fixture(seed=4, n_subjects=1, n_streamlines=50).subjects[0]
    assert len(a.streamlines) == 50
    for x, y in zip(a.streamlines, b.streamlines):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a.t1w.data, b.t1w.data)
    assert not all(np.array_equal(x, y) for x, y in zip(a.streamlines, c.streamlines))


def test_all_three_classes_present(small_fixture):
    for s in small_fixture.subjects:
        _, by_tri = class_distribution(s.truth)
        assert all(v > 0 for v in by_tri.values()), by_tri


def test_streamlines_are_float32_exact(small_fixture):
    for pts in small_fixture.subjects[0].streamlines:
        np.testing.assert_array_equal(pts.astype(np.float32).astype(np.float64), pts)


def test_fibonacci_sphere_unit_and_spread():
    d = fibonacci_sphere(60)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1, atol=1e-12)
    assert np.abs(d.mean(axis=0)).max() < 0.05
