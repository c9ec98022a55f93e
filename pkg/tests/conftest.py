import numpy as np
import pytest

from tractlabel.dataset import Dataset, SubjectData
from tractlabel.descriptors import DescriptorConfig
from tractlabel.ensemble import compose
from tractlabel.supervisors import supervise
from tractlabel.synth import synth_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_fixture():
    """Three small synthetic subjects shared by the integration tests."""
    return synth_fixture(seed=7, n_subjects=3, n_streamlines=240)


@pytest.fixture(scope="session")
def small_dataset(small_fixture):
    subjects = []
    for s in small_fixture.subjects:
        verdicts = supervise(s.streamlines, s.supervisor_inputs())
        subjects.append(SubjectData(s.name, s.streamlines, [compose(v) for v in verdicts], s.volumes()))
    return Dataset(subjects, DescriptorConfig(region_table=small_fixture.region_table))



# acceptance criterion -> (passed, detail); printed after the run
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(name, passed, detail):
        ACCEPTANCE[name] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
