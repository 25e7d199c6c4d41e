import numpy as np
import pytest

from svcprobit import kernels
from svcprobit.dataset import Dataset
from svcprobit.lattice import build_lattice
from svcprobit.model import SubjectRecord, build_design


def make_dataset(mask, outcomes, subtypes=None, covariates=None, spatial=None, n_subtypes=None):
    """Small dataset from arrays; ``covariates`` maps name -> per-subject values."""
    lat = build_lattice(np.asarray(mask, dtype=bool))
    outcomes = np.asarray(outcomes, dtype=bool).reshape(-1, lat.n_sites)
    N = outcomes.shape[0]
    subtypes = [1] * N if subtypes is None else list(subtypes)
    covariates = covariates or {}
    records = [SubjectRecord(f"s{i}", int(subtypes[i]), {k: v[i] for k, v in covariates.items()})
               for i in range(N)]
    design = build_design(records, n_subtypes=n_subtypes, covariate_names=list(covariates), center=[])
    return Dataset(lat, design, outcomes, spatial)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.get_backend(request.param)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
