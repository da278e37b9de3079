import pytest

from spatsim.haalgo import design_mvdr
from spatsim.hrir import synth_sphere_hrir
from spatsim.metrics import make_third_octave_grid


@pytest.fixture(scope="session")
def hrir_set():
    return synth_sphere_hrir()


@pytest.fixture(scope="session")
def mvdr_design(hrir_set):
    return design_mvdr(hrir_set)


@pytest.fixture(scope="session")
def band_grid():
    return make_third_octave_grid()
