"""Fixtures partagées : galerie de modèles et flux aléatoires."""

import pytest

from bwbp.model import ModelSpec
from bwbp.utils.sampling import make_rng
from tests.helpers import GALLERY, MODELS_DIR, gallery_model


@pytest.fixture
def models_dir():
    return MODELS_DIR


@pytest.fixture
def bs() -> ModelSpec:
    return gallery_model("bs")


@pytest.fixture
def ld() -> ModelSpec:
    return gallery_model("ld")


@pytest.fixture
def sa() -> ModelSpec:
    return gallery_model("sa_0.2_0.2")


@pytest.fixture
def w() -> ModelSpec:
    return gallery_model("w")


@pytest.fixture
def nu1_bs() -> ModelSpec:
    return gallery_model("nu1_bs")


@pytest.fixture
def nu1_sa() -> ModelSpec:
    return gallery_model("nu1_sa")


@pytest.fixture
def trivial_p1() -> ModelSpec:
    return gallery_model("trivial_p1")


@pytest.fixture
def p0_one() -> ModelSpec:
    return gallery_model("p0_one")


@pytest.fixture(params=GALLERY)
def any_model(request) -> ModelSpec:
    return gallery_model(request.param)


@pytest.fixture
def rng():
    return make_rng(20240501)
