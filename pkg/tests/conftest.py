import numpy as np
import pytest

from glbranch import (
    build_icosphere,
    build_torus,
    eigensolve,
    laplacian0,
    make_constant_curvature_field,
)


@pytest.fixture(scope="session")
def torus16():
    return build_torus(1.0, 16)


@pytest.fixture(scope="session")
def torus24():
    return build_torus(1.0, 24)


@pytest.fixture(scope="session")
def sphere2():
    return build_icosphere(2)


@pytest.fixture(scope="session")
def torus16_d1(torus16):
    return make_constant_curvature_field(torus16, 1)


@pytest.fixture(scope="session")
def torus16_d0(torus16):
    return make_constant_curvature_field(torus16, 0)


@pytest.fixture(scope="session")
def torus24_d1(torus24):
    return make_constant_curvature_field(torus24, 1)


@pytest.fixture(scope="session")
def sphere2_d1(sphere2):
    return make_constant_curvature_field(sphere2, 1)


@pytest.fixture(scope="session")
def spec_torus16_d1(torus16_d1):
    return eigensolve(laplacian0(torus16_d1), count=6, seed=1)


@pytest.fixture(scope="session")
def spec_torus24_d1(torus24_d1):
    return eigensolve(laplacian0(torus24_d1), count=6, seed=1)


@pytest.fixture(scope="session")
def spec_sphere2_d1(sphere2_d1):
    return eigensolve(laplacian0(sphere2_d1), count=6, seed=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_section(mesh, rng):
    return rng.standard_normal(mesh.vertex_count) + 1j * rng.standard_normal(
        mesh.vertex_count
    )


def random_edge_field(mesh, rng):
    return rng.standard_normal(mesh.edge_count)
