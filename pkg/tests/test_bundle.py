import numpy as np
import pytest

from glbranch import (
    build_icosphere,
    build_torus,
    chern_number,
    coulomb_project,
    covariant_derivative,
    eigensolve,
    gauge_transform,
    green_solve,
    laplacian0,
    make_constant_curvature_field,
    transported_midpoint,
)
from glbranch.bundle import Section, OneForm
from glbranch.errors import GLError, ShapeError

from conftest import random_edge_field, random_section


def test_torus_flux_uniform_and_total():
    m = build_torus(1.0, 16)
    fld = make_constant_curvature_field(m, 3)
    assert abs(fld.plaquette_flux.sum() - 6 * np.pi) < 1e-10
    per = fld.plaquette_flux / m.face_areas
    assert np.abs(per - fld.f0).max() < 1e-10 * abs(fld.f0)


def test_zero_degree_field_is_trivial():
    for m in (build_torus(1.0, 8), build_icosphere(1)):
        fld = make_constant_curvature_field(m, 0)
        assert np.abs(fld.plaquette_flux).max() == 0
        assert fld.f0 == 0


def test_negative_degree_rejected():
    with pytest.raises(GLError):
        make_constant_curvature_field(build_torus(1.0, 8), -1)


def test_sphere_flux_density_uniform():
    m = build_icosphere(3)
    fld = make_constant_curvature_field(m, 2)
    dens = fld.plaquette_flux / m.face_areas
    assert np.abs(dens - fld.f0).max() < 1e-9 * abs(fld.f0)
    # f0 approximates d/2 = 1 at mesh order
    assert abs(fld.f0 - 1.0) < 0.01


@pytest.mark.parametrize("d", [0, 2, 5])
def test_chern_number_matches_degree(d):
    m = build_torus(1.0, 16)
    assert chern_number(make_constant_curvature_field(m, d)) == d


def test_chern_number_gauge_invariant(rng):
    m = build_torus(1.0, 12)
    fld = make_constant_curvature_field(m, 2)
    for _ in range(10):
        f = 5.0 * rng.standard_normal(m.vertex_count)
        assert chern_number(gauge_transform(fld, f)) == 2


def test_covariant_derivative_kills_constants():
    m = build_torus(1.0, 8)
    fld = make_constant_curvature_field(m, 0)
    d = covariant_derivative(fld, np.ones(m.vertex_count))
    assert np.abs(d).max() < 1e-14


def test_perturbation_with_zero_section_vanishes(rng):
    m = build_torus(1.0, 8)
    fld = make_constant_curvature_field(m, 1)
    a = random_edge_field(m, rng)
    d = covariant_derivative(fld, np.zeros(m.vertex_count), a)
    assert np.abs(d).max() == 0


def test_leibniz_rule_exact(rng):
    # the transported-midpoint rule makes D(f phi) = f_mid D phi + (grad f) phi_mid
    # an exact identity, not just O(h)
    m = build_torus(1.0, 12)
    fld = make_constant_curvature_field(m, 2)
    f = rng.standard_normal(m.vertex_count)
    phi = random_section(m, rng)
    lhs = covariant_derivative(fld, f * phi)
    coo = m.d0.tocoo()
    tails = np.zeros(m.edge_count, dtype=int)
    heads = np.zeros(m.edge_count, dtype=int)
    tails[coo.row[coo.data < 0]] = coo.col[coo.data < 0]
    heads[coo.row[coo.data > 0]] = coo.col[coo.data > 0]
    f_mid = 0.5 * (f[tails] + f[heads])
    rhs = f_mid * covariant_derivative(fld, phi) + m.gradient(f) * transported_midpoint(fld, phi)
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(lhs).max())


def test_covariant_derivative_gauge_covariance(rng):
    m = build_torus(1.0, 12)
    fld = make_constant_curvature_field(m, 1)
    g = rng.standard_normal(m.vertex_count)
    fld2 = gauge_transform(fld, g)
    phi = random_section(m, rng)
    coo = m.d0.tocoo()
    tails = np.zeros(m.edge_count, dtype=int)
    tails[coo.row[coo.data < 0]] = coo.col[coo.data < 0]
    lhs = covariant_derivative(fld2, np.exp(1j * g) * phi)
    rhs = np.exp(1j * g[tails]) * covariant_derivative(fld, phi)
    assert np.abs(lhs - rhs).max() < 1e-12 * np.abs(rhs).max()


def test_laplacian_zero_mode_and_first_gap():
    n = 16
    m = build_torus(1.0, n)
    fld = make_constant_curvature_field(m, 0)
    sd = eigensolve(laplacian0(fld), count=3, seed=0)
    assert abs(sd.eigenvalues[0]) < 1e-10
    v0 = sd.sections[:, 0]
    assert np.abs(v0 - v0.mean()).max() < 1e-8 * np.abs(v0).max()
    h = 1.0 / n
    pred = (2.0 / h**2) * (1.0 - np.cos(2 * np.pi * h))
    assert abs(sd.eigenvalues[1] - pred) < 1e-9 * pred


def test_laplacian_hermitian(rng, torus16_d1):
    m = torus16_d1.mesh
    L = laplacian0(torus16_d1)
    phi = random_section(m, rng)
    psi = random_section(m, rng)
    lhs = m.field_inner(L.apply(phi), psi, "vertex")
    rhs = m.field_inner(phi, L.apply(psi), "vertex")
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_coulomb_projection_identities(rng):
    for m in (build_torus(1.0, 12), build_icosphere(2)):
        for _ in range(5):
            a = random_edge_field(m, rng)
            P = coulomb_project(m, a)
            assert P.coclosed
            assert m.field_norm(m.divergence(P.values), "vertex") < 1e-10 * (
                1.0 + m.field_norm(a, "edge")
            )
            P2 = coulomb_project(m, P)
            assert np.abs(P2.values - P.values).max() < 1e-10
        exact = m.gradient(rng.standard_normal(m.vertex_count))
        assert np.abs(coulomb_project(m, exact).values).max() < 1e-10 * max(
            1.0, np.abs(exact).max()
        )
        a = coulomb_project(m, random_edge_field(m, rng)).values
        again = coulomb_project(m, a).values
        assert np.abs(again - a).max() < 1e-10


def test_scalar_green_inverts(rng, torus16):
    f = rng.standard_normal(torus16.vertex_count)
    lap = torus16.divergence(torus16.gradient(f))
    x = green_solve(torus16, lap)
    fm = f - np.sum(torus16.hodge0 * f) / torus16.total_volume
    assert np.abs(x - fm).max() < 1e-9


def test_green_scalar_rejects_basis(torus16):
    with pytest.raises(GLError):
        green_solve(torus16, np.zeros(torus16.vertex_count), deflation_basis=np.zeros((torus16.vertex_count, 1)))


def test_deflated_green_contract(rng, torus16_d1, spec_torus16_d1):
    m = torus16_d1.mesh
    sd = spec_torus16_d1
    basis = sd.kernel_basis
    lam = sd.lam
    L = laplacian0(torus16_d1)
    for _ in range(3):
        rhs = random_section(m, rng)
        x = green_solve((torus16_d1, lam), rhs, deflation_basis=basis)
        perp = rhs - basis @ (basis.conj().T @ (m.hodge0 * rhs))
        resid = L.apply(x) - lam * x - perp
        assert m.field_norm(resid, "vertex") < 1e-10 * m.field_norm(rhs, "vertex")
        assert np.abs(basis.conj().T @ (m.hodge0 * x)).max() < 1e-10
    # kernel element maps to zero
    z = green_solve((torus16_d1, lam), basis[:, 0], deflation_basis=basis)
    assert np.abs(z).max() < 1e-10


def test_deflated_green_requires_orthonormal_basis(torus16_d1, spec_torus16_d1):
    bad = 2.0 * spec_torus16_d1.kernel_basis
    with pytest.raises(GLError):
        green_solve((torus16_d1, spec_torus16_d1.lam), bad[:, 0] * 0, deflation_basis=bad)


def test_deflated_green_rejects_non_eigenvalue(torus16_d1, spec_torus16_d1, rng):
    basis = spec_torus16_d1.kernel_basis
    rhs = random_section(torus16_d1.mesh, rng)
    with pytest.raises(GLError):
        green_solve((torus16_d1, spec_torus16_d1.lam + 0.5), rhs, deflation_basis=basis)


def test_iterative_deflated_green_matches_dense(rng, torus16_d1, spec_torus16_d1):
    from glbranch.bundle import _deflated_green, _iterative_deflated_green

    m = torus16_d1.mesh
    basis = spec_torus16_d1.kernel_basis
    lam = spec_torus16_d1.lam
    rhs = random_section(m, rng)
    dense = _deflated_green(torus16_d1, lam, basis, rhs, tol=1e-12)
    perp = rhs - basis @ (basis.conj().T @ (m.hodge0 * rhs))
    iterative = _iterative_deflated_green(torus16_d1, lam, basis, perp, tol=1e-12)
    assert m.field_norm(dense - iterative, "vertex") < 1e-8 * m.field_norm(
        dense, "vertex"
    )


def test_section_norms(torus16, torus16_d1):
    m = torus16
    phi = Section(m, np.full(m.vertex_count, 2.0 + 0j))
    assert abs(phi.norm_l2 - 2.0) < 1e-12          # unit area torus
    assert abs(phi.norm_l4 - 2.0) < 1e-12
    assert abs(phi.norm_lp(6.0) - 2.0) < 1e-12
    x = phi.norm_x(torus16_d1, 4.0)
    grad = covariant_derivative(torus16_d1, phi.values)
    assert abs(x - (m.field_norm(grad, "edge") + phi.norm_l4)) < 1e-12


def test_oneform_shape_check(torus16):
    with pytest.raises(ShapeError):
        OneForm(torus16, np.zeros(torus16.edge_count + 1))


def test_weitzenboeck_spectral_bound():
    # on Kaehler geometry the spectrum sits above f0 up to mesh error
    for build, d in ((lambda: build_torus(1.0, 24), 2), (lambda: build_icosphere(2), 1)):
        m = build()
        fld = make_constant_curvature_field(m, d)
        sd = eigensolve(laplacian0(fld), count=3, seed=0)
        h = m.edge_lengths.max()
        assert sd.eigenvalues[0] >= fld.f0 * (1.0 - 5.0 * h**2) - 1e-12
