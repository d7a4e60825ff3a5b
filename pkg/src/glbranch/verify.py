"""Independent residual evaluation and maximum-principle diagnostics.

Everything here re-assembles the weak equations directly from the raw
cochains (total curvature = flux density + curl of the perturbation, current
from the fully perturbed covariant derivative), deliberately avoiding the
expanded bookkeeping the reduction module uses in its solver loops.  The two
code paths agreeing to solver precision is a consistency test of the
Coulomb-projection algebra.

Residual norms are dual norms over orthonormal test bases: on the coclosed
edge-field subspace for the curvature equation, over all sections for the
matter equation.  Both reduce to weighted norms of the Riesz representatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import (
    GaugeField,
    _values,
    coulomb_project,
    covariant_derivative,
    covariant_laplacian,
    transported_midpoint,
)
from .errors import ShapeError
from .reduction import CouplingParams

__all__ = [
    "VerificationReport",
    "WeitzenboeckReport",
    "weak_residuals",
    "max_principle_report",
    "weitzenboeck_check",
    "delta_w_defect",
    "delta_f_defect",
    "dbar_split",
]


@dataclass(frozen=True)
class VerificationReport:
    res_wgl1: float
    res_wgl2: float
    min_w: float
    max_abs_f: float
    weitzenboeck_gap: float
    coulomb_defect: float
    curvature_margin: float      # min over faces of kappa^2 tau - |phi|^2 - |f|
    delta_w_defect: float
    delta_f_defect: float

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class WeitzenboeckReport:
    gap: float                   # lambda_min - f0
    cluster_size: int
    holomorphic_count: int


def weak_residuals(
    field: GaugeField, A, phi, params: CouplingParams
) -> tuple[float, float]:
    """Dual-norm residuals of the two weak equations at (A, phi)."""
    mesh = field.mesh
    a = np.zeros(mesh.edge_count) if A is None else _values(A)
    phi = _values(phi).astype(complex)
    if a.shape != (mesh.edge_count,) or phi.shape != (mesh.vertex_count,):
        raise ShapeError("field shapes do not match the mesh")

    grad = covariant_derivative(field, phi, a)
    mid = transported_midpoint(field, phi)
    f_rep = mesh.curl(a) - field.flux_density
    rep1 = mesh.curl_adjoint(f_rep) - np.imag(np.conj(grad) * mid)
    res1 = mesh.field_norm(coulomb_project(mesh, rep1).values, "edge")

    g = covariant_laplacian(field, phi, a) - params.kappa2 * (
        params.tau - np.abs(phi) ** 2
    ) * phi
    res2 = mesh.field_norm(g, "vertex")
    return float(res1), float(res2)


def _vertex_kinetic_density(field: GaugeField, grad: np.ndarray) -> np.ndarray:
    """|D phi|^2 averaged to vertices, splitting each edge between its two
    endpoints; integrates back to the exact kinetic term."""
    mesh = field.mesh
    dens = 0.5 * mesh.edge_field_weights * np.abs(grad) ** 2
    return (np.abs(mesh.d0).T @ dens) / mesh.hodge0


def _face_mean(mesh, f_vertex: np.ndarray) -> np.ndarray:
    # abs(d1) @ abs(d0) counts each corner twice (once per incident face edge)
    counts = (np.abs(mesh.d1) @ np.abs(mesh.d0)) * 0.5
    corners = np.asarray(counts.sum(axis=1)).ravel()
    return (counts @ f_vertex) / corners


def _scalar_laplacian(mesh, f: np.ndarray) -> np.ndarray:
    """Positive scalar Laplacian on vertex functions."""
    return mesh.divergence(mesh.gradient(f))


def _face_laplacian(mesh, x: np.ndarray) -> np.ndarray:
    """Positive Laplacian on face functions via the dual graph."""
    return (mesh.d1 @ ((mesh.d1.T @ x) / mesh.hodge1)) / mesh.face_areas


def dbar_split(field: GaugeField, phi) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise |d-bar part|^2 and |d part|^2 of D phi per vertex, using the
    flat complex structure of the torus grid (x-edge + i * y-edge)."""
    mesh = field.mesh
    if mesh.genus_label != "torus":
        raise ShapeError("the complex splitting is shipped for the torus only")
    grad = covariant_derivative(field, _values(phi))
    n2 = mesh.grid_n**2
    gx, gy = grad[:n2], grad[n2:]
    dbar = 0.5 * np.abs(gx + 1j * gy) ** 2
    dhol = 0.5 * np.abs(gx - 1j * gy) ** 2
    return dbar, dhol


def delta_w_defect(field: GaugeField, A, phi, params: CouplingParams) -> float:
    """Relative defect of (Lap + 2 kappa^2 |phi|^2) w = |D phi|^2 with
    w = (tau - |phi|^2)/2, evaluated on the mesh."""
    mesh = field.mesh
    a = np.zeros(mesh.edge_count) if A is None else _values(A)
    phi = _values(phi).astype(complex)
    u = np.abs(phi) ** 2
    w = 0.5 * (params.tau - u)
    grad = covariant_derivative(field, phi, a)
    lhs = _scalar_laplacian(mesh, w) + 2.0 * params.kappa2 * u * w
    rhs = _vertex_kinetic_density(field, grad)
    scale = mesh.field_norm(rhs, "vertex") + mesh.field_norm(lhs, "vertex")
    if scale == 0:
        return 0.0
    return float(mesh.field_norm(lhs - rhs, "vertex") / scale)


def delta_f_defect(field: GaugeField, A, phi, params: CouplingParams) -> float:
    """Relative defect of (Lap + |phi|^2) f = |D^(1,0) phi|^2 - |D^(0,1) phi|^2
    on the torus grid, with f the total curvature density on faces."""
    mesh = field.mesh
    if mesh.genus_label != "torus":
        return float("nan")
    a = np.zeros(mesh.edge_count) if A is None else _values(A)
    phi = _values(phi).astype(complex)
    f = field.flux_density - mesh.curl(a)
    u_face = _face_mean(mesh, np.abs(phi) ** 2)
    dbar, dhol = dbar_split(field, phi)
    rhs_face = _face_mean(mesh, dhol - dbar)
    lhs = _face_laplacian(mesh, f) + u_face * f
    scale = mesh.field_norm(lhs, "face") + mesh.field_norm(rhs_face, "face")
    if scale == 0:
        return 0.0
    return float(mesh.field_norm(lhs - rhs_face, "face") / scale)


def max_principle_report(
    field: GaugeField, A, phi, params: CouplingParams, spec=None
) -> VerificationReport:
    """Pointwise diagnostics at a computed configuration.

    w = (tau - |phi|^2)/2 must stay positive at irreducible critical points;
    the scalar curvature f = iLambdaF must satisfy |f| < kappa^2 tau - |phi|^2
    pointwise when kappa^2 >= 1/2 on a Kaehler geometry.  Violations are
    reported through the min/margin fields, never raised.
    """
    mesh = field.mesh
    a = np.zeros(mesh.edge_count) if A is None else _values(A)
    phi = _values(phi).astype(complex)
    u = np.abs(phi) ** 2
    w = 0.5 * (params.tau - u)
    f = field.flux_density - mesh.curl(a)
    u_face = _face_mean(mesh, u)
    margin = params.kappa2 * params.tau - u_face - np.abs(f)
    res1, res2 = weak_residuals(field, a, phi, params)
    gap = float("nan")
    if spec is not None:
        gap = float(spec.eigenvalues[0] - field.f0)
    dfd = delta_f_defect(field, a, phi, params) if mesh.genus_label == "torus" else float("nan")
    return VerificationReport(
        res_wgl1=res1,
        res_wgl2=res2,
        min_w=float(np.min(w)),
        max_abs_f=float(np.max(np.abs(f))),
        weitzenboeck_gap=gap,
        coulomb_defect=float(mesh.field_norm(mesh.divergence(a), "vertex")),
        curvature_margin=float(np.min(margin)),
        delta_w_defect=delta_w_defect(field, a, phi, params),
        delta_f_defect=dfd,
    )


def weitzenboeck_check(field: GaugeField, spec) -> WeitzenboeckReport:
    """Gap between the lowest eigenvalue and the mean curvature density f0,
    with the lowest-cluster dimension against the holomorphic-section count
    (torus: degree; sphere: degree + 1)."""
    start, stop = spec.clusters[0]
    if field.mesh.genus_label == "torus":
        expected = max(field.degree, 1)
    else:
        expected = field.degree + 1
    return WeitzenboeckReport(
        gap=float(spec.eigenvalues[0] - field.f0),
        cluster_size=stop - start,
        holomorphic_count=expected,
    )
