"""U(1) connections on a Hermitian line bundle over a DEC mesh.

A connection is stored as one link phase per oriented edge; parallel
transport along an edge (tail -> head) multiplies fiber values by
exp(-i * theta_e).  The covariant difference quotient

    (D phi)_e = (exp(-i theta_e) phi(head) - phi(tail)) / len_e

is a pointwise edge field.  A connection perturbation is a real edge field
``a`` standing for the imaginary-valued 1-form i*a; it acts by transported
midpoint multiplication,

    (D_a phi)_e = (D phi)_e + i a_e (phi(tail) + exp(-i theta_e) phi(head)) / 2.

The symmetric midpoint makes the discrete Leibniz rule

    D(f phi) = f_mid D phi + (grad f) phi_mid        (f real, exact identity)

hold to machine precision, which keeps the current/potential pairing
identities of the continuum theory exact on the mesh.

Curvature bookkeeping: ``plaquette_flux`` holds the gauge-invariant holonomy
angle per face (principal value, adjusted so the total equals
2*pi*degree exactly); the scalar curvature observable is
f = flux/area - curl(a), which is >= 0 for the shipped constant-curvature
fields of non-negative degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConstructionError,
    GLError,
    InconsistencyError,
    ShapeError,
    SolverError,
)
from .geometry import DecMesh

__all__ = [
    "GaugeField",
    "Section",
    "OneForm",
    "make_constant_curvature_field",
    "gauge_transform",
    "chern_number",
    "covariant_derivative",
    "transported_midpoint",
    "laplacian0",
    "coulomb_project",
    "green_solve",
]

TWO_PI = 2.0 * np.pi

# dense eigendecompositions are cached up to this dimension; larger systems
# fall back to projected iterative solves
DENSE_EIG_LIMIT = 3000


def _principal_value(x: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, TWO_PI)


@dataclass
class Section:
    """Complex vertex field on a line bundle, with lazy norm cache."""

    mesh: DecMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.vertex_count,):
            raise ShapeError("section has wrong length for this mesh")
        self._lp_cache: dict[float, float] = {}

    @cached_property
    def norm_l2(self) -> float:
        return self.mesh.field_norm(self.values, "vertex")

    @cached_property
    def norm_l4(self) -> float:
        return self.norm_lp(4.0)

    def norm_lp(self, p: float) -> float:
        if p not in self._lp_cache:
            w = self.mesh.hodge0
            self._lp_cache[p] = float(
                np.sum(w * np.abs(self.values) ** p) ** (1.0 / p)
            )
        return self._lp_cache[p]

    def norm_x(self, field: "GaugeField", p: float) -> float:
        """Kinetic-plus-Lp norm ||D phi||_L2 + ||phi||_Lp, p > 2."""
        grad = covariant_derivative(field, self.values)
        return self.mesh.field_norm(grad, "edge") + self.norm_lp(p)


@dataclass
class OneForm:
    """Real pointwise edge field standing for an imaginary 1-form."""

    mesh: DecMesh
    values: np.ndarray
    coclosed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.edge_count,):
            raise ShapeError("one-form has wrong length for this mesh")

    @property
    def norm_l2(self) -> float:
        return self.mesh.field_norm(self.values, "edge")

    def curl_norm(self) -> float:
        """||dA||_L2, the natural norm on coclosed perturbations."""
        return self.mesh.field_norm(self.mesh.curl(self.values), "face")


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, (Section, OneForm)) else np.asarray(x)


@dataclass(eq=False)
class GaugeField:
    """Base connection: link phases plus per-face holonomy flux."""

    mesh: DecMesh
    link_phases: np.ndarray
    plaquette_flux: np.ndarray
    degree: int

    def __post_init__(self):
        self.link_phases = np.asarray(self.link_phases, dtype=float)
        self.plaquette_flux = np.asarray(self.plaquette_flux, dtype=float)
        if self.link_phases.shape != (self.mesh.edge_count,):
            raise ShapeError("link phases have wrong length")
        if self.plaquette_flux.shape != (self.mesh.face_count,):
            raise ShapeError("plaquette flux has wrong length")

    @property
    def f0(self) -> float:
        """Mean curvature density, total flux / total area."""
        return float(np.sum(self.plaquette_flux)) / self.mesh.total_volume

    @cached_property
    def flux_density(self) -> np.ndarray:
        return self.plaquette_flux / self.mesh.face_areas

    @cached_property
    def transport(self) -> np.ndarray:
        """exp(-i theta) per edge: head value pulled back to the tail fiber."""
        return np.exp(-1j * self.link_phases)

    @cached_property
    def covariant_matrix(self) -> sp.csr_matrix:
        """Sparse E x V matrix of the covariant difference quotient."""
        mesh = self.mesh
        E = mesh.edge_count
        d0 = mesh.d0.tocoo()
        rows, cols = d0.row, d0.col
        heads = d0.data > 0
        vals = np.where(heads, self.transport[rows], -1.0 + 0j)
        vals = vals / mesh.edge_lengths[rows]
        return sp.csr_matrix((vals, (rows, cols)), shape=(E, mesh.vertex_count))

    @cached_property
    def midpoint_matrix(self) -> sp.csr_matrix:
        """Sparse E x V transported-midpoint average."""
        mesh = self.mesh
        d0 = mesh.d0.tocoo()
        rows, cols = d0.row, d0.col
        heads = d0.data > 0
        vals = np.where(heads, 0.5 * self.transport[rows], 0.5 + 0j)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(mesh.edge_count, mesh.vertex_count)
        )

    @cached_property
    def _whitened_laplacian(self) -> sp.csr_matrix:
        """H0^(-1/2) D^H W1 D H0^(-1/2): Hermitian in the standard sense."""
        mesh = self.mesh
        D = self.covariant_matrix
        K = (D.conj().T @ sp.diags(mesh.edge_field_weights) @ D).tocsr()
        s = 1.0 / np.sqrt(mesh.hodge0)
        return (sp.diags(s) @ K @ sp.diags(s)).tocsr()

    @cached_property
    def _dense_eig(self):
        """Full eigendecomposition of the whitened Laplacian (desk scale)."""
        V = self.mesh.vertex_count
        if V > DENSE_EIG_LIMIT:
            raise GLError(f"dense eigendecomposition refused at dimension {V}")
        w, U = np.linalg.eigh(self._whitened_laplacian.toarray())
        return w, U


class ConnectionLaplacian:
    """Positive semidefinite operator (D^0)* D^0 acting on sections.

    Hermitian with respect to the hodge0-weighted L2 pairing.
    """

    def __init__(self, field: GaugeField):
        self.field = field
        self.mesh = field.mesh

    @property
    def shape(self):
        n = self.mesh.vertex_count
        return (n, n)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        mesh = self.mesh
        D = self.field.covariant_matrix
        return (D.conj().T @ (mesh.edge_field_weights * (D @ phi))) / mesh.hodge0

    __call__ = apply

    @property
    def whitened(self) -> sp.csr_matrix:
        return self.field._whitened_laplacian


def laplacian0(field: GaugeField) -> ConnectionLaplacian:
    return ConnectionLaplacian(field)


def make_constant_curvature_field(mesh: DecMesh, degree: int) -> GaugeField:
    """Uniform-curvature connection of the given non-negative degree.

    Torus: Landau-gauge phases with exactly 2*pi*degree/F flux through every
    plaquette.  Sphere: flux degree/2 times the spherical solid angle of each
    face, realized by the minimum-norm link phases (the 2*pi*degree winding
    defect is routed through face 0 where it is invisible mod 2*pi).
    """
    if degree < 0:
        raise GLError("negative degree is unsupported (conjugate bundle)")
    if mesh.genus_label == "torus":
        n = mesh.grid_n
        n2 = n * n
        if degree > 0 and n2 <= 2 * degree:
            raise ConstructionError(
                f"grid with {n2} plaquettes cannot carry |flux| < pi "
                f"per plaquette at degree {degree}"
            )
        theta = np.zeros(mesh.edge_count)
        idx = np.arange(n2)
        i = idx % n
        j = idx // n
        phi_face = TWO_PI * degree / n2
        theta[n2 + idx] = phi_face * i                       # y-links
        theta[idx[i == n - 1]] = -TWO_PI * degree * j[i == n - 1] / n
        flux = np.full(n2, phi_face)
    elif mesh.genus_label == "sphere":
        # exactly uniform flux density w.r.t. the discrete metric, so that
        # d* F = 0 holds exactly and the normal phase is a discrete critical
        # point; agrees with (degree/2) * solid angle to mesh order
        flux = TWO_PI * degree * mesh.face_areas / np.sum(mesh.face_areas)
        if np.any(np.abs(flux) >= np.pi):
            raise ConstructionError("per-face flux exceeds pi; refine the mesh")
        rhs = flux.copy()
        rhs[0] -= TWO_PI * degree          # integer winding through one face
        rhs -= rhs.mean()                  # exact solvability
        theta = _min_norm_link_phases(mesh, rhs)
    else:
        raise GLError(f"unknown geometry {mesh.genus_label!r}")

    fieldobj = GaugeField(mesh, theta, flux, degree)
    _check_winding(fieldobj)
    return fieldobj


def _min_norm_link_phases(mesh: DecMesh, face_holonomy: np.ndarray) -> np.ndarray:
    """Minimum-norm theta with d1 theta = face_holonomy (sum must vanish)."""
    L = (mesh.d1 @ mesh.d1.T).tocsc().astype(float)
    F = mesh.face_count
    keep = np.arange(1, F)
    y = np.zeros(F)
    y[1:] = spla.factorized(L[keep][:, keep])(face_holonomy[1:])
    theta = mesh.d1.T @ y
    res = np.abs(mesh.d1 @ theta - face_holonomy).max()
    if res > 1e-9:
        raise ConstructionError(f"flux assignment failed, residual {res:.2e}")
    return theta


def _check_winding(field: GaugeField) -> None:
    mesh = field.mesh
    hol = _principal_value(mesh.d1 @ field.link_phases)
    target = _principal_value(field.plaquette_flux)
    defect = np.abs(_principal_value(hol - target)).max()
    if defect > 1e-9:
        raise ConstructionError(
            f"stored flux disagrees with link holonomy by {defect:.2e}"
        )
    total = field.plaquette_flux.sum()
    if abs(total - TWO_PI * field.degree) > 1e-9 * max(1.0, abs(total)):
        raise ConstructionError("total flux does not match 2*pi*degree")


def gauge_transform(field: GaugeField, f: np.ndarray) -> GaugeField:
    """New field with link phases theta + d0 f (sections transform as
    exp(i f) phi).  All holonomies are unchanged."""
    f = _values(f).real
    theta = field.link_phases + field.mesh.d0 @ f
    return GaugeField(field.mesh, theta, field.plaquette_flux.copy(), field.degree)


def chern_number(field: GaugeField) -> int:
    """Integer total holonomy flux / 2*pi, from the link phases alone."""
    total = float(np.sum(_principal_value(field.mesh.d1 @ field.link_phases)))
    c = round(total / TWO_PI)
    if abs(total - TWO_PI * c) > 1e-6:
        raise InconsistencyError(
            f"total flux {total:.3e} is not an integer multiple of 2*pi"
        )
    return c


def covariant_derivative(field: GaugeField, phi, perturbation=None) -> np.ndarray:
    """Pointwise covariant derivative, optionally with a perturbation a
    acting as + i a phi_mid (transported midpoint rule)."""
    phi = _values(phi)
    if phi.shape != (field.mesh.vertex_count,):
        raise ShapeError("section has wrong length")
    out = field.covariant_matrix @ phi
    if perturbation is not None:
        a = _values(perturbation)
        if a.shape != (field.mesh.edge_count,):
            raise ShapeError("perturbation has wrong length")
        out = out + 1j * a * (field.midpoint_matrix @ phi)
    return out


def transported_midpoint(field: GaugeField, phi) -> np.ndarray:
    phi = _values(phi)
    if phi.shape != (field.mesh.vertex_count,):
        raise ShapeError("section has wrong length")
    return field.midpoint_matrix @ phi


def covariant_laplacian(field: GaugeField, phi, perturbation=None) -> np.ndarray:
    """(D_a)* D_a phi for the possibly perturbed connection, matrix free."""
    mesh = field.mesh
    phi = _values(phi)
    grad = covariant_derivative(field, phi, perturbation)
    w = mesh.edge_field_weights * grad
    out = field.covariant_matrix.conj().T @ w
    if perturbation is not None:
        a = _values(perturbation)
        out = out + field.midpoint_matrix.conj().T @ (np.conj(1j * a) * w)
    return out / mesh.hodge0


def coulomb_project(mesh: DecMesh, a) -> OneForm:
    """L2-orthogonal projection of an edge field onto coclosed fields:
    a - grad(G(div a)).  Idempotent; kills gradients; fixes coclosed input."""
    vals = _values(a)
    if vals.shape != (mesh.edge_count,):
        raise ShapeError("one-form has wrong length")
    pot = mesh.poisson_solve(mesh.divergence(vals))
    return OneForm(mesh, vals - mesh.gradient(pot), coclosed=True)


# ---------------------------------------------------------------------------
# Green operators
# ---------------------------------------------------------------------------


def _check_orthonormal(mesh: DecMesh, basis: np.ndarray) -> None:
    g = basis.conj().T @ (mesh.hodge0[:, None] * basis)
    if np.abs(g - np.eye(basis.shape[1])).max() > 1e-8:
        raise GLError("deflation basis is not L2-orthonormal")


def _deflate(mesh: DecMesh, basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x - basis @ (basis.conj().T @ (mesh.hodge0 * x))


def green_solve(operator, rhs, deflation_basis=None, tol: float = 1e-11):
    """Green operator application.

    * ``operator`` a :class:`DecMesh`: mean-zero solve of the scalar
      Laplacian (divergence of gradient).  No deflation basis is accepted;
      constants are always removed.
    * ``operator`` a ``(GaugeField, lam)`` pair or ``(ConnectionLaplacian,
      lam)``: solve (Delta_0 - lam) x = P_perp rhs with x orthogonal to the
      deflation basis (required, columns L2-orthonormal).  Acts as zero on
      the deflated subspace.
    """
    if isinstance(operator, DecMesh):
        if deflation_basis is not None:
            raise GLError("scalar solve fixes the mean-zero gauge; no basis")
        return operator.poisson_solve(_values(rhs))

    if isinstance(operator, tuple) and len(operator) == 2:
        op, lam = operator
        if isinstance(op, ConnectionLaplacian):
            op = op.field
        if not isinstance(op, GaugeField):
            raise GLError("expected (GaugeField, eigenvalue)")
        if deflation_basis is None:
            raise GLError("deflated solve requires the eigenspace basis")
        basis = np.atleast_2d(np.asarray(deflation_basis, dtype=complex))
        if basis.shape[0] != op.mesh.vertex_count:
            basis = basis.T
        _check_orthonormal(op.mesh, basis)
        return _deflated_green(op, float(lam), basis, _values(rhs), tol)

    raise GLError("unsupported operator for green_solve")


def _deflated_green(
    field: GaugeField,
    lam: float,
    basis: np.ndarray,
    rhs: np.ndarray,
    tol: float,
) -> np.ndarray:
    mesh = field.mesh
    rhs = _deflate(mesh, basis, rhs.astype(complex))
    if mesh.vertex_count <= DENSE_EIG_LIMIT:
        w, U = field._dense_eig
        s = np.sqrt(mesh.hodge0)
        coef = U.conj().T @ (s * rhs)
        m = basis.shape[1]
        cluster = np.argsort(np.abs(w - lam))[:m]
        width = np.abs(w[cluster] - lam).max()
        if width > 1e-6 * max(1.0, abs(lam)):
            raise GLError(
                f"deflation basis spans {m} modes but only those within "
                f"{width:.2e} of lam were found; lam is not an eigenvalue"
            )
        denom = w - lam
        denom[cluster] = np.inf
        x = (U @ (coef / denom)) / s
        return _deflate(mesh, basis, x)
    return _iterative_deflated_green(field, lam, basis, rhs, tol)


def _iterative_deflated_green(field, lam, basis, rhs, tol):
    mesh = field.mesh
    s = np.sqrt(mesh.hodge0)
    A = field._whitened_laplacian
    wb = s[:, None] * basis   # orthonormal in the standard inner product

    def project(x):
        return x - wb @ (wb.conj().T @ x)

    def matvec(x):
        return project(A @ project(x) - lam * project(x))

    n = mesh.vertex_count
    b = project(s * rhs)
    lin = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    x, info = spla.lgmres(lin, b, rtol=tol, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise SolverError("deflated Green solve did not converge", residual=info)
    res = np.linalg.norm(matvec(x) - b)
    scale = np.linalg.norm(b)
    if scale > 0 and res > 1e-8 * scale:
        raise SolverError("deflated Green solve residual too large", residual=res)
    return _deflate(mesh, basis, project(x) / s)
