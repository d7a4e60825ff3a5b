"""Discrete exterior calculus on closed oriented surfaces.

Two mesh families are shipped: a uniform quadrilateral grid on a flat square
torus, and a circumcentric-dual icosphere.  A mesh carries integer incidence
matrices d0 (edges x vertices) and d1 (faces x edges), so d1 @ d0 == 0 holds
in exact integer arithmetic, plus diagonal Hodge weights:

    hodge0  dual area per vertex            [area]
    hodge1  dual-length / primal-length     [dimensionless on a surface]
    hodge2  1 / face area                   [1/area]

Cochain conventions.  Integrated cochains pair with (hodge0, hodge1, hodge2)
and use the bare incidence operators (``exterior_derivative``).  Field-valued
cochains (covariant derivatives, connection perturbations) store pointwise
per-unit-length values at edge midpoints; their L2 weight per edge is
hodge1 * len^2 = |edge| * |dual edge|, and the matching differential operators
are ``gradient`` / ``curl`` / ``divergence``.  Both families satisfy exact
summation-by-parts identities, which downstream modules rely on.

Meshes are immutable after construction; operators and factorizations are
assembled once and cached, so a mesh is safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidResolutionError, MeshWeightError, ShapeError

__all__ = ["DecMesh", "build_torus", "build_icosphere"]


@dataclass(frozen=True)
class DecMesh:
    """Discrete exterior-calculus complex of a closed oriented surface."""

    vertex_count: int
    edge_count: int
    face_count: int
    d0: sp.csr_matrix          # signed edge-vertex incidence, entries +-1
    d1: sp.csr_matrix          # signed face-edge incidence, entries +-1
    hodge0: np.ndarray
    hodge1: np.ndarray
    hodge2: np.ndarray
    edge_lengths: np.ndarray
    total_volume: float
    genus_label: str           # "torus" | "sphere"
    # builder metadata (torus: grid size / side; sphere: embedded positions)
    grid_n: int = 0
    side_length: float = 0.0
    vertex_positions: np.ndarray | None = field(default=None, repr=False)
    face_vertices: np.ndarray | None = field(default=None, repr=False)

    # -- weights ----------------------------------------------------------

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 1.0 / self.hodge2

    @cached_property
    def edge_field_weights(self) -> np.ndarray:
        """L2 weight of a pointwise edge field: |edge| * |dual edge|."""
        return self.hodge1 * self.edge_lengths**2

    # -- integrated cochain calculus --------------------------------------

    def exterior_derivative(self, form: np.ndarray) -> np.ndarray:
        """Signed incidence application for integrated 0- or 1-cochains."""
        form = np.asarray(form)
        if form.shape == (self.vertex_count,):
            return self.d0 @ form
        if form.shape == (self.edge_count,) and self.edge_count != self.vertex_count:
            return self.d1 @ form
        raise ShapeError(
            f"cannot take d of shape {form.shape}; expected "
            f"({self.vertex_count},) or ({self.edge_count},)"
        )

    def codifferential(self, form: np.ndarray, degree: int) -> np.ndarray:
        """Adjoint of d on integrated cochains w.r.t. the Hodge pairings."""
        form = np.asarray(form)
        if degree == 1:
            if form.shape != (self.edge_count,):
                raise ShapeError("degree-1 cochain has wrong length")
            return (self.d0.T @ (self.hodge1 * form)) / self.hodge0
        if degree == 2:
            if form.shape != (self.face_count,):
                raise ShapeError("degree-2 cochain has wrong length")
            return (self.d1.T @ (self.hodge2 * form)) / self.hodge1
        raise ShapeError(f"no codifferential for degree {degree}")

    def inner_product(self, a: np.ndarray, b: np.ndarray, degree: int):
        """Hodge-weighted pairing of two integrated k-cochains.

        Hermitian (conjugate-linear in the first slot) for complex input.
        """
        a = np.asarray(a)
        b = np.asarray(b)
        w = {0: self.hodge0, 1: self.hodge1, 2: self.hodge2}.get(degree)
        if w is None:
            raise ShapeError(f"degree must be 0, 1 or 2, got {degree}")
        if a.shape != w.shape or b.shape != w.shape:
            raise ShapeError(
                f"degree-{degree} cochains must have shape {w.shape}, "
                f"got {a.shape} and {b.shape}"
            )
        res = np.sum(w * np.conj(a) * b)
        return complex(res) if np.iscomplexobj(res) else float(res)

    # -- pointwise field calculus ------------------------------------------

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Per-unit-length difference quotient of a vertex function."""
        if np.shape(f) != (self.vertex_count,):
            raise ShapeError("vertex function has wrong length")
        return (self.d0 @ f) / self.edge_lengths

    def curl(self, a: np.ndarray) -> np.ndarray:
        """Pointwise curvature density of a pointwise edge field."""
        if np.shape(a) != (self.edge_count,):
            raise ShapeError("edge field has wrong length")
        return (self.d1 @ (self.edge_lengths * a)) / self.face_areas

    def divergence(self, a: np.ndarray) -> np.ndarray:
        """Adjoint of ``gradient`` w.r.t. (hodge0, edge_field_weights)."""
        if np.shape(a) != (self.edge_count,):
            raise ShapeError("edge field has wrong length")
        return (self.d0.T @ (self.hodge1 * self.edge_lengths * a)) / self.hodge0

    def curl_adjoint(self, x: np.ndarray) -> np.ndarray:
        """Adjoint of ``curl`` w.r.t. (edge_field_weights, face_areas)."""
        if np.shape(x) != (self.face_count,):
            raise ShapeError("face field has wrong length")
        return (self.d1.T @ x) / (self.hodge1 * self.edge_lengths)

    def field_inner(self, a: np.ndarray, b: np.ndarray, kind: str):
        """L2 pairing of pointwise fields on vertices / edges / faces."""
        w = {
            "vertex": self.hodge0,
            "edge": self.edge_field_weights,
            "face": self.face_areas,
        }.get(kind)
        if w is None:
            raise ShapeError(f"kind must be vertex/edge/face, got {kind!r}")
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != w.shape or b.shape != w.shape:
            raise ShapeError(f"{kind} fields must have shape {w.shape}")
        res = np.sum(w * np.conj(a) * b)
        return complex(res) if np.iscomplexobj(res) else float(res)

    def field_norm(self, a: np.ndarray, kind: str) -> float:
        w = {
            "vertex": self.hodge0,
            "edge": self.edge_field_weights,
            "face": self.face_areas,
        }[kind]
        return float(np.sqrt(np.sum(w * np.abs(np.asarray(a)) ** 2)))

    def vertex_mean(self, f: np.ndarray) -> complex:
        return np.sum(self.hodge0 * f) / self.total_volume

    # -- scalar Poisson solver ---------------------------------------------

    @cached_property
    def _scalar_stiffness(self) -> sp.csc_matrix:
        # K = grad^T W grad with W = hodge1 * len^2; grad = diag(1/len) d0,
        # so K = d0^T diag(hodge1) d0.  Symmetric PSD, kernel = constants.
        K = (self.d0.T @ sp.diags(self.hodge1) @ self.d0).tocsc()
        return K

    @cached_property
    def _scalar_factor(self):
        # Pin vertex 0 to remove the constant kernel, factorize once.
        K = self._scalar_stiffness
        n = self.vertex_count
        keep = np.arange(1, n)
        Kr = K[keep][:, keep].tocsc()
        return spla.factorized(Kr)

    def poisson_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Mean-zero x with (divergence . gradient) x = rhs.

        rhs must be hodge0-orthogonal to constants, which holds exactly for
        any divergence.  Solutions satisfy K x = hodge0 * rhs with the
        pinned sparse factorization, then the hodge0-mean is removed.
        """
        rhs = np.asarray(rhs)
        if rhs.shape != (self.vertex_count,):
            raise ShapeError("vertex function has wrong length")
        if np.iscomplexobj(rhs):
            return self.poisson_solve(rhs.real) + 1j * self.poisson_solve(rhs.imag)
        b = self.hodge0 * rhs
        x = np.zeros(self.vertex_count)
        x[1:] = self._scalar_factor(b[1:])
        return x - np.sum(self.hodge0 * x) / self.total_volume

    # -- harmonic 1-fields ---------------------------------------------------

    @cached_property
    def harmonic_basis(self) -> np.ndarray:
        """Orthonormal basis (rows) of harmonic pointwise edge fields.

        Flat torus grid: the two constant axis fields are exactly closed and
        coclosed.  Sphere: empty (first Betti number 0).
        """
        if self.genus_label != "torus":
            return np.zeros((0, self.edge_count))
        n2 = self.grid_n * self.grid_n
        hx = np.zeros(self.edge_count)
        hy = np.zeros(self.edge_count)
        hx[:n2] = 1.0
        hy[n2:] = 1.0
        w = self.edge_field_weights
        hx /= np.sqrt(np.sum(w * hx**2))
        hy /= np.sqrt(np.sum(w * hy**2))
        return np.vstack([hx, hy])

    def harmonic_project(self, a: np.ndarray) -> np.ndarray:
        H = self.harmonic_basis
        if H.shape[0] == 0:
            return np.zeros_like(a)
        w = self.edge_field_weights
        return H.T @ (H @ (w * a))

    @cached_property
    def coclosed_basis(self) -> np.ndarray:
        """Orthonormal columns spanning coclosed edge fields (dense).

        Built from curl_adjoint of face coordinate vectors plus the harmonic
        fields, then QR-orthonormalized in the edge-field metric.  Used by
        desk-scale direct solvers; refused above 4000 edges to keep memory
        bounded.
        """
        if self.edge_count > 4000:
            raise MeshWeightError(
                f"dense coclosed basis refused at {self.edge_count} edges"
            )
        M1 = self.d1.T.toarray().astype(float)
        M1 /= (self.hodge1 * self.edge_lengths)[:, None]
        M = np.hstack([M1[:, 1:], self.harmonic_basis.T])   # (E, m) candidates
        sw = np.sqrt(self.edge_field_weights)
        Q, R = np.linalg.qr(sw[:, None] * M)
        rank = int(np.sum(np.abs(np.diag(R)) > 1e-10 * np.abs(R[0, 0])))
        expected = self.edge_count - self.vertex_count + 1
        if rank != expected:
            raise MeshWeightError(
                f"coclosed basis rank {rank}, expected {expected}"
            )
        return Q[:, :rank] / sw[:, None]


def build_torus(side_length: float, n: int) -> DecMesh:
    """Uniform n x n quadrilateral grid on a flat square torus.

    Vertex (i, j) has index i + n*j; x-edges occupy ids [0, n^2) and y-edges
    [n^2, 2 n^2).  Face f = i + n*j is the plaquette with lower-left corner
    (i, j), traversed counterclockwise.
    """
    if n < 4:
        raise InvalidResolutionError(f"torus grid needs n >= 4, got {n}")
    if side_length <= 0:
        raise InvalidResolutionError("side_length must be positive")
    n2 = n * n
    h = side_length / n
    idx = np.arange(n2)
    i = idx % n
    j = idx // n

    right = (i + 1) % n + n * j
    up = i + n * ((j + 1) % n)

    # d0: rows = edges, +head -tail
    rows = np.concatenate([idx, idx, n2 + idx, n2 + idx])
    cols = np.concatenate([right, idx, up, idx])
    vals = np.concatenate(
        [np.ones(n2), -np.ones(n2), np.ones(n2), -np.ones(n2)]
    ).astype(np.int8)
    d0 = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n2, n2))

    # d1: face boundary = +x(v) +y(right) -x(up) -y(v)
    rows = np.concatenate([idx, idx, idx, idx])
    cols = np.concatenate([idx, n2 + right, up, n2 + idx])
    vals = np.concatenate(
        [np.ones(n2), np.ones(n2), -np.ones(n2), -np.ones(n2)]
    ).astype(np.int8)
    d1 = sp.csr_matrix((vals, (rows, cols)), shape=(n2, 2 * n2))

    return DecMesh(
        vertex_count=n2,
        edge_count=2 * n2,
        face_count=n2,
        d0=d0,
        d1=d1,
        hodge0=np.full(n2, h * h),
        hodge1=np.ones(2 * n2),
        hodge2=np.full(n2, 1.0 / (h * h)),
        edge_lengths=np.full(2 * n2, h),
        total_volume=side_length * side_length,
        genus_label="torus",
        grid_n=n,
        side_length=side_length,
    )


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return verts, faces


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    """Split each triangle into four and reproject to the unit sphere."""
    cache: dict[tuple[int, int], int] = {}
    verts = list(verts)

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key in cache:
            return cache[key]
        m = verts[a] + verts[b]
        m = m / np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(out)


def _solid_angles(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Spherical area of each triangle (van Oosterom-Strunk)."""
    p1, p2, p3 = (verts[faces[:, k]] for k in range(3))
    num = np.einsum("ij,ij->i", p1, np.cross(p2, p3))
    den = (
        1.0
        + np.einsum("ij,ij->i", p1, p2)
        + np.einsum("ij,ij->i", p2, p3)
        + np.einsum("ij,ij->i", p3, p1)
    )
    return 2.0 * np.arctan2(num, den)


def build_icosphere(subdivisions: int) -> DecMesh:
    """Icosahedron subdivided ``subdivisions`` times, projected to the unit
    sphere, with circumcentric (Voronoi) dual weights.

    Any non-Delaunay triangle would give a negative hodge1 weight; the mesh
    is rejected in that case rather than silently repaired.
    """
    if subdivisions < 1:
        raise InvalidResolutionError("icosphere needs subdivisions >= 1")
    verts, faces = _icosahedron()
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)

    # consistent outward orientation
    triple = np.einsum(
        "ij,ij->i", verts[faces[:, 0]], np.cross(verts[faces[:, 1]], verts[faces[:, 2]])
    )
    flip = triple < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    V = len(verts)
    F = len(faces)

    # edges: sorted vertex pairs, oriented min -> max
    pairs = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(pairs, axis=1)
    edges, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    E = len(edges)

    rows = np.repeat(np.arange(E), 2)
    cols = edges.ravel()
    vals = np.tile([-1, 1], E).astype(np.int8)
    d0 = sp.csr_matrix((vals, (rows, cols)), shape=(E, V))

    # d1: +1 where the face traverses the edge tail->head
    face_ids = np.tile(np.arange(F), 3)
    signs = np.where(pairs[:, 0] < pairs[:, 1], 1, -1).astype(np.int8)
    d1 = sp.csr_matrix((signs, (face_ids, inverse)), shape=(F, E))

    p0, p1, p2 = (verts[faces[:, k]] for k in range(3))
    # interior angles and planar areas
    def angle(a, b, c):
        u = b - a
        v = c - a
        cosw = np.einsum("ij,ij->i", u, v)
        sinw = np.linalg.norm(np.cross(u, v), axis=1)
        return np.arctan2(sinw, cosw)

    ang = np.stack([angle(p0, p1, p2), angle(p1, p2, p0), angle(p2, p0, p1)])
    areas = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)
    cot = 1.0 / np.tan(ang)

    edge_vec = verts[edges[:, 1]] - verts[edges[:, 0]]
    edge_lengths = np.linalg.norm(edge_vec, axis=1)

    # hodge1[e] = (cot(opp angle in face 1) + cot(opp angle in face 2)) / 2
    hodge1 = np.zeros(E)
    opp = {0: 2, 1: 0, 2: 1}  # local edge k=(vk,vk+1) is opposite vertex opp[k]
    for k in range(3):
        eids = inverse[k * F:(k + 1) * F]
        np.add.at(hodge1, eids, 0.5 * cot[opp[k]])
    if np.any(hodge1 <= 0):
        raise MeshWeightError(
            f"{int(np.sum(hodge1 <= 0))} edges have non-positive dual weight; "
            "triangulation is not Delaunay"
        )

    # circumcentric vertex areas: corner at vertex A of triangle ABC gets
    # (|AB|^2 cot C + |AC|^2 cot B) / 8
    l01 = np.linalg.norm(p1 - p0, axis=1) ** 2
    l12 = np.linalg.norm(p2 - p1, axis=1) ** 2
    l20 = np.linalg.norm(p0 - p2, axis=1) ** 2
    hodge0 = np.zeros(V)
    np.add.at(hodge0, faces[:, 0], (l01 * cot[2] + l20 * cot[1]) / 8.0)
    np.add.at(hodge0, faces[:, 1], (l12 * cot[0] + l01 * cot[2]) / 8.0)
    np.add.at(hodge0, faces[:, 2], (l20 * cot[1] + l12 * cot[0]) / 8.0)
    if np.any(hodge0 <= 0):
        raise MeshWeightError("non-positive circumcentric vertex area")

    return DecMesh(
        vertex_count=V,
        edge_count=E,
        face_count=F,
        d0=d0,
        d1=d1,
        hodge0=hodge0,
        hodge1=hodge1,
        hodge2=1.0 / areas,
        edge_lengths=edge_lengths,
        total_volume=float(np.sum(hodge0)),
        genus_label="sphere",
        vertex_positions=verts,
        face_vertices=faces,
    )


def sphere_solid_angles(mesh: DecMesh) -> np.ndarray:
    """Spherical triangle areas of an icosphere's faces; they sum to 4*pi."""
    if mesh.genus_label != "sphere":
        raise ShapeError("solid angles are defined for the icosphere only")
    return _solid_angles(mesh.vertex_positions, mesh.face_vertices)
