"""Low eigenpairs of the connection Laplacian with degeneracy clustering.

Discrete meshes split continuum-degenerate levels by amounts anywhere between
machine epsilon (symmetry-protected) and mesh order, so consumers work with
clusters of eigenvalues rather than single numbers.  The basis returned for a
cluster is canonical: it is built by orthonormalizing projector columns
picked greedily by pivot magnitude, so it depends only on the eigenspace, not
on the arbitrary rotation returned by the eigensolver.  That makes branch
runs reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse.linalg as spla

from .bundle import ConnectionLaplacian, DENSE_EIG_LIMIT
from .errors import EigenLookupError, GLError, SolverError

__all__ = ["SpectralData", "eigensolve", "eigenspace_basis"]

CLUSTER_REL_TOL = 1e-6


@dataclass(frozen=True)
class SpectralData:
    """Ascending low eigenvalues, orthonormal eigen-sections and clusters.

    ``clusters`` holds (start, stop) index pairs; ``lam`` / ``dim`` describe
    the selected cluster (the lowest unless re-selected with
    :meth:`with_cluster`).  Eigen-sections are columns of ``sections`` and
    are orthonormal in the hodge0-weighted L2 pairing.
    """

    operator: ConnectionLaplacian
    eigenvalues: np.ndarray
    sections: np.ndarray
    residuals: np.ndarray
    clusters: tuple[tuple[int, int], ...]
    lam: float
    dim: int

    @property
    def mesh(self):
        return self.operator.mesh

    @property
    def field(self):
        return self.operator.field

    def cluster_of(self, lam: float) -> tuple[int, int]:
        for start, stop in self.clusters:
            lo = self.eigenvalues[start]
            hi = self.eigenvalues[stop - 1]
            pad = CLUSTER_REL_TOL * max(1.0, abs(lam))
            if lo - pad <= lam <= hi + pad:
                return start, stop
        raise EigenLookupError(f"{lam} is not in any computed cluster")

    def cluster_ids(self) -> np.ndarray:
        ids = np.zeros(len(self.eigenvalues), dtype=int)
        for k, (start, stop) in enumerate(self.clusters):
            ids[start:stop] = k
        return ids

    def with_cluster(self, lam: float) -> "SpectralData":
        start, stop = self.cluster_of(lam)
        return replace(
            self,
            lam=float(np.mean(self.eigenvalues[start:stop])),
            dim=stop - start,
        )

    @property
    def kernel_basis(self) -> np.ndarray:
        """Canonical basis of the selected cluster, shape (V, dim)."""
        return eigenspace_basis(self, self.lam)


def _cluster_slices(vals: np.ndarray) -> tuple[tuple[int, int], ...]:
    out = []
    start = 0
    for i in range(1, len(vals)):
        if vals[i] - vals[i - 1] > CLUSTER_REL_TOL * max(1.0, abs(vals[i])):
            out.append((start, i))
            start = i
    out.append((start, len(vals)))
    return tuple(out)


def eigensolve(
    operator: ConnectionLaplacian, count: int, seed: int = 0
) -> SpectralData:
    """Lowest ``count`` eigenpairs, dense below 3000 unknowns, otherwise
    shift-invert Lanczos with a seeded start vector."""
    mesh = operator.mesh
    n = mesh.vertex_count
    if count > n:
        raise GLError(f"requested {count} pairs of a dimension-{n} operator")
    A = operator.whitened
    use_dense = n <= 1200 or (count > n // 4 and n <= DENSE_EIG_LIMIT)
    if n > DENSE_EIG_LIMIT and count > n // 4:
        raise GLError(f"too many pairs requested at dimension {n}")
    if use_dense:
        w, U = np.linalg.eigh(A.toarray())
        w, U = w[:count], U[:, :count]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        # the operator is PSD; a small negative shift keeps the
        # factorization nonsingular even when 0 is an eigenvalue
        sigma = -1e-3 * max(1.0, float(np.mean(A.diagonal().real)))
        try:
            w, U = spla.eigsh(A, k=count, sigma=sigma, which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise SolverError("eigensolver did not converge") from exc
        order = np.argsort(w)
        w, U = w[order], U[:, order]

    s = np.sqrt(mesh.hodge0)
    sections = U / s[:, None]
    residuals = np.empty(count)
    for k in range(count):
        r = A @ U[:, k] - w[k] * U[:, k]
        residuals[k] = np.linalg.norm(r)
        if residuals[k] > 1e-9 * max(abs(w[k]), 1.0):
            raise SolverError(
                f"eigenpair {k} residual {residuals[k]:.2e} above tolerance"
            )
    # clip eigensolver dust so downstream shifts see clean numbers
    w = np.asarray(w, dtype=float)
    clusters = _cluster_slices(w)
    start, stop = clusters[0]
    return SpectralData(
        operator=operator,
        eigenvalues=w,
        sections=sections,
        residuals=residuals,
        clusters=clusters,
        lam=float(np.mean(w[start:stop])),
        dim=stop - start,
    )


def eigenspace_basis(data: SpectralData, lam: float) -> np.ndarray:
    """Canonical orthonormal basis (columns) of the cluster containing lam.

    Columns are hodge0-orthonormalized projections of coordinate vectors,
    with pivots chosen by largest leftover norm and phases pinned to make
    the pivot entry real positive.  The result depends only on the
    eigenspace, so repeated runs agree exactly.
    """
    start, stop = data.cluster_of(lam)
    V = data.sections[:, start:stop]          # (n, m), H0-orthonormal columns
    h0 = data.mesh.hodge0
    m = stop - start
    # row r holds the V-basis coordinates of the projected coordinate
    # vector P e_r; everything below is basis-independent because it only
    # manipulates those projected vectors
    C = h0[:, None] * V.conj()
    basis = np.zeros((V.shape[0], m), dtype=complex)
    for j in range(m):
        norms = np.einsum("rk,rk->r", C, C.conj()).real
        r = int(np.argmax(norms))
        u = C[r].copy()
        nu = np.linalg.norm(u)
        if nu < 1e-14:
            raise GLError("degenerate pivot during basis canonicalization")
        u /= nu
        b = V @ u
        ph = b[r]
        if abs(ph) > 0:                        # pivot entry real positive
            phase = np.conj(ph) / abs(ph)
            u = u * phase
            b = b * phase
        basis[:, j] = b
        proj = C @ u.conj()
        C = C - np.outer(proj, u)
    return basis
