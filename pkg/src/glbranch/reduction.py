"""Bifurcation branches off the normal phase.

Pipeline for one amplitude t, given the selected eigenvalue lam of the base
connection Laplacian and its kernel cluster:

1. eliminate the connection: for fixed phi solve the coclosed equation
   d*dA + P(|phi|^2 A) = j(phi) by projected conjugate gradients;
2. solve the kernel-orthogonal component by Picard iteration for the
   correction psi_tilde, refreshing A each sweep;
3. pick the detuning eps so the residual component along Phi vanishes
   (a Rayleigh-type quotient), alternating with step 2 to joint convergence;
4. when the kernel cluster has complex dimension > 1, move Phi on the unit
   sphere of the cluster to zero the remaining kernel components (a 1-form
   on projective space), by multistart projected gradient descent seeded
   with the cheap leading-order surrogate;
5. assemble the branch point (A_t, phi_t, tau_t) =
   (t^2 A_scaled, t Phi + t^3 Psi_scaled, lam/kappa^2 + t^2 eps_t) and
   optionally polish it with a full Newton solve at fixed tau.

All solves run to tolerances far below the mesh error, so a converged branch
point is a discrete weak solution up to solver noise, not up to O(h).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dfield

import numpy as np

from .bundle import (
    GaugeField,
    OneForm,
    Section,
    _deflated_green,
    _values,
    coulomb_project,
    covariant_derivative,
    covariant_laplacian,
    laplacian0,
    transported_midpoint,
)
from .errors import (
    DegenerateInputError,
    GLError,
    KernelZeroNotFoundError,
    NonContractionError,
    SolverError,
)
from .spectral import SpectralData

log = logging.getLogger(__name__)

__all__ = [
    "CouplingParams",
    "BranchPoint",
    "current_j",
    "solve_A",
    "fixed_point_psi",
    "epsilon_of",
    "leading_order",
    "kernel_one_form",
    "solve_branch_point",
    "continue_branch",
    "newton_polish",
    "gradient_map_residuals",
    "contraction_t_cap",
]


@dataclass(frozen=True)
class CouplingParams:
    """Coupling constants: kappa^2, the potential depth tau, and the norm
    exponent p (> 2) entering the modified potential and the X-norm."""

    kappa2: float
    tau: float = 1.0
    p: float = 4.0

    def __post_init__(self):
        if self.kappa2 <= 0:
            raise GLError("kappa2 must be positive")
        if self.tau <= 0:
            raise GLError("tau must be positive")
        if self.p <= 2:
            raise GLError("p must exceed 2 on a surface")


@dataclass
class BranchPoint:
    """One point of the bifurcation branch, with diagnostics."""

    t: float
    tau_t: float
    eps_t: float
    Phi_t: Section
    Psi_t: Section
    A_t: OneForm
    harmonic_A_norm: float
    residual_wgl1: float
    residual_wgl2: float
    energy: float
    fixed_point_iterations: int
    picard_max_sweeps: int = 0
    res_pre_polish: float = np.nan
    polish: str = "none"          # none | ok | failed
    phi_jump: float = np.nan
    kernel_form_norm: float = 0.0

    @property
    def phi(self) -> np.ndarray:
        return self.t * self.Phi_t.values + self.t**3 * self.Psi_t.values

    @property
    def A(self) -> np.ndarray:
        return self.t**2 * self.A_t.values


# ---------------------------------------------------------------------------
# current and connection elimination
# ---------------------------------------------------------------------------


def current_j(field: GaugeField, phi, perturbation=None) -> OneForm:
    """Coulomb-projected supercurrent Im(h(grad phi, phi)) at edge midpoints.

    Pairs against any coclosed b as <j|b> = -Re <grad phi | b phi>, exactly
    on the mesh thanks to the midpoint transport rule.
    """
    phi = _values(phi)
    grad = covariant_derivative(field, phi, perturbation)
    mid = transported_midpoint(field, phi)
    raw = np.imag(np.conj(grad) * mid)
    return coulomb_project(field.mesh, raw)


def _solve_coclosed(
    mesh,
    mass: np.ndarray,
    rhs: np.ndarray,
    *,
    mu: float = 1e-12,
    drop_harmonic: bool = False,
    tol: float = 1e-12,
    max_iter: int | None = None,
):
    """Projected PCG for  P(curl* curl + mass) A (+ mu harmonic) = P rhs.

    Works in the coclosed subspace with the edge-field metric; Jacobi
    preconditioner.  Returns (A, iterations, relative_residual).
    """
    w = mesh.edge_field_weights

    def proj(x):
        x = coulomb_project(mesh, x).values
        if drop_harmonic:
            x = x - mesh.harmonic_project(x)
        return x

    def apply_op(a):
        out = mesh.curl_adjoint(mesh.curl(a)) + mass * a
        out = proj(out)
        if not drop_harmonic:
            out = out + mu * mesh.harmonic_project(a)
        return out

    # Jacobi diagonal of curl* curl in the edge-field metric
    ell2 = mesh.edge_lengths**2
    stiff_diag = ell2 * (np.abs(mesh.d1).T @ (1.0 / mesh.face_areas)) / w
    diag = stiff_diag + mass + mu

    def dot(a, b):
        return float(np.sum(w * a * b))

    b = proj(rhs)
    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0.0:
        return np.zeros(mesh.edge_count), 0, 0.0
    if max_iter is None:
        max_iter = 40 * mesh.edge_count

    x = np.zeros(mesh.edge_count)
    r = b.copy()
    z = proj(r / diag)
    p = z.copy()
    rz = dot(r, z)
    it = 0
    for it in range(1, max_iter + 1):
        q = apply_op(p)
        pq = dot(p, q)
        if pq <= 0:
            raise SolverError("coclosed solve lost positivity", residual=pq)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        rn = np.sqrt(dot(r, r))
        if rn <= tol * bnorm:
            break
        if it % 50 == 0:
            r = b - apply_op(x)       # shave accumulated drift
        z = proj(r / diag)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise SolverError(
            "coclosed solve failed to converge",
            residual=np.sqrt(dot(r, r)) / bnorm,
        )
    return proj(x), it, np.sqrt(dot(r, r)) / bnorm


def solve_A(
    field: GaugeField,
    phi,
    *,
    tol: float = 1e-12,
    mu: float = 1e-12,
) -> OneForm:
    """Unique coclosed minimizer of 1/2||dA||^2 + 1/2||phi A||^2 - <j|A>.

    Solves d*dA + P(|phi|^2 A) = j(grad0, phi) with a Tikhonov floor mu on
    the harmonic directions.  ||dA|| <= 1/2 ||grad0 phi|| always holds; for
    generic phi the quadratic bound ||dA|| <= 1/2 ||phi||_X^2 follows.
    """
    mesh = field.mesh
    phi = _values(phi)
    grad = covariant_derivative(field, phi)
    mid = transported_midpoint(field, phi)
    j_raw = np.imag(np.conj(grad) * mid)
    mass = np.abs(mid) ** 2
    a, _, _ = _solve_coclosed(mesh, mass, j_raw, mu=mu, tol=tol)
    out = OneForm(mesh, a, coclosed=True)
    hn = mesh.field_norm(mesh.harmonic_project(a), "edge")
    cn = mesh.field_norm(a - mesh.harmonic_project(a), "edge")
    out.harmonic_warning = hn > 10.0 * max(cn, 1e-300)
    if out.harmonic_warning:
        log.warning(
            "solve_A harmonic component %.3e exceeds 10x coclosed-exact %.3e",
            hn, cn,
        )
    return out


# ---------------------------------------------------------------------------
# fixed point for the kernel-orthogonal correction
# ---------------------------------------------------------------------------


@dataclass
class FixedPointResult:
    psi_tilde: np.ndarray
    iterations: int
    a_field: OneForm
    update_history: list = dfield(default_factory=list)


def _nonlinear_rhs(field, phi_full, a_vals, eps, kappa2):
    """kappa^2 eps phi - kappa^2 |phi|^2 phi - (cov_lap_A - cov_lap_0) phi."""
    R = covariant_laplacian(field, phi_full, a_vals) - covariant_laplacian(
        field, phi_full
    )
    return kappa2 * eps * phi_full - kappa2 * np.abs(phi_full) ** 2 * phi_full - R


def fixed_point_psi(
    field: GaugeField,
    Phi,
    t: float,
    eps: float,
    params: CouplingParams,
    spec: SpectralData,
    *,
    tol: float = 1e-12,
    max_sweeps: int = 200,
    omega: float = 1.0,
    psi0: np.ndarray | None = None,
    a_tol: float = 1e-12,
) -> FixedPointResult:
    """Picard iteration for the kernel-orthogonal correction psi_tilde.

    Each sweep refreshes the eliminated connection at the current iterate and
    applies the deflated Green operator of (Delta_0 - lam).  Converges when
    the update drops below tol * t; the relaxation factor is halved whenever
    the update grows by more than a factor of four.
    """
    mesh = field.mesh
    Phi = _values(Phi)
    basis = spec.kernel_basis
    lam = spec.lam
    kappa2 = params.kappa2
    psi = np.zeros(mesh.vertex_count, dtype=complex) if psi0 is None else psi0.copy()
    history: list[float] = []
    a_form = OneForm(mesh, np.zeros(mesh.edge_count), coclosed=True)
    if not np.any(Phi) and psi0 is None:
        return FixedPointResult(psi, 0, a_form, history)
    for sweep in range(1, max_sweeps + 1):
        phi_full = t * Phi + psi
        a_form = solve_A(field, phi_full, tol=a_tol)
        rhs = _nonlinear_rhs(field, phi_full, a_form.values, eps, kappa2)
        gpsi = _deflated_green(field, lam, basis, rhs, tol=1e-12)
        update = gpsi - psi
        un = mesh.field_norm(update, "vertex")
        history.append(un)
        psi = psi + omega * update
        if un <= tol * max(t, 1e-300):
            return FixedPointResult(psi, sweep, a_form, history)
        if len(history) >= 2 and un > 4.0 * history[-2] and omega > 1.0 / 64:
            omega *= 0.5
    raise NonContractionError(
        f"fixed point did not contract within {max_sweeps} sweeps "
        f"(t={t:.3g}; shrink the amplitude range)",
        residual=history[-1],
        history=history,
    )


def epsilon_of(
    field: GaugeField,
    Phi,
    t: float,
    Psi_t,
    A_t,
    params: CouplingParams,
    lam: float,
) -> float:
    """Detuning that kills the residual component along Phi:

    eps = (||(grad0+A)(Phi+Psi)||^2 - lam ||Phi+Psi||^2
           + t^2 kappa^2 ||Phi+Psi||_L4^4) / (kappa^2 ||Phi+Psi||^2).
    """
    mesh = field.mesh
    phi_hat = _values(Phi) + _values(Psi_t)
    n2 = mesh.field_norm(phi_hat, "vertex") ** 2
    if n2 == 0.0:
        raise DegenerateInputError("Phi + Psi vanishes; epsilon is undefined")
    grad = covariant_derivative(field, phi_hat, A_t)
    kin = mesh.field_norm(grad, "edge") ** 2
    l4 = float(np.sum(mesh.hodge0 * np.abs(phi_hat) ** 4))
    return (kin - lam * n2 + t * t * params.kappa2 * l4) / (params.kappa2 * n2)


# ---------------------------------------------------------------------------
# leading order
# ---------------------------------------------------------------------------


def _linear_cross_term(field, a_vals, phi):
    """Discrete counterpart of 2 A* (grad0 phi): the part of the perturbed
    Laplacian that is linear in the perturbation."""
    mesh = field.mesh
    w = mesh.edge_field_weights
    D = field.covariant_matrix
    M = field.midpoint_matrix
    ia = 1j * a_vals
    out = D.conj().T @ (w * (ia * (M @ phi)))
    out += M.conj().T @ (np.conj(ia) * (w * (D @ phi)))
    return out / mesh.hodge0


def leading_order(
    field: GaugeField, Phi, params: CouplingParams, spec: SpectralData
) -> tuple[OneForm, float, Section]:
    """Small-t limit of the branch data for a unit kernel element Phi:

    A0 solves d*d A0 = j(grad0, Phi) (harmonic part zero), eps0 is the
    limiting detuning and Psi0 = -G_lam(2 A0*(grad0 Phi) + kappa^2 |Phi|^2 Phi).
    """
    mesh = field.mesh
    Phi = _values(Phi)
    grad = covariant_derivative(field, Phi)
    mid = transported_midpoint(field, Phi)
    j_raw = np.imag(np.conj(grad) * mid)
    a0, _, _ = _solve_coclosed(
        mesh, np.zeros(mesh.edge_count), j_raw, drop_harmonic=True, tol=1e-12
    )
    A0 = OneForm(mesh, a0, coclosed=True)
    cross = 2.0 * np.real(
        np.sum(mesh.edge_field_weights * np.conj(grad) * (1j * a0 * mid))
    )
    l4 = float(np.sum(mesh.hodge0 * np.abs(Phi) ** 4))
    eps0 = l4 + cross / params.kappa2
    rhs = _linear_cross_term(field, a0, Phi) + params.kappa2 * np.abs(Phi) ** 2 * Phi
    psi0 = -_deflated_green(field, spec.lam, spec.kernel_basis, rhs, tol=1e-12)
    return A0, eps0, Section(mesh, psi0)


# ---------------------------------------------------------------------------
# residuals via the expanded gradient map (independent of verify's assembly)
# ---------------------------------------------------------------------------


def gradient_map_residuals(field: GaugeField, A, phi, params: CouplingParams):
    """Dual-norm residuals of the weak equations, assembled term by term
    from the base-connection expansion (curvature pairing of the normal
    phase dropped using d*F0 = 0, current expanded through |phi|^2 A).
    """
    mesh = field.mesh
    a = _values(A)
    phi = _values(phi)
    grad0 = covariant_derivative(field, phi)
    mid = transported_midpoint(field, phi)
    j0 = np.imag(np.conj(grad0) * mid)

    rep1 = mesh.curl_adjoint(mesh.curl(a)) + np.abs(mid) ** 2 * a - j0
    res1 = mesh.field_norm(coulomb_project(mesh, rep1).values, "edge")

    lap0 = laplacian0(field)
    quad = field.midpoint_matrix.conj().T @ (
        mesh.edge_field_weights * a * a * (field.midpoint_matrix @ phi)
    ) / mesh.hodge0
    g = (
        lap0.apply(phi)
        + _linear_cross_term(field, a, phi)
        + quad
        - params.kappa2 * (params.tau - np.abs(phi) ** 2) * phi
    )
    res2 = mesh.field_norm(g, "vertex")
    return float(res1), float(res2)


# ---------------------------------------------------------------------------
# joint (psi, eps) solve and the kernel one-form
# ---------------------------------------------------------------------------


@dataclass
class JointState:
    """Converged (psi_tilde, eps) pair with the eliminated connection."""

    psi_tilde: np.ndarray
    eps: float
    a_field: OneForm
    total_sweeps: int
    max_sweeps_per_call: int


def _joint_solve(
    field,
    Phi,
    t,
    params,
    spec,
    *,
    tol=1e-12,
    warm=None,
    max_outer=60,
    max_sweeps=200,
) -> JointState:
    """Alternate Picard sweeps for psi_tilde with eps updates until the pair
    stops moving.  ``warm`` is an optional (psi_tilde, eps) starting guess."""
    eps = 0.0
    psi = None
    if warm is not None:
        psi, eps = warm
        psi = None if psi is None else np.array(psi, dtype=complex)
    total = 0
    per_call = 0
    for _ in range(max_outer):
        res = fixed_point_psi(
            field, Phi, t, eps, params, spec,
            tol=tol, max_sweeps=max_sweeps, psi0=psi,
        )
        psi = res.psi_tilde
        total += res.iterations
        per_call = max(per_call, res.iterations)
        Psi = psi / t
        eps_new = epsilon_of(field, Phi, t, Psi, res.a_field, params, spec.lam)
        if abs(eps_new - eps) <= 1e-12 * max(1.0, abs(eps_new)):
            return JointState(psi, eps_new, res.a_field, total, per_call)
        eps = eps_new
    raise SolverError(
        "eps/psi alternation did not converge", residual=abs(eps_new - eps)
    )


def _complement_basis(kernel: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ker cap (C Phi)^perp, for Phi = kernel @ coeff."""
    m = kernel.shape[1]
    if m == 1:
        return kernel[:, :0]
    # Householder-style: unitary with first column = coeff
    Q, _ = np.linalg.qr(
        np.hstack([coeff.reshape(-1, 1), np.eye(m, dtype=complex)])
    )
    # fix phases so the construction is deterministic
    Q = Q[:, 1:m]
    return kernel @ Q


def kernel_one_form(
    field: GaugeField,
    Phi,
    t: float,
    params: CouplingParams,
    spec: SpectralData,
    *,
    state=None,
    tol: float = 1e-12,
) -> np.ndarray:
    """Components of the reduced gradient at the converged fixed point,
    against an orthonormal basis of ker cap (C Phi)^perp (length D).

    ``state`` may carry a precomputed (psi_tilde, eps, A) triple from
    ``_joint_solve``; otherwise the fixed point is solved here.
    """
    mesh = field.mesh
    Phi = _values(Phi)
    basis = spec.kernel_basis
    coeff = basis.conj().T @ (mesh.hodge0 * Phi)
    comp = _complement_basis(basis, coeff)
    if comp.shape[1] == 0:
        return np.zeros(0, dtype=complex)
    if state is None:
        state = _joint_solve(field, Phi, t, params, spec, tol=tol)
    phi_full = t * Phi + state.psi_tilde
    tau = spec.lam / params.kappa2 + state.eps
    g = covariant_laplacian(field, phi_full, state.a_field.values) - params.kappa2 * (
        tau - np.abs(phi_full) ** 2
    ) * phi_full
    return comp.conj().T @ (mesh.hodge0 * g)


def _surrogate_components(field, params, spec, coeff):
    """Leading-order kernel map at Phi = basis @ coeff (cheap: one linear
    solve, no Picard)."""
    mesh = field.mesh
    basis = spec.kernel_basis
    Phi = basis @ coeff
    grad = covariant_derivative(field, Phi)
    mid = transported_midpoint(field, Phi)
    j_raw = np.imag(np.conj(grad) * mid)
    a0, _, _ = _solve_coclosed(
        mesh, np.zeros(mesh.edge_count), j_raw, drop_harmonic=True, tol=1e-10
    )
    rhs = _linear_cross_term(field, a0, Phi) + params.kappa2 * np.abs(Phi) ** 2 * Phi
    comp = _complement_basis(basis, coeff)
    return comp.conj().T @ (mesh.hodge0 * rhs)


def _project_sphere_gradient(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Remove the radial and global-phase directions from a Wirtinger-style
    real gradient on the unit sphere of C^m."""
    for direction in (c, 1j * c):
        g = g - np.real(np.vdot(direction, g)) * direction
    return g


def _minimize_on_projective(objective, c0, *, max_iter=60, f_floor=0.0):
    """Projected gradient descent for a real objective on CP^(m-1),
    with central finite-difference gradients and Armijo backtracking.

    The gradient is the Wirtinger-style real gradient in C^m with the
    radial and global-phase directions projected out, so descent moves on
    the projective space only.
    """
    c = c0 / np.linalg.norm(c0)
    f = objective(c)
    m = len(c)
    for _ in range(max_iter):
        if f <= f_floor:
            break
        step = 1e-6
        g = np.zeros(m, dtype=complex)
        for k in range(m):
            for direction in (1.0, 1.0j):
                e = np.zeros(m, dtype=complex)
                e[k] = direction * step
                fp = objective((c + e) / np.linalg.norm(c + e))
                fm = objective((c - e) / np.linalg.norm(c - e))
                g[k] += direction * (fp - fm) / (2 * step)
        g = _project_sphere_gradient(c, g)
        gn = np.linalg.norm(g)
        if gn < 1e-16 * max(1.0, abs(f)):
            break
        alpha = 0.5 * max(abs(f), 1e-30) / max(gn * gn, 1e-60)
        improved = False
        for _ in range(40):
            cand = c - alpha * g
            cand /= np.linalg.norm(cand)
            fc = objective(cand)
            if fc < f - 1e-4 * alpha * gn * gn:
                c, f = cand, fc
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return c, f


def solve_branch_point(
    field: GaugeField,
    t: float,
    params: CouplingParams,
    spec: SpectralData,
    seeds: int = 8,
    *,
    tol: float = 1e-12,
    tol_kernel: float = 1e-9,
    warm=None,
    polish: bool = False,
    rng: np.random.Generator | None = None,
) -> BranchPoint:
    """Construct the branch point at amplitude t.

    For a simple eigenvalue the kernel element is the canonical phase-fixed
    basis vector.  For a degenerate cluster, Phi is found by minimizing the
    kernel one-form norm over the projective eigenspace: multistart descent
    on the cheap leading-order surrogate picks the basin, then the true
    objective is polished.  Acceptance threshold: tol_kernel * t^3 * scale.
    """
    basis = spec.kernel_basis
    m = basis.shape[1]
    if rng is None:
        rng = np.random.default_rng(0)

    # warm = (kernel coefficients, Psi_t-scaled values, eps_t) from a
    # neighboring amplitude; rescaled to this t via the branch scalings
    warm_coeff = warm_guess = None
    if warm is not None:
        warm_coeff, warm_psi_scaled, warm_eps_t = warm
        if warm_psi_scaled is not None:
            warm_guess = (t**3 * warm_psi_scaled, t * t * warm_eps_t)
    last_guess = [warm_guess]

    def solve_at(c):
        state = _joint_solve(
            field, basis @ c, t, params, spec, tol=tol, warm=last_guess[0]
        )
        last_guess[0] = (state.psi_tilde, state.eps)
        return state

    if m == 1:
        coeff = np.ones(1, dtype=complex)
    else:
        threshold = tol_kernel * max(1.0, params.kappa2) * t**3

        def sur_obj(c):
            comp = _surrogate_components(field, params, spec, c)
            return float(np.linalg.norm(comp)) ** 2

        def true_obj(c):
            state = solve_at(c)
            ups = kernel_one_form(field, basis @ c, t, params, spec, state=state)
            return float(np.linalg.norm(ups)) ** 2

        starts = []
        if warm_coeff is not None:
            starts.append(np.asarray(warm_coeff, dtype=complex))
        for _ in range(seeds):
            v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            starts.append(v / np.linalg.norm(v))
        best = None
        for c0 in starts:
            c, f = _minimize_on_projective(sur_obj, c0, max_iter=80)
            if best is None or f < best[1]:
                best = (c, f)
        coeff, f = _minimize_on_projective(
            true_obj, best[0], max_iter=40, f_floor=(0.5 * threshold) ** 2
        )
        if np.sqrt(f) > threshold:
            raise KernelZeroNotFoundError(
                f"kernel one-form norm {np.sqrt(f):.3e} above tolerance "
                f"{threshold:.3e} at t={t:.4g}",
                best_value=float(np.sqrt(f)),
            )
        # canonical phase: largest component real positive
        k = int(np.argmax(np.abs(coeff)))
        coeff = coeff * (np.conj(coeff[k]) / abs(coeff[k]))

    Phi = basis @ coeff
    state = solve_at(coeff)
    ups = kernel_one_form(field, Phi, t, params, spec, state=state)

    return _assemble_point(
        field, params, spec, t, Phi, state,
        kernel_norm=float(np.linalg.norm(ups)), polish=polish,
    )


def _assemble_point(
    field, params, spec, t, Phi, state: JointState,
    *, kernel_norm=0.0, polish=False,
):
    from . import energy as energy_mod

    mesh = field.mesh
    psi = state.psi_tilde
    eps_t = state.eps / (t * t)
    tau0 = spec.lam / params.kappa2
    tau_t = tau0 + t * t * eps_t
    pt_params = CouplingParams(params.kappa2, tau_t, params.p)

    phi_full = t * Phi + psi
    a_vals = state.a_field.values
    res1, res2 = gradient_map_residuals(field, a_vals, phi_full, pt_params)
    pre = float(np.hypot(np.hypot(res1, res2), kernel_norm))

    A_t = OneForm(mesh, a_vals / (t * t), coclosed=True)
    Psi_t = Section(mesh, psi / t**3)
    report = energy_mod.gl_energy(field, a_vals, phi_full, pt_params)

    point = BranchPoint(
        t=t,
        tau_t=tau_t,
        eps_t=eps_t,
        Phi_t=Section(mesh, Phi),
        Psi_t=Psi_t,
        A_t=A_t,
        harmonic_A_norm=mesh.field_norm(mesh.harmonic_project(A_t.values), "edge"),
        residual_wgl1=res1,
        residual_wgl2=res2,
        energy=report.total,
        fixed_point_iterations=state.total_sweeps,
        picard_max_sweeps=state.max_sweeps_per_call,
        res_pre_polish=pre,
        kernel_form_norm=kernel_norm,
    )
    if polish:
        point = newton_polish(field, point, params, spec)
    return point


def continue_branch(
    field: GaugeField,
    t_grid,
    params: CouplingParams,
    spec: SpectralData,
    *,
    seeds: int = 8,
    polish: bool = True,
    tol: float = 1e-12,
    tol_kernel: float = 1e-9,
    seed: int = 0,
    error_log: list | None = None,
) -> list[BranchPoint]:
    """Solve a descending amplitude grid, warm-starting each point from the
    previous one.  Per-point failures are logged (and recorded in
    ``error_log`` when given); the continuation proceeds."""
    t_grid = list(t_grid)
    if any(b >= a for a, b in zip(t_grid, t_grid[1:])):
        raise GLError("t_grid must be strictly descending")
    rng = np.random.default_rng(seed)
    points: list[BranchPoint] = []
    warm = None
    prev_phi = None
    for t in t_grid:
        try:
            pt = solve_branch_point(
                field, t, params, spec, seeds,
                tol=tol, tol_kernel=tol_kernel, warm=warm, polish=polish, rng=rng,
            )
        except GLError as exc:
            log.warning("branch point t=%.4g failed: %s", t, exc)
            if error_log is not None:
                error_log.append((t, str(exc)))
            continue
        if prev_phi is not None:
            overlap = complex(
                np.sum(field.mesh.hodge0 * np.conj(prev_phi) * pt.Phi_t.values)
            )
            pt.phi_jump = float(
                np.sqrt(max(0.0, 2.0 - 2.0 * abs(overlap)))
            )
        prev_phi = pt.Phi_t.values
        coeff = spec.kernel_basis.conj().T @ (field.mesh.hodge0 * pt.Phi_t.values)
        warm = (coeff, pt.Psi_t.values, pt.eps_t)
        points.append(pt)
    return points


def contraction_t_cap(
    field: GaugeField, params: CouplingParams, spec: SpectralData
) -> float:
    """Largest probe amplitude at which the Picard iteration visibly
    contracts: start at 0.5 sqrt(lam)/||Phi||_L4^2 and halve until the
    update ratio stays below 0.5."""
    Phi = spec.kernel_basis[:, 0]
    l4sq = float(np.sum(field.mesh.hodge0 * np.abs(Phi) ** 4)) ** 0.5
    t = 0.5 * np.sqrt(max(spec.lam, 1e-30)) / max(l4sq, 1e-30)
    for _ in range(40):
        converged = True
        try:
            res = fixed_point_psi(
                field, Phi, t, 0.0, params, spec, max_sweeps=12, tol=1e-12
            )
            hist = res.update_history
        except (NonContractionError, SolverError) as exc:
            converged = False
            hist = getattr(exc, "history", None) or []
        ratios = [b / a for a, b in zip(hist, hist[1:]) if a > 0]
        tail = ratios[1:] or ratios           # skip the transient first ratio
        if converged and (not tail or max(tail) < 0.5):
            return t
        if not converged and tail and max(tail) < 0.5:
            return t
        t *= 0.5
    raise SolverError("no contracting amplitude found")


# ---------------------------------------------------------------------------
# Newton polish of the full discrete system
# ---------------------------------------------------------------------------


def newton_polish(
    field: GaugeField,
    point: BranchPoint,
    params: CouplingParams,
    spec: SpectralData,
) -> BranchPoint:
    """Newton iteration on the full weak system at fixed tau = tau_t, over
    (coclosed A, phi) with the global phase pinned by Im<Phi_t, phi> = 0.

    Dense linear algebra on the coclosed basis; intended for desk-scale
    meshes.  On divergence the original point is returned with the
    polish-failed flag set.
    """
    from . import energy as energy_mod

    mesh = field.mesh
    tau = point.tau_t
    pt_params = CouplingParams(params.kappa2, tau, params.p)
    kappa2 = params.kappa2

    try:
        Q = mesh.coclosed_basis
    except GLError as exc:
        log.warning("newton_polish unavailable: %s", exc)
        out = _replace_point(point, polish="failed")
        return out

    w1 = mesh.edge_field_weights
    h0 = mesh.hodge0
    V = mesh.vertex_count
    mc = Q.shape[1]
    pin = point.Phi_t.values

    a = point.A.copy()
    phi = point.phi.astype(complex).copy()

    def residuals(a, phi):
        grad = covariant_derivative(field, phi, a)
        mid = transported_midpoint(field, phi)
        f_rep = mesh.curl(a) - field.flux_density
        rho_a = w1 * (
            mesh.curl_adjoint(f_rep) - np.imag(np.conj(grad) * mid)
        )
        g = covariant_laplacian(field, phi, a) - kappa2 * (
            tau - np.abs(phi) ** 2
        ) * phi
        rc = Q.T @ rho_a
        ru = np.concatenate([np.real(h0 * g), np.imag(h0 * g)])
        return rc, ru, g

    def resnorm(rc, g):
        return float(np.hypot(np.linalg.norm(rc), mesh.field_norm(g, "vertex")))

    rc, ru, g = residuals(a, phi)
    best = resnorm(rc, g)
    target = 1e-11 * max(1.0, kappa2 * tau)
    bad_steps = 0
    for _ in range(20):
        if best <= target:
            break
        H = _full_hessian(field, a, phi, pt_params)
        # bordered system with the phase-pin row
        gpin = np.concatenate(
            [np.zeros(mc), -h0 * np.imag(pin), h0 * np.real(pin)]
        )
        QH = np.zeros((mc + 2 * V + 1, mc + 2 * V + 1))
        QH[: mc + 2 * V, : mc + 2 * V] = _hessian_in_basis(H, Q, mc, V)
        QH[: mc + 2 * V, -1] = gpin
        QH[-1, : mc + 2 * V] = gpin
        rhs = np.concatenate(
            [-rc, -ru, [-np.imag(np.sum(h0 * np.conj(pin) * phi))]]
        )
        try:
            delta = np.linalg.solve(QH, rhs)
        except np.linalg.LinAlgError:
            return _replace_point(point, polish="failed")
        a = a + Q @ delta[:mc]
        phi = phi + delta[mc: mc + V] + 1j * delta[mc + V: mc + 2 * V]
        rc, ru, g = residuals(a, phi)
        rn = resnorm(rc, g)
        if not np.isfinite(rn) or rn > 10.0 * best:
            return _replace_point(point, polish="failed")
        bad_steps = bad_steps + 1 if rn >= best else 0
        if bad_steps >= 3:
            return _replace_point(point, polish="failed")
        best = min(best, rn)
    if best > target:
        return _replace_point(point, polish="failed")

    # re-split phi into kernel amplitude, direction and orthogonal rest
    basis = spec.kernel_basis
    coeff = basis.conj().T @ (h0 * phi)
    t_new = float(np.linalg.norm(coeff))
    Phi_new = basis @ (coeff / t_new)
    psi_new = phi - t_new * Phi_new
    eps_t = (tau - spec.lam / kappa2) / (t_new * t_new)
    tau_t = spec.lam / kappa2 + t_new * t_new * eps_t

    res1, res2 = gradient_map_residuals(field, a, phi, pt_params)
    report = energy_mod.gl_energy(field, a, phi, pt_params)
    return BranchPoint(
        t=t_new,
        tau_t=tau_t,
        eps_t=eps_t,
        Phi_t=Section(mesh, Phi_new),
        Psi_t=Section(mesh, psi_new / t_new**3),
        A_t=OneForm(mesh, a / t_new**2, coclosed=True),
        harmonic_A_norm=mesh.field_norm(
            mesh.harmonic_project(a / t_new**2), "edge"
        ),
        residual_wgl1=res1,
        residual_wgl2=res2,
        energy=report.total,
        fixed_point_iterations=point.fixed_point_iterations,
        picard_max_sweeps=point.picard_max_sweeps,
        res_pre_polish=point.res_pre_polish,
        polish="ok",
        phi_jump=point.phi_jump,
        kernel_form_norm=point.kernel_form_norm,
    )


def _replace_point(point: BranchPoint, **kw) -> BranchPoint:
    from dataclasses import replace

    return replace(point, **kw)


def _hessian_in_basis(H, Q, mc, V):
    """Compress the (E + 2V) real Hessian blocks into the coclosed basis."""
    Haa, Hau, Huu = H
    out = np.zeros((mc + 2 * V, mc + 2 * V))
    out[:mc, :mc] = Q.T @ (Haa @ Q)
    cross = Q.T @ Hau
    out[:mc, mc:] = cross
    out[mc:, :mc] = cross.T
    out[mc:, mc:] = Huu
    return out


def _full_hessian(field, a, phi, params, modified: bool = False):
    """Real Hessian blocks of the energy at (a, phi):
    Haa (E x E), Hau (E x 2V), Huu (2V x 2V).  ``modified`` switches the
    potential to the one-sided steepened branch above |phi|^2 = tau."""
    import scipy.sparse as sp

    mesh = field.mesh
    w1 = mesh.edge_field_weights
    h0 = mesh.hodge0
    kappa2 = params.kappa2
    tau = params.tau
    p = params.p
    V = mesh.vertex_count

    Dmat = field.covariant_matrix
    Mmat = field.midpoint_matrix
    DA = Dmat + sp.diags(1j * a) @ Mmat

    mid = Mmat @ phi
    gradA = DA @ phi

    # A-A block: curl stiffness + |mid phi|^2 mass (covector form)
    ell = mesh.edge_lengths
    S = sp.diags(ell) @ mesh.d1.T @ sp.diags(1.0 / mesh.face_areas) @ mesh.d1 @ sp.diags(ell)
    Haa = S.toarray() + np.diag(w1 * np.abs(mid) ** 2)

    # A-phi block: d rho_A / d psi = w1 Im((N1 - N2) psi)
    N = sp.diags(np.conj(mid)) @ DA - sp.diags(np.conj(gradA)) @ Mmat
    Nd = N.toarray()
    Hau = np.hstack([w1[:, None] * np.imag(Nd), w1[:, None] * np.real(Nd)])

    # phi-phi block: kinetic (Hermitian K) + pointwise potential
    K = (DA.conj().T @ sp.diags(w1) @ DA).toarray()
    Huu = np.block(
        [[np.real(K), -np.imag(K)], [np.imag(K), np.real(K)]]
    )
    u = np.abs(phi) ** 2
    x, y = np.real(phi), np.imag(phi)
    # potential V(u): slope and curvature in u
    slope = 2.0 * (u - tau)
    curv = np.full_like(u, 2.0)
    if modified:
        above = u > tau
        if np.any(above):
            slope[above] = p * (u[above] - tau) ** (p - 1.0)
            curv[above] = p * (p - 1.0) * (u[above] - tau) ** (p - 2.0)
    base = 0.5 * kappa2 * h0 * slope
    cxx = kappa2 * h0 * curv
    Huu[np.arange(V), np.arange(V)] += base + cxx * x * x
    Huu[np.arange(V, 2 * V), np.arange(V, 2 * V)] += base + cxx * y * y
    off = cxx * x * y
    Huu[np.arange(V), np.arange(V, 2 * V)] += off
    Huu[np.arange(V, 2 * V), np.arange(V)] += off
    return Haa, Hau, Huu
