"""Energy functionals, their gradients, and threshold experiments.

The free energy of a perturbation ``a`` (coclosed edge field) and section
``phi`` at couplings (kappa^2, tau) is

    E = 1/2 ||curl a - flux_density||^2  +  1/2 ||D_a phi||^2
        + kappa^2/4 * sum_v hodge0 * V(|phi_v|^2),

with V(u) = (u - tau)^2 for the standard potential, and the one-sided
steepening V(u) = (u - tau)^p for u > tau in the modified potential (p > 2).
Both agree wherever |phi|^2 <= tau, and so do their critical points.

``minimize`` runs monotone Barzilai-Borwein descent with Armijo backtracking
on the modified energy over (coclosed a, phi); the global phase is a flat
direction the descent simply never leaves.  ``threshold_scan`` probes the
bifurcation threshold tau0 = lam / kappa^2 from normal and trial starts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bundle import (
    GaugeField,
    OneForm,
    Section,
    _values,
    coulomb_project,
    covariant_derivative,
    covariant_laplacian,
    transported_midpoint,
)
from .errors import GLError, ShapeError, SolverError
from .reduction import CouplingParams

log = logging.getLogger(__name__)

__all__ = [
    "EnergyReport",
    "ThresholdRow",
    "gl_energy",
    "modified_energy",
    "energy_gradient",
    "minimize",
    "threshold_scan",
    "normal_phase_energy",
]


@dataclass(frozen=True)
class EnergyReport:
    total: float
    curvature_term: float
    kinetic_term: float
    potential_term: float
    gradient_norm: float


@dataclass
class ThresholdRow:
    tau: float
    tau_over_tau0: float
    norm_phi: float
    energy: float
    energy_gap_to_normal: float
    iters: int
    init_kind: str
    status: str = "ok"


def _potential(u: np.ndarray, tau: float, p: float, modified: bool) -> np.ndarray:
    if not modified:
        return (u - tau) ** 2
    out = (u - tau) ** 2
    above = u > tau
    if np.any(above):
        out[above] = (u[above] - tau) ** p
    return out


def _potential_slope(u, tau, p, modified):
    """dV/du for the chosen potential branch."""
    if not modified:
        return 2.0 * (u - tau)
    out = 2.0 * (u - tau)
    above = u > tau
    if np.any(above):
        out[above] = p * (u[above] - tau) ** (p - 1.0)
    return out


def _energy(field, a, phi, params, modified):
    mesh = field.mesh
    f_rep = mesh.curl(a) - field.flux_density
    curv = 0.5 * np.sum(mesh.face_areas * f_rep**2)
    grad = covariant_derivative(field, phi, a)
    kin = 0.5 * np.sum(mesh.edge_field_weights * np.abs(grad) ** 2)
    u = np.abs(phi) ** 2
    pot = 0.25 * params.kappa2 * np.sum(
        mesh.hodge0 * _potential(u, params.tau, params.p, modified)
    )
    return float(curv), float(kin), float(pot)


def _gradient(field, a, phi, params, modified):
    """Riesz representatives of dE in the (edge-field, L2) metrics; the
    one-form slot is Coulomb-projected."""
    mesh = field.mesh
    grad = covariant_derivative(field, phi, a)
    mid = transported_midpoint(field, phi)
    f_rep = mesh.curl(a) - field.flux_density
    g_a = coulomb_project(
        mesh, mesh.curl_adjoint(f_rep) - np.imag(np.conj(grad) * mid)
    ).values
    u = np.abs(phi) ** 2
    g_phi = covariant_laplacian(field, phi, a) + 0.5 * params.kappa2 * (
        _potential_slope(u, params.tau, params.p, modified) * phi
    )
    return g_a, g_phi


def _grad_norm(mesh, g_a, g_phi) -> float:
    return float(
        np.hypot(mesh.field_norm(g_a, "edge"), mesh.field_norm(g_phi, "vertex"))
    )


def _check_shapes(field, a, phi):
    mesh = field.mesh
    if np.shape(a) != (mesh.edge_count,):
        raise ShapeError("perturbation has wrong length")
    if np.shape(phi) != (mesh.vertex_count,):
        raise ShapeError("section has wrong length")


def _report(field, a, phi, params, modified) -> EnergyReport:
    a = np.zeros(field.mesh.edge_count) if a is None else _values(a)
    phi = _values(phi).astype(complex)
    _check_shapes(field, a, phi)
    curv, kin, pot = _energy(field, a, phi, params, modified)
    g_a, g_phi = _gradient(field, a, phi, params, modified)
    return EnergyReport(
        total=curv + kin + pot,
        curvature_term=curv,
        kinetic_term=kin,
        potential_term=pot,
        gradient_norm=_grad_norm(field.mesh, g_a, g_phi),
    )


def gl_energy(field: GaugeField, perturbation, phi, params: CouplingParams):
    """Free energy with the standard quartic potential."""
    return _report(field, perturbation, phi, params, modified=False)


def modified_energy(field: GaugeField, perturbation, phi, params: CouplingParams):
    """Free energy with the one-sided steepened potential; agrees with
    :func:`gl_energy` wherever |phi|^2 <= tau pointwise."""
    return _report(field, perturbation, phi, params, modified=True)


def normal_phase_energy(field: GaugeField, params: CouplingParams) -> float:
    """Energy of (base connection, 0): pure curvature plus potential floor."""
    mesh = field.mesh
    curv = 0.5 * np.sum(mesh.face_areas * field.flux_density**2)
    return float(curv + 0.25 * params.kappa2 * params.tau**2 * mesh.total_volume)


def energy_gradient(
    field: GaugeField, perturbation, phi, params: CouplingParams,
    modified: bool = False,
) -> tuple[OneForm, Section]:
    """Gradient pair matching central finite differences of the energy."""
    a = np.zeros(field.mesh.edge_count) if perturbation is None else _values(perturbation)
    phi = _values(phi).astype(complex)
    _check_shapes(field, a, phi)
    g_a, g_phi = _gradient(field, a, phi, params, modified)
    return (
        OneForm(field.mesh, g_a, coclosed=True),
        Section(field.mesh, g_phi),
    )


# ---------------------------------------------------------------------------
# descent
# ---------------------------------------------------------------------------


def _newton_step(field, a, phi, params):
    """One bordered Newton step on the modified-energy stationarity system
    at fixed tau; returns updated (a, phi) or None when unavailable."""
    from .reduction import _full_hessian, _hessian_in_basis

    mesh = field.mesh
    try:
        Q = mesh.coclosed_basis
    except GLError:
        return None
    w1 = mesh.edge_field_weights
    h0 = mesh.hodge0
    V = mesh.vertex_count
    mc = Q.shape[1]

    g_a, g_phi = _gradient(field, a, phi, params, True)
    rc = Q.T @ (w1 * g_a)
    ru = np.concatenate([np.real(h0 * g_phi), np.imag(h0 * g_phi)])
    H = _hessian_in_basis(_full_hessian(field, a, phi, params, True), Q, mc, V)

    nphi = mesh.field_norm(phi, "vertex")
    if nphi > 1e-8 * np.sqrt(params.tau * mesh.total_volume):
        # pin the global phase along the current iterate
        gpin = np.concatenate(
            [np.zeros(mc), -h0 * np.imag(phi), h0 * np.real(phi)]
        )
        M = np.zeros((mc + 2 * V + 1, mc + 2 * V + 1))
        M[:-1, :-1] = H
        M[:-1, -1] = gpin
        M[-1, :-1] = gpin
        rhs = np.concatenate([-rc, -ru, [0.0]])
    else:
        M = H
        rhs = np.concatenate([-rc, -ru])
    try:
        delta = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(delta)):
        return None
    a_new = a + Q @ delta[:mc]
    phi_new = phi + delta[mc: mc + V] + 1j * delta[mc + V: mc + 2 * V]
    return a_new, phi_new


def _prepare_init(field, params, init, spec=None):
    mesh = field.mesh
    if init == "normal":
        return np.zeros(mesh.edge_count), np.zeros(mesh.vertex_count, complex)
    if isinstance(init, tuple) and init and init[0] == "trial":
        _, s, Phi = init
        return np.zeros(mesh.edge_count), s * _values(Phi).astype(complex)
    if isinstance(init, tuple) and init and init[0] == "random":
        rng = np.random.default_rng(init[1])
        phi = rng.standard_normal(mesh.vertex_count) + 1j * rng.standard_normal(
            mesh.vertex_count
        )
        phi *= 0.5 * np.sqrt(params.tau) / mesh.field_norm(phi, "vertex")
        return np.zeros(mesh.edge_count), phi
    if isinstance(init, tuple) and init and init[0] == "state":
        _, a0, phi0 = init
        return _values(a0).copy(), _values(phi0).astype(complex).copy()
    raise GLError(f"unknown init {init!r}")


def minimize(
    field: GaugeField,
    params: CouplingParams,
    init,
    *,
    spec=None,
    grad_tol: float = 1e-9,
    max_iter: int = 50_000,
    stats: dict | None = None,
) -> tuple[OneForm, Section, EnergyReport]:
    """Monotone Barzilai-Borwein descent on the modified energy.

    ``init`` is "normal", ("trial", s, Phi), ("random", seed) or
    ("state", a, phi).  Terminates when the gradient norm falls below
    grad_tol * (1 + |energy|); returns the critical point found, with no
    claim of global minimality.  ``stats`` (if given) receives the
    iteration count.
    """
    mesh = field.mesh
    a, phi = _prepare_init(field, params, init, spec)
    kappa2, tau = params.kappa2, params.tau

    # Jacobi block scales: curl stiffness diagonal for a, connection
    # Laplacian diagonal for phi, floored by the potential curvature
    w1 = mesh.edge_field_weights
    ell2 = mesh.edge_lengths**2
    pd_a = ell2 * (np.abs(mesh.d1).T @ (1.0 / mesh.face_areas)) / w1 + kappa2 * tau
    Dabs = np.abs(field.covariant_matrix)
    lap_diag = (Dabs.multiply(Dabs).T @ w1) / mesh.hodge0
    pd_phi = lap_diag + kappa2 * tau

    def energy_at(a_, phi_):
        c, k, p = _energy(field, a_, phi_, params, True)
        return c + k + p

    def dots(xa, xphi, ya, yphi):
        return float(
            np.sum(w1 * xa * ya) + np.real(np.sum(mesh.hodge0 * np.conj(xphi) * yphi))
        )

    g_a, g_phi = _gradient(field, a, phi, params, True)
    E = energy_at(a, phi)
    gn = _grad_norm(mesh, g_a, g_phi)
    alpha = None
    s_a = s_phi = y_a = y_phi = None
    newton_gate = 1e-5
    iters = 0
    for iters in range(1, max_iter + 1):
        if gn <= grad_tol * (1.0 + abs(E)):
            break
        if gn <= newton_gate * (1.0 + abs(E)):
            # endgame: the BB steps crawl along soft modes, a bordered
            # Newton step lands on the critical point directly
            stepped = _newton_step(field, a, phi, params)
            if stepped is not None:
                a_n, phi_n = stepped
                E_n = energy_at(a_n, phi_n)
                if np.isfinite(E_n) and E_n <= E + 1e-12 * (1.0 + abs(E)):
                    a, phi, E = a_n, phi_n, E_n
                    g_a, g_phi = _gradient(field, a, phi, params, True)
                    gn = _grad_norm(mesh, g_a, g_phi)
                    s_a = None
                    continue
            newton_gate *= 1e-2        # retry only much closer
        d_a = coulomb_project(mesh, g_a / pd_a).values
        d_phi = g_phi / pd_phi
        gMg = dots(g_a, g_phi, d_a, d_phi)
        if gMg <= 0:
            gMg = gn * gn
            d_a, d_phi = g_a, g_phi
        if s_a is not None:
            sy = dots(s_a, s_phi, y_a, y_phi)
            yMy = dots(y_a, y_phi,
                       coulomb_project(mesh, y_a / pd_a).values, y_phi / pd_phi)
            alpha = sy / yMy if (sy > 0 and yMy > 0) else None
        if alpha is None or not np.isfinite(alpha) or alpha <= 0:
            alpha = 1.0
        accepted = False
        for _ in range(60):
            a_new = a - alpha * d_a
            phi_new = phi - alpha * d_phi
            E_new = energy_at(a_new, phi_new)
            if E_new <= E - 1e-4 * alpha * gMg:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # descent stalled at line-search resolution; treat as converged
            # only if the gradient is already tiny
            if gn <= 100 * grad_tol * (1.0 + abs(E)):
                break
            raise SolverError(
                f"descent stalled with gradient norm {gn:.3e}", residual=gn
            )
        g_a_new, g_phi_new = _gradient(field, a_new, phi_new, params, True)
        s_a, s_phi = a_new - a, phi_new - phi
        y_a, y_phi = g_a_new - g_a, g_phi_new - g_phi
        a, phi, E = a_new, phi_new, E_new
        g_a, g_phi = g_a_new, g_phi_new
        gn = _grad_norm(mesh, g_a, g_phi)
        if stats is not None:
            stats.setdefault("energy_trace", []).append(E)
    else:
        raise SolverError(
            f"minimize hit the iteration cap with gradient norm {gn:.3e}",
            residual=gn,
        )
    if stats is not None:
        stats["iters"] = iters
    a = coulomb_project(mesh, a).values
    report = modified_energy(field, a, phi, params)
    return OneForm(mesh, a, coclosed=True), Section(mesh, phi), report


def threshold_scan(
    field: GaugeField,
    params: CouplingParams,
    tau_values,
    *,
    spec=None,
    allow_small_kappa: bool = False,
    grad_tol: float = 1e-9,
    seed: int = 0,
    states_out: list | None = None,
) -> list[ThresholdRow]:
    """Minimize at each tau from normal and trial starts and tabulate the
    order parameter, energies, and gap to the normal phase.

    Requires kappa^2 >= 1/2 (the regime where the threshold statement is
    exact); smaller values need ``allow_small_kappa`` and are flagged.
    """
    from .bundle import laplacian0
    from .spectral import eigensolve

    if params.kappa2 < 0.5 and not allow_small_kappa:
        raise GLError(
            "threshold theory assumes kappa^2 >= 1/2; pass allow_small_kappa "
            "to override"
        )
    if params.kappa2 < 0.5:
        log.warning("threshold scan outside the kappa^2 >= 1/2 regime")

    if spec is None:
        spec = eigensolve(
            laplacian0(field), count=max(4, field.degree + 2), seed=seed
        )
    basis = spec.kernel_basis
    tau0 = spec.lam / params.kappa2
    mesh = field.mesh
    C = max(
        float(np.sum(mesh.hodge0 * np.abs(basis[:, j]) ** 4) ** 0.25)
        for j in range(basis.shape[1])
    )

    rows: list[ThresholdRow] = []
    for tau in tau_values:
        p_tau = CouplingParams(params.kappa2, float(tau), params.p)
        e_normal = normal_phase_energy(field, p_tau)
        eps = tau - tau0
        if eps > 0:
            s = 0.7 * np.sqrt(2.0 * eps) / (C * C)
        else:
            s = 0.3 * np.sqrt(tau)
        for kind, init in (
            ("normal", "normal"),
            ("trial", ("trial", s, basis[:, 0])),
        ):
            try:
                stats: dict = {}
                a, phi, rep = minimize(
                    field, p_tau, init, grad_tol=grad_tol, stats=stats
                )
                gl_rep = gl_energy(field, a, phi, p_tau)
                if states_out is not None:
                    states_out.append((float(tau), kind, a.values, phi.values))
                rows.append(
                    ThresholdRow(
                        tau=float(tau),
                        tau_over_tau0=float(tau / tau0),
                        norm_phi=phi.norm_l2,
                        energy=gl_rep.total,
                        energy_gap_to_normal=gl_rep.total - e_normal,
                        iters=stats.get("iters", 0),
                        init_kind=kind,
                    )
                )
            except SolverError as exc:
                rows.append(
                    ThresholdRow(
                        tau=float(tau),
                        tau_over_tau0=float(tau / tau0),
                        norm_phi=np.nan,
                        energy=np.nan,
                        energy_gap_to_normal=np.nan,
                        iters=0,
                        init_kind=kind,
                        status=f"error: {exc}",
                    )
                )
    return rows
