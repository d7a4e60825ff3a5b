"""Run orchestration: config parsing, pipelines, CSV/manifest output.

A run is described by a JSON config file.  Three pipelines are available and
can be combined with mode "all":

    spectrum    eigensolve the base Laplacian      -> spectrum.csv
    branch      bifurcation branch over a t-grid   -> branch.csv
    threshold   minimization scan over tau values  -> threshold.csv

Every number written to a CSV is produced by a library call and formatted
with 17 significant digits, so identical config + seed gives bit-identical
files.  The manifest (manifest.json) echoes the config and records mesh,
spectral summary, per-item status, wall clock and a verification fragment.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import laplacian0, make_constant_curvature_field
from .energy import ThresholdRow, threshold_scan
from .errors import ConfigError, GLError
from .geometry import build_icosphere, build_torus
from .reduction import CouplingParams, contraction_t_cap, continue_branch
from .spectral import eigensolve
from .verify import max_principle_report, weitzenboeck_check

log = logging.getLogger(__name__)

__all__ = ["RunConfig", "RunManifest", "run", "emit_plots", "main"]


@dataclass
class RunConfig:
    geometry: str = "torus"            # torus | icosphere
    resolution: int = 16               # grid n, or subdivision count
    side_length: float = 1.0           # torus only
    degree: int = 1
    kappa2: float = 0.5
    p: float = 4.0
    mode: str = "all"                  # spectrum | branch | threshold | all
    t_max: float = 0.2
    t_min: float = 0.02
    t_points: int = 8
    tau_values: tuple = (0.9, 1.1)
    tau_relative: bool = True          # interpret tau_values as tau/tau0
    tol_kernel: float = 1e-9
    tol_fixed_point: float = 1e-12
    tol_linear: float = 1e-12
    seed: int = 0
    output_dir: str = "runs"
    allow_small_kappa: bool = False
    polish: bool = True
    branch_seeds: int = 8

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        data = dict(raw)
        grid = data.pop("t_grid", None)
        if grid:
            data.setdefault("t_max", grid.get("t_max", cls.t_max))
            data.setdefault("t_min", grid.get("t_min", cls.t_min))
            data.setdefault("t_points", grid.get("points", cls.t_points))
        tols = data.pop("tolerances", None)
        if tols:
            data.setdefault("tol_kernel", tols.get("kernel", cls.tol_kernel))
            data.setdefault(
                "tol_fixed_point", tols.get("fixed_point", cls.tol_fixed_point)
            )
            data.setdefault("tol_linear", tols.get("linear_solve", cls.tol_linear))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.tau_values = tuple(float(x) for x in cfg.tau_values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        problems = []
        if self.geometry not in ("torus", "icosphere"):
            problems.append(f"geometry: {self.geometry!r} not torus/icosphere")
        if self.geometry == "torus" and self.resolution < 4:
            problems.append("resolution: torus grid needs n >= 4")
        if self.geometry == "icosphere" and self.resolution < 1:
            problems.append("resolution: icosphere needs subdivisions >= 1")
        if self.side_length <= 0:
            problems.append("side_length: must be positive")
        if self.degree < 0:
            problems.append("degree: must be non-negative")
        if self.kappa2 <= 0:
            problems.append("kappa2: must be positive")
        if self.p <= 2:
            problems.append("p: must exceed 2")
        if self.mode not in ("spectrum", "branch", "threshold", "all"):
            problems.append(f"mode: {self.mode!r} unknown")
        if not (0 < self.t_min < self.t_max):
            problems.append("t_grid: need 0 < t_min < t_max")
        if self.t_points < 1:
            problems.append("t_grid: points must be >= 1")
        if any(t <= 0 for t in self.tau_values):
            problems.append("tau_values: must be positive")
        if problems:
            raise ConfigError("invalid config:\n  " + "\n  ".join(problems))


@dataclass
class RunManifest:
    config: dict
    mesh: dict
    spectral: dict
    results: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    version: str = __version__
    verification: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    path: str = ""

    def write(self, out_dir: Path) -> Path:
        p = out_dir / "manifest.json"
        payload = {k: v for k, v in asdict(self).items() if k != "path"}
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self.path = str(p)
        return p


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _build_mesh(cfg: RunConfig):
    if cfg.geometry == "torus":
        return build_torus(cfg.side_length, cfg.resolution)
    return build_icosphere(cfg.resolution)


def run(config: RunConfig, workers: int = 1) -> RunManifest:
    """Execute the configured pipelines and write CSVs plus the manifest."""
    config.validate()
    t_start = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    mesh = _build_mesh(config)
    fieldobj = make_constant_curvature_field(mesh, config.degree)
    params = CouplingParams(config.kappa2, tau=1.0, p=config.p)

    count = max(8, config.degree + 5)
    spec = eigensolve(laplacian0(fieldobj), count=count, seed=config.seed)
    tau0 = spec.lam / config.kappa2

    manifest = RunManifest(
        config=asdict(config),
        mesh={
            "geometry": mesh.genus_label,
            "vertices": mesh.vertex_count,
            "edges": mesh.edge_count,
            "faces": mesh.face_count,
            "volume": mesh.total_volume,
            "euler_characteristic": mesh.vertex_count
            - mesh.edge_count
            + mesh.face_count,
        },
        spectral={
            "lam": spec.lam,
            "cluster_dim": spec.dim,
            "f0": fieldobj.f0,
            "tau0": tau0,
        },
    )

    modes = (
        ("spectrum", "branch", "threshold") if config.mode == "all" else (config.mode,)
    )

    if "spectrum" in modes:
        ids = spec.cluster_ids()
        rows = [
            [k, spec.eigenvalues[k], int(ids[k]), spec.residuals[k]]
            for k in range(len(spec.eigenvalues))
        ]
        _write_csv(
            out / "spectrum.csv",
            ["index", "eigenvalue", "cluster_id", "residual"],
            rows,
        )
        manifest.results["spectrum"] = "spectrum.csv"
        wz = weitzenboeck_check(fieldobj, spec)
        manifest.verification["weitzenboeck"] = {
            "gap": wz.gap,
            "cluster_size": wz.cluster_size,
            "holomorphic_count": wz.holomorphic_count,
        }
        manifest.status["spectrum"] = "ok"

    if "branch" in modes:
        t_max = config.t_max
        try:
            cap = contraction_t_cap(fieldobj, params, spec)
        except GLError as exc:
            cap = config.t_max
            manifest.warnings.append(f"contraction probe failed: {exc}")
        if t_max > cap:
            manifest.warnings.append(
                f"t_max {t_max} above contraction cap {cap:.4g}; clamped"
            )
            t_max = cap
        grid = np.geomspace(t_max, config.t_min, config.t_points)
        errors: list = []
        points = continue_branch(
            fieldobj,
            grid,
            params,
            spec,
            seeds=config.branch_seeds,
            polish=config.polish,
            tol=config.tol_fixed_point,
            tol_kernel=config.tol_kernel,
            seed=config.seed,
            error_log=errors,
        )
        rows = [
            [
                pt.t,
                pt.tau_t,
                pt.eps_t,
                mesh.field_norm(pt.phi, "vertex"),
                pt.A_t.curl_norm(),
                pt.Psi_t.norm_l2,
                pt.harmonic_A_norm,
                pt.residual_wgl1,
                pt.residual_wgl2,
                pt.energy,
                pt.fixed_point_iterations,
                {"none": 0, "ok": 1, "failed": -1}[pt.polish],
            ]
            for pt in points
        ]
        _write_csv(
            out / "branch.csv",
            [
                "t", "tau_t", "eps_t", "norm_phi_L2", "norm_A", "norm_Psi",
                "harmonic_A_norm", "res_wgl1", "res_wgl2", "energy",
                "fp_iters", "polish_flag",
            ],
            rows,
        )
        manifest.results["branch"] = "branch.csv"
        manifest.status["branch"] = {
            "points": len(points),
            "errors": [{"t": t, "message": msg} for t, msg in errors],
        }
        if points:
            pt = points[0]
            rep = max_principle_report(
                fieldobj,
                pt.A,
                pt.phi,
                CouplingParams(config.kappa2, pt.tau_t, config.p),
                spec=spec,
            )
            manifest.verification["branch_max_t"] = rep.as_dict()

    if "threshold" in modes:
        taus = [
            tau * tau0 if config.tau_relative else tau for tau in config.tau_values
        ]
        rows_obj: list[ThresholdRow] = []
        states: list = []

        def scan_one(tau):
            chunk_states: list = []
            chunk = threshold_scan(
                fieldobj,
                params,
                [tau],
                spec=spec,
                allow_small_kappa=config.allow_small_kappa,
                seed=config.seed,
                states_out=chunk_states,
            )
            return chunk, chunk_states

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for chunk, chunk_states in pool.map(scan_one, taus):
                    rows_obj.extend(chunk)
                    states.extend(chunk_states)
        else:
            for tau in taus:
                chunk, chunk_states = scan_one(tau)
                rows_obj.extend(chunk)
                states.extend(chunk_states)
        rows_obj.sort(key=lambda r: (r.tau, r.init_kind))
        rows = [
            [
                r.tau, r.tau_over_tau0, r.norm_phi, r.energy,
                r.energy_gap_to_normal, r.iters, r.init_kind,
            ]
            for r in rows_obj
        ]
        _write_csv(
            out / "threshold.csv",
            [
                "tau", "tau_over_tau0", "norm_phi", "energy",
                "energy_gap_to_normal", "iters", "init_kind",
            ],
            rows,
        )
        manifest.results["threshold"] = "threshold.csv"
        manifest.status["threshold"] = {
            "rows": len(rows_obj),
            "errors": [r.status for r in rows_obj if r.status != "ok"],
        }
        irreducible = [
            s for s in states if s[0] > tau0 and s[1] == "trial"
        ]
        if irreducible:
            tau, _, a_vals, phi_vals = max(irreducible, key=lambda s: s[0])
            p_tau = CouplingParams(config.kappa2, tau, config.p)
            rep = max_principle_report(fieldobj, a_vals, phi_vals, p_tau, spec=spec)
            manifest.verification["threshold_max_tau"] = rep.as_dict()

    manifest.wall_clock_seconds = time.perf_counter() - t_start
    manifest.write(out)
    return manifest


def emit_plots(manifest: RunManifest) -> list[Path]:
    """Render presentational SVG plots from the run's CSV files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(manifest.config["output_dir"])
    made: list[Path] = []

    def load(name):
        p = out / name
        if not p.exists():
            log.warning("missing %s; skipping plot", p)
            return None
        return np.genfromtxt(p, delimiter=",", names=True, dtype=None, encoding=None)

    if "branch" in manifest.results:
        data = load(manifest.results["branch"])
        if data is not None and data.size:
            data = np.atleast_1d(data)
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.plot(data["t"], data["eps_t"], "o-")
            ax.set_xlabel("t")
            ax.set_ylabel("eps_t")
            ax.set_title("detuning along the branch")
            fig.tight_layout()
            p = out / "eps_vs_t.svg"
            fig.savefig(p)
            plt.close(fig)
            made.append(p)

            fig, ax = plt.subplots(figsize=(5, 4))
            for col in ("res_wgl1", "res_wgl2"):
                ax.loglog(data["t"], np.maximum(data[col], 1e-300), "o-", label=col)
            ax.set_xlabel("t")
            ax.set_ylabel("residual")
            ax.legend()
            fig.tight_layout()
            p = out / "residual_slopes.svg"
            fig.savefig(p)
            plt.close(fig)
            made.append(p)

    if "threshold" in manifest.results:
        data = load(manifest.results["threshold"])
        if data is not None and data.size:
            data = np.atleast_1d(data)
            fig, ax = plt.subplots(figsize=(5, 4))
            for kind in sorted(set(data["init_kind"])):
                sel = data["init_kind"] == kind
                ax.plot(
                    data["tau_over_tau0"][sel], data["norm_phi"][sel], "o-", label=kind
                )
            ax.axvline(1.0, color="k", lw=0.8, ls="--")
            ax.set_xlabel("tau / tau0")
            ax.set_ylabel("|phi|_L2")
            ax.legend()
            fig.tight_layout()
            p = out / "amplitude_vs_tau.svg"
            fig.savefig(p)
            plt.close(fig)
            made.append(p)

    if not made:
        log.warning("no result CSVs found; nothing plotted")
    return made


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glbranch",
        description="Ginzburg-Landau bifurcation toolkit on discrete surfaces",
    )
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--mode", help="override config mode")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", help="override output directory")
    parser.add_argument("--plots", action="store_true", help="emit SVG plots")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        config = RunConfig.from_file(args.config)
        if args.mode:
            config.mode = args.mode
        if args.seed is not None:
            config.seed = args.seed
        if args.out:
            config.output_dir = args.out
        config.validate()
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}")
        return 2

    try:
        manifest = run(config, workers=args.workers)
    except GLError as exc:
        print(f"run failed: {exc}")
        return 1
    if args.plots:
        emit_plots(manifest)
    hard_errors = []
    for key, st in manifest.status.items():
        if isinstance(st, dict) and st.get("errors"):
            hard_errors.append(key)
    print(f"run complete: {manifest.path} ({manifest.wall_clock_seconds:.1f}s)")
    return 1 if hard_errors else 0


if __name__ == "__main__":
    raise SystemExit(main())
