"""Error metrics, density estimates, experiment configuration and the command line.

An experiment is described by an INI file (see ``configs/``). ``run_experiment``
builds the random field, the matrix expansion and runs the requested methods,
writing plot-ready CSV files and a ``summary.jsonl`` with one record per
method and mode.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import galerkin as gk
from .models import (BeamParams, MatrixExpansion, PlateParams, beam_midpoints, load_expansion,
                     mindlin_assemble, plate_centroids, save_expansion, timoshenko_assemble,
                     to_standard)
from .polychaos import basis_size, gen_multi_indices, triple_tensor
from .quadrature import full_tensor, smolyak
from .randfield import (calibrate_lognormal, kl_1d_exponential, kl_2d_discrete, lognormal_coeffs,
                        mean_preserving_g0)
from .sampling import mc_run, sample_expansion, sc_run

log = logging.getLogger(__name__)


# -- density estimates and error metrics ---------------------------------------------

@dataclass
class PdfCurve:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(trapezoid(self.density, self.x))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "density"])
            for a, b in zip(self.x, self.density):
                w.writerow([repr(float(a)), repr(float(b))])


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    std = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 1.06 * spread * x.size ** (-0.2)


def kde(samples, n_points: int = 256) -> PdfCurve:
    """Gaussian kernel density estimate with Silverman's bandwidth.

    Evaluated on ``[min - 3h, max + 3h]``. The number of points is raised when
    needed so that the spacing never exceeds ``h/4``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 2 or np.ptp(x) == 0.0:
        raise ValueError("need at least two distinct samples")
    h = silverman_bandwidth(x)
    lo, hi = x.min() - 3 * h, x.max() + 3 * h
    n = max(n_points, int(np.ceil((hi - lo) / (h / 4))) + 1)
    grid = np.linspace(lo, hi, n)
    dens = np.zeros(n)
    for chunk in np.array_split(x, max(1, x.size // 2000)):
        z = (grid[:, None] - chunk[None, :]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return PdfCurve(x=grid, density=dens, bandwidth=float(h))


def eigvec_error(u, u_ref) -> np.ndarray:
    """Pointwise ``||u - u_ref|| / ||u_ref||`` along the last axis."""
    u, u_ref = np.asarray(u), np.asarray(u_ref)
    den = np.linalg.norm(u_ref, axis=-1)
    if np.any(den == 0):
        raise ZeroDivisionError("reference vector with zero norm")
    return np.linalg.norm(u - u_ref, axis=-1) / den


def operator_norms(A, basis_a, points) -> np.ndarray:
    """Spectral norms ``||A(xi)||_2`` at each point."""
    from .sampling import evaluate_operator
    return np.array([np.abs(np.linalg.eigvalsh(evaluate_operator(A, basis_a, xi))).max()
                     for xi in np.atleast_2d(points)])


def true_residual(A, lam, u, basis_a, points, norms=None) -> np.ndarray:
    """``||A(xi) u(xi) - lambda(xi) u(xi)|| / ||A(xi)||_2`` at each point.

    ``lam`` (n,) and ``u`` (n, M_x) are samples of an eigenpair approximation;
    ``norms`` may hold precomputed ``||A(xi)||_2``.
    """
    points = np.atleast_2d(points)
    if norms is None:
        norms = operator_norms(A, basis_a, points)
    At = A.A if hasattr(A, "A") else np.asarray(A)
    n_terms, mx = At.shape[:2]
    u = np.asarray(u)
    psi = basis_a.eval(points)[:, :n_terms]
    flat = At.reshape(n_terms * mx, mx)
    Au = np.empty_like(u, dtype=float)
    for start in range(0, u.shape[0], 256):
        sl = slice(start, start + 256)
        W = (flat @ u[sl].T).reshape(n_terms, mx, -1)  # A_l u_n
        Au[sl] = np.einsum("nl,lxn->nx", psi[sl], W)
    return np.linalg.norm(Au - np.asarray(lam)[:, None] * u, axis=1) / norms


# -- configuration ---------------------------------------------------------------

METHODS = ("mean-solve", "rq0", "sii1", "sisi", "sisi-shifted", "sisi-deflated",
           "subspace-max", "collocate", "monte-carlo")


@dataclass
class ExperimentConfig:
    model: str = "beam"  # beam | plate | file
    model_file: str = ""
    beam: BeamParams = field(default_factory=BeamParams)
    plate: PlateParams = field(default_factory=PlateParams)
    cov: float = 0.10
    L_corr: float = 0.25
    m_xi: int = 3
    mean_convention: str = "exact"  # exact | calibrated
    p: int = 3
    grid_level: int = 4
    grid: str = "smolyak"  # smolyak | tensor; used for collocation and projections
    tensor_points: int = 5
    match: str = "sorted"  # sorted | overlap; mode matching of sampled eigenpairs
    methods: tuple = ("rq0", "sii1", "sisi", "collocate")
    modes: tuple = (1,)
    n_mc: int = 2000
    seed: int = 0
    rho: tuple = ()
    sisi: gk.SisiConfig = field(default_factory=gk.SisiConfig)
    kde_points: int = 256
    out: str = "out"

    def validate(self) -> None:
        if self.model not in ("beam", "plate", "file"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "file" and not self.model_file:
            raise ValueError("model = file needs model_file")
        if self.p < 1 or self.m_xi < 1 or self.grid_level < 1:
            raise ValueError("p, m_xi and grid_level must be >= 1")
        if not 0 <= self.cov < 1 or self.L_corr <= 0:
            raise ValueError("need 0 <= CoV < 1 and L_corr > 0")
        if self.grid not in ("smolyak", "tensor") or self.tensor_points < 1:
            raise ValueError(f"grid must be smolyak or tensor with tensor_points >= 1")
        if self.match not in ("sorted", "overlap"):
            raise ValueError(f"unknown match rule {self.match!r}")
        if self.mean_convention not in ("exact", "calibrated"):
            raise ValueError(f"unknown mean_convention {self.mean_convention!r}")
        for name in self.methods:
            if name not in METHODS:
                raise ValueError(f"unknown method {name!r}")
        params = self.beam if self.model == "beam" else self.plate
        for k, v in asdict(params).items():
            if v <= 0 and k != "nu":
                raise ValueError(f"{self.model} parameter {k} must be positive")
        if self.n_mc < 0:
            raise ValueError("n_mc must be non-negative")


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _typed(cls, section) -> dict:
    out = {}
    for k, v in asdict(cls()).items():
        if k in section:
            out[k] = type(v)(float(section[k])) if isinstance(v, (int, float)) else section[k]
    return out


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    cfg = ExperimentConfig()
    if cp.has_section("model"):
        s = cp["model"]
        cfg.model = s.get("type", cfg.model)
        cfg.model_file = s.get("file", "")
        if cfg.model == "beam":
            cfg.beam = BeamParams(**_typed(BeamParams, s))
        elif cfg.model == "plate":
            cfg.plate = PlateParams(**_typed(PlateParams, s))
    if cp.has_section("field"):
        s = cp["field"]
        cfg.cov = s.getfloat("cov", cfg.cov)
        cfg.L_corr = s.getfloat("L_corr", cfg.L_corr)
        cfg.m_xi = s.getint("m_xi", cfg.m_xi)
        cfg.mean_convention = s.get("mean_convention", cfg.mean_convention)
    if cp.has_section("discretization"):
        s = cp["discretization"]
        cfg.p = s.getint("p", cfg.p)
        cfg.grid_level = s.getint("grid_level", cfg.grid_level)
        cfg.grid = s.get("grid", cfg.grid)
        cfg.tensor_points = s.getint("tensor_points", cfg.tensor_points)
    if cp.has_section("methods"):
        s = cp["methods"]
        if "run" in s:
            cfg.methods = tuple(t for t in s["run"].replace(",", " ").split())
        cfg.modes = _ints(s.get("modes", "1"))
        cfg.n_mc = s.getint("n_mc", cfg.n_mc)
        cfg.seed = s.getint("seed", cfg.seed)
        cfg.rho = _floats(s.get("rho", ""))
        cfg.match = s.get("match", cfg.match)
    sisi = gk.SisiConfig(modes=cfg.modes)
    if cp.has_section("sisi"):
        s = cp["sisi"]
        c_lam = s.get("c_lambda", "").strip()
        sisi = replace(sisi, max_iter=s.getint("max_iter", sisi.max_iter),
                       tol=s.getfloat("tol", sisi.tol),
                       deflate=_ints(s.get("deflate", "")),
                       c_lambda=float(c_lam) if c_lam else None,
                       backend=s.get("backend", sisi.backend),
                       divergence_window=s.getint("divergence_window", sisi.divergence_window))
    cfg.sisi = sisi
    if cp.has_section("output"):
        cfg.out = cp["output"].get("dir", cfg.out)
        cfg.kde_points = cp["output"].getint("kde_points", cfg.kde_points)
    cfg.validate()
    return cfg


# -- experiment pipeline ----------------------------------------------------------

@dataclass
class Setup:
    """Everything the methods share: expansion, bases, tensor, grid."""

    expansion: MatrixExpansion
    basis_a: object
    basis_sol: object
    tensor: object
    grid: object
    projector: gk.GridProjector
    field: object = None


def build_setup(cfg: ExperimentConfig) -> Setup:
    basis_sol = gen_multi_indices(cfg.m_xi, cfg.p)
    lf = None
    if cfg.model == "file":
        exp = load_expansion(cfg.model_file)
        cfg.m_xi = exp.m_xi
        basis_sol = gen_multi_indices(exp.m_xi, cfg.p)
        q = next((q for q in range(0, 64) if basis_size(exp.m_xi, q) == exp.n_terms), None)
        if q is None:
            raise ValueError(f"{exp.n_terms} terms is not a complete basis size for m_xi={exp.m_xi}")
        basis_a = gen_multi_indices(exp.m_xi, q)
    else:
        basis_a = gen_multi_indices(cfg.m_xi, 2 * cfg.p)
        if cfg.model == "beam":
            prm = cfg.beam
            g0, sg = calibrate_lognormal(prm.E0, cfg.cov)
            kl = kl_1d_exponential(prm.length, cfg.L_corr, sg, cfg.m_xi, points=beam_midpoints(prm))
            E0 = prm.E0
        else:
            prm = cfg.plate
            g0, sg = calibrate_lognormal(prm.E0, cfg.cov)
            pts = plate_centroids(prm)
            area = prm.side * prm.side / pts.shape[0]
            kl = kl_2d_discrete(pts, cfg.L_corr, sg, cfg.m_xi, weights=np.full(pts.shape[0], area))
            E0 = prm.E0
        kl = kl.with_mean(mean_preserving_g0(E0, kl) if cfg.mean_convention == "exact" else g0)
        lf = lognormal_coeffs(kl, basis_a)
        gp = (timoshenko_assemble(prm, lf.coeffs) if cfg.model == "beam"
              else mindlin_assemble(prm, lf.coeffs))
        exp = to_standard(gp, cfg.m_xi, cfg.p)
    tensor = triple_tensor(basis_a, basis_sol)
    if cfg.grid == "smolyak":
        grid = smolyak(cfg.m_xi, cfg.grid_level)
    else:
        grid = full_tensor(cfg.m_xi, cfg.tensor_points)
    return Setup(expansion=exp, basis_a=basis_a, basis_sol=basis_sol, tensor=tensor, grid=grid,
                 projector=gk.GridProjector(basis_sol, grid), field=lf)


def degree_groups(coeffs, basis) -> dict:
    """Coefficients grouped by total degree, keys ``"d0"``, ``"d1"`` ..."""
    out = {}
    for d, sl in enumerate(basis.degree_slices()):
        vals = np.asarray(coeffs)[sl]
        if vals.size:
            out[f"d{d}"] = [float(v) for v in vals]
    return out


class Runner:
    """Runs methods on one setup and writes their outputs into ``out``."""

    def __init__(self, cfg: ExperimentConfig, setup: Setup | None = None):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.setup = setup or build_setup(cfg)
        self.records: list[dict] = []
        self.results: dict[str, list[gk.EigenExpansion]] = {}
        self.logs: dict[str, gk.IterationLog] = {}
        self.mc = None
        self.largest = "subspace-max" in cfg.methods

    # shared pieces
    @property
    def A(self) -> np.ndarray:
        return self.setup.expansion.A

    def operator(self) -> np.ndarray:
        """Deflated terms when the configuration deflates, else the original terms."""
        if self.cfg.sisi.deflate:
            return gk.iteration_operator(self.A, replace(self.cfg.sisi, variant="deflated"))
        return self.A

    def reference(self):
        from .sampling import reference_modes
        return reference_modes(self.A, self.cfg.modes, self.largest)[1]

    def _record(self, method, exps, logbook=None, extra=None):
        self.results[method] = exps
        if logbook is not None:
            self.logs[method] = logbook
            logbook.to_csv(self.out / f"iterations_{method}.csv", [e.mode for e in exps])
        for e in exps:
            e.to_csv(self.out / f"coeffs_{method}_mode{e.mode}.csv")
            rec = {"method": method, "mode": int(e.mode),
                   "mean": float(e.lambda_coeffs[0]),
                   "std": float(np.sqrt((e.lambda_coeffs[1:] ** 2).sum())),
                   "lambda": degree_groups(e.lambda_coeffs, self.setup.basis_sol)}
            if logbook is not None and logbook.iterations:
                s = [x.mode for x in exps].index(e.mode)
                rec.update(iterations=logbook.iterations, converged=logbook.converged,
                           diverged=logbook.diverged, eps0=logbook.eps0[-1][s],
                           eps_sigma2=logbook.eps_sigma2[-1][s], u_delta=logbook.u_delta[-1][s])
            if extra:
                rec.update(extra)
            self.records.append(rec)

    # methods
    def mean_solve(self):
        from .linalg import spd_eigvals
        A0 = self.A[0]
        vals = spd_eigvals(A0)
        with open(self.out / "mean_eigenvalues.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lambda"])
            for i, v in enumerate(vals, 1):
                w.writerow([i, repr(float(v))])
        rec = {"method": "mean-solve", "size": int(A0.shape[0]),
               "norm2": float(np.abs(vals).max()), "cond": float(np.abs(vals).max() / np.abs(vals).min()),
               "smallest": [float(v) for v in vals[:6]]}
        self.records.append(rec)
        return vals

    def sisi(self, name="sisi", max_iter=None, deflated=False):
        cfg = replace(self.cfg.sisi, modes=self.cfg.modes,
                      variant="deflated" if deflated else "plain")
        if max_iter is not None:
            cfg = replace(cfg, max_iter=max_iter, tol=0.0)
        exps, logbook = gk.sisi_run(self.A, self.setup.tensor, self.setup.projector, cfg)
        for e in exps:
            e.method = name
        self._record(name, exps, logbook if cfg.max_iter else None)
        return exps, logbook

    def shifted(self):
        out = []
        for rho in self.cfg.rho or (self.cfg.sisi.rho,):
            cfg = replace(self.cfg.sisi, modes=(0,), variant="shifted", rho=rho)
            exp, logbook = gk.sii_shifted_run(self.A, self.setup.tensor, self.setup.projector, rho, cfg)
            name = f"sisi-shifted_rho{rho:g}"
            exp.method = name
            self._record(name, [exp], logbook, {"rho": rho})
            out.append((rho, exp, logbook))
        return out

    def subspace_max(self):
        cfg = replace(self.cfg.sisi, modes=self.cfg.modes)
        exps, logbook = gk.subspace_iteration_max(self.A, self.setup.tensor, self.setup.projector, cfg)
        self._record("subspace-max", exps, logbook, {"largest": True})
        return exps

    def collocate(self):
        exps, samples = sc_run(self.operator(), self.setup.basis_a, self.setup.basis_sol,
                               self.setup.grid, self.cfg.modes, self.largest,
                               reference=self.reference(), match=self.cfg.match)
        name = "collocate"
        for e in exps:
            e.method = name
        samples.to_csv(self.out / f"samples_{name}.csv")
        self._record(name, exps, extra={"largest": self.largest})
        return exps

    def monte_carlo(self):
        mc = mc_run(self.operator(), self.setup.basis_a, self.cfg.n_mc, self.cfg.seed,
                    self.cfg.modes, self.largest, reference=self.reference(), match=self.cfg.match)
        self.mc = mc
        name = "monte-carlo"
        mc.to_csv(self.out / f"samples_{name}.csv")
        valid = mc.valid()
        for s, mode in enumerate(mc.modes):
            lam = mc.values[valid, s]
            kde(lam, self.cfg.kde_points).to_csv(self.out / f"pdf_lambda_{name}_mode{mode}.csv")
            self.records.append({"method": name, "mode": int(mode), "mean": float(lam.mean()),
                                 "std": float(lam.std(ddof=1)), "n_samples": int(lam.size),
                                 "failed": len(mc.failed)})
        return mc

    # comparisons
    def compare(self):
        """Sample every expansion at the Monte Carlo points and write error densities."""
        if self.mc is None:
            return
        mc = self.mc
        valid = mc.valid()
        pts = mc.points[valid]
        op = self.operator()
        norms = operator_norms(op, self.setup.basis_a, pts)
        rows = []
        for method, exps in self.results.items():
            if method.startswith("sisi-shifted"):
                continue
            if (method == "subspace-max") != self.largest and method != "collocate":
                continue
            for e in exps:
                if e.mode not in mc.modes:
                    continue
                s = mc.modes.index(e.mode)
                lam, u = sample_expansion(e, self.setup.basis_sol, pts)
                eu = eigvec_error(u, mc.vectors[valid, s])
                er = true_residual(op, lam, u, self.setup.basis_a, pts, norms)
                tag = f"{method}_mode{e.mode}"
                kde(lam, self.cfg.kde_points).to_csv(self.out / f"pdf_lambda_{tag}.csv")
                for label, vals in (("eps_u", eu), ("eps_r", er)):
                    logv = np.log10(np.maximum(vals, 1e-300))
                    if np.ptp(logv) > 0:
                        kde(logv, self.cfg.kde_points).to_csv(self.out / f"pdf_log10_{label}_{tag}.csv")
                rows.append({"method": method, "mode": int(e.mode),
                             "eps_u_median": float(np.median(eu)),
                             "eps_u_p98": float(np.percentile(eu, 98)),
                             "eps_r_median": float(np.median(er)),
                             "eps_r_p98": float(np.percentile(er, 98))})
        for r in rows:
            self.records.append({"method": r.pop("method") + ":vs-mc", **r})

    def write_tables(self):
        """One CSV per mode with the first coefficients of every method side by side."""
        basis = self.setup.basis_sol
        deg = basis.degrees
        modes = sorted({e.mode for exps in self.results.values() for e in exps})
        for mode in modes:
            cols = [(m, e) for m, exps in self.results.items() for e in exps if e.mode == mode]
            with open(self.out / f"table_lambda_mode{mode}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["d", "k"] + [m for m, _ in cols])
                for k in range(basis.size):
                    w.writerow([int(deg[k]), k] + [f"{e.lambda_coeffs[k]:.4f}" for _, e in cols])

    def write_summary(self):
        with open(self.out / "summary.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def run(self, methods) -> list[dict]:
        for name in methods:
            log.info("running %s", name)
            try:
                if name == "mean-solve":
                    self.mean_solve()
                elif name == "rq0":
                    self.sisi("rq0", max_iter=0)
                elif name == "sii1":
                    self.sisi("sii1", max_iter=1)
                elif name == "sisi":
                    self.sisi(f"sisi{self.cfg.sisi.max_iter}")
                elif name == "sisi-deflated":
                    self.sisi("sisi-deflated", deflated=True)
                elif name == "sisi-shifted":
                    self.shifted()
                elif name == "subspace-max":
                    self.subspace_max()
                elif name == "collocate":
                    self.collocate()
                elif name == "monte-carlo":
                    self.monte_carlo()
                else:
                    raise ValueError(f"unknown method {name!r}")
            except Exception as exc:
                raise RuntimeError(f"stage {name!r} failed: {exc}") from exc
        self.compare()
        self.write_tables()
        self.write_summary()
        return self.records


def run_experiment(cfg: ExperimentConfig, methods=None) -> list[dict]:
    cfg.validate()
    runner = Runner(cfg)
    if cfg.model != "file":
        save_expansion(runner.setup.expansion, Path(cfg.out) / "expansion.txt")
    runner.setup.grid.to_csv(Path(cfg.out) / "grid.csv")
    return runner.run(methods if methods is not None else cfg.methods)


# -- command line -----------------------------------------------------------------

COMMANDS = {
    "mean-solve": ("mean-solve",),
    "sisi": ("rq0", "sii1", "sisi"),
    "sisi-shifted": ("sisi-shifted",),
    "sisi-deflated": ("sisi-deflated",),
    "subspace-max": ("subspace-max",),
    "collocate": ("collocate",),
    "monte-carlo": ("monte-carlo",),
    "compare": ("rq0", "sii1", "sisi", "collocate", "monte-carlo"),
    "all": None,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="randeig", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI experiment file")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="Monte Carlo seed (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        methods = COMMANDS[args.command] or cfg.methods
        if args.command == "sisi-deflated" and not cfg.sisi.deflate:
            raise ValueError("sisi-deflated needs [sisi] deflate = ...")
        records = run_experiment(cfg, methods)
    except Exception as exc:
        print(f"randeig: error: {exc}", file=sys.stderr)
        return 1
    for rec in records:
        if "mean" in rec:
            print(f"{rec['method']:>24s} mode {rec['mode']}: mean {rec['mean']:.6g}  std {rec['std']:.6g}")
    print(f"wrote {cfg.out}/summary.jsonl")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
